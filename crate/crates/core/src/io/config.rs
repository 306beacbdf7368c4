//! JSON run configuration. Unknown keys are rejected everywhere.
//!
//! ```json
//! {
//!   "preset": "tiny",
//!   "loss": {"variant": "l1+asl", "lambda": 0.25},
//!   "train": {"lr": 0.0001, "batch": 16, "patch": 128, "epochs_max": 100, "seed": 0, "stage2": false},
//!   "data": {"procedural": {"n": 64, "val_n": 16, "size": 64, "seed": 1}},
//!   "out_dir": "runs/tiny"
//! }
//! ```
//!
//! Instead of `"preset"`, an explicit `"arch": {"p", "n_g", "n_d", "k",
//! "dilations"}` may be given. `data` holds `train_dir`/`val_dir` with pairs
//! on disk, a `procedural` section, or both (then `synth` writes the
//! generated pairs into the directories).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::blocks::dense_dilations;
use crate::data::{load_pairs, ImagePair};
use crate::error::{Error, Result};
use crate::loss::LossConfig;
use crate::net::ArchConfig;
use crate::synth::{dataset_from_dir, procedural_dataset, MoirePair};
use crate::train::TrainConfig;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplicitArch {
    pub p: usize,
    pub n_g: usize,
    pub n_d: usize,
    pub k: usize,
    #[serde(default)]
    pub dilations: Option<Vec<usize>>,
}

/// Generated dataset parameters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProceduralData {
    /// Training pairs.
    pub n: usize,
    /// Validation pairs.
    pub val_n: usize,
    /// Side length of generated clean images.
    #[serde(default = "default_size")]
    pub size: usize,
    /// Pair `i` of the training set uses seed `seed + i`; validation pairs
    /// continue after the training seeds.
    #[serde(default)]
    pub seed: u64,
    /// Take clean images from this directory instead of generating them.
    #[serde(default)]
    pub clean_dir: Option<PathBuf>,
}

fn default_size() -> usize {
    128
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    #[serde(default)]
    pub train_dir: Option<PathBuf>,
    #[serde(default)]
    pub val_dir: Option<PathBuf>,
    #[serde(default)]
    pub procedural: Option<ProceduralData>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub preset: Option<String>,
    #[serde(default)]
    pub arch: Option<ExplicitArch>,
    #[serde(default)]
    pub loss: LossConfig,
    #[serde(default)]
    pub train: TrainConfig,
    pub data: DataConfig,
    pub out_dir: PathBuf,
}

impl RunConfig {
    /// Parses and validates.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn arch_config(&self) -> Result<ArchConfig> {
        let arch = match (&self.preset, &self.arch) {
            (Some(name), None) => ArchConfig::preset(name),
            (None, Some(a)) => Ok(ArchConfig {
                name: "custom".to_owned(),
                c: 3,
                p: a.p,
                n_g: a.n_g,
                n_d: a.n_d,
                k: a.k,
                dilations: a.dilations.clone().unwrap_or_else(|| dense_dilations(a.k)),
            }),
            _ => Err(Error::Config(
                "exactly one of \"preset\" and \"arch\" must be given".into(),
            )),
        }?;
        arch.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(arch)
    }

    /// Training and validation pairs from the `procedural` section.
    /// Validation seeds continue after the training seeds; with `clean_dir`,
    /// validation uses the files after the training ones.
    pub fn generate(&self) -> Result<Option<(Vec<MoirePair>, Vec<MoirePair>)>> {
        let Some(p) = &self.data.procedural else {
            return Ok(None);
        };
        let val_seed = p.seed.wrapping_add(p.n as u64);
        let (train, val) = match &p.clean_dir {
            Some(dir) => (
                dataset_from_dir(dir, 0, p.n, p.size, p.seed)?,
                dataset_from_dir(dir, p.n, p.val_n, p.size, p.seed)?,
            ),
            None => (
                procedural_dataset(p.n, p.size, p.seed)?,
                procedural_dataset(p.val_n, p.size, val_seed)?,
            ),
        };
        if train.is_empty() || val.is_empty() {
            return Err(Error::Config(format!(
                "clean images yield {} training and {} validation pairs",
                train.len(),
                val.len()
            )));
        }
        Ok(Some((train, val)))
    }

    /// Pairs for training: loaded from `train_dir`/`val_dir` when both hold
    /// pairs on disk, generated in memory otherwise.
    pub fn datasets(&self) -> Result<(Vec<ImagePair>, Vec<ImagePair>)> {
        if let (Some(t), Some(v)) = (&self.data.train_dir, &self.data.val_dir) {
            let on_disk = |d: &Path| {
                crate::data::pair_ids(d)
                    .map(|ids| !ids.is_empty())
                    .unwrap_or(false)
            };
            if on_disk(t) && on_disk(v) || self.data.procedural.is_none() {
                return Ok((load_pairs(t)?, load_pairs(v)?));
            }
        }
        let (train, val) = self
            .generate()?
            .expect("validated: procedural section present");
        Ok((
            train.into_iter().map(Into::into).collect(),
            val.into_iter().map(Into::into).collect(),
        ))
    }

    pub fn validate(&self) -> Result<()> {
        self.arch_config()?;
        self.loss
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        self.train
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        let d = &self.data;
        match (&d.train_dir, &d.val_dir, &d.procedural) {
            (Some(_), Some(_), _) | (None, None, Some(_)) => {}
            _ => {
                return Err(Error::Config(
                    "data needs both train_dir and val_dir, or a procedural section".into(),
                ))
            }
        }
        if let Some(p) = &d.procedural {
            if p.n == 0 || p.val_n == 0 {
                return Err(Error::Config(
                    "procedural data needs n > 0 and val_n > 0".into(),
                ));
            }
            if p.size == 0 || p.size % crate::net::SIZE_MULTIPLE != 0 {
                return Err(Error::Config(format!(
                    "procedural size {} is not a multiple of 8",
                    p.size
                )));
            }
        }
        Ok(())
    }
}
