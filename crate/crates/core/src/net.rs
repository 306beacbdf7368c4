//! The three-branch network, its presets, ablations and self-ensemble
//! inference.
//!
//! Branch I runs at half the input resolution (after a ×2 unshuffle), branch
//! II at a quarter and branch III at an eighth. Each coarser branch decodes an
//! image at twice its own resolution, which the next finer branch fuses with
//! its features:
//!
//! ```text
//! unshuffle ─ entry1 ─ mtrb1 ─┬──────────────────────── concat ─ fusion1 ─ gtmb1 ─ mtrb2 ─ gtmb2 ─ ltmb1 ─ decoder1 → Ẑ¹
//!                             └ entry1/s2 ─ mtrb1 ─┬─── concat ─ fusion1 ─ gtmb1 ─ mtrb2 ─ gtmb2 ─ ltmb1 ─ decoder1 → Ẑ²
//!                                                  └ entry1/s2 ─ mtrb1 ─ gtmb1 ─ ltmb1 ─ decoder1 → Ẑ³
//! ```

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::blocks::{dense_dilations, Decoder, Gtmb, Ltmb, Mtrb};
use crate::dct::{dct_matrix, MAX_BLOCK, MIN_BLOCK};
use crate::error::{invalid, Result};
use crate::layers::{pixel_unshuffle, ConvParams, ConvSpec};
use crate::params::{
    is_fsl_scale, is_passband, Binder, Initializer, ModelParams, ParamSource, ParamStore,
};
use crate::tensor::{Scalar, Tensor};

/// Input height and width must be multiples of this.
pub const SIZE_MULTIPLE: usize = 8;

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchConfig {
    /// Preset this configuration came from, or `"custom"`.
    pub name: String,
    /// Image channels.
    pub c: usize,
    /// Block-IDCT size.
    pub p: usize,
    /// Trunk width.
    pub n_g: usize,
    /// Dense block growth.
    pub n_d: usize,
    /// Dense block depth.
    pub k: usize,
    pub dilations: Vec<usize>,
}

impl ArchConfig {
    pub const PRESETS: [&'static str; 3] = ["mbcnn", "mbcnn-light", "tiny"];

    pub fn preset(name: &str) -> Result<Self> {
        let (n_g, n_d, k) = match name {
            "mbcnn" => (128, 64, 5),
            "mbcnn-light" => (64, 32, 5),
            "tiny" => (16, 8, 3),
            other => {
                return Err(invalid!(
                    "unknown preset {other:?}, expected one of {:?}",
                    Self::PRESETS
                ))
            }
        };
        Ok(ArchConfig {
            name: name.to_owned(),
            c: 3,
            p: 8,
            n_g,
            n_d,
            k,
            dilations: dense_dilations(k),
        })
    }

    /// A custom configuration with the default dilation schedule.
    pub fn custom(c: usize, p: usize, n_g: usize, n_d: usize, k: usize) -> Self {
        ArchConfig {
            name: "custom".to_owned(),
            c,
            p,
            n_g,
            n_d,
            k,
            dilations: dense_dilations(k),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.c == 0 || self.n_g == 0 || self.n_d == 0 || self.k == 0 {
            return Err(invalid!(
                "channel counts and depth must be positive: {self:?}"
            ));
        }
        if !(MIN_BLOCK..=MAX_BLOCK).contains(&self.p) {
            return Err(invalid!(
                "block size {} outside [{MIN_BLOCK}, {MAX_BLOCK}]",
                self.p
            ));
        }
        if self.dilations.len() != self.k || self.dilations.contains(&0) {
            return Err(invalid!(
                "need {} positive dilations, got {:?}",
                self.k,
                self.dilations
            ));
        }
        Ok(())
    }
}

/// Which parts of the forward pass to skip.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ForwardOptions {
    /// Replace every MTRB with the identity.
    pub bypass_mtrb: bool,
}

#[derive(Debug, Clone)]
struct FineBranch {
    entry: ConvParams,
    mtrb1: Mtrb,
    fusion: ConvParams,
    gtmb1: Gtmb,
    mtrb2: Mtrb,
    gtmb2: Gtmb,
    ltmb: Ltmb,
    decoder: Decoder,
}

#[derive(Debug, Clone)]
struct CoarseBranch {
    entry: ConvParams,
    mtrb: Mtrb,
    gtmb: Gtmb,
    ltmb: Ltmb,
    decoder: Decoder,
}

/// The network with its parameters bound to one tape.
#[derive(Debug, Clone)]
pub struct Mbcnn {
    config: ArchConfig,
    branch1: FineBranch,
    branch2: FineBranch,
    branch3: CoarseBranch,
}

impl Mbcnn {
    /// Declares every parameter through `src`.
    pub fn new<T: Scalar>(
        src: &mut (impl ParamSource<T> + ?Sized),
        config: &ArchConfig,
    ) -> Result<Self> {
        config.validate()?;
        let basis = dct_matrix(config.p)?;
        let (w, nd, dil, c) = (config.n_g, config.n_d, &config.dilations[..], config.c);
        let fine = |src: &mut _, b: usize, entry: ConvParams| -> Result<FineBranch> {
            Ok(FineBranch {
                entry,
                mtrb1: Mtrb::new(src, &format!("branch{b}/mtrb1"), w, nd, dil, &basis)?,
                fusion: ConvParams::new(
                    src,
                    &format!("branch{b}/fusion1"),
                    1,
                    w + c,
                    w,
                    ConvSpec::default(),
                )?,
                gtmb1: Gtmb::new(src, &format!("branch{b}/gtmb1"), w, w)?,
                mtrb2: Mtrb::new(src, &format!("branch{b}/mtrb2"), w, nd, dil, &basis)?,
                gtmb2: Gtmb::new(src, &format!("branch{b}/gtmb2"), w, w)?,
                ltmb: Ltmb::new(src, &format!("branch{b}/ltmb1"), w, nd, dil)?,
                decoder: Decoder::new(src, &format!("branch{b}/decoder1"), w, c)?,
            })
        };
        let entry1 = ConvParams::new(src, "branch1/entry1", 3, 4 * c, w, ConvSpec::default())?;
        let branch1 = fine(src, 1, entry1)?;
        let entry2 = ConvParams::new(src, "branch2/entry1", 3, w, w, ConvSpec::strided(2))?;
        let branch2 = fine(src, 2, entry2)?;
        let branch3 = CoarseBranch {
            entry: ConvParams::new(src, "branch3/entry1", 3, w, w, ConvSpec::strided(2))?,
            mtrb: Mtrb::new(src, "branch3/mtrb1", w, nd, dil, &basis)?,
            gtmb: Gtmb::new(src, "branch3/gtmb1", w, w)?,
            ltmb: Ltmb::new(src, "branch3/ltmb1", w, nd, dil)?,
            decoder: Decoder::new(src, "branch3/decoder1", w, c)?,
        };
        Ok(Mbcnn {
            config: config.clone(),
            branch1,
            branch2,
            branch3,
        })
    }

    pub fn config(&self) -> &ArchConfig {
        &self.config
    }

    /// Returns `[Ẑ¹, Ẑ², Ẑ³]` at full, half and quarter resolution.
    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        image: Var,
        opts: ForwardOptions,
    ) -> Result<[Var; 3]> {
        let [_, h, w, c] = tape.shape(image);
        if c != self.config.c {
            return Err(invalid!(
                "input has {c} channels, model expects {}",
                self.config.c
            ));
        }
        if h == 0 || w == 0 || h % SIZE_MULTIPLE != 0 || w % SIZE_MULTIPLE != 0 {
            return Err(invalid!(
                "input size {h}x{w} is not a positive multiple of {SIZE_MULTIPLE}"
            ));
        }
        let mtrb = |tape: &mut Tape<T>, m: &Mtrb, x: Var| {
            if opts.bypass_mtrb {
                Ok(x)
            } else {
                m.forward(tape, x)
            }
        };

        let x = pixel_unshuffle(tape, image, 2)?;
        let b1 = &self.branch1;
        let f1 = b1.entry.forward_relu(tape, x)?;
        let f1 = mtrb(tape, &b1.mtrb1, f1)?;

        let b2 = &self.branch2;
        let f2 = b2.entry.forward_relu(tape, f1)?;
        let f2 = mtrb(tape, &b2.mtrb1, f2)?;

        let b3 = &self.branch3;
        let f3 = b3.entry.forward_relu(tape, f2)?;
        let f3 = mtrb(tape, &b3.mtrb, f3)?;
        let f3 = b3.gtmb.forward(tape, f3)?;
        let f3 = b3.ltmb.forward(tape, f3)?;
        let z3 = b3.decoder.forward(tape, f3)?;

        let resume = |tape: &mut Tape<T>, b: &FineBranch, f: Var, coarse: Var| -> Result<Var> {
            let f = tape.concat_channels(&[f, coarse])?;
            let f = b.fusion.forward_relu(tape, f)?;
            let f = b.gtmb1.forward(tape, f)?;
            let f = mtrb(tape, &b.mtrb2, f)?;
            let f = b.gtmb2.forward(tape, f)?;
            let f = b.ltmb.forward(tape, f)?;
            b.decoder.forward(tape, f)
        };
        let z2 = resume(tape, b2, f2, z3)?;
        let z1 = resume(tape, b1, f1, z2)?;
        Ok([z1, z2, z3])
    }
}

/// A network bound to a tape together with its name → variable map.
pub struct Bound {
    pub net: Mbcnn,
    pub vars: BTreeMap<String, Var>,
}

/// Ablation switches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ablation {
    /// Every passband forced to all-ones and frozen.
    NoLp,
    /// Every feature scale forced to zero and frozen.
    NoMtrb,
}

impl std::str::FromStr for Ablation {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "no-lp" => Ok(Ablation::NoLp),
            "no-mtrb" => Ok(Ablation::NoMtrb),
            other => Err(invalid!(
                "unknown ablation {other:?}, expected no-lp or no-mtrb"
            )),
        }
    }
}

/// Architecture, parameters and the set of parameters excluded from
/// training.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ArchConfig,
    pub params: ModelParams,
    pub frozen: BTreeSet<String>,
}

impl Model {
    /// Seeded, deterministic initialization.
    pub fn build(config: &ArchConfig, seed: u64) -> Result<Self> {
        let mut tape = Tape::<f32>::new();
        let mut init = Initializer::new(&mut tape, seed);
        Mbcnn::new(&mut init, config)?;
        Ok(Model {
            config: config.clone(),
            params: init.into_store(),
            frozen: BTreeSet::new(),
        })
    }

    /// Wraps existing parameters after checking that they match `config`
    /// exactly by name and shape.
    pub fn from_params(config: ArchConfig, params: ModelParams) -> Result<Self> {
        let frozen = BTreeSet::new();
        let mut tape = Tape::<f32>::new();
        bind_params(&mut tape, &config, &params, &frozen)?;
        Ok(Model {
            config,
            params,
            frozen,
        })
    }

    /// Binds the parameters (in training precision) onto `tape`.
    pub fn bind(&self, tape: &mut Tape<f32>) -> Result<Bound> {
        bind_params(tape, &self.config, &self.params, &self.frozen)
    }

    pub fn forward_with(
        &self,
        image: &Tensor<f32>,
        opts: ForwardOptions,
    ) -> Result<[Tensor<f32>; 3]> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape)?;
        let x = tape.constant(image.clone());
        let outs = bound.net.forward(&mut tape, x, opts)?;
        Ok(outs.map(|v| tape.value(v).clone()))
    }

    /// `[Ẑ¹, Ẑ², Ẑ³]` for an input whose sides are multiples of 8.
    pub fn forward(&self, image: &Tensor<f32>) -> Result<[Tensor<f32>; 3]> {
        self.forward_with(image, ForwardOptions::default())
    }

    /// Full-resolution output only.
    pub fn restore(&self, image: &Tensor<f32>) -> Result<Tensor<f32>> {
        let [z1, _, _] = self.forward(image)?;
        Ok(z1)
    }

    /// Modified copy with the given ablation applied.
    pub fn ablate(&self, mode: Ablation) -> Model {
        let mut m = self.clone();
        let (select, value): (fn(&str) -> bool, f32) = match mode {
            Ablation::NoLp => (is_passband, 1.0),
            Ablation::NoMtrb => (is_fsl_scale, 0.0),
        };
        for (name, t) in m.params.iter_mut() {
            if select(name) {
                t.data_mut().fill(value);
                m.frozen.insert(name.to_owned());
            }
        }
        m
    }

    /// Mean of the full-resolution outputs for the input rotated by 0°, 90°,
    /// 180° and 270°, each rotated back. Requires a square input.
    pub fn self_ensemble(&self, image: &Tensor<f32>) -> Result<Tensor<f32>> {
        let [_, h, w, _] = image.shape();
        if h != w {
            return Err(invalid!("self-ensemble needs a square input, got {h}x{w}"));
        }
        let mut acc: Option<Tensor<f32>> = None;
        for k in 0..4 {
            let out = self.restore(&image.rot90(k))?.rot90((4 - k) % 4);
            match &mut acc {
                None => acc = Some(out),
                Some(a) => a.add_assign(&out),
            }
        }
        Ok(acc.expect("four runs").map(|v| v * 0.25))
    }

    /// Restores an image of any size: reflect-pads the bottom and right edges
    /// to a multiple of 8, runs the network (optionally as a self-ensemble)
    /// and crops back. The output is not clamped.
    pub fn infer(&self, image: &Tensor<f32>, self_ensemble: bool) -> Result<Tensor<f32>> {
        let [_, h, w, _] = image.shape();
        if self_ensemble && h != w {
            return Err(invalid!("self-ensemble needs a square input, got {h}x{w}"));
        }
        let padded = image.reflect_pad_to_multiple(SIZE_MULTIPLE)?;
        let out = if self_ensemble {
            self.self_ensemble(&padded)?
        } else {
            self.restore(&padded)?
        };
        out.crop(0, 0, h, w)
    }

    /// Number of learnable scalars.
    pub fn param_count(&self) -> usize {
        self.params.scalar_count()
    }

    /// Names of all passband parameters, sorted.
    pub fn passband_names(&self) -> Vec<String> {
        self.params
            .names()
            .filter(|n| is_passband(n))
            .map(str::to_owned)
            .collect()
    }
}

/// Binds `store` onto `tape` under `config`, rejecting any name or shape
/// mismatch.
pub fn bind_params<T: Scalar>(
    tape: &mut Tape<T>,
    config: &ArchConfig,
    store: &ParamStore<T>,
    frozen: &BTreeSet<String>,
) -> Result<Bound> {
    let mut binder = Binder::new(tape, store, frozen);
    let net = Mbcnn::new(&mut binder, config)?;
    let vars = binder.finish()?;
    Ok(Bound { net, vars })
}
