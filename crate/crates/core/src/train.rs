//! Training loop: random crops, Adam steps on the multi-scale loss, and
//! per-epoch validation driving the plateau schedule.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::data::ImagePair;
use crate::error::{invalid, Error, Result};
use crate::io::save_checkpoint;
use crate::loss::{multiscale_loss, LossConfig};
use crate::metrics::{mean_metrics, MetricsRow};
use crate::net::{ForwardOptions, Model, SIZE_MULTIPLE};
use crate::optim::{AdamState, ScheduleState};
use crate::synth::permutation;
use crate::tensor::Tensor;

/// Optimization settings. With `stage2` set, patch size, batch size and
/// learning rate are replaced by the fine-tuning values (256, 4, 1e-5).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch: usize,
    pub patch: usize,
    pub epochs_max: usize,
    pub seed: u64,
    pub stage2: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            batch: 16,
            patch: 128,
            epochs_max: 100,
            seed: 0,
            stage2: false,
        }
    }
}

impl TrainConfig {
    pub fn stage2() -> Self {
        TrainConfig {
            stage2: true,
            ..Self::default()
        }
        .effective()
    }

    /// The settings actually used.
    pub fn effective(&self) -> Self {
        if self.stage2 {
            TrainConfig {
                lr: 1e-5,
                batch: 4,
                patch: 256,
                ..self.clone()
            }
        } else {
            self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let e = self.effective();
        if !(e.lr > 0.0 && e.lr.is_finite()) {
            return Err(invalid!("learning rate must be positive, got {}", e.lr));
        }
        if e.batch == 0 || e.epochs_max == 0 {
            return Err(invalid!("batch and epochs_max must be positive"));
        }
        if e.patch == 0 || e.patch % SIZE_MULTIPLE != 0 {
            return Err(invalid!(
                "patch size {} is not a positive multiple of {SIZE_MULTIPLE}",
                e.patch
            ));
        }
        Ok(())
    }
}

/// A model with its optimizer state.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: Model,
    pub adam: AdamState,
    pub loss: LossConfig,
}

impl Trainer {
    pub fn new(model: Model, lr: f64, loss: LossConfig) -> Self {
        Trainer {
            model,
            adam: AdamState::new(lr),
            loss,
        }
    }

    /// Multi-scale loss of a batch and its gradient for every trainable
    /// parameter.
    pub fn loss_and_grads(
        &self,
        moire: &Tensor<f32>,
        clean: &Tensor<f32>,
    ) -> Result<(f64, BTreeMap<String, Tensor<f32>>)> {
        let mut tape = Tape::new();
        let bound = self.model.bind(&mut tape)?;
        let x = tape.constant(moire.clone());
        let outs = bound.net.forward(&mut tape, x, ForwardOptions::default())?;
        let loss = multiscale_loss(&mut tape, outs, clean, &self.loss)?;
        let grads = tape.backward(loss)?;
        let named = bound
            .vars
            .iter()
            .filter(|(name, _)| !self.model.frozen.contains(*name))
            .map(|(name, &v)| (name.clone(), grads.get_or_zeros(v, tape.shape(v))))
            .collect();
        Ok((tape.value(loss).item() as f64, named))
    }

    /// One optimizer step; returns the loss before the update.
    pub fn step(&mut self, moire: &Tensor<f32>, clean: &Tensor<f32>) -> Result<f64> {
        let (loss, grads) = self.loss_and_grads(moire, clean)?;
        self.adam
            .step(&mut self.model.params, &grads, &self.model.frozen)?;
        Ok(loss)
    }
}

/// Mean PSNR and SSIM of `restore(moire)` (clamped) against the clean images.
pub fn validate_with(
    pairs: &[ImagePair],
    restore: impl Fn(&Tensor<f32>) -> Result<Tensor<f32>>,
) -> Result<(f64, f64)> {
    if pairs.is_empty() {
        return Err(invalid!("empty validation set"));
    }
    let rows = pairs
        .iter()
        .map(|p| MetricsRow::compute(p.id.clone(), &restore(&p.moire)?.clamp(0.0, 1.0), &p.clean))
        .collect::<Result<Vec<_>>>()?;
    Ok(mean_metrics(&rows))
}

/// Full-image validation of `model`.
pub fn validate(model: &Model, pairs: &[ImagePair]) -> Result<(f64, f64)> {
    validate_with(pairs, |x| model.infer(x, false))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_psnr: f64,
    pub val_ssim: f64,
}

pub fn log_csv(log: &[EpochLog]) -> String {
    let mut s = String::from("epoch,lr,train_loss,val_psnr,val_ssim\n");
    for e in log {
        let _ = writeln!(
            s,
            "{},{:e},{:.6},{:.4},{:.6}",
            e.epoch, e.lr, e.train_loss, e.val_psnr, e.val_ssim
        );
    }
    s
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    /// Model with the best validation PSNR.
    pub best: Model,
    pub best_psnr: f64,
    pub last: Model,
    pub log: Vec<EpochLog>,
    /// True when the schedule ended training before `epochs_max`.
    pub stopped: bool,
}

/// One random `patch × patch` crop per listed pair, stacked into a batch.
pub fn crop_batch(
    pairs: &[ImagePair],
    idx: &[usize],
    patch: usize,
    rng: &mut impl Rng,
) -> Result<(Tensor<f32>, Tensor<f32>)> {
    let mut moire = Vec::with_capacity(idx.len());
    let mut clean = Vec::with_capacity(idx.len());
    for &i in idx {
        let p = &pairs[i];
        let [_, h, w, _] = p.moire.shape();
        if h < patch || w < patch {
            return Err(invalid!(
                "pair {} is {h}x{w}, smaller than the {patch} patch",
                p.id
            ));
        }
        let (y, x) = (rng.gen_range(0..=h - patch), rng.gen_range(0..=w - patch));
        moire.push(p.moire.crop(y, x, patch, patch)?);
        clean.push(p.clean.crop(y, x, patch, patch)?);
    }
    Ok((Tensor::stack(&moire)?, Tensor::stack(&clean)?))
}

/// Trains until `epochs_max` or until the schedule stops. With `out_dir`,
/// writes `best.mbck`, `last.mbck` and `train_log.csv` after every epoch.
pub fn train(
    model: Model,
    cfg: &TrainConfig,
    loss: &LossConfig,
    train_set: &[ImagePair],
    val_set: &[ImagePair],
    out_dir: Option<&Path>,
) -> Result<TrainReport> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(invalid!("empty training set"));
    }
    if val_set.is_empty() {
        return Err(invalid!("empty validation set"));
    }
    let cfg = cfg.effective();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut trainer = Trainer::new(model, cfg.lr, *loss);
    let mut schedule = ScheduleState::new(cfg.lr);
    let mut best = (trainer.model.clone(), f64::NEG_INFINITY);
    let mut log = Vec::new();
    let mut stopped = false;
    for epoch in 1..=cfg.epochs_max {
        let order = permutation(train_set.len(), &mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch) {
            let (moire, clean) = crop_batch(train_set, chunk, cfg.patch, &mut rng)?;
            total += trainer.step(&moire, &clean)? * chunk.len() as f64;
        }
        let (val_psnr, val_ssim) = validate(&trainer.model, val_set)?;
        log.push(EpochLog {
            epoch,
            lr: trainer.adam.lr,
            train_loss: total / train_set.len() as f64,
            val_psnr,
            val_ssim,
        });
        if val_psnr > best.1 {
            best = (trainer.model.clone(), val_psnr);
            if let Some(dir) = out_dir {
                save_checkpoint(&best.0, &dir.join("best.mbck"))?;
            }
        }
        if let Some(dir) = out_dir {
            save_checkpoint(&trainer.model, &dir.join("last.mbck"))?;
            let path = dir.join("train_log.csv");
            std::fs::write(&path, log_csv(&log)).map_err(|e| Error::io(&path, e))?;
        }
        let decision = schedule.update(val_psnr);
        trainer.adam.lr = decision.lr;
        if decision.stop {
            stopped = true;
            break;
        }
    }
    Ok(TrainReport {
        best: best.0,
        best_psnr: best.1,
        last: trainer.model,
        log,
        stopped,
    })
}
