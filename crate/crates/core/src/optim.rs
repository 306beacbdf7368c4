//! Adam with a non-negativity projection for passbands, and the plateau
//! learning-rate schedule.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{invalid, Result};
use crate::params::{is_passband, ModelParams};
use crate::tensor::Tensor;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Moment estimates and step count of the Adam optimizer.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
}

impl AdamState {
    pub fn new(lr: f64) -> Self {
        AdamState {
            lr,
            step: 0,
            beta1: BETA1,
            beta2: BETA2,
            eps: EPSILON,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    /// First moment of `name`, if it has been updated.
    pub fn first_moment(&self, name: &str) -> Option<&[f64]> {
        self.m.get(name).map(Vec::as_slice)
    }

    /// One bias-corrected Adam update of every non-frozen parameter, then
    /// passbands are clamped to `[0, ∞)`.
    ///
    /// Every non-frozen parameter needs a gradient of matching shape.
    pub fn step(
        &mut self,
        params: &mut ModelParams,
        grads: &BTreeMap<String, Tensor<f32>>,
        frozen: &BTreeSet<String>,
    ) -> Result<()> {
        for (name, p) in params.iter() {
            if frozen.contains(name) {
                continue;
            }
            match grads.get(name) {
                None => return Err(invalid!("no gradient for parameter {name}")),
                Some(g) if g.shape() != p.shape() => {
                    return Err(invalid!(
                        "gradient of {name} has shape {:?}, parameter {:?}",
                        g.shape(),
                        p.shape()
                    ))
                }
                Some(_) => {}
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (self.beta1, self.beta2);
        let (c1, c2) = (1.0 - b1.powi(t), 1.0 - b2.powi(t));
        for (name, p) in params.iter_mut() {
            if frozen.contains(name) {
                continue;
            }
            let g = grads[name].data();
            let m = self
                .m
                .entry(name.to_owned())
                .or_insert_with(|| vec![0.0; g.len()]);
            let v = self
                .v
                .entry(name.to_owned())
                .or_insert_with(|| vec![0.0; g.len()]);
            let clamp = is_passband(name);
            for (((pi, &gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g)
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                let gi = gi as f64;
                *mi = b1 * *mi + (1.0 - b1) * gi;
                *vi = b2 * *vi + (1.0 - b2) * gi * gi;
                let update = self.lr * (*mi / c1) / ((*vi / c2).sqrt() + self.eps);
                let mut next = *pi as f64 - update;
                if clamp {
                    next = next.max(0.0);
                }
                *pi = next as f32;
            }
        }
        Ok(())
    }
}

/// Minimum validation PSNR gain (dB) that counts as progress.
pub const MIN_IMPROVEMENT_DB: f64 = 0.001;
/// Consecutive low-progress epochs that trigger a halving.
pub const PATIENCE: usize = 4;
/// Training stops once the learning rate falls below this.
pub const MIN_LR: f64 = 1e-6;

/// What the schedule decided after one epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleDecision {
    pub lr: f64,
    pub halved: bool,
    pub stop: bool,
}

/// Plateau schedule: halve the learning rate after four consecutive epochs
/// whose validation PSNR improves on the best so far by less than 0.001 dB.
#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleState {
    pub lr: f64,
    pub initial_lr: f64,
    /// Best validation PSNR seen so far.
    pub best: f64,
    pub low_count: usize,
    pub epochs: usize,
    /// 1-based epochs at which the learning rate was halved.
    pub halvings: Vec<usize>,
}

impl ScheduleState {
    pub fn new(lr: f64) -> Self {
        Self::with_best(lr, f64::NEG_INFINITY)
    }

    /// Starts from a known baseline PSNR instead of `−∞`.
    pub fn with_best(lr: f64, best: f64) -> Self {
        ScheduleState {
            lr,
            initial_lr: lr,
            best,
            low_count: 0,
            epochs: 0,
            halvings: Vec::new(),
        }
    }

    /// Feeds one epoch's validation PSNR.
    pub fn update(&mut self, val_psnr: f64) -> ScheduleDecision {
        self.epochs += 1;
        let improvement = val_psnr - self.best;
        if val_psnr > self.best {
            self.best = val_psnr;
        }
        let mut halved = false;
        if improvement >= MIN_IMPROVEMENT_DB {
            self.low_count = 0;
        } else {
            self.low_count += 1;
            if self.low_count >= PATIENCE {
                self.lr *= 0.5;
                self.low_count = 0;
                self.halvings.push(self.epochs);
                halved = true;
            }
        }
        ScheduleDecision {
            lr: self.lr,
            halved,
            stop: self.should_stop(),
        }
    }

    pub fn should_stop(&self) -> bool {
        self.lr < MIN_LR
    }
}
