//! Training losses: L1, Sobel, advanced Sobel (ASL), their weighted
//! combination and the three-scale supervision sum.
//!
//! Directional filter responses are evaluated on the valid region only (no
//! padding), per channel. Because the filters are linear,
//! `|S(z) − S(ẑ)| = |S(ẑ − z)|` and only the difference is filtered.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Backward, GradSink, Tape, Var};
use crate::error::{invalid, Result};
use crate::tensor::{Scalar, Tensor};

pub type Kernel3 = [[f64; 3]; 3];

pub const SOBEL_H: Kernel3 = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
pub const SOBEL_V: Kernel3 = [[-1.0, -2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]];
pub const SOBEL_D1: Kernel3 = [[0.0, 1.0, 2.0], [-1.0, 0.0, 1.0], [-2.0, -1.0, 0.0]];
pub const SOBEL_D2: Kernel3 = [[-2.0, -1.0, 0.0], [-1.0, 0.0, 1.0], [0.0, 1.0, 2.0]];

/// A set of fixed 3×3 directional derivative filters.
#[derive(Debug, Clone, PartialEq)]
pub struct SobelBank {
    pub kernels: Vec<Kernel3>,
}

impl SobelBank {
    /// Horizontal and vertical filters.
    pub fn classic() -> Self {
        SobelBank {
            kernels: vec![SOBEL_H, SOBEL_V],
        }
    }

    /// The classic pair plus the two diagonal filters.
    pub fn advanced() -> Self {
        SobelBank {
            kernels: vec![SOBEL_H, SOBEL_V, SOBEL_D1, SOBEL_D2],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LossVariant {
    #[serde(rename = "l1")]
    L1,
    #[serde(rename = "l1+sobel")]
    L1Sobel,
    #[serde(rename = "l1+asl")]
    L1Asl,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    pub variant: LossVariant,
    pub lambda: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self::asl()
    }
}

impl LossConfig {
    pub fn l1() -> Self {
        LossConfig {
            variant: LossVariant::L1,
            lambda: 0.0,
        }
    }

    pub fn sobel() -> Self {
        LossConfig {
            variant: LossVariant::L1Sobel,
            lambda: 0.5,
        }
    }

    pub fn asl() -> Self {
        LossConfig {
            variant: LossVariant::L1Asl,
            lambda: 0.25,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(invalid!(
                "loss weight must be finite and non-negative, got {}",
                self.lambda
            ));
        }
        Ok(())
    }
}

fn difference<T: Scalar>(tape: &mut Tape<T>, zh: Var, z: Var, what: &str) -> Result<Var> {
    if tape.shape(zh) != tape.shape(z) {
        return Err(invalid!(
            "{what}: shapes {:?} and {:?} differ",
            tape.shape(zh),
            tape.shape(z)
        ));
    }
    tape.sub(zh, z)
}

/// Mean absolute difference.
pub fn l1_loss<T: Scalar>(tape: &mut Tape<T>, zh: Var, z: Var) -> Result<Var> {
    let d = difference(tape, zh, z, "l1_loss")?;
    Ok(tape.mean_abs(d))
}

/// Tap pairs `(a, b)` with `b` the point reflection of `a` through the
/// window centre. Every kernel in a bank is antisymmetric under that
/// reflection.
const TAP_PAIRS: [((usize, usize), (usize, usize)); 4] = [
    ((0, 0), (2, 2)),
    ((0, 1), (2, 1)),
    ((0, 2), (2, 0)),
    ((1, 0), (1, 2)),
];

struct DirectionalOp {
    x: Var,
    /// `[filter][pair]` weights.
    weights: Vec<[f64; 4]>,
}

impl<T: Scalar> Backward<T> for DirectionalOp {
    fn backward(&self, tape: &Tape<T>, grad: &Tensor<T>, sink: &mut GradSink<'_, T>) {
        let [n, h, w, c] = tape.shape(self.x);
        let f = self.weights.len();
        let (oh, ow) = (h - 2, w - 2);
        let weights: Vec<[T; 4]> = self.weights.iter().map(|r| r.map(T::from_f64)).collect();
        sink.add_with(self.x, |acc| {
            for b in 0..n {
                for y in 0..oh {
                    for x in 0..ow {
                        for ch in 0..c {
                            let go = ((b * oh + y) * ow + x) * c * f + ch * f;
                            for (t, &((ay, ax), (by, bx))) in TAP_PAIRS.iter().enumerate() {
                                let g: T =
                                    (0..f).map(|k| weights[k][t] * grad.data()[go + k]).sum();
                                acc[((b * h + y + ay) * w + x + ax) * c + ch] += g;
                                acc[((b * h + y + by) * w + x + bx) * c + ch] -= g;
                            }
                        }
                    }
                }
            }
        });
    }
}

impl SobelBank {
    /// Valid-region depthwise responses, shape `(b, h−2, w−2, c·F)` with
    /// channel `c·F + f` holding filter `f` on input channel `c`.
    ///
    /// Each response is accumulated from differences of reflected taps, so
    /// a constant input gives exactly zero.
    pub fn apply<T: Scalar>(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let [n, h, w, c] = tape.shape(x);
        if h < 3 || w < 3 {
            return Err(invalid!(
                "directional filters need at least 3x3 images, got {h}x{w}"
            ));
        }
        let mut weights = Vec::with_capacity(self.kernels.len());
        for k in &self.kernels {
            let mut row = [0.0; 4];
            for (t, &((ay, ax), (by, bx))) in TAP_PAIRS.iter().enumerate() {
                if k[by][bx] != -k[ay][ax] || k[1][1] != 0.0 {
                    return Err(invalid!("directional kernel {k:?} is not antisymmetric"));
                }
                row[t] = k[ay][ax];
            }
            weights.push(row);
        }
        let f = weights.len();
        let (oh, ow) = (h - 2, w - 2);
        let tw: Vec<[T; 4]> = weights.iter().map(|r| r.map(T::from_f64)).collect();
        let xv = tape.value(x).data();
        let mut out = vec![T::zero(); n * oh * ow * c * f];
        for b in 0..n {
            for y in 0..oh {
                for xx in 0..ow {
                    for ch in 0..c {
                        let mut diffs = [T::zero(); 4];
                        for (t, &((ay, ax), (by, bx))) in TAP_PAIRS.iter().enumerate() {
                            diffs[t] = xv[((b * h + y + ay) * w + xx + ax) * c + ch]
                                - xv[((b * h + y + by) * w + xx + bx) * c + ch];
                        }
                        let o = ((b * oh + y) * ow + xx) * c * f + ch * f;
                        for k in 0..f {
                            out[o + k] = (0..4).map(|t| tw[k][t] * diffs[t]).sum();
                        }
                    }
                }
            }
        }
        let value = Tensor::new([n, oh, ow, c * f], out)?;
        Ok(tape.record(value, &[x], DirectionalOp { x, weights }))
    }
}

/// Mean absolute difference of the filter responses of `bank`.
pub fn filtered_loss<T: Scalar>(
    tape: &mut Tape<T>,
    zh: Var,
    z: Var,
    bank: &SobelBank,
) -> Result<Var> {
    let d = difference(tape, zh, z, "sobel loss")?;
    let r = bank.apply(tape, d)?;
    Ok(tape.mean_abs(r))
}

pub fn sobel_loss<T: Scalar>(tape: &mut Tape<T>, zh: Var, z: Var) -> Result<Var> {
    filtered_loss(tape, zh, z, &SobelBank::classic())
}

/// Advanced Sobel loss: four directions including both diagonals.
pub fn asl_loss<T: Scalar>(tape: &mut Tape<T>, zh: Var, z: Var) -> Result<Var> {
    filtered_loss(tape, zh, z, &SobelBank::advanced())
}

/// `L1 + λ · term`, where the term depends on the variant.
pub fn combined_loss<T: Scalar>(
    tape: &mut Tape<T>,
    zh: Var,
    z: Var,
    cfg: &LossConfig,
) -> Result<Var> {
    cfg.validate()?;
    let l1 = l1_loss(tape, zh, z)?;
    let term = match cfg.variant {
        LossVariant::L1 => return Ok(l1),
        LossVariant::L1Sobel => sobel_loss(tape, zh, z)?,
        LossVariant::L1Asl => asl_loss(tape, zh, z)?,
    };
    let weighted = tape.scale_const(term, T::from_f64(cfg.lambda));
    tape.add(l1, weighted)
}

/// Ground truth at full, half and quarter resolution.
pub fn gt_pyramid<T: Scalar>(gt: &Tensor<T>) -> Result<[Tensor<T>; 3]> {
    Ok([gt.clone(), gt.avg_pool(2)?, gt.avg_pool(4)?])
}

/// Unweighted sum of the combined loss over the three branch outputs, each
/// against the average-pooled ground truth of matching size.
pub fn multiscale_loss<T: Scalar>(
    tape: &mut Tape<T>,
    outs: [Var; 3],
    gt: &Tensor<T>,
    cfg: &LossConfig,
) -> Result<Var> {
    let mut total = None;
    for (out, target) in outs.into_iter().zip(gt_pyramid(gt)?) {
        let target = tape.constant(target);
        let l = combined_loss(tape, out, target, cfg)?;
        total = Some(match total {
            None => l,
            Some(t) => tape.add(t, l)?,
        });
    }
    Ok(total.expect("three terms"))
}

/// Evaluates a loss on plain tensors in double precision.
pub fn loss_value<T: Scalar>(
    zh: &Tensor<T>,
    z: &Tensor<T>,
    f: impl FnOnce(&mut Tape<f64>, Var, Var) -> Result<Var>,
) -> Result<f64> {
    let mut tape = Tape::<f64>::new();
    let a = tape.constant(zh.cast());
    let b = tape.constant(z.cast());
    let l = f(&mut tape, a, b)?;
    Ok(tape.value(l).item())
}
