//! Block-DCT synthesis and the learnable bandpass filter.
//!
//! The inverse block-DCT of a per-pixel spectrum `ξ` (p² channels) is a fixed
//! 1×1 convolution whose kernel is the orthonormal 2-D DCT-II synthesis
//! matrix. The bandpass weights `θ` (one non-negative scalar per frequency)
//! are folded into that kernel instead of multiplying `ξ`:
//!
//! ```text
//! IDCT(θ ⊙ ξ) = (M · diag θ) ξ
//! ```
//!
//! Frequencies are ordered row-major, `k = u·p + v` for vertical frequency
//! `u` and horizontal frequency `v`; spatial positions in a block likewise as
//! `j = y·p + x`.

use std::path::Path;

use crate::autodiff::{Backward, GradSink, Tape, Var};
use crate::error::{invalid, Error, Result};
use crate::layers::{ConvParams, ConvSpec};
use crate::tensor::{Scalar, Tensor};

pub const MIN_BLOCK: usize = 2;
pub const MAX_BLOCK: usize = 16;

/// Orthonormal 2-D DCT-II synthesis matrix of block size `p`.
#[derive(Debug, Clone, PartialEq)]
pub struct DctBasis {
    p: usize,
    /// `p² × p²`, row-major; column `k` is the spatial pattern of frequency `k`.
    matrix: Vec<f64>,
}

/// 1-D DCT-II factor `C[k][n] = α_k cos(π(2n+1)k / 2p)`, row-major by `k`.
pub fn dct_factor(p: usize) -> Vec<f64> {
    let mut c = vec![0.0; p * p];
    for k in 0..p {
        let alpha = if k == 0 {
            (1.0 / p as f64).sqrt()
        } else {
            (2.0 / p as f64).sqrt()
        };
        for n in 0..p {
            c[k * p + n] = alpha
                * (std::f64::consts::PI * (2 * n + 1) as f64 * k as f64 / (2 * p) as f64).cos();
        }
    }
    c
}

/// Builds the synthesis basis for `2 ≤ p ≤ 16`.
pub fn dct_matrix(p: usize) -> Result<DctBasis> {
    if !(MIN_BLOCK..=MAX_BLOCK).contains(&p) {
        return Err(invalid!(
            "block size {p} outside [{MIN_BLOCK}, {MAX_BLOCK}]"
        ));
    }
    let c = dct_factor(p);
    let n = p * p;
    let mut matrix = vec![0.0; n * n];
    for y in 0..p {
        for x in 0..p {
            let j = y * p + x;
            for u in 0..p {
                for v in 0..p {
                    matrix[j * n + u * p + v] = c[u * p + y] * c[v * p + x];
                }
            }
        }
    }
    Ok(DctBasis { p, matrix })
}

impl DctBasis {
    pub fn block_size(&self) -> usize {
        self.p
    }

    /// Number of frequencies, `p²`.
    pub fn frequencies(&self) -> usize {
        self.p * self.p
    }

    /// Entry `(j, k)`: value at block position `j` of frequency `k`.
    pub fn at(&self, j: usize, k: usize) -> f64 {
        self.matrix[j * self.frequencies() + k]
    }

    pub fn matrix(&self) -> &[f64] {
        &self.matrix
    }

    /// Applies the synthesis to one spectrum vector.
    pub fn synthesize(&self, spectrum: &[f64]) -> Vec<f64> {
        let n = self.frequencies();
        (0..n)
            .map(|j| (0..n).map(|k| self.matrix[j * n + k] * spectrum[k]).sum())
            .collect()
    }

    /// The synthesis as a `(1, 1, p², p²)` kernel: `kernel[k][j] = M[j][k]`.
    pub fn kernel<T: Scalar>(&self) -> Tensor<T> {
        let n = self.frequencies();
        Tensor::from_fn([1, 1, n, n], |_, _, k, j| T::from_f64(self.at(j, k)))
    }
}

/// The fixed block-IDCT as a non-learnable, bias-free 1×1 convolution.
pub fn idct_as_kernel<T: Scalar>(tape: &mut Tape<T>, basis: &DctBasis) -> ConvParams {
    let kernel = tape.constant(basis.kernel());
    ConvParams {
        kernel,
        bias: None,
        spec: ConvSpec::default(),
    }
}

struct FoldOp<T> {
    theta: Var,
    /// Unscaled kernel, `(p², p²)` row-major by input frequency.
    base: Vec<T>,
    n: usize,
}

impl<T: Scalar> Backward<T> for FoldOp<T> {
    fn backward(&self, _: &Tape<T>, grad: &Tensor<T>, sink: &mut GradSink<'_, T>) {
        let n = self.n;
        sink.add_with(self.theta, |acc| {
            for (k, a) in acc.iter_mut().enumerate().take(n) {
                let row = k * n..(k + 1) * n;
                *a += grad.data()[row.clone()]
                    .iter()
                    .zip(&self.base[row])
                    .map(|(&g, &b)| g * b)
                    .sum::<T>();
            }
        });
    }
}

/// Folds the passband `θ` (`(1,1,1,p²)`) into the IDCT kernel.
///
/// The returned 1×1 convolution maps `ξ` to `IDCT(θ ⊙ ξ)`. Gradients flow to
/// `θ`. Negative weights are rejected; the optimizer projects them away.
pub fn fold_passband<T: Scalar>(
    tape: &mut Tape<T>,
    theta: Var,
    basis: &DctBasis,
) -> Result<ConvParams> {
    let n = basis.frequencies();
    let tv = tape.value(theta);
    if tv.len() != n {
        return Err(invalid!(
            "passband has {} weights, block size {} needs {}",
            tv.len(),
            basis.p,
            n
        ));
    }
    if let Some(bad) = tv.data().iter().position(|&v| v < T::zero() || v.is_nan()) {
        return Err(invalid!(
            "passband weight {} is negative ({})",
            bad,
            tv.data()[bad]
        ));
    }
    let base = basis.kernel::<T>().into_data();
    let mut folded = base.clone();
    for k in 0..n {
        let t = tv.data()[k];
        folded[k * n..(k + 1) * n].iter_mut().for_each(|v| *v *= t);
    }
    let kernel = tape.record(
        Tensor::new([1, 1, n, n], folded)?,
        &[theta],
        FoldOp { theta, base, n },
    );
    Ok(ConvParams {
        kernel,
        bias: None,
        spec: ConvSpec::default(),
    })
}

/// Learned per-frequency weights of one bandpass filter.
#[derive(Debug, Clone, PartialEq)]
pub struct Passband {
    p: usize,
    theta: Vec<f32>,
}

impl Passband {
    /// The all-pass initialization.
    pub fn ones(p: usize) -> Self {
        Passband {
            p,
            theta: vec![1.0; p * p],
        }
    }

    pub fn new(p: usize, theta: Vec<f32>) -> Result<Self> {
        if theta.len() != p * p {
            return Err(invalid!(
                "passband of block size {p} needs {} weights, got {}",
                p * p,
                theta.len()
            ));
        }
        Ok(Passband { p, theta })
    }

    pub fn from_tensor(t: &Tensor<f32>) -> Result<Self> {
        let p = (t.len() as f64).sqrt().round() as usize;
        Self::new(p, t.data().to_vec())
    }

    pub fn block_size(&self) -> usize {
        self.p
    }

    pub fn theta(&self) -> &[f32] {
        &self.theta
    }

    /// Rows indexed by vertical frequency `u`, columns by horizontal `v`.
    pub fn grid(&self) -> Vec<Vec<f32>> {
        self.theta.chunks(self.p).map(<[f32]>::to_vec).collect()
    }

    /// One line per `u`, comma-separated; values print in shortest
    /// round-trip form.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        for row in self.grid() {
            let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            s.push_str(&line.join(","));
            s.push('\n');
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut rows = Vec::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let row = line
                .split(',')
                .map(|v| {
                    v.trim()
                        .parse::<f32>()
                        .map_err(|e| invalid!("bad passband value {v:?}: {e}"))
                })
                .collect::<Result<Vec<f32>>>()?;
            rows.push(row);
        }
        let p = rows.len();
        if rows.iter().any(|r| r.len() != p) {
            return Err(invalid!("passband CSV is not square"));
        }
        Self::new(p, rows.concat())
    }

    /// 8-bit min-max normalized grayscale levels, row-major. A constant
    /// passband maps to mid-gray everywhere.
    pub fn gray_levels(&self) -> Vec<u8> {
        let lo = self.theta.iter().copied().fold(f32::INFINITY, f32::min);
        let hi = self.theta.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        self.theta
            .iter()
            .map(|&v| {
                if hi > lo {
                    ((v - lo) / (hi - lo) * 255.0).round() as u8
                } else {
                    128
                }
            })
            .collect()
    }

    /// Writes `{stem}.png` (grayscale grid) and `{stem}.csv` (raw weights).
    pub fn export(&self, dir: &Path, stem: &str) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let png = dir.join(format!("{stem}.png"));
        let img = image::GrayImage::from_raw(self.p as u32, self.p as u32, self.gray_levels())
            .expect("buffer length is p²");
        img.save(&png).map_err(|e| Error::Image {
            path: png.clone(),
            message: e.to_string(),
        })?;
        let csv = dir.join(format!("{stem}.csv"));
        std::fs::write(&csv, self.to_csv()).map_err(|e| Error::io(&csv, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn factor_for_p2() {
        let c = dct_factor(2);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        for (got, want) in c.iter().zip([h, h, h, -h]) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn block_size_range() {
        assert!(dct_matrix(1).is_err());
        assert!(dct_matrix(17).is_err());
        assert!(dct_matrix(2).is_ok());
        assert!(dct_matrix(16).is_ok());
    }

    #[test]
    fn dc_column_is_constant() {
        let b = dct_matrix(8).unwrap();
        for j in 0..64 {
            assert!((b.at(j, 0) - 0.125).abs() < 1e-12);
        }
        let mut e0 = vec![0.0; 64];
        e0[0] = 1.0;
        assert!(b.synthesize(&e0).iter().all(|v| (v - 0.125).abs() < 1e-12));
    }

    #[test]
    fn fold_with_ones_is_the_plain_kernel() {
        let b = dct_matrix(4).unwrap();
        let mut tape = Tape::<f64>::new();
        let theta = tape.param(Tensor::ones([1, 1, 1, 16]));
        let folded = fold_passband(&mut tape, theta, &b).unwrap();
        let plain = idct_as_kernel(&mut tape, &b);
        assert_eq!(tape.value(folded.kernel), tape.value(plain.kernel));

        let zero = tape.param(Tensor::zeros([1, 1, 1, 16]));
        let z = fold_passband(&mut tape, zero, &b).unwrap();
        assert!(tape.value(z.kernel).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn fold_rejects_negative_and_wrong_length() {
        let b = dct_matrix(2).unwrap();
        let mut tape = Tape::<f32>::new();
        let neg = tape.param(Tensor::vector(&[1.0, -0.1, 1.0, 1.0]));
        assert!(fold_passband(&mut tape, neg, &b).is_err());
        let short = tape.param(Tensor::vector(&[1.0, 1.0]));
        assert!(fold_passband(&mut tape, short, &b).is_err());
    }

    #[test]
    fn passband_csv_round_trip_and_grid_order() {
        let mut theta: Vec<f32> = (0..16).map(|i| 0.1 + i as f32 / 7.0).collect();
        theta[0] = 3.0;
        let pb = Passband::new(4, theta.clone()).unwrap();
        assert_eq!(Passband::from_csv(&pb.to_csv()).unwrap(), pb);
        let levels = pb.gray_levels();
        assert_eq!(levels[0], 255);
        assert_eq!(*levels.iter().max().unwrap(), 255);
        let grid = pb.grid();
        assert_eq!(grid[1][2], theta[6]);

        let flat = Passband::ones(8).gray_levels();
        assert!(flat.iter().all(|&v| v == flat[0]));
    }
}
