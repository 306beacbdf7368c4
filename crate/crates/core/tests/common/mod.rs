//! Helpers and independent oracles shared by the integration tests.
#![allow(dead_code)]

use std::f64::consts::PI;
use std::path::PathBuf;

use mbcnn::autodiff::{Tape, Var};
use mbcnn::dct::{dct_matrix, fold_passband, idct_as_kernel};
use mbcnn::layers::conv2d;
use mbcnn::loss::Kernel3;
use mbcnn::net::{ArchConfig, Model};
use mbcnn::{Result, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub fn random(shape: [usize; 4], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_, _, _, _| rng.gen_range(-1.0..1.0))
}

pub fn random_unit(shape: [usize; 4], seed: u64) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_, _, _, _| rng.gen_range(0.0..1.0))
}

/// `Σ y ⊙ r` for a fixed random `r`.
pub fn weighted_sum(t: &mut Tape<f64>, y: Var, seed: u64) -> Result<Var> {
    let r = t.constant(random(t.shape(y), seed));
    let p = t.mul(y, r)?;
    Ok(t.sum(p))
}

/// Value of 2-D DCT-II basis function `(u, v)` at block position `(y, x)`,
/// evaluated from the textbook formula.
pub fn dct_basis_value(p: usize, u: usize, v: usize, y: usize, x: usize) -> f64 {
    let a = |k: usize| {
        if k == 0 {
            (1.0 / p as f64).sqrt()
        } else {
            (2.0 / p as f64).sqrt()
        }
    };
    let c = |k: usize, n: usize| (PI * (2 * n + 1) as f64 * k as f64 / (2 * p) as f64).cos();
    a(u) * a(v) * c(u, y) * c(v, x)
}

/// Block synthesis by the double sum over frequencies.
pub fn idct_block(p: usize, spectrum: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; p * p];
    for y in 0..p {
        for x in 0..p {
            for u in 0..p {
                for v in 0..p {
                    out[y * p + x] += spectrum[u * p + v] * dct_basis_value(p, u, v, y, x);
                }
            }
        }
    }
    out
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// SHA-256 of the full-resolution output of the golden model on
/// [`golden_input`], over the little-endian bytes of the f32 values.
pub const GOLDEN_OUTPUT_SHA256: &str =
    "75b22184269ae28f67a99ab40b4885a0a3b92c1112e19a18f310bf192bd9b20e";

pub fn golden_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data/golden.mbck")
}

/// Seeded build with decoder kernels set from a closed-form pattern, so the
/// output depends on every block.
pub fn golden_model() -> Model {
    let mut m = Model::build(&ArchConfig::custom(3, 4, 4, 2, 2), 2024).unwrap();
    for (name, t) in m.params.iter_mut() {
        if name.ends_with("decoder1/conv/kernel") {
            for (i, v) in t.data_mut().iter_mut().enumerate() {
                *v = ((i * 7919) % 101) as f32 / 1000.0 - 0.05;
            }
        }
    }
    m
}

pub fn golden_input() -> Tensor<f32> {
    Tensor::from_fn([1, 16, 16, 3], |_, y, x, c| {
        ((y * 16 + x) * 3 + c) as f32 % 17.0 / 16.0
    })
}

pub fn golden_output_hash(m: &Model) -> String {
    let out = m.restore(&golden_input()).unwrap();
    let mut h = Sha256::new();
    for v in out.data() {
        h.update(v.to_le_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// A fresh model decodes every input to mid-gray; give the decoders random
/// kernels so outputs depend on the whole network.
pub fn with_random_decoders(mut m: Model, seed: u64) -> Model {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (name, t) in m.params.iter_mut() {
        if name.ends_with("decoder1/conv/kernel") {
            t.data_mut()
                .iter_mut()
                .for_each(|v| *v = rng.gen_range(-0.05..0.05));
        }
    }
    m
}

/// IDCT of a spectrum map through the 1×1 convolution path.
pub fn apply_idct(p: usize, xi: &Tensor<f64>) -> Tensor<f64> {
    let basis = dct_matrix(p).unwrap();
    let mut t = Tape::new();
    let x = t.constant(xi.clone());
    let k = idct_as_kernel(&mut t, &basis);
    let y = conv2d(&mut t, x, &k).unwrap();
    t.value(y).clone()
}

/// Spectrum map through the passband-folded convolution.
pub fn apply_folded(p: usize, theta: &[f64], xi: &Tensor<f64>) -> Tensor<f64> {
    let basis = dct_matrix(p).unwrap();
    let mut t = Tape::new();
    let x = t.constant(xi.clone());
    let th = t.constant(Tensor::vector(theta));
    let k = fold_passband(&mut t, th, &basis).unwrap();
    let y = conv2d(&mut t, x, &k).unwrap();
    t.value(y).clone()
}

pub fn l1_oracle(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += (a.data()[i] - b.data()[i]).abs();
    }
    s / a.len() as f64
}

/// Mean over valid positions, channels and kernels of |k ⋆ a − k ⋆ b|.
#[allow(clippy::needless_range_loop)]
pub fn filter_oracle(a: &Tensor<f64>, b: &Tensor<f64>, kernels: &[Kernel3]) -> f64 {
    let [n, h, w, c] = a.shape();
    let mut total = 0.0;
    let mut count = 0usize;
    for k in kernels {
        for bi in 0..n {
            for y in 0..h - 2 {
                for x in 0..w - 2 {
                    for ch in 0..c {
                        let (mut ra, mut rb) = (0.0, 0.0);
                        for i in 0..3 {
                            for j in 0..3 {
                                ra += k[i][j] * a.get(bi, y + i, x + j, ch);
                                rb += k[i][j] * b.get(bi, y + i, x + j, ch);
                            }
                        }
                        total += (ra - rb).abs();
                        count += 1;
                    }
                }
            }
        }
    }
    total / count as f64
}
