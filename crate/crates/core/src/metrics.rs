//! Image quality metrics on `[0, 1]` images. Inputs are clamped first.

use std::fmt::Write as _;

use crate::error::{invalid, Result};
use crate::tensor::{Scalar, Tensor};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn clamped_pair<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<(Vec<f64>, Vec<f64>)> {
    if a.shape() != b.shape() {
        return Err(invalid!(
            "metric inputs have shapes {:?} and {:?}",
            a.shape(),
            b.shape()
        ));
    }
    let clamp = |t: &Tensor<T>| {
        t.data()
            .iter()
            .map(|v| v.as_f64().clamp(0.0, 1.0))
            .collect()
    };
    Ok((clamp(a), clamp(b)))
}

/// Mean squared error over all elements after clamping.
pub fn mse<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    let (a, b) = clamped_pair(a, b)?;
    if a.is_empty() {
        return Err(invalid!("metric on an empty image"));
    }
    Ok(a.iter()
        .zip(&b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.len() as f64)
}

/// `10·log10(1 / MSE)`, `+∞` when the images are identical.
pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * mse.log10()
    }
}

/// PSNR in dB with the MSE taken jointly over all channels.
pub fn psnr<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    Ok(psnr_from_mse(mse(a, b)?))
}

/// Normalized 1-D Gaussian window.
pub fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let mid = (size / 2) as f64;
    let g: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - mid).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Separable valid-region filtering of one `h × w` plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, g: &[f64]) -> Vec<f64> {
    let k = g.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..k).map(|i| g[i] * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..k).map(|i| g[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Structural similarity with an 11×11 Gaussian window (σ = 1.5) over the
/// valid region, averaged over positions, channels and batch items.
pub fn ssim<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    let (av, bv) = clamped_pair(a, b)?;
    let [n, h, w, c] = a.shape();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(invalid!(
            "ssim needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}"
        ));
    }
    let g = gaussian_window(SSIM_WINDOW, SSIM_SIGMA);
    let (c1, c2) = (SSIM_K1 * SSIM_K1, SSIM_K2 * SSIM_K2);
    let plane = |data: &[f64], b: usize, ch: usize| -> Vec<f64> {
        (0..h * w).map(|p| data[(b * h * w + p) * c + ch]).collect()
    };
    let mut total = 0.0;
    for b in 0..n {
        for ch in 0..c {
            let x = plane(&av, b, ch);
            let y = plane(&bv, b, ch);
            let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
            let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
            let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
            let [mx, my, sxx, syy, sxy] =
                [&x, &y, &xx, &yy, &xy].map(|p| filter_valid(p, h, w, &g));
            let map_sum: f64 = (0..mx.len())
                .map(|i| {
                    let (vx, vy) = (sxx[i] - mx[i] * mx[i], syy[i] - my[i] * my[i]);
                    let cov = sxy[i] - mx[i] * my[i];
                    ((2.0 * mx[i] * my[i] + c1) * (2.0 * cov + c2))
                        / ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2))
                })
                .sum();
            total += map_sum / mx.len() as f64;
        }
    }
    Ok(total / (n * c) as f64)
}

/// Per-image quality scores.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub id: String,
    pub psnr: f64,
    pub ssim: f64,
}

impl MetricsRow {
    pub fn compute<T: Scalar>(
        id: impl Into<String>,
        output: &Tensor<T>,
        target: &Tensor<T>,
    ) -> Result<Self> {
        Ok(MetricsRow {
            id: id.into(),
            psnr: psnr(output, target)?,
            ssim: ssim(output, target)?,
        })
    }
}

/// Arithmetic means of PSNR and SSIM.
pub fn mean_metrics(rows: &[MetricsRow]) -> (f64, f64) {
    let n = rows.len().max(1) as f64;
    (
        rows.iter().map(|r| r.psnr).sum::<f64>() / n,
        rows.iter().map(|r| r.ssim).sum::<f64>() / n,
    )
}

/// CSV with header `id,psnr,ssim`, rows sorted by id, and a final `mean` row.
pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut sorted: Vec<&MetricsRow> = rows.iter().collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    let mut s = String::from("id,psnr,ssim\n");
    for r in sorted {
        let _ = writeln!(s, "{},{:.6},{:.6}", r.id, r.psnr, r.ssim);
    }
    let (p, q) = mean_metrics(rows);
    let _ = writeln!(s, "mean,{p:.6},{q:.6}");
    s
}
