//! Synthetic moire pairs: a per-channel tone curve applied to a clean image
//! plus a sum of multi-scale cosine gratings,
//!
//! ```text
//! moire = clamp(ψ(clean) + N),   N = Σ_scales Σ_components a_ch · cos(2π f (x cos φ + y sin φ) + κ(x² + y²) + phase)
//! ```
//!
//! Scale `i` is rendered on a grid `2^i` times coarser and bilinearly
//! upsampled. Everything is a pure function of the seed.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::ImagePair;
use crate::error::{invalid, Result};
use crate::tensor::Tensor;

pub const MAX_SCALES: usize = 3;
pub const MAX_COMPONENTS: usize = 2;

/// `x ↦ clamp(gain · x^gamma + offset)` for one channel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToneCurve {
    pub gamma: f64,
    pub gain: f64,
    pub offset: f64,
}

impl ToneCurve {
    pub const IDENTITY: ToneCurve = ToneCurve {
        gamma: 1.0,
        gain: 1.0,
        offset: 0.0,
    };

    pub fn apply(&self, x: f64) -> f64 {
        (self.gain * x.powf(self.gamma) + self.offset).clamp(0.0, 1.0)
    }
}

/// One cosine grating.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grating {
    /// Rendered at `1 / 2^scale` resolution.
    pub scale: usize,
    /// Radians in `[0, π)`.
    pub orientation: f64,
    /// Cycles per pixel of the grid it is rendered on.
    pub frequency: f64,
    /// Per-channel amplitude.
    pub amplitude: [f64; 3],
    pub phase: f64,
}

impl Grating {
    /// Value at pixel `(y, x)` of the grid of its own scale.
    pub fn eval(&self, y: f64, x: f64, curvature: f64, ch: usize) -> f64 {
        let arg = 2.0
            * std::f64::consts::PI
            * self.frequency
            * (x * self.orientation.cos() + y * self.orientation.sin())
            + curvature * (x * x + y * y)
            + self.phase;
        self.amplitude[ch] * arg.cos()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DegradationParams {
    pub tone: [ToneCurve; 3],
    pub gratings: Vec<Grating>,
    /// Quadratic phase warp bending the fringes.
    pub curvature: f64,
}

impl DegradationParams {
    /// Leaves the image untouched.
    pub fn identity() -> Self {
        DegradationParams {
            tone: [ToneCurve::IDENTITY; 3],
            gratings: Vec::new(),
            curvature: 0.0,
        }
    }

    /// Samples tone curves, 1–3 scales with 1–2 gratings each, and a
    /// curvature.
    pub fn sample(rng: &mut impl Rng) -> Self {
        let tone = [(); 3].map(|_| ToneCurve {
            gamma: rng.gen_range(0.7..=1.4),
            gain: rng.gen_range(0.8..=1.2),
            offset: rng.gen_range(-0.05..=0.05),
        });
        let scales = rng.gen_range(1..=MAX_SCALES);
        let mut gratings = Vec::new();
        for scale in 0..scales {
            for _ in 0..rng.gen_range(1..=MAX_COMPONENTS) {
                gratings.push(Grating {
                    scale,
                    orientation: rng.gen_range(0.0..std::f64::consts::PI),
                    frequency: rng.gen_range(0.02..=0.45),
                    amplitude: [(); 3].map(|_| rng.gen_range(0.02..=0.15)),
                    phase: rng.gen_range(0.0..2.0 * std::f64::consts::PI),
                });
            }
        }
        DegradationParams {
            tone,
            gratings,
            curvature: rng.gen_range(0.0..=0.002),
        }
    }
}

/// Applies the per-channel tone curves to a 3-channel image.
pub fn tone_map(img: &Tensor<f32>, tone: &[ToneCurve; 3]) -> Result<Tensor<f32>> {
    if img.channels() != 3 {
        return Err(invalid!(
            "tone_map expects 3 channels, got {}",
            img.channels()
        ));
    }
    Ok(Tensor::from_fn(img.shape(), |b, y, x, c| {
        tone[c].apply(img.get(b, y, x, c) as f64) as f32
    }))
}

/// Bilinear ×`factor` resampling of a `(gh, gw)` grid to `(h, w)` with
/// half-pixel centres and edge clamping.
fn upsample(grid: &[f64], gh: usize, gw: usize, factor: usize, h: usize, w: usize) -> Vec<f64> {
    let coord = |o: usize, n: usize| {
        let s = ((o as f64 + 0.5) / factor as f64 - 0.5).clamp(0.0, (n - 1) as f64);
        let i = (s.floor() as usize).min(n - 1);
        (i, (i + 1).min(n - 1), s - i as f64)
    };
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        let (y0, y1, fy) = coord(y, gh);
        for x in 0..w {
            let (x0, x1, fx) = coord(x, gw);
            let top = grid[y0 * gw + x0] * (1.0 - fx) + grid[y0 * gw + x1] * fx;
            let bottom = grid[y1 * gw + x0] * (1.0 - fx) + grid[y1 * gw + x1] * fx;
            out[y * w + x] = top * (1.0 - fy) + bottom * fy;
        }
    }
    out
}

/// The additive moire field `(1, h, w, 3)` in double precision.
pub fn moire_field(h: usize, w: usize, gratings: &[Grating], curvature: f64) -> Tensor<f64> {
    let mut field = vec![0.0; h * w * 3];
    for scale in 0..=gratings.iter().map(|g| g.scale).max().unwrap_or(0) {
        let members: Vec<&Grating> = gratings.iter().filter(|g| g.scale == scale).collect();
        if members.is_empty() {
            continue;
        }
        let factor = 1usize << scale;
        let (gh, gw) = (h.div_ceil(factor), w.div_ceil(factor));
        for ch in 0..3 {
            let mut grid = vec![0.0; gh * gw];
            for (i, v) in grid.iter_mut().enumerate() {
                let (y, x) = ((i / gw) as f64, (i % gw) as f64);
                *v = members.iter().map(|g| g.eval(y, x, curvature, ch)).sum();
            }
            let full = if factor == 1 {
                grid
            } else {
                upsample(&grid, gh, gw, factor, h, w)
            };
            for (p, v) in full.into_iter().enumerate() {
                field[p * 3 + ch] += v;
            }
        }
    }
    Tensor::new([1, h, w, 3], field).expect("field buffer matches shape")
}

/// A generated training sample.
#[derive(Debug, Clone, PartialEq)]
pub struct MoirePair {
    pub id: String,
    pub seed: u64,
    pub params: DegradationParams,
    pub clean: Tensor<f32>,
    pub moire: Tensor<f32>,
}

impl From<MoirePair> for ImagePair {
    fn from(p: MoirePair) -> Self {
        ImagePair {
            id: p.id,
            moire: p.moire,
            clean: p.clean,
        }
    }
}

/// Degrades `clean` with explicit parameters.
pub fn degrade(clean: &Tensor<f32>, params: &DegradationParams) -> Result<Tensor<f32>> {
    let [n, h, w, c] = clean.shape();
    if n != 1 || c != 3 {
        return Err(invalid!(
            "expected a (1, h, w, 3) image, got {:?}",
            clean.shape()
        ));
    }
    let field = moire_field(h, w, &params.gratings, params.curvature);
    let toned = tone_map(clean, &params.tone)?;
    Ok(Tensor::from_fn(clean.shape(), |_, y, x, ch| {
        (toned.get(0, y, x, ch) as f64 + field.get(0, y, x, ch)).clamp(0.0, 1.0) as f32
    }))
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Degrades `clean` with parameters drawn from `seed`.
pub fn synth_pair(clean: &Tensor<f32>, seed: u64) -> Result<MoirePair> {
    let params = DegradationParams::sample(&mut stream(seed, 0));
    let moire = degrade(clean, &params)?;
    Ok(MoirePair {
        id: String::new(),
        seed,
        params,
        clean: clean.clone(),
        moire,
    })
}

/// A clean image with smooth colour gradients, dark text-like bars and
/// checkerboard patches. Values lie in `[0, 1]`.
pub fn procedural_clean(h: usize, w: usize, rng: &mut impl Rng) -> Tensor<f32> {
    let corners: [[f64; 3]; 4] = [(); 4].map(|_| [(); 3].map(|_| rng.gen_range(0.15..0.95)));
    let mut img = Tensor::<f64>::from_fn([1, h, w, 3], |_, y, x, c| {
        let fy = y as f64 / (h.max(2) - 1) as f64;
        let fx = x as f64 / (w.max(2) - 1) as f64;
        let top = corners[0][c] * (1.0 - fx) + corners[1][c] * fx;
        let bottom = corners[2][c] * (1.0 - fx) + corners[3][c] * fx;
        top * (1.0 - fy) + bottom * fy
    });
    let area = (h * w) as f64;
    let bars = rng.gen_range(4..=((area / 256.0) as usize).max(6));
    for _ in 0..bars {
        let bh = rng.gen_range(1..=(h / 12).max(2));
        let bw = rng.gen_range(2..=(w / 4).max(3));
        let (y0, x0) = (rng.gen_range(0..h), rng.gen_range(0..w));
        let colour = [(); 3].map(|_| rng.gen_range(0.0..0.35));
        for y in y0..(y0 + bh).min(h) {
            for x in x0..(x0 + bw).min(w) {
                for (c, &v) in colour.iter().enumerate() {
                    img.set(0, y, x, c, v);
                }
            }
        }
    }
    for _ in 0..rng.gen_range(1..=3) {
        let cell = rng.gen_range(1..=4);
        let ph = rng.gen_range(h / 8..=h / 3).max(1);
        let pw = rng.gen_range(w / 8..=w / 3).max(1);
        let (y0, x0) = (rng.gen_range(0..h), rng.gen_range(0..w));
        let (a, b) = (rng.gen_range(0.0..0.5), rng.gen_range(0.5..1.0));
        for y in y0..(y0 + ph).min(h) {
            for x in x0..(x0 + pw).min(w) {
                let v = if ((y - y0) / cell + (x - x0) / cell) % 2 == 0 {
                    a
                } else {
                    b
                };
                for c in 0..3 {
                    img.set(0, y, x, c, v);
                }
            }
        }
    }
    img.cast()
}

/// `n` pairs with procedurally generated `size × size` clean images; pair
/// `i` has id `{i:04}` and seed `seed + i`.
pub fn procedural_dataset(n: usize, size: usize, seed: u64) -> Result<Vec<MoirePair>> {
    (0..n as u64)
        .map(|i| {
            let s = seed.wrapping_add(i);
            let clean = procedural_clean(size, size, &mut stream(s, 1));
            let mut pair = synth_pair(&clean, s)?;
            pair.id = format!("{i:04}");
            Ok(pair)
        })
        .collect()
}

/// Up to `n` pairs built from the clean images in `dir` (sorted by file
/// name), starting after the first `skip` files. Each image is cropped to a
/// random `size × size` window when larger. File `i` of the listing gets id
/// `{i:04}` and seed `seed + i`.
pub fn dataset_from_dir(
    dir: &Path,
    skip: usize,
    n: usize,
    size: usize,
    seed: u64,
) -> Result<Vec<MoirePair>> {
    let files = crate::data::image_files(dir)?;
    if files.is_empty() {
        return Err(invalid!("no images in {}", dir.display()));
    }
    files
        .iter()
        .enumerate()
        .skip(skip)
        .take(n)
        .map(|(i, path)| {
            let s = seed.wrapping_add(i as u64);
            let img = crate::io::read_image(path)?;
            let [_, h, w, _] = img.shape();
            if h < size || w < size {
                return Err(invalid!("{} is smaller than {size}x{size}", path.display()));
            }
            let mut rng = stream(s, 1);
            let clean = img.crop(
                rng.gen_range(0..=h - size),
                rng.gen_range(0..=w - size),
                size,
                size,
            )?;
            let mut pair = synth_pair(&clean, s)?;
            pair.id = format!("{i:04}");
            Ok(pair)
        })
        .collect()
}

/// Shuffled order of `0..n` for a given epoch seed.
pub fn permutation(n: usize, rng: &mut impl Rng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx
}
