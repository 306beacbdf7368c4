//! Differentiable layers: 2-D convolution, fully connected, global average
//! pooling and sub-pixel shuffling.
//!
//! Convolution is cross-correlation (no kernel flip) over `(b, h, w, c)`
//! inputs with `(kh, kw, in, out)` kernels. It is lowered to a matrix product
//! over row chunks of an im2col buffer. Work is split across batch items only,
//! and per-item kernel gradients are summed in item order, so results are
//! identical for any thread count.

use rayon::prelude::*;

use crate::autodiff::{Backward, GradSink, Tape, Var};
use crate::error::{invalid, Result};
use crate::gemm::{gemm_acc, gemm_at_b_acc, transpose};
use crate::params::{Init, ParamSource};
use crate::tensor::{Scalar, Shape, Tensor};

/// Upper bound on the number of elements of one im2col chunk.
const COLS_CHUNK: usize = 1 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// Zero padding of `dilation·(k−1)/2` on each side; output size is
    /// `ceil(input / stride)`. Kernel sizes must be odd.
    SameZero,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub stride: (usize, usize),
    pub dilation: (usize, usize),
    pub padding: Padding,
}

impl Default for ConvSpec {
    fn default() -> Self {
        ConvSpec {
            stride: (1, 1),
            dilation: (1, 1),
            padding: Padding::SameZero,
        }
    }
}

impl ConvSpec {
    pub fn strided(s: usize) -> Self {
        ConvSpec {
            stride: (s, s),
            ..Default::default()
        }
    }

    pub fn dilated(d: usize) -> Self {
        ConvSpec {
            dilation: (d, d),
            ..Default::default()
        }
    }
}

/// A convolution layer bound to a tape.
#[derive(Debug, Clone, Copy)]
pub struct ConvParams {
    pub kernel: Var,
    pub bias: Option<Var>,
    pub spec: ConvSpec,
}

impl ConvParams {
    /// Declares `{name}/kernel` (He-uniform) and `{name}/bias` (zeros).
    pub fn new<T: Scalar>(
        src: &mut (impl ParamSource<T> + ?Sized),
        name: &str,
        k: usize,
        in_ch: usize,
        out_ch: usize,
        spec: ConvSpec,
    ) -> Result<Self> {
        let he = Init::HeUniform {
            fan_in: k * k * in_ch,
        };
        Self::with_init(
            src,
            name,
            [k, k, in_ch, out_ch],
            spec,
            he,
            Init::Constant(0.0),
        )
    }

    /// Declares a `(k, k, in, out)` kernel and an `out`-long bias with the
    /// given initializers.
    pub fn with_init<T: Scalar>(
        src: &mut (impl ParamSource<T> + ?Sized),
        name: &str,
        shape: Shape,
        spec: ConvSpec,
        kernel_init: Init,
        bias_init: Init,
    ) -> Result<Self> {
        if shape[0] != shape[1] {
            return Err(invalid!("{name}: kernel must be square, got {shape:?}"));
        }
        let kernel = src.param(&format!("{name}/kernel"), shape, kernel_init)?;
        let bias = src.param(&format!("{name}/bias"), [1, 1, 1, shape[3]], bias_init)?;
        Ok(ConvParams {
            kernel,
            bias: Some(bias),
            spec,
        })
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        conv2d(tape, x, self)
    }

    /// Convolution followed by ReLU.
    pub fn forward_relu<T: Scalar>(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let y = conv2d(tape, x, self)?;
        Ok(tape.relu(y))
    }

    pub fn out_channels<T: Scalar>(&self, tape: &Tape<T>) -> usize {
        tape.shape(self.kernel)[3]
    }
}

/// A fully connected layer on `(b, 1, 1, in)` feature vectors.
#[derive(Debug, Clone, Copy)]
pub struct FcParams {
    /// `in × out` matrix stored as a `(1, 1, in, out)` tensor.
    pub weight: Var,
    pub bias: Var,
}

impl FcParams {
    /// Declares `{name}/weight` (He-uniform) and `{name}/bias` (zeros).
    pub fn new<T: Scalar>(
        src: &mut (impl ParamSource<T> + ?Sized),
        name: &str,
        in_features: usize,
        out_features: usize,
    ) -> Result<Self> {
        Self::with_bias(src, name, in_features, out_features, 0.0)
    }

    pub fn with_bias<T: Scalar>(
        src: &mut (impl ParamSource<T> + ?Sized),
        name: &str,
        in_features: usize,
        out_features: usize,
        bias_init: f64,
    ) -> Result<Self> {
        let weight = src.param(
            &format!("{name}/weight"),
            [1, 1, in_features, out_features],
            Init::HeUniform {
                fan_in: in_features,
            },
        )?;
        let bias = src.param(
            &format!("{name}/bias"),
            [1, 1, 1, out_features],
            Init::Constant(bias_init),
        )?;
        Ok(FcParams { weight, bias })
    }
}

#[derive(Debug, Clone, Copy)]
struct Geom {
    h: usize,
    w: usize,
    cin: usize,
    kh: usize,
    kw: usize,
    cout: usize,
    sy: usize,
    sx: usize,
    dy: usize,
    dx: usize,
    py: usize,
    px: usize,
    oh: usize,
    ow: usize,
}

impl Geom {
    fn new(xs: Shape, ks: Shape, spec: ConvSpec) -> Result<Self> {
        let [_, h, w, cin] = xs;
        let [kh, kw, kin, cout] = ks;
        if kin != cin {
            return Err(invalid!(
                "conv2d: input has {cin} channels, kernel expects {kin}"
            ));
        }
        let (sy, sx) = spec.stride;
        let (dy, dx) = spec.dilation;
        if sy == 0 || sx == 0 || dy == 0 || dx == 0 || kh == 0 || kw == 0 {
            return Err(invalid!(
                "conv2d: stride, dilation and kernel size must be positive"
            ));
        }
        let (eh, ew) = ((kh - 1) * dy + 1, (kw - 1) * dx + 1);
        let (py, px, oh, ow) = match spec.padding {
            Padding::SameZero => {
                if kh % 2 == 0 || kw % 2 == 0 {
                    return Err(invalid!(
                        "conv2d: same padding needs odd kernels, got {kh}x{kw}"
                    ));
                }
                let (py, px) = ((eh - 1) / 2, (ew - 1) / 2);
                (py, px, h.div_ceil(sy), w.div_ceil(sx))
            }
            Padding::None => {
                if h < eh || w < ew {
                    return Err(invalid!(
                        "conv2d: input {h}x{w} smaller than receptive field {eh}x{ew}"
                    ));
                }
                (0, 0, (h - eh) / sy + 1, (w - ew) / sx + 1)
            }
        };
        Ok(Geom {
            h,
            w,
            cin,
            kh,
            kw,
            cout,
            sy,
            sx,
            dy,
            dx,
            py,
            px,
            oh,
            ow,
        })
    }

    fn k(&self) -> usize {
        self.kh * self.kw * self.cin
    }

    fn pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.sy == 1 && self.sx == 1
    }

    fn rows_per_chunk(&self) -> usize {
        (COLS_CHUNK / (self.ow * self.k()).max(1)).clamp(1, self.oh.max(1))
    }

    /// Input row for output row `o` and tap `k`, if inside the image.
    #[inline]
    fn in_y(&self, o: usize, k: usize) -> Option<usize> {
        (o * self.sy + k * self.dy)
            .checked_sub(self.py)
            .filter(|&i| i < self.h)
    }

    #[inline]
    fn in_x(&self, o: usize, k: usize) -> Option<usize> {
        (o * self.sx + k * self.dx)
            .checked_sub(self.px)
            .filter(|&i| i < self.w)
    }
}

fn im2col<T: Scalar>(x: &[T], g: &Geom, oy0: usize, oy1: usize, cols: &mut Vec<T>) {
    let k = g.k();
    cols.clear();
    cols.resize((oy1 - oy0) * g.ow * k, T::zero());
    for oy in oy0..oy1 {
        for ox in 0..g.ow {
            let row = ((oy - oy0) * g.ow + ox) * k;
            for ky in 0..g.kh {
                let Some(iy) = g.in_y(oy, ky) else { continue };
                for kx in 0..g.kw {
                    let Some(ix) = g.in_x(ox, kx) else { continue };
                    let dst = row + (ky * g.kw + kx) * g.cin;
                    let src = (iy * g.w + ix) * g.cin;
                    cols[dst..dst + g.cin].copy_from_slice(&x[src..src + g.cin]);
                }
            }
        }
    }
}

fn col2im_add<T: Scalar>(cols: &[T], g: &Geom, oy0: usize, oy1: usize, dx: &mut [T]) {
    let k = g.k();
    for oy in oy0..oy1 {
        for ox in 0..g.ow {
            let row = ((oy - oy0) * g.ow + ox) * k;
            for ky in 0..g.kh {
                let Some(iy) = g.in_y(oy, ky) else { continue };
                for kx in 0..g.kw {
                    let Some(ix) = g.in_x(ox, kx) else { continue };
                    let src = row + (ky * g.kw + kx) * g.cin;
                    let dst = (iy * g.w + ix) * g.cin;
                    for (d, &s) in dx[dst..dst + g.cin].iter_mut().zip(&cols[src..src + g.cin]) {
                        *d += s;
                    }
                }
            }
        }
    }
}

fn chunks(g: &Geom) -> impl Iterator<Item = (usize, usize)> {
    let step = g.rows_per_chunk();
    let oh = g.oh;
    (0..oh).step_by(step).map(move |a| (a, (a + step).min(oh)))
}

struct ConvOp {
    x: Var,
    kernel: Var,
    bias: Option<Var>,
    g: Geom,
}

impl<T: Scalar> Backward<T> for ConvOp {
    fn backward(&self, tape: &Tape<T>, grad: &Tensor<T>, sink: &mut GradSink<'_, T>) {
        let g = self.g;
        let n = grad.batch();
        let (k, cout) = (g.k(), g.cout);
        let in_per = g.h * g.w * g.cin;
        let out_per = g.oh * g.ow * cout;
        let dy = grad.data();
        let x = tape.value(self.x).data();
        let w = tape.value(self.kernel).data();

        if let Some(b) = self.bias {
            sink.add_with(b, |acc| {
                for px in dy.chunks_exact(cout) {
                    for (a, &v) in acc.iter_mut().zip(px) {
                        *a += v;
                    }
                }
            });
        }

        if sink.wants(self.x) {
            let wt = transpose(k, cout, w);
            sink.add_with(self.x, |dx| {
                dx.par_chunks_mut(in_per).enumerate().for_each(|(b, dxi)| {
                    let dyi = &dy[b * out_per..(b + 1) * out_per];
                    if g.pointwise() {
                        gemm_acc(g.h * g.w, cout, g.cin, dyi, &wt, dxi);
                        return;
                    }
                    let mut dcols = Vec::new();
                    for (oy0, oy1) in chunks(&g) {
                        let rows = (oy1 - oy0) * g.ow;
                        dcols.clear();
                        dcols.resize(rows * k, T::zero());
                        gemm_acc(
                            rows,
                            cout,
                            k,
                            &dyi[oy0 * g.ow * cout..oy1 * g.ow * cout],
                            &wt,
                            &mut dcols,
                        );
                        col2im_add(&dcols, &g, oy0, oy1, dxi);
                    }
                });
            });
        }

        if sink.wants(self.kernel) {
            let partials: Vec<Vec<T>> = (0..n)
                .into_par_iter()
                .map(|b| {
                    let xi = &x[b * in_per..(b + 1) * in_per];
                    let dyi = &dy[b * out_per..(b + 1) * out_per];
                    let mut dw = vec![T::zero(); k * cout];
                    if g.pointwise() {
                        gemm_at_b_acc(g.h * g.w, k, cout, xi, dyi, &mut dw);
                        return dw;
                    }
                    let mut cols = Vec::new();
                    for (oy0, oy1) in chunks(&g) {
                        im2col(xi, &g, oy0, oy1, &mut cols);
                        let rows = (oy1 - oy0) * g.ow;
                        gemm_at_b_acc(
                            rows,
                            k,
                            cout,
                            &cols,
                            &dyi[oy0 * g.ow * cout..oy1 * g.ow * cout],
                            &mut dw,
                        );
                    }
                    dw
                })
                .collect();
            sink.add_with(self.kernel, |acc| {
                for part in &partials {
                    for (a, &p) in acc.iter_mut().zip(part) {
                        *a += p;
                    }
                }
            });
        }
    }
}

/// 2-D convolution with optional bias.
pub fn conv2d<T: Scalar>(tape: &mut Tape<T>, x: Var, p: &ConvParams) -> Result<Var> {
    let g = Geom::new(tape.shape(x), tape.shape(p.kernel), p.spec)?;
    if let Some(b) = p.bias {
        if tape.value(b).len() != g.cout {
            return Err(invalid!(
                "conv2d: bias has {} values for {} outputs",
                tape.value(b).len(),
                g.cout
            ));
        }
    }
    let n = tape.shape(x)[0];
    let (k, cout) = (g.k(), g.cout);
    let in_per = g.h * g.w * g.cin;
    let out_per = g.oh * g.ow * cout;
    let xv = tape.value(x).data();
    let wv = tape.value(p.kernel).data();
    let bias: Vec<T> = match p.bias {
        Some(b) => tape.value(b).data().to_vec(),
        None => vec![T::zero(); cout],
    };
    let mut out = vec![T::zero(); n * out_per];
    out.par_chunks_mut(out_per.max(1))
        .enumerate()
        .for_each(|(b, o)| {
            for px in o.chunks_exact_mut(cout) {
                px.copy_from_slice(&bias);
            }
            let xi = &xv[b * in_per..(b + 1) * in_per];
            if g.pointwise() {
                gemm_acc(g.h * g.w, k, cout, xi, wv, o);
                return;
            }
            let mut cols = Vec::new();
            for (oy0, oy1) in chunks(&g) {
                im2col(xi, &g, oy0, oy1, &mut cols);
                let rows = (oy1 - oy0) * g.ow;
                gemm_acc(
                    rows,
                    k,
                    cout,
                    &cols,
                    wv,
                    &mut o[oy0 * g.ow * cout..oy1 * g.ow * cout],
                );
            }
        });
    let out = Tensor::new([n, g.oh, g.ow, cout], out)?;
    let mut inputs = vec![x, p.kernel];
    inputs.extend(p.bias);
    Ok(tape.record(
        out,
        &inputs,
        ConvOp {
            x,
            kernel: p.kernel,
            bias: p.bias,
            g,
        },
    ))
}

/// `y = x·W + b` on `(b, 1, 1, in)` inputs.
pub fn fully_connected<T: Scalar>(tape: &mut Tape<T>, x: Var, p: &FcParams) -> Result<Var> {
    let [_, h, w, c] = tape.shape(x);
    let [_, _, fin, _] = tape.shape(p.weight);
    if h != 1 || w != 1 {
        return Err(invalid!(
            "fully_connected: expected (b,1,1,{fin}) input, got spatial {h}x{w}"
        ));
    }
    if c != fin {
        return Err(invalid!(
            "fully_connected: input has {c} features, weight expects {fin}"
        ));
    }
    conv2d(
        tape,
        x,
        &ConvParams {
            kernel: p.weight,
            bias: Some(p.bias),
            spec: ConvSpec::default(),
        },
    )
}

struct GapOp(Var);

impl<T: Scalar> Backward<T> for GapOp {
    fn backward(&self, tape: &Tape<T>, grad: &Tensor<T>, sink: &mut GradSink<'_, T>) {
        let [n, h, w, c] = tape.shape(self.0);
        let inv = T::one() / T::from_f64((h * w) as f64);
        sink.add_with(self.0, |acc| {
            for b in 0..n {
                let g = &grad.data()[b * c..(b + 1) * c];
                for px in acc[b * h * w * c..(b + 1) * h * w * c].chunks_exact_mut(c) {
                    for (a, &v) in px.iter_mut().zip(g) {
                        *a += v * inv;
                    }
                }
            }
        });
    }
}

/// Spatial mean of every channel: `(b, h, w, c) → (b, 1, 1, c)`.
pub fn global_avg_pool<T: Scalar>(tape: &mut Tape<T>, x: Var) -> Var {
    let xv = tape.value(x);
    let [n, h, w, c] = xv.shape();
    let inv = T::one() / T::from_f64((h * w) as f64);
    let mut out = Tensor::zeros([n, 1, 1, c]);
    for b in 0..n {
        let o = &mut out.data_mut()[b * c..(b + 1) * c];
        for px in xv.data()[b * h * w * c..(b + 1) * h * w * c].chunks_exact(c) {
            for (a, &v) in o.iter_mut().zip(px) {
                *a += v;
            }
        }
        o.iter_mut().for_each(|v| *v *= inv);
    }
    tape.record(out, &[x], GapOp(x))
}

/// `(b, h, w, C·r²) → (b, h·r, w·r, C)` with
/// `out(y, x, c) = in(y/r, x/r, c·r² + (y mod r)·r + x mod r)`.
pub fn shuffle_tensor<T: Scalar>(x: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    let [n, h, w, cr] = x.shape();
    if r == 0 || cr % (r * r) != 0 {
        return Err(invalid!(
            "pixel_shuffle: {cr} channels not divisible by {r}²"
        ));
    }
    let c = cr / (r * r);
    Ok(Tensor::from_fn([n, h * r, w * r, c], |b, y, xx, ch| {
        x.get(b, y / r, xx / r, ch * r * r + (y % r) * r + xx % r)
    }))
}

/// Exact inverse of [`shuffle_tensor`]: `(b, h, w, c) → (b, h/r, w/r, c·r²)`.
pub fn unshuffle_tensor<T: Scalar>(x: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    let [n, h, w, c] = x.shape();
    if r == 0 || h % r != 0 || w % r != 0 {
        return Err(invalid!("pixel_unshuffle: {h}x{w} not divisible by {r}"));
    }
    Ok(Tensor::from_fn(
        [n, h / r, w / r, c * r * r],
        |b, y, xx, ch| {
            let (c0, sub) = (ch / (r * r), ch % (r * r));
            x.get(b, y * r + sub / r, xx * r + sub % r, c0)
        },
    ))
}

struct ShuffleOp {
    x: Var,
    r: usize,
    up: bool,
}

impl<T: Scalar> Backward<T> for ShuffleOp {
    fn backward(&self, _: &Tape<T>, grad: &Tensor<T>, sink: &mut GradSink<'_, T>) {
        let g = if self.up {
            unshuffle_tensor(grad, self.r)
        } else {
            shuffle_tensor(grad, self.r)
        };
        sink.add(
            self.x,
            g.expect("gradient shape matches the forward output"),
        );
    }
}

pub fn pixel_shuffle<T: Scalar>(tape: &mut Tape<T>, x: Var, r: usize) -> Result<Var> {
    let out = shuffle_tensor(tape.value(x), r)?;
    Ok(tape.record(out, &[x], ShuffleOp { x, r, up: true }))
}

pub fn pixel_unshuffle<T: Scalar>(tape: &mut Tape<T>, x: Var, r: usize) -> Result<Var> {
    let out = unshuffle_tensor(tape.value(x), r)?;
    Ok(tape.record(out, &[x], ShuffleOp { x, r, up: false }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad_check_many;

    fn conv_params(
        tape: &mut Tape<f64>,
        kernel: Tensor<f64>,
        bias: Option<Tensor<f64>>,
        spec: ConvSpec,
    ) -> ConvParams {
        let kernel = tape.param(kernel);
        let bias = bias.map(|b| tape.param(b));
        ConvParams { kernel, bias, spec }
    }

    #[test]
    fn pointwise_scaling_kernel() {
        let mut t = Tape::<f64>::new();
        let x = t.param(Tensor::new([1, 1, 3, 1], vec![1.0, 2.0, 3.0]).unwrap());
        let p = conv_params(
            &mut t,
            Tensor::full([1, 1, 1, 1], 2.0),
            None,
            ConvSpec::default(),
        );
        let y = conv2d(&mut t, x, &p).unwrap();
        assert_eq!(t.value(y).data(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn bias_only_output() {
        let mut t = Tape::<f64>::new();
        let x = t.param(Tensor::full([1, 4, 4, 2], 3.0));
        let p = conv_params(
            &mut t,
            Tensor::zeros([3, 3, 2, 1]),
            Some(Tensor::ones([1, 1, 1, 1])),
            ConvSpec::default(),
        );
        let y = conv2d(&mut t, x, &p).unwrap();
        assert!(t.value(y).data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn channel_mismatch_is_rejected() {
        let mut t = Tape::<f64>::new();
        let x = t.param(Tensor::zeros([1, 4, 4, 2]));
        let p = conv_params(
            &mut t,
            Tensor::zeros([3, 3, 3, 1]),
            None,
            ConvSpec::default(),
        );
        assert!(conv2d(&mut t, x, &p).is_err());
        let even = conv_params(
            &mut t,
            Tensor::zeros([2, 2, 2, 1]),
            None,
            ConvSpec::default(),
        );
        assert!(conv2d(&mut t, x, &even).is_err());
    }

    #[test]
    fn strided_same_padding_gives_ceil() {
        for (h, s, expect) in [(5, 2, 3), (8, 2, 4), (7, 3, 3), (1, 2, 1)] {
            let mut t = Tape::<f32>::new();
            let x = t.param(Tensor::zeros([1, h, h, 1]));
            let kernel = t.param(Tensor::zeros([3, 3, 1, 1]));
            let p = ConvParams {
                kernel,
                bias: None,
                spec: ConvSpec::strided(s),
            };
            let y = conv2d(&mut t, x, &p).unwrap();
            assert_eq!(t.shape(y), [1, expect, expect, 1]);
        }
    }

    #[test]
    fn fully_connected_examples() {
        let mut t = Tape::<f64>::new();
        let x = t.param(Tensor::vector(&[1.0, 1.0]));
        let weight = t.param(Tensor::new([1, 1, 2, 1], vec![1.0, 1.0]).unwrap());
        let bias = t.param(Tensor::vector(&[1.0]));
        let y = fully_connected(&mut t, x, &FcParams { weight, bias }).unwrap();
        assert_eq!(t.value(y).data(), &[3.0]);

        let eye = t.param(Tensor::new([1, 1, 2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let zero = t.param(Tensor::zeros([1, 1, 1, 2]));
        let y = fully_connected(
            &mut t,
            x,
            &FcParams {
                weight: eye,
                bias: zero,
            },
        )
        .unwrap();
        assert_eq!(t.value(y), t.value(x));

        let wrong = t.param(Tensor::zeros([1, 1, 3, 1]));
        assert!(fully_connected(
            &mut t,
            x,
            &FcParams {
                weight: wrong,
                bias
            }
        )
        .is_err());
    }

    #[test]
    fn fully_connected_gradients() {
        let x = Tensor::from_fn([3, 1, 1, 4], |b, _, _, c| (b * 4 + c) as f64 * 0.1 - 0.5);
        let w = Tensor::from_fn([1, 1, 4, 3], |_, _, i, o| {
            ((i * 3 + o) % 5) as f64 * 0.3 - 0.6
        });
        let b = Tensor::vector(&[0.1, -0.2, 0.3]);
        let err = grad_check_many(
            |t, v| {
                let y = fully_connected(
                    t,
                    v[0],
                    &FcParams {
                        weight: v[1],
                        bias: v[2],
                    },
                )?;
                let y2 = t.mul(y, y)?;
                Ok(t.sum(y2))
            },
            &[x, w, b],
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn global_avg_pool_examples() {
        let mut t = Tape::<f64>::new();
        let c = t.param(Tensor::full([1, 3, 3, 2], 7.0));
        let g = global_avg_pool(&mut t, c);
        assert_eq!(t.value(g).data(), &[7.0, 7.0]);
        let x = t.param(Tensor::new([1, 2, 2, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let g = global_avg_pool(&mut t, x);
        assert_eq!(t.value(g).data(), &[2.5]);
        let loss = t.sum(g);
        let gr = t.backward(loss).unwrap();
        assert_eq!(gr.get(x).unwrap().data(), &[0.25; 4]);
    }

    #[test]
    fn shuffle_index_rule() {
        let x = Tensor::<f32>::new([1, 1, 1, 4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = shuffle_tensor(&x, 2).unwrap();
        assert_eq!(y.shape(), [1, 2, 2, 1]);
        assert_eq!(y.data(), &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(
            shuffle_tensor(&Tensor::<f32>::zeros([1, 8, 8, 12]), 2)
                .unwrap()
                .shape(),
            [1, 16, 16, 3]
        );
        assert_eq!(
            unshuffle_tensor(&Tensor::<f32>::zeros([1, 256, 256, 3]), 2)
                .unwrap()
                .shape(),
            [1, 128, 128, 12]
        );
        assert!(shuffle_tensor(&Tensor::<f32>::zeros([1, 2, 2, 6]), 2).is_err());
        assert!(unshuffle_tensor(&Tensor::<f32>::zeros([1, 3, 4, 1]), 2).is_err());
        let c = unshuffle_tensor(&Tensor::<f32>::full([1, 4, 4, 3], 0.5), 2).unwrap();
        assert!(c.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn shuffle_ops_have_permutation_gradients() {
        let x = Tensor::from_fn([2, 2, 4, 8], |b, y, x, c| {
            (b + y * 3 + x * 5 + c * 7) as f64 * 0.01
        });
        let r = Tensor::from_fn([2, 4, 8, 2], |b, y, x, c| {
            ((b + y + x * 2 + c * 3) % 7) as f64 - 3.0
        });
        let err = grad_check_many(
            |t, v| {
                let up = pixel_shuffle(t, v[0], 2)?;
                let down = pixel_unshuffle(t, up, 2)?;
                let up2 = pixel_shuffle(t, down, 2)?;
                let p = t.mul(up2, v[1])?;
                Ok(t.sum(p))
            },
            &[x, r],
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-8, "{err}");
    }
}
