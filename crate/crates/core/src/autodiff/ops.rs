//! Elementwise, broadcast, concatenation and reduction operations.

use super::{Backward, GradSink, Tape, Var};
use crate::error::{invalid, Result};
use crate::tensor::{Scalar, Tensor};

struct AddOp(Var, Var);

impl<T: Scalar> Backward<T> for AddOp {
    fn backward(&self, _: &Tape<T>, grad: &Tensor<T>, sink: &mut GradSink<'_, T>) {
        sink.add(self.0, grad.clone());
        sink.add(self.1, grad.clone());
    }
}

struct SubOp(Var, Var);

impl<T: Scalar> Backward<T> for SubOp {
    fn backward(&self, _: &Tape<T>, grad: &Tensor<T>, sink: &mut GradSink<'_, T>) {
        sink.add(self.0, grad.clone());
        sink.add(self.1, grad.map(|g| -g));
    }
}

struct ScaleOp {
    x: Var,
    s: Var,
}

impl<T: Scalar> Backward<T> for ScaleOp {
    fn backward(&self, tape: &Tape<T>, grad: &Tensor<T>, sink: &mut GradSink<'_, T>) {
        let s = tape.value(self.s).item();
        if sink.wants(self.s) {
            let x = tape.value(self.x);
            let ds: T = grad.data().iter().zip(x.data()).map(|(&g, &v)| g * v).sum();
            sink.add(self.s, Tensor::scalar(ds));
        }
        sink.add(self.x, grad.map(|g| g * s));
    }
}

struct ScaleConstOp<T> {
    x: Var,
    c: T,
}

impl<T: Scalar> Backward<T> for ScaleConstOp<T> {
    fn backward(&self, _: &Tape<T>, grad: &Tensor<T>, sink: &mut GradSink<'_, T>) {
        let c = self.c;
        sink.add(self.x, grad.map(|g| g * c));
    }
}

struct ReluOp(Var);

impl<T: Scalar> Backward<T> for ReluOp {
    fn backward(&self, tape: &Tape<T>, grad: &Tensor<T>, sink: &mut GradSink<'_, T>) {
        let x = tape.value(self.0);
        sink.add_with(self.0, |acc| {
            for ((a, &g), &v) in acc.iter_mut().zip(grad.data()).zip(x.data()) {
                if v > T::zero() {
                    *a += g;
                }
            }
        });
    }
}

struct MulOp {
    a: Var,
    b: Var,
    broadcast: bool,
}

impl<T: Scalar> Backward<T> for MulOp {
    fn backward(&self, tape: &Tape<T>, grad: &Tensor<T>, sink: &mut GradSink<'_, T>) {
        let a = tape.value(self.a);
        let b = tape.value(self.b);
        if !self.broadcast {
            sink.add_with(self.a, |acc| {
                for ((d, &g), &bv) in acc.iter_mut().zip(grad.data()).zip(b.data()) {
                    *d += g * bv;
                }
            });
            sink.add_with(self.b, |acc| {
                for ((d, &g), &av) in acc.iter_mut().zip(grad.data()).zip(a.data()) {
                    *d += g * av;
                }
            });
            return;
        }
        let [n, h, w, c] = a.shape();
        let b_batched = b.batch() == n && n > 1;
        let hw = h * w;
        sink.add_with(self.a, |acc| {
            for bi in 0..n {
                let brow = &b.data()[if b_batched { bi * c } else { 0 }..][..c];
                let base = bi * hw * c;
                for p in 0..hw {
                    let off = base + p * c;
                    for ch in 0..c {
                        acc[off + ch] += grad.data()[off + ch] * brow[ch];
                    }
                }
            }
        });
        sink.add_with(self.b, |acc| {
            for bi in 0..n {
                let brow = &mut acc[if b_batched { bi * c } else { 0 }..][..c];
                let base = bi * hw * c;
                for p in 0..hw {
                    let off = base + p * c;
                    let (g, x) = (&grad.data()[off..off + c], &a.data()[off..off + c]);
                    for ((r, &g), &x) in brow.iter_mut().zip(g).zip(x) {
                        *r += g * x;
                    }
                }
            }
        });
    }
}

struct ConcatOp {
    inputs: Vec<Var>,
    widths: Vec<usize>,
}

impl<T: Scalar> Backward<T> for ConcatOp {
    fn backward(&self, _: &Tape<T>, grad: &Tensor<T>, sink: &mut GradSink<'_, T>) {
        let total = grad.channels();
        let pixels = grad.len() / total;
        let mut start = 0;
        for (&v, &w) in self.inputs.iter().zip(&self.widths) {
            sink.add_with(v, |acc| {
                for p in 0..pixels {
                    let src = &grad.data()[p * total + start..p * total + start + w];
                    for (d, &g) in acc[p * w..(p + 1) * w].iter_mut().zip(src) {
                        *d += g;
                    }
                }
            });
            start += w;
        }
    }
}

struct SumOp {
    x: Var,
    factor: f64,
}

impl<T: Scalar> Backward<T> for SumOp {
    fn backward(&self, _: &Tape<T>, grad: &Tensor<T>, sink: &mut GradSink<'_, T>) {
        let g = grad.item() * T::from_f64(self.factor);
        sink.add_with(self.x, |acc| acc.iter_mut().for_each(|d| *d += g));
    }
}

struct MeanAbsOp(Var);

impl<T: Scalar> Backward<T> for MeanAbsOp {
    fn backward(&self, tape: &Tape<T>, grad: &Tensor<T>, sink: &mut GradSink<'_, T>) {
        let x = tape.value(self.0);
        let g = grad.item() / T::from_f64(x.len() as f64);
        sink.add_with(self.0, |acc| {
            for (d, &v) in acc.iter_mut().zip(x.data()) {
                // sign(0) = 0
                if v > T::zero() {
                    *d += g;
                } else if v < T::zero() {
                    *d -= g;
                }
            }
        });
    }
}

impl<T: Scalar> Tape<T> {
    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(invalid!(
                "{}: shape mismatch {:?} vs {:?}",
                what,
                self.shape(a),
                self.shape(b)
            ));
        }
        Ok(())
    }

    /// Elementwise sum of two equally shaped tensors.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        Ok(self.record(out, &[a, b], AddOp(a, b)))
    }

    /// Elementwise difference `a - b`.
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let bv = self.value(b);
        let mut out = self.value(a).clone();
        for (o, &v) in out.data_mut().iter_mut().zip(bv.data()) {
            *o -= v;
        }
        Ok(self.record(out, &[a, b], SubOp(a, b)))
    }

    /// Multiplies `x` by the single-element tensor `s`; both receive gradients.
    pub fn scale(&mut self, x: Var, s: Var) -> Result<Var> {
        if self.value(s).len() != 1 {
            return Err(invalid!(
                "scale factor must hold one value, got shape {:?}",
                self.shape(s)
            ));
        }
        let sv = self.value(s).item();
        let out = self.value(x).map(|v| v * sv);
        Ok(self.record(out, &[x, s], ScaleOp { x, s }))
    }

    /// Multiplies `x` by a fixed constant.
    pub fn scale_const(&mut self, x: Var, c: T) -> Var {
        let out = self.value(x).map(|v| v * c);
        self.record(out, &[x], ScaleConstOp { x, c })
    }

    /// `max(x, 0)`; the gradient at exactly zero is zero.
    pub fn relu(&mut self, x: Var) -> Var {
        let out = self
            .value(x)
            .map(|v| if v > T::zero() { v } else { T::zero() });
        self.record(out, &[x], ReluOp(x))
    }

    /// Elementwise product.
    ///
    /// `b` either has the shape of `a`, or holds one value per channel with
    /// shape `(batch, 1, 1, C)` (batch 1 broadcasts over all items).
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let [n, h, w, c] = self.shape(a);
        let bs = self.shape(b);
        if bs == [n, h, w, c] {
            let bv = self.value(b);
            let mut out = self.value(a).clone();
            for (o, &v) in out.data_mut().iter_mut().zip(bv.data()) {
                *o *= v;
            }
            return Ok(self.record(
                out,
                &[a, b],
                MulOp {
                    a,
                    b,
                    broadcast: false,
                },
            ));
        }
        if bs[1] != 1 || bs[2] != 1 || bs[3] != c || (bs[0] != n && bs[0] != 1) {
            return Err(invalid!(
                "mul: cannot broadcast {:?} onto {:?}",
                bs,
                [n, h, w, c]
            ));
        }
        let bv = self.value(b);
        let mut out = self.value(a).clone();
        for bi in 0..n {
            let brow = &bv.data()[if bs[0] == n { bi * c } else { 0 }..][..c];
            for px in out.data_mut()[bi * h * w * c..(bi + 1) * h * w * c].chunks_exact_mut(c) {
                for (o, &s) in px.iter_mut().zip(brow) {
                    *o *= s;
                }
            }
        }
        Ok(self.record(
            out,
            &[a, b],
            MulOp {
                a,
                b,
                broadcast: true,
            },
        ))
    }

    /// Concatenates along the channel axis in argument order.
    pub fn concat_channels(&mut self, xs: &[Var]) -> Result<Var> {
        let first = *xs
            .first()
            .ok_or_else(|| invalid!("concat of an empty list"))?;
        let [n, h, w, _] = self.shape(first);
        let mut widths = Vec::with_capacity(xs.len());
        for &x in xs {
            let s = self.shape(x);
            if s[..3] != [n, h, w] {
                return Err(invalid!(
                    "concat: spatial mismatch {:?} vs {:?}",
                    self.shape(first),
                    s
                ));
            }
            widths.push(s[3]);
        }
        let total: usize = widths.iter().sum();
        let pixels = n * h * w;
        let mut data = Vec::with_capacity(pixels * total);
        for p in 0..pixels {
            for (&x, &wd) in xs.iter().zip(&widths) {
                data.extend_from_slice(&self.value(x).data()[p * wd..(p + 1) * wd]);
            }
        }
        let out = Tensor::new([n, h, w, total], data)?;
        Ok(self.record(
            out,
            xs,
            ConcatOp {
                inputs: xs.to_vec(),
                widths,
            },
        ))
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        self.record(Tensor::scalar(s), &[x], SumOp { x, factor: 1.0 })
    }

    /// Mean of all elements, as a scalar.
    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len();
        let s = self.value(x).sum() / T::from_f64(n as f64);
        self.record(
            Tensor::scalar(s),
            &[x],
            SumOp {
                x,
                factor: 1.0 / n as f64,
            },
        )
    }

    /// Mean absolute value of all elements, as a scalar.
    pub fn mean_abs(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let s = v.data().iter().map(|a| a.abs()).sum::<T>() / T::from_f64(v.len() as f64);
        self.record(Tensor::scalar(s), &[x], MeanAbsOp(x))
    }
}
