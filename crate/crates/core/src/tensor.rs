//! Dense 4-D tensors stored batch-major, channel-minor.
//!
//! Feature maps use the layout `(batch, height, width, channels)`. Convolution
//! kernels reuse the same container with the layout `(kh, kw, in, out)`, which
//! makes a kernel's flat data an ordinary `(kh·kw·in) × out` row-major matrix.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::Float;

use crate::error::{invalid, Result};

pub type Shape = [usize; 4];

/// Accumulation precision selected by a tape's element type.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    Single,
    Double,
}

/// Floating-point element type of tensors and tapes.
///
/// `f32` is used for training and inference, `f64` for verification runs
/// (finite-difference gradient checks).
pub trait Scalar:
    Float + Default + Debug + Display + Send + Sync + Sum + AddAssign + SubAssign + MulAssign + 'static
{
    const PRECISION: Precision;

    fn from_f64(v: f64) -> Self;

    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    const PRECISION: Precision = Precision::Single;

    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    const PRECISION: Precision = Precision::Double;

    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

/// A dense 4-D array.
#[derive(Clone, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: Debug> Debug for Tensor<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        const SHOWN: usize = 8;
        write!(f, "Tensor{:?} ", self.shape)?;
        let mut list = f.debug_list();
        list.entries(self.data.iter().take(SHOWN));
        if self.data.len() > SHOWN {
            list.entry(&format_args!("... {} more", self.data.len() - SHOWN));
        }
        list.finish()
    }
}

pub(crate) fn numel(shape: Shape) -> usize {
    shape.iter().product()
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Shape, data: Vec<T>) -> Result<Self> {
        if numel(shape) != data.len() {
            return Err(invalid!(
                "shape {:?} needs {} values, got {}",
                shape,
                numel(shape),
                data.len()
            ));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Shape) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: Shape) -> Self {
        Self::full(shape, T::one())
    }

    pub fn full(shape: Shape, value: T) -> Self {
        Tensor {
            shape,
            data: vec![value; numel(shape)],
        }
    }

    /// Builds a tensor from a function of `(b, y, x, c)`.
    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(numel(shape));
        for b in 0..shape[0] {
            for y in 0..shape[1] {
                for x in 0..shape[2] {
                    for c in 0..shape[3] {
                        data.push(f(b, y, x, c));
                    }
                }
            }
        }
        Tensor { shape, data }
    }

    /// A `(1,1,1,n)` tensor holding `values`.
    pub fn vector(values: &[T]) -> Self {
        Tensor {
            shape: [1, 1, 1, values.len()],
            data: values.to_vec(),
        }
    }

    /// A `(1,1,1,1)` tensor.
    pub fn scalar(value: T) -> Self {
        Tensor {
            shape: [1, 1, 1, 1],
            data: vec![value],
        }
    }

    #[inline]
    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    pub fn height(&self) -> usize {
        self.shape[1]
    }

    pub fn width(&self) -> usize {
        self.shape[2]
    }

    pub fn channels(&self) -> usize {
        self.shape[3]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn offset(&self, b: usize, y: usize, x: usize, c: usize) -> usize {
        ((b * self.shape[1] + y) * self.shape[2] + x) * self.shape[3] + c
    }

    #[inline]
    pub fn get(&self, b: usize, y: usize, x: usize, c: usize) -> T {
        self.data[self.offset(b, y, x, c)]
    }

    #[inline]
    pub fn set(&mut self, b: usize, y: usize, x: usize, c: usize, v: T) {
        let i = self.offset(b, y, x, c);
        self.data[i] = v;
    }

    /// The value of a `(1,1,1,1)` tensor (or the first element of any tensor).
    pub fn item(&self) -> T {
        self.data[0]
    }

    pub fn reshape(mut self, shape: Shape) -> Result<Self> {
        if numel(shape) != self.data.len() {
            return Err(invalid!("cannot reshape {:?} to {:?}", self.shape, shape));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        }
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn min(&self) -> T {
        self.data.iter().copied().fold(T::infinity(), T::min)
    }

    pub fn max(&self) -> T {
        self.data.iter().copied().fold(T::neg_infinity(), T::max)
    }

    pub fn l2_norm(&self) -> T {
        self.data.iter().map(|&v| v * v).sum::<T>().sqrt()
    }

    /// Largest elementwise absolute difference; `+∞` on shape mismatch.
    pub fn max_abs_diff(&self, other: &Self) -> T {
        if self.shape != other.shape {
            return T::infinity();
        }
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs())
            .fold(T::zero(), T::max)
    }

    pub(crate) fn add_assign(&mut self, other: &Self) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn clamp(&self, lo: T, hi: T) -> Self {
        self.map(|v| v.max(lo).min(hi))
    }

    /// Selects one batch item as a batch of one.
    pub fn batch_item(&self, b: usize) -> Self {
        let per = self.shape[1] * self.shape[2] * self.shape[3];
        Tensor {
            shape: [1, self.shape[1], self.shape[2], self.shape[3]],
            data: self.data[b * per..(b + 1) * per].to_vec(),
        }
    }

    /// Stacks equally shaped tensors along the batch axis.
    pub fn stack(items: &[Self]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| invalid!("cannot stack an empty list"))?;
        let [_, h, w, c] = first.shape;
        let mut data = Vec::with_capacity(items.iter().map(|t| t.len()).sum());
        let mut n = 0;
        for t in items {
            if t.shape[1..] != [h, w, c] {
                return Err(invalid!(
                    "cannot stack {:?} with {:?}",
                    first.shape,
                    t.shape
                ));
            }
            n += t.shape[0];
            data.extend_from_slice(&t.data);
        }
        Ok(Tensor {
            shape: [n, h, w, c],
            data,
        })
    }

    /// Copies the spatial window `[y0, y0+h) × [x0, x0+w)` of every batch item.
    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Result<Self> {
        let [n, hh, ww, c] = self.shape;
        if y0 + h > hh || x0 + w > ww {
            return Err(invalid!(
                "crop {}x{} at ({}, {}) exceeds {}x{}",
                h,
                w,
                y0,
                x0,
                hh,
                ww
            ));
        }
        Ok(Tensor::from_fn([n, h, w, c], |b, y, x, ch| {
            self.get(b, y0 + y, x0 + x, ch)
        }))
    }

    /// Rotates every batch item counter-clockwise by `quarter_turns × 90°`.
    pub fn rot90(&self, quarter_turns: usize) -> Self {
        let [n, h, w, c] = self.shape;
        match quarter_turns % 4 {
            0 => self.clone(),
            // out(y, x) = in(x, w-1-y)
            1 => Tensor::from_fn([n, w, h, c], |b, y, x, ch| self.get(b, x, w - 1 - y, ch)),
            2 => Tensor::from_fn([n, h, w, c], |b, y, x, ch| {
                self.get(b, h - 1 - y, w - 1 - x, ch)
            }),
            _ => Tensor::from_fn([n, w, h, c], |b, y, x, ch| self.get(b, h - 1 - x, y, ch)),
        }
    }

    /// Reflect-pads (without repeating the edge sample) the bottom and right
    /// borders up to the next multiple of `multiple`.
    pub fn reflect_pad_to_multiple(&self, multiple: usize) -> Result<Self> {
        let [n, h, w, c] = self.shape;
        let th = h.div_ceil(multiple) * multiple;
        let tw = w.div_ceil(multiple) * multiple;
        if th == h && tw == w {
            return Ok(self.clone());
        }
        if (th - h) >= h.max(2) || (tw - w) >= w.max(2) {
            return Err(invalid!(
                "image {}x{} too small to reflect-pad to {}x{}",
                h,
                w,
                th,
                tw
            ));
        }
        let reflect = |i: usize, len: usize| if i < len { i } else { 2 * len - 2 - i };
        Ok(Tensor::from_fn([n, th, tw, c], |b, y, x, ch| {
            self.get(b, reflect(y, h), reflect(x, w), ch)
        }))
    }

    /// Average pooling with a square, non-overlapping window of side `r`.
    pub fn avg_pool(&self, r: usize) -> Result<Self> {
        let [n, h, w, c] = self.shape;
        if r == 0 || h % r != 0 || w % r != 0 {
            return Err(invalid!("cannot average-pool {}x{} by {}", h, w, r));
        }
        let inv = T::one() / T::from_f64((r * r) as f64);
        Ok(Tensor::from_fn([n, h / r, w / r, c], |b, y, x, ch| {
            let mut acc = T::zero();
            for dy in 0..r {
                for dx in 0..r {
                    acc += self.get(b, y * r + dy, x * r + dx, ch);
                }
            }
            acc * inv
        }))
    }
}
