//! Define-by-run reverse-mode differentiation.
//!
//! A [`Tape`] owns the value of every node recorded during a forward pass
//! together with the rule that maps the node's output gradient back onto its
//! inputs. Node ids increase in recording order, so the recording order is a
//! topological order and [`Tape::backward`] only has to walk the ids downwards.
//!
//! The element type selects the precision: `Tape<f32>` for training,
//! `Tape<f64>` for finite-difference verification.

mod gradcheck;
mod ops;

pub use gradcheck::{grad_check, grad_check_many, relative_error};

use std::collections::BTreeMap;

use crate::error::{invalid, Result};
use crate::tensor::{Precision, Scalar, Shape, Tensor};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

/// Reverse rule of a recorded operation.
///
/// Implementations read whatever forward values they need from the tape and
/// push input gradients into the sink. Only inputs for which
/// [`GradSink::wants`] is true need to be handled.
pub trait Backward<T: Scalar> {
    fn backward(&self, tape: &Tape<T>, grad: &Tensor<T>, sink: &mut GradSink<'_, T>);
}

struct Node<T: Scalar> {
    value: Tensor<T>,
    requires_grad: bool,
    op: Option<Box<dyn Backward<T>>>,
}

/// Accumulates gradients flowing into the inputs of one operation.
pub struct GradSink<'a, T: Scalar> {
    grads: &'a mut [Option<Tensor<T>>],
    requires: &'a [bool],
    shapes: &'a [Shape],
}

impl<T: Scalar> GradSink<'_, T> {
    #[inline]
    pub fn wants(&self, v: Var) -> bool {
        self.requires[v.0]
    }

    /// Adds `g` to the gradient of `v`.
    pub fn add(&mut self, v: Var, g: Tensor<T>) {
        if !self.requires[v.0] {
            return;
        }
        debug_assert_eq!(g.shape(), self.shapes[v.0]);
        match &mut self.grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    /// Lets `f` add into the (zero-initialized on first use) gradient buffer of `v`.
    pub fn add_with(&mut self, v: Var, f: impl FnOnce(&mut [T])) {
        if !self.requires[v.0] {
            return;
        }
        let shape = self.shapes[v.0];
        let acc = self.grads[v.0].get_or_insert_with(|| Tensor::zeros(shape));
        f(acc.data_mut());
    }
}

/// Recorded computation graph with the value of every node.
pub struct Tape<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn precision(&self) -> Precision {
        T::PRECISION
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a leaf whose gradient is wanted.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    /// Records a leaf that takes part in no gradient computation.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            op: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records the result of an operation on `inputs`.
    ///
    /// The reverse rule is kept only if some input needs a gradient.
    pub fn record(
        &mut self,
        value: Tensor<T>,
        inputs: &[Var],
        op: impl Backward<T> + 'static,
    ) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            requires_grad,
            op: requires_grad.then(|| Box::new(op) as Box<dyn Backward<T>>),
        });
        Var(self.nodes.len() - 1)
    }

    #[inline]
    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    #[inline]
    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Reverse sweep from a scalar node.
    ///
    /// Returns the gradient of `loss` with respect to every leaf recorded with
    /// `requires_grad` that the loss depends on.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let shape = self.shape(loss);
        if shape != [1, 1, 1, 1] {
            return Err(invalid!(
                "backward needs a scalar loss, got shape {:?}",
                shape
            ));
        }
        let n = loss.0 + 1;
        let requires: Vec<bool> = self.nodes[..n].iter().map(|n| n.requires_grad).collect();
        let shapes: Vec<Shape> = self.nodes[..n].iter().map(|n| n.value.shape()).collect();
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; n];
        let mut leaves = BTreeMap::new();
        if requires[loss.0] {
            grads[loss.0] = Some(Tensor::scalar(T::one()));
        }
        for id in (0..n).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            match &node.op {
                Some(op) => {
                    let mut sink = GradSink {
                        grads: &mut grads[..id],
                        requires: &requires[..id],
                        shapes: &shapes[..id],
                    };
                    op.backward(self, &g, &mut sink);
                }
                None => {
                    leaves.insert(Var(id), g);
                }
            }
        }
        Ok(Gradients { grads: leaves })
    }
}

/// Gradients of a scalar with respect to tape leaves.
#[derive(Debug, Clone, Default)]
pub struct Gradients<T: Scalar = f32> {
    grads: BTreeMap<Var, Tensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(&v)
    }

    /// The gradient of `v`, or zeros of `shape` if the loss does not depend on it.
    pub fn get_or_zeros(&self, v: Var, shape: Shape) -> Tensor<T> {
        self.grads
            .get(&v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(shape))
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (Var, &Tensor<T>)> {
        self.grads.iter().map(|(v, g)| (*v, g))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(Tensor::ones([1, 2, 1, 1]));
        assert!(tape.backward(x).is_err());
    }

    #[test]
    fn ids_increase_in_recording_order() {
        let mut tape = Tape::<f32>::new();
        let a = tape.param(Tensor::ones([1, 1, 1, 3]));
        let b = tape.constant(Tensor::ones([1, 1, 1, 3]));
        let c = tape.add(a, b).unwrap();
        assert!(a < b && b < c);
        assert_eq!(tape.precision(), Precision::Single);
        assert_eq!(Tape::<f64>::new().precision(), Precision::Double);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut tape = Tape::<f32>::new();
        let a = tape.param(Tensor::ones([1, 1, 1, 2]));
        let b = tape.constant(Tensor::ones([1, 1, 1, 2]));
        let c = tape.add(a, b).unwrap();
        let loss = tape.sum(c);
        let g = tape.backward(loss).unwrap();
        assert!(g.get(a).is_some());
        assert!(g.get(b).is_none());
    }

    #[test]
    fn fan_out_accumulates() {
        // loss = sum(x + x) -> grad 2
        let mut tape = Tape::<f64>::new();
        let x = tape.param(Tensor::ones([1, 2, 2, 1]));
        let y = tape.add(x, x).unwrap();
        let loss = tape.sum(y);
        let g = tape.backward(loss).unwrap();
        assert!(g.get(x).unwrap().data().iter().all(|&v| v == 2.0));
    }
}
