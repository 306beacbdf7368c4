//! Named parameter storage and the two ways of materializing it on a tape.
//!
//! Network components are constructed through a [`ParamSource`]: the
//! [`Initializer`] creates fresh, seeded values and stores them, while the
//! [`Binder`] looks up existing values by name. Both walk the same
//! construction code, so a component's parameter names exist in exactly one
//! place.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{invalid, Error, Result};
use crate::tensor::{Scalar, Shape, Tensor};

/// Learnable tensors addressed by hierarchical names (`branch1/mtrb1/theta`).
///
/// Iteration order is sorted by name.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParamStore<T: Scalar = f32> {
    tensors: BTreeMap<String, Tensor<T>>,
}

/// Parameters of a model in training precision.
pub type ModelParams = ParamStore<f32>;

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            tensors: BTreeMap::new(),
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.tensors.get_mut(name)
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) -> Option<Tensor<T>> {
        self.tensors.insert(name.into(), value)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of learnable scalars.
    pub fn scalar_count(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            tensors: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), v.cast()))
                .collect(),
        }
    }
}

/// Passband weights carry the non-negativity constraint.
pub fn is_passband(name: &str) -> bool {
    name.ends_with("/theta")
}

pub fn is_fsl_scale(name: &str) -> bool {
    name.ends_with("/fsl_scale")
}

/// How a fresh parameter is filled.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// Uniform in `±sqrt(6 / fan_in)`.
    HeUniform {
        fan_in: usize,
    },
    Constant(f64),
}

/// Supplies the parameters a component asks for while it is being constructed.
pub trait ParamSource<T: Scalar> {
    /// Returns a tape handle for the parameter `name` of the given shape.
    fn param(&mut self, name: &str, shape: Shape, init: Init) -> Result<Var>;

    /// Records a fixed, non-learnable tensor.
    fn constant(&mut self, value: Tensor<T>) -> Var;
}

/// Creates parameters from a seeded generator and records them in a store.
pub struct Initializer<'a, T: Scalar> {
    tape: &'a mut Tape<T>,
    store: ParamStore<T>,
    rng: ChaCha8Rng,
}

impl<'a, T: Scalar> Initializer<'a, T> {
    pub fn new(tape: &'a mut Tape<T>, seed: u64) -> Self {
        Initializer {
            tape,
            store: ParamStore::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn into_store(self) -> ParamStore<T> {
        self.store
    }
}

impl<T: Scalar> ParamSource<T> for Initializer<'_, T> {
    fn param(&mut self, name: &str, shape: Shape, init: Init) -> Result<Var> {
        if self.store.get(name).is_some() {
            return Err(invalid!("parameter {name} declared twice"));
        }
        let len = shape.iter().product();
        let data: Vec<T> = match init {
            Init::HeUniform { fan_in } => {
                let bound = (6.0 / fan_in.max(1) as f64).sqrt();
                (0..len)
                    .map(|_| T::from_f64(self.rng.gen_range(-bound..bound)))
                    .collect()
            }
            Init::Constant(c) => vec![T::from_f64(c); len],
        };
        let value = Tensor::new(shape, data)?;
        self.store.insert(name, value.clone());
        Ok(self.tape.param(value))
    }

    fn constant(&mut self, value: Tensor<T>) -> Var {
        self.tape.constant(value)
    }
}

/// Binds stored parameters onto a tape by name.
///
/// Names listed as frozen are recorded as constants and receive no gradient.
pub struct Binder<'a, T: Scalar> {
    tape: &'a mut Tape<T>,
    store: &'a ParamStore<T>,
    frozen: &'a BTreeSet<String>,
    bound: BTreeMap<String, Var>,
    missing: Vec<String>,
    wrong_shape: Vec<String>,
}

impl<'a, T: Scalar> Binder<'a, T> {
    pub fn new(
        tape: &'a mut Tape<T>,
        store: &'a ParamStore<T>,
        frozen: &'a BTreeSet<String>,
    ) -> Self {
        Binder {
            tape,
            store,
            frozen,
            bound: BTreeMap::new(),
            missing: Vec::new(),
            wrong_shape: Vec::new(),
        }
    }

    /// Checks that every stored parameter was requested exactly with the
    /// declared shape and returns the name → handle map.
    pub fn finish(self) -> Result<BTreeMap<String, Var>> {
        let unexpected: Vec<String> = self
            .store
            .names()
            .filter(|n| !self.bound.contains_key(*n))
            .map(str::to_owned)
            .collect();
        if !self.missing.is_empty() || !unexpected.is_empty() || !self.wrong_shape.is_empty() {
            return Err(Error::ParamMismatch {
                missing: self.missing,
                unexpected,
                wrong_shape: self.wrong_shape,
            });
        }
        Ok(self.bound)
    }
}

impl<T: Scalar> ParamSource<T> for Binder<'_, T> {
    fn param(&mut self, name: &str, shape: Shape, _init: Init) -> Result<Var> {
        // Mismatches are collected and reported together by `finish`; a
        // placeholder keeps construction going.
        let var = match self.store.get(name) {
            Some(t) if t.shape() == shape => {
                let frozen = self.frozen.contains(name);
                self.tape.leaf(t.clone(), !frozen)
            }
            Some(_) => {
                self.wrong_shape.push(name.to_owned());
                self.tape.constant(Tensor::zeros(shape))
            }
            None => {
                self.missing.push(name.to_owned());
                self.tape.constant(Tensor::zeros(shape))
            }
        };
        if self.bound.insert(name.to_owned(), var).is_some() {
            return Err(invalid!("parameter {name} requested twice"));
        }
        Ok(var)
    }

    fn constant(&mut self, value: Tensor<T>) -> Var {
        self.tape.constant(value)
    }
}
