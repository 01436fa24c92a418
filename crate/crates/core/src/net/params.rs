//! Named parameter tensors and their initialization.

use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tape, Tensor, Var};

/// Named parameters in insertion order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T: Scalar = f32> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
            index: HashMap::new(),
        }
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<T>) -> Result<()> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::invalid(format!("duplicate parameter {name}")));
        }
        self.index.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.tensors.push(t);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.index.get(name).map(|&i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.index.get(name).map(|&i| &mut self.tensors[i])
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    /// Total number of scalars.
    pub fn numel(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(|s| s.as_str()).zip(&self.tensors)
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(|t| t.cast()).collect(),
            index: self.index.clone(),
        }
    }

    /// Records every parameter as a tracked leaf on `tape`.
    pub fn bind(&self, tape: &Tape<T>) -> Bound<T> {
        Bound {
            vars: self.tensors.iter().map(|t| tape.param(t)).collect(),
            index: self.index.clone(),
        }
    }
}

impl<T: Scalar> ParamStore<T> {
    /// Binds caller-created vars (one per parameter, in store order).
    pub fn bind_vars(&self, vars: &[Var<T>]) -> Result<Bound<T>> {
        if vars.len() != self.tensors.len() {
            return Err(Error::invalid(format!("expected {} vars, got {}", self.tensors.len(), vars.len())));
        }
        for (v, t) in vars.iter().zip(&self.tensors) {
            if v.shape() != t.shape() {
                return Err(Error::shape("bind_vars", v.shape(), t.shape()));
            }
        }
        Ok(Bound {
            vars: vars.to_vec(),
            index: self.index.clone(),
        })
    }
}

/// Parameters recorded on a tape for one forward pass.
pub struct Bound<T: Scalar = f32> {
    vars: Vec<Var<T>>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> Bound<T> {
    pub fn var(&self, name: &str) -> Result<&Var<T>> {
        self.index
            .get(name)
            .map(|&i| &self.vars[i])
            .ok_or_else(|| Error::invalid(format!("missing parameter {name}")))
    }

    pub fn has(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    /// Vars in store order.
    pub fn vars(&self) -> &[Var<T>] {
        &self.vars
    }
}

/// Uniform Glorot initialization for a `[fan_in, fan_out]` weight.
pub(crate) fn glorot<T: Scalar, R: Rng + ?Sized>(rng: &mut R, fan_in: usize, fan_out: usize, gain: f64) -> Tensor<T> {
    let a = gain * (6.0 / (fan_in + fan_out) as f64).sqrt();
    let dist = Uniform::new_inclusive(-a, a).expect("finite bounds");
    Tensor::from_fn(&[fan_in, fan_out], |_| T::of(dist.sample(rng)))
}

pub(crate) fn normal<T: Scalar, R: Rng + ?Sized>(rng: &mut R, shape: &[usize], std: f64) -> Tensor<T> {
    let dist = Normal::new(0.0, std).expect("finite std");
    Tensor::from_fn(shape, |_| T::of(dist.sample(rng)))
}

/// `softplus⁻¹(y) = ln(eʸ − 1)`.
pub(crate) fn softplus_inv(y: f64) -> f64 {
    y.exp_m1().ln()
}
