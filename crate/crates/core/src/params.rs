//! Named parameter storage shared by the models and the optimiser.

use alloc::string::String;
use alloc::vec::Vec;
use core::ops::Index;

use num_traits::Float;

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{LampError, Result};
use crate::real::Real;
use crate::rng::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry<T> {
    pub name: String,
    pub tensor: Tensor<T>,
}

/// Ordered set of learned tensors. Each entry is a single storage object:
/// a tensor used twice in the forward pass (the tied label/readout table)
/// is bound once and collects the sum of both gradient contributions.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T> {
    entries: Vec<ParamEntry<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { entries: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> ParamId {
        self.entries.push(ParamEntry { name: name.into(), tensor });
        ParamId(self.entries.len() - 1)
    }

    /// Glorot/Xavier uniform on a `[fan_in, fan_out]` matrix.
    pub fn add_glorot(&mut self, name: impl Into<String>, fan_in: usize, fan_out: usize, rng: &mut Rng) -> ParamId {
        let bound = Float::sqrt(6.0 / (fan_in + fan_out) as f64);
        self.add_uniform(name, &[fan_in, fan_out], bound, rng)
    }

    pub fn add_uniform(&mut self, name: impl Into<String>, shape: &[usize], bound: f64, rng: &mut Rng) -> ParamId {
        let t = Tensor::from_fn(shape.to_vec(), |_| T::from_f64(rng.uniform_range(-bound, bound)));
        self.add(name, t)
    }

    pub fn add_const(&mut self, name: impl Into<String>, shape: &[usize], value: f64) -> ParamId {
        self.add(name, Tensor::full(shape.to_vec(), T::from_f64(value)))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].tensor
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.entries[id.0].tensor
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn entries(&self) -> &[ParamEntry<T>] {
        &self.entries
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.tensor.len()).sum()
    }

    /// Replaces every tensor with the matching one in `other`; names and
    /// shapes must agree entry by entry.
    pub fn load_from(&mut self, other: &ParamStore<T>) -> Result<()> {
        if other.entries.len() != self.entries.len() {
            return Err(LampError::Contract(alloc::format!(
                "parameter count {} vs {}",
                other.entries.len(),
                self.entries.len()
            )));
        }
        for (mine, theirs) in self.entries.iter().zip(&other.entries) {
            if mine.name != theirs.name || mine.tensor.shape() != theirs.tensor.shape() {
                return Err(LampError::Contract(alloc::format!(
                    "parameter {} {:?} does not match {} {:?}",
                    mine.name,
                    mine.tensor.shape(),
                    theirs.name,
                    theirs.tensor.shape()
                )));
            }
        }
        for (mine, theirs) in self.entries.iter_mut().zip(&other.entries) {
            mine.tensor = theirs.tensor.clone();
        }
        Ok(())
    }

    /// Puts every parameter on `graph` as a leaf.
    pub fn bind(&self, graph: &mut Graph<T>, requires_grad: bool) -> ParamVars {
        ParamVars(self.entries.iter().map(|e| graph.leaf(e.tensor.clone(), requires_grad)).collect())
    }

    /// Gradients of every bound parameter after `graph.backward`; zeros for
    /// parameters the loss did not reach.
    pub fn gradients(&self, graph: &Graph<T>, vars: &ParamVars) -> Vec<Vec<T>> {
        self.entries
            .iter()
            .zip(&vars.0)
            .map(|(e, &v)| match graph.grad(v) {
                Some(g) => g.to_vec(),
                None => alloc::vec![T::zero(); e.tensor.len()],
            })
            .collect()
    }
}

/// Graph handles for the parameters of one [`ParamStore`], indexed by [`ParamId`].
#[derive(Clone, Debug)]
pub struct ParamVars(Vec<Var>);

impl ParamVars {
    /// Substitutes the handle for one parameter (used for gradient-path ablations).
    pub fn with_override(&self, id: ParamId, var: Var) -> ParamVars {
        let mut v = self.0.clone();
        v[id.0] = var;
        ParamVars(v)
    }
}

impl Index<ParamId> for ParamVars {
    type Output = Var;

    fn index(&self, id: ParamId) -> &Var {
        &self.0[id.0]
    }
}
