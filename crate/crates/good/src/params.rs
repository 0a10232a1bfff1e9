//! Flat registries for learnable parameters and batch-norm running
//! statistics. Modules hold typed handles into these stores; the trainer
//! binds the whole store onto a fresh tape each step.

use crate::matrix::{Matrix, RunningStats};
use crate::tape::{Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BnId(pub usize);

#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Matrix>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Matrix) -> ParamId {
        self.names.push(name.into());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn get(&self, id: ParamId) -> &Matrix {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.values[id.0]
    }

    pub fn values(&self) -> &[Matrix] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Matrix] {
        &mut self.values
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Register every parameter on a tape, in store order.
    pub fn bind(&self, tape: &mut Tape) -> Vec<Var> {
        self.values.iter().map(|m| tape.input(m.clone())).collect()
    }
}

#[derive(Clone, Debug, Default)]
pub struct BnStates {
    states: Vec<RunningStats>,
}

impl BnStates {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, dim: usize) -> BnId {
        self.states.push(RunningStats::new(dim));
        BnId(self.states.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn get(&self, id: BnId) -> &RunningStats {
        &self.states[id.0]
    }

    pub fn get_mut(&mut self, id: BnId) -> &mut RunningStats {
        &mut self.states[id.0]
    }

    pub fn states(&self) -> &[RunningStats] {
        &self.states
    }

    pub fn states_mut(&mut self) -> &mut [RunningStats] {
        &mut self.states
    }
}
