//! Minimal reverse-mode differentiation over dense matrices.
//!
//! A [`Graph`] is a static, append-only list of nodes; operands always refer
//! to earlier nodes, so the node order is a topological order. Parameters
//! live outside the graph in a [`ParamStore`] so one graph can be re-run
//! every training step.

mod graph;
mod optim;

pub use graph::{Gradients, Graph, NodeId, Op};
pub use optim::{adamw_step, AdamState, AdamW};

use crate::matrix::Matrix;

pub type ParamId = usize;

/// Named trainable tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    values: Vec<Matrix>,
    names: Vec<String>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Matrix) -> ParamId {
        self.values.push(value);
        self.names.push(name.into());
        self.values.len() - 1
    }

    pub fn get(&self, id: ParamId) -> &Matrix {
        &self.values[id]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.values[id]
    }

    pub fn set(&mut self, id: ParamId, value: Matrix) {
        self.values[id] = value;
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Matrix)> {
        self.values
            .iter()
            .zip(&self.names)
            .enumerate()
            .map(|(i, (v, n))| (i, n.as_str(), v))
    }

    pub fn count_scalars(&self) -> usize {
        self.values.iter().map(Matrix::len).sum()
    }
}
