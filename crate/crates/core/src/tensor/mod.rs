//! Dense row-major `f64` tensors and a single-use reverse-mode tape.
//!
//! Tensors of rank 0 (scalar), 1 (vector), 2 (matrix) and 3 are supported.
//! Operations are recorded on a [`Graph`]; [`Graph::backward`] replays the
//! adjoints once, in reverse execution order, and hands back the gradients of
//! every leaf that was registered with [`Graph::param`].

mod gradcheck;
mod graph;

pub use gradcheck::{grad_check, relative_error, GradCheckReport};
pub use graph::{cross_entropy_value, log_sum_exp, Fault, Gradients, Graph, Var};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAX_RANK: usize = 3;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("data length {len} does not match shape {shape:?}")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("rank {0} exceeds the supported maximum of {MAX_RANK}")]
    Rank(usize),
    #[error("{0}: non-finite value")]
    NonFinite(&'static str),
    #[error("{0}: input has no rows")]
    Empty(&'static str),
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("graph was already consumed by a previous backward pass")]
    GraphConsumed,
    #[error("class index {index} out of range for {len} classes")]
    Index { index: usize, len: usize },
    #[error("tensor does not require grad")]
    NoGrad,
    #[error("finite-difference step must be positive, got {0}")]
    BadStep(f64),
    #[error("oracle invalid: two evaluations at the same point gave {first} and {second}")]
    NonDeterministic { first: f64, second: f64 },
}

/// A dense tensor. `grad` is allocated exactly when the tensor requires grad.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    #[serde(skip)]
    grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self, TensorError> {
        if shape.len() > MAX_RANK {
            return Err(TensorError::Rank(shape.len()));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(TensorError::DataLength {
                shape: shape.to_vec(),
                len: data.len(),
            });
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
            grad: None,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self::new(shape, vec![0.0; n]).expect("zeros: rank within bounds")
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
            grad: None,
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
            grad: None,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, TensorError> {
        Self::new(&[rows, cols], data)
    }

    /// Builds a matrix from equally sized rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, TensorError> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(TensorError::Shape {
                    op: "from_rows",
                    left: vec![cols],
                    right: vec![r.len()],
                });
            }
            data.extend_from_slice(r);
        }
        Self::matrix(rows.len(), cols, data)
    }

    pub fn identity(n: usize) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        Self {
            shape: vec![n, n],
            data,
            grad: None,
        }
    }

    /// Marks the tensor as a trainable parameter with a zeroed gradient buffer.
    pub fn requires_grad(mut self) -> Self {
        self.ensure_grad();
        self
    }

    pub(crate) fn ensure_grad(&mut self) {
        if self.grad.as_ref().map(Vec::len) != Some(self.data.len()) {
            self.grad = Some(vec![0.0; self.data.len()]);
        }
    }

    pub fn is_trainable(&self) -> bool {
        self.grad.is_some()
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    /// Scalar value of a rank-0 or single-element tensor.
    pub fn item(&self) -> f64 {
        self.data[0]
    }

    /// Row `i` of a matrix.
    pub fn row(&self, i: usize) -> &[f64] {
        let cols = self.shape[self.rank() - 1];
        &self.data[i * cols..(i + 1) * cols]
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = self.grad.as_mut() {
            g.iter_mut().for_each(|x| *x = 0.0);
        }
    }

    /// Adds `delta` into the gradient buffer.
    pub fn accumulate_grad(&mut self, delta: &[f64]) -> Result<(), TensorError> {
        let shape = self.shape.clone();
        let grad = self.grad.as_mut().ok_or(TensorError::NoGrad)?;
        if grad.len() != delta.len() {
            return Err(TensorError::DataLength {
                shape,
                len: delta.len(),
            });
        }
        grad.iter_mut().zip(delta).for_each(|(g, d)| *g += d);
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
            && self
                .grad
                .as_ref()
                .is_none_or(|g| g.iter().all(|x| x.is_finite()))
    }
}
