//! Minimal dense reverse-mode differentiation over float64 matrices.
//!
//! A [`Graph`] is a tape built fresh for every forward pass. Model weights
//! live in a [`ParamStore`] and enter a graph as parameter leaves; after
//! [`Graph::backward`] their gradients are folded back into the store with
//! [`Graph::accumulate_param_grads`].

mod checkpoint;
mod gradcheck;
mod graph;
mod lstm;
mod params;
mod tensor;

use thiserror::Error;

pub use checkpoint::{read_tensors, write_tensors, CheckpointError, DType, NamedTensor};
pub use gradcheck::{grad_check, relative_error, GradCheckReport, ParamCheck, ROUNDOFF_FACTOR};
pub use graph::{sigmoid, Axis, Binary, Graph, Unary, Var, LN_FLOOR};
pub use lstm::{lstm_cell, LstmCell, LstmParams};
pub use params::{ParamId, ParamStore, Parameter};
pub use tensor::{Shape, Tensor};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutogradError {
    #[error("shape mismatch in {op}: {left} vs {right}")]
    ShapeMismatch {
        op: &'static str,
        left: Shape,
        right: Shape,
    },
    #[error("data of length {len} does not fill shape {shape}")]
    DataLength { shape: Shape, len: usize },
    #[error("loss must be a scalar, got shape {0}")]
    NonScalarLoss(Shape),
    #[error("softmax row {row} is fully masked")]
    FullyMaskedRow { row: usize },
    #[error("index {index} out of range (limit {limit})")]
    IndexOutOfRange { index: usize, limit: usize },
    #[error("{0} needs at least one input")]
    EmptyInput(&'static str),
    #[error("duplicate parameter name `{0}`")]
    DuplicateParameter(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(&'static str),
}

#[cfg(test)]
mod tests;
