//! Define-by-run reverse-mode differentiation over dense `f64` tensors.
//!
//! A [`Tape`] is built fresh for every training step. Parameters enter as
//! leaves tagged with a [`ParamId`]; [`Tape::backward`] returns a
//! [`GradStore`] keyed by those ids. [`Tape::stop_gradient`] is an ordinary
//! node whose backward rule contributes nothing to its input.

mod gradcheck;
pub mod kernels;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, GradCheckConfig};
pub use kernels::ConvGeom;
pub use tape::{BackwardTrace, BatchStats, GradStore, OpKind, ParamId, Tape, Var};
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("batch norm in train mode needs at least 2 rows, got {got}")]
    BatchTooSmall { got: usize },
    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NotScalar { shape: Vec<usize> },
    #[error("tape order violated: node {child} refers to later node {parent}")]
    Cycle { child: usize, parent: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}
