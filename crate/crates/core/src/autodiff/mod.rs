//! Dense `f64` tensors, a tape-style computation graph with reverse-mode
//! gradients, a parameter store with an adaptive-moment optimizer, and the
//! checkpoint container.

pub mod checkpoint;
pub mod graph;
pub mod params;
pub mod tensor;

pub use graph::{Gradients, Graph, NodeId, PAD};
pub use params::{AdamConfig, ParamId, ParamStore};
pub use tensor::Tensor;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AutodiffError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("backward needs a one-element output, got shape {0:?}")]
    NonScalarOutput(Vec<usize>),
    #[error("duplicate parameter name {0}")]
    DuplicateParam(String),
    #[error("unknown parameter {0}")]
    UnknownParam(String),
    #[error("non-finite gradient for parameter {0}")]
    NonFiniteGradient(String),
}
