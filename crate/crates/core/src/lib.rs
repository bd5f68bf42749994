//! Span-ranking coreference resolution with graph-refined span
//! representations and second-order antecedent-tree decoding.

pub mod app;
pub mod autodiff;
pub mod candidates;
pub mod config;
pub mod decoder;
pub mod document;
pub mod encoder;
pub mod gnn;
pub mod metrics;
pub mod model;
pub mod oracle;
pub mod scorer;
pub mod synthetic;
pub mod trainer;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
