//! Dense tensor arithmetic with reverse-mode automatic differentiation.
//!
//! The operator set is closed-world: exactly the operations the encoder,
//! decoder, and loss terms compose, each with a hand-derived adjoint rule
//! that [`finite_diff_check`] can verify against central differences.
//! Graphs are built once per mini-batch, forwarded, and walked backwards;
//! parameters live outside the graph in a [`ParamSet`] so the same graph
//! can be re-evaluated under perturbed weights.

mod check;
mod graph;
mod tensor;

pub use check::{finite_diff_check, FiniteDiffReport};
pub use graph::{Graph, NodeId, ParamId, ParamSet, Parameter};
pub use tensor::Tensor;

use thiserror::Error;

/// Errors surfaced by graph construction, evaluation, and backprop.
#[derive(Debug, Error)]
pub enum NumericsError {
    /// Operands cannot be combined under the operator's shape rules.
    #[error("shape mismatch in {op}: {details}")]
    Shape { op: &'static str, details: String },
    /// An operator produced NaN or infinity.
    #[error("non-finite value produced by {op} at node {node}")]
    NonFinite { op: &'static str, node: usize },
    /// An API precondition was violated (non-scalar root, missing forward, ...).
    #[error("contract violation: {0}")]
    Contract(String),
}
