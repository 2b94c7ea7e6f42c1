//! Data preparation: schema handling, feature derivation, discretization,
//! correlation pruning, stratified splitting, and mini-batching.
//!
//! The pipeline turns a raw CSV (continuous columns, categorical labels,
//! empty cells for missing values) into a fully categorical encoded
//! dataset the model consumes. Bin edges and category vocabularies are
//! fitted on the training portion only.

mod batches;
mod dataset;
mod discretize;
mod prepare;
mod prune;
mod raw;
mod schema;
mod split;

pub use batches::batches;
pub use dataset::Dataset;
pub use discretize::{bin_labels, bin_midpoints, discretize, quantile_edges};
pub use prepare::{prepare, Prepared, PrepareConfig};
pub use prune::{prune_correlated, PruneReport, RemovedColumn};
pub use raw::{derive_features, DeriveOutcome, RawTable};
pub use schema::{AttributeKind, AttributeRole, AttributeSpec, ErgometryPair, Schema};
pub use split::{split_dataset, split_indices, SplitIndices, SplitSpec};

use thiserror::Error;

/// Errors raised across the preparation pipeline.
#[derive(Debug, Error)]
pub enum PrepError {
    /// Schema/data disagreement, naming the offending column.
    #[error("schema error in column '{column}': {message}")]
    Schema { column: String, message: String },
    /// A class is too small (or absent) for a stratified split.
    #[error("stratification failed: {0}")]
    Stratification(String),
    /// Invalid configuration value.
    #[error("invalid configuration: {0}")]
    Config(String),
    /// API precondition violated.
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl PrepError {
    pub(crate) fn schema(column: impl Into<String>, message: impl Into<String>) -> Self {
        PrepError::Schema {
            column: column.into(),
            message: message.into(),
        }
    }
}
