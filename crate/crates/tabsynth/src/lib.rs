//! Conditional tabular-data synthesis for categorical clinical records.
//!
//! The crate trains a conditional variational autoencoder with per-attribute
//! embeddings over fully categorical tables, regularized by a contrastive
//! InfoNCE term and an L1 latent sparsity penalty, and generates new records
//! by SMOTE-style interpolation in the learned latent space. Around the
//! generator sit a data-preparation pipeline (derivation, discretization,
//! correlation pruning, stratified splitting), a deterministic benchmark
//! corpus with known ground truth, and an indirect evaluation harness that
//! measures whether synthetic augmentation improves downstream risk
//! classifiers.
//!
//! Entry points:
//!
//! - [`numerics`] — dense f64 tensors with reverse-mode autodiff over a
//!   fixed operator set, plus finite-difference gradient verification.
//! - [`dataprep`] — schema, raw-table derivation, binning, pruning,
//!   splitting, batching, and the CSV/JSON dataset formats.
//! - [`model`] / [`losses`] / [`training`] — the CVAE, its objectives, and
//!   the Adam training loop with checkpointing.
//! - [`sampling`] — latent banks, k-NN SMOTE interpolation, and prior
//!   sampling.
//! - [`eval`] — F1 metrics, class-consistency accuracy, substitute
//!   classifiers, and the augmentation experiment runner.
//! - [`benchgen`] — the synthetic rehab-like benchmark corpus.
//! - [`pipeline`] — the command layer behind the `tabsynth` binary.

pub mod benchgen;
pub mod dataprep;
pub mod losses;
pub mod model;
pub mod numerics;
pub mod seeds;
pub mod training;
