//! End-to-end preparation: derive, fit bins on the training portion,
//! encode, prune, and split.

use std::collections::BTreeSet;
use std::sync::Arc;

use super::dataset::Dataset;
use super::discretize::{bin_midpoints, bin_of, binned_categories, quantile_edges};
use super::prune::{apply_removal, prune_correlated, PruneReport};
use super::raw::{derive_features, RawTable};
use super::schema::{AttributeKind, AttributeRole, AttributeSpec, Schema, MISSING_LABEL};
use super::split::{split_indices, SplitSpec};
use super::PrepError;

#[derive(Debug, Clone)]
pub struct PrepareConfig {
    /// Quantile bins per continuous attribute (fitted on train rows only).
    pub bins: usize,
    pub prune_threshold: f64,
    pub split: SplitSpec,
}

impl PrepareConfig {
    pub fn new(split: SplitSpec) -> Self {
        Self {
            bins: 5,
            prune_threshold: 0.9,
            split,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Prepared {
    pub schema: Arc<Schema>,
    pub train: Dataset,
    pub validation: Dataset,
    pub test: Dataset,
    pub prune_report: PruneReport,
    /// Records dropped by the selection rule (no usable ergometry pair).
    pub rejected_records: usize,
}

/// Runs the full preparation pipeline on a raw table.
///
/// Split membership is decided right after derivation so that bin edges,
/// category vocabularies, and the pruning correlations are all fitted on
/// training rows only; the fitted transforms are then applied to every
/// split identically.
pub fn prepare(
    raw: &RawTable,
    raw_schema: &Schema,
    cfg: &PrepareConfig,
) -> Result<Prepared, PrepError> {
    if cfg.bins < 2 {
        return Err(PrepError::Config(format!(
            "need at least 2 bins, got {}",
            cfg.bins
        )));
    }
    let derived = derive_features(raw, raw_schema)?;
    let idx = split_indices(&derived.labels, &cfg.split)?;
    let train_set: BTreeSet<usize> = idx.train.iter().copied().collect();

    // fit the encoded schema on training rows
    let mut encoded_attrs = Vec::with_capacity(derived.schema.attributes.len());
    for attr in &derived.schema.attributes {
        if attr.role == AttributeRole::Condition {
            encoded_attrs.push(attr.clone());
            continue;
        }
        let col = derived
            .table
            .column_index(&attr.name)
            .expect("derived schema matches derived table");
        let mut spec = attr.clone();
        match attr.kind {
            AttributeKind::ContinuousBinned => {
                let mut train_values = Vec::new();
                for &r in &train_set {
                    if let Some(text) = &derived.table.rows[r][col] {
                        let v: f64 = text.parse().map_err(|_| {
                            PrepError::schema(
                                &attr.name,
                                format!("'{}' is not numeric (row {})", text, r),
                            )
                        })?;
                        train_values.push(v);
                    }
                }
                let edges = quantile_edges(&train_values, cfg.bins);
                spec.midpoints = Some(bin_midpoints(&train_values, &edges));
                spec.categories = binned_categories(&edges);
                spec.edges = Some(edges);
            }
            AttributeKind::Categorical | AttributeKind::Binary => {
                if spec.categories.is_empty() {
                    // vocabulary from the training rows
                    let mut vocab = BTreeSet::new();
                    for &r in &train_set {
                        if let Some(text) = &derived.table.rows[r][col] {
                            vocab.insert(text.clone());
                        }
                    }
                    spec.categories = vocab.into_iter().collect();
                }
                spec.categories.retain(|c| c != MISSING_LABEL);
                spec.categories.push(MISSING_LABEL.to_string());
            }
        }
        encoded_attrs.push(spec);
    }
    let encoded_schema = Arc::new(Schema::new(encoded_attrs));
    encoded_schema.validate_encoded()?;

    // encode every row with the fitted schema
    let full = encode_table(&derived.table, &encoded_schema, &derived.labels)?;

    // prune on training correlations, drop the columns everywhere
    let train_only = full.subset(&idx.train);
    let (_, prune_report) = prune_correlated(&train_only, cfg.prune_threshold);
    let dropped: Vec<&str> = prune_report.removed.iter().map(|r| r.name.as_str()).collect();
    let full = apply_removal(&full, &dropped);

    let schema = Arc::clone(&full.schema);
    Ok(Prepared {
        train: full.subset(&idx.train),
        validation: full.subset(&idx.validation),
        test: full.subset(&idx.test),
        schema,
        prune_report,
        rejected_records: derived.rejected,
    })
}

/// Encodes a derived (string-valued) table against an encoded schema.
fn encode_table(
    table: &RawTable,
    schema: &Arc<Schema>,
    labels: &[u8],
) -> Result<Dataset, PrepError> {
    let model = schema.model_attributes();
    let columns: Vec<usize> = model
        .iter()
        .map(|&a| {
            table
                .column_index(&schema.attributes[a].name)
                .ok_or_else(|| PrepError::schema(&schema.attributes[a].name, "column missing"))
        })
        .collect::<Result<_, _>>()?;

    let mut rows = Vec::with_capacity(table.n_rows());
    for r in 0..table.n_rows() {
        let mut row = Vec::with_capacity(model.len());
        for (pos, &a) in model.iter().enumerate() {
            let attr = &schema.attributes[a];
            let cell = table.rows[r][columns[pos]].as_deref();
            let idx = encode_cell(attr, cell, r)?;
            row.push(idx);
        }
        rows.push(row);
    }
    Dataset::new(Arc::clone(schema), rows, labels.to_vec())
}

fn encode_cell(attr: &AttributeSpec, cell: Option<&str>, row: usize) -> Result<usize, PrepError> {
    let missing = attr
        .missing_index()
        .ok_or_else(|| PrepError::schema(&attr.name, "no missing category"))?;
    let Some(text) = cell else {
        return Ok(missing);
    };
    match attr.kind {
        AttributeKind::ContinuousBinned => {
            let v: f64 = text.parse().map_err(|_| {
                PrepError::schema(&attr.name, format!("'{}' is not numeric (row {})", text, row))
            })?;
            if !v.is_finite() {
                return Ok(missing);
            }
            let edges = attr.edges.as_ref().expect("encoded schema has edges");
            Ok(if edges.is_empty() { 0 } else { bin_of(v, edges) })
        }
        AttributeKind::Categorical | AttributeKind::Binary => {
            // categories unseen during fitting fold into the missing bucket
            Ok(attr.category_index(text).unwrap_or(missing))
        }
    }
}
