//! Pearson pruning of highly correlated attribute pairs.

use serde::{Deserialize, Serialize};
use std::sync::Arc;

use super::dataset::Dataset;
use super::schema::{AttributeRole, Schema};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RemovedColumn {
    pub name: String,
    pub correlated_with: String,
    pub r: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PruneReport {
    pub threshold: f64,
    pub removed: Vec<RemovedColumn>,
    pub kept: Vec<String>,
}

/// Removes, for every feature pair with `|r| > threshold`, the attribute
/// that comes later in schema order. Pearson is computed on category
/// indices with missing values excluded pairwise; pairs with an undefined
/// correlation (constant column, too few shared rows) are skipped.
/// Generation-only and condition attributes are never pruning candidates.
pub fn prune_correlated(dataset: &Dataset, threshold: f64) -> (Dataset, PruneReport) {
    let schema = &dataset.schema;
    let model = schema.model_attributes();
    // candidate positions within the model-column layout
    let candidates: Vec<usize> = (0..model.len())
        .filter(|&j| schema.attributes[model[j]].role == AttributeRole::Feature)
        .collect();

    let missing_of: Vec<Option<usize>> = model
        .iter()
        .map(|&a| schema.attributes[a].missing_index())
        .collect();

    let mut removed_cols: Vec<bool> = vec![false; model.len()];
    let mut removed = Vec::new();
    for (pos, &j) in candidates.iter().enumerate() {
        if removed_cols[j] {
            continue;
        }
        for &k in &candidates[pos + 1..] {
            if removed_cols[k] {
                continue;
            }
            let Some(r) = pearson_on_indices(dataset, j, k, missing_of[j], missing_of[k]) else {
                continue;
            };
            if r.abs() > threshold {
                removed_cols[k] = true;
                removed.push(RemovedColumn {
                    name: schema.attributes[model[k]].name.clone(),
                    correlated_with: schema.attributes[model[j]].name.clone(),
                    r,
                });
            }
        }
    }

    let kept: Vec<String> = (0..model.len())
        .filter(|&j| !removed_cols[j])
        .map(|j| schema.attributes[model[j]].name.clone())
        .collect();
    let report = PruneReport {
        threshold,
        removed,
        kept,
    };

    let dropped_names: Vec<&str> = report.removed.iter().map(|r| r.name.as_str()).collect();
    let pruned = apply_removal(dataset, &dropped_names);
    (pruned, report)
}

/// Drops the named model columns from a dataset (schema rebuilt to match).
pub(crate) fn apply_removal(dataset: &Dataset, names: &[&str]) -> Dataset {
    let schema = &dataset.schema;
    let model = schema.model_attributes();
    let keep_cols: Vec<usize> = (0..model.len())
        .filter(|&j| !names.contains(&schema.attributes[model[j]].name.as_str()))
        .collect();
    let new_attrs = schema
        .attributes
        .iter()
        .filter(|a| !names.contains(&a.name.as_str()))
        .cloned()
        .collect();
    let mut new_schema = Schema::new(new_attrs);
    new_schema.version = schema.version.clone();
    Dataset {
        schema: Arc::new(new_schema),
        rows: dataset
            .rows
            .iter()
            .map(|row| keep_cols.iter().map(|&j| row[j]).collect())
            .collect(),
        labels: dataset.labels.clone(),
    }
}

fn pearson_on_indices(
    dataset: &Dataset,
    j: usize,
    k: usize,
    missing_j: Option<usize>,
    missing_k: Option<usize>,
) -> Option<f64> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for row in &dataset.rows {
        if Some(row[j]) == missing_j || Some(row[k]) == missing_k {
            continue;
        }
        xs.push(row[j] as f64);
        ys.push(row[k] as f64);
    }
    pearson(&xs, &ys)
}

/// Plain Pearson correlation; None when undefined.
pub(crate) fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let n = xs.len();
    if n < 2 {
        return None;
    }
    let nf = n as f64;
    let mx = xs.iter().sum::<f64>() / nf;
    let my = ys.iter().sum::<f64>() / nf;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for i in 0..n {
        let dx = xs[i] - mx;
        let dy = ys[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

#[cfg(test)]
mod tests {
    use super::super::schema::{AttributeKind, AttributeSpec};
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn schema_with_features(names: &[&str], cardinality: usize) -> Arc<Schema> {
        let mut attrs: Vec<AttributeSpec> = names
            .iter()
            .map(|n| {
                AttributeSpec::new(*n, AttributeKind::Categorical, AttributeRole::Feature)
                    .with_categories((0..cardinality).map(|c| format!("c{c}")).collect())
            })
            .collect();
        attrs.push(
            AttributeSpec::new("risk", AttributeKind::Binary, AttributeRole::Condition)
                .with_categories(vec!["non-risk".into(), "risk".into()]),
        );
        Arc::new(Schema::new(attrs))
    }

    fn dataset(schema: Arc<Schema>, columns: Vec<Vec<usize>>) -> Dataset {
        let n = columns[0].len();
        let rows: Vec<Vec<usize>> = (0..n)
            .map(|r| columns.iter().map(|c| c[r]).collect())
            .collect();
        Dataset::new(schema, rows, vec![0; n]).unwrap()
    }

    #[test]
    fn duplicated_column_is_removed() {
        let schema = schema_with_features(&["a", "b"], 4);
        let col: Vec<usize> = (0..40).map(|i| i % 4).collect();
        let ds = dataset(schema, vec![col.clone(), col]);
        let (pruned, report) = prune_correlated(&ds, 0.9);
        assert_eq!(report.removed.len(), 1);
        assert_eq!(report.removed[0].name, "b");
        assert!((report.removed[0].r - 1.0).abs() < 1e-12);
        assert_eq!(pruned.rows[0].len(), 1);
    }

    #[test]
    fn independent_uniform_columns_are_retained() {
        let mut rng = ChaCha12Rng::seed_from_u64(17);
        let schema = schema_with_features(&["a", "b"], 6);
        let a: Vec<usize> = (0..811).map(|_| rng.gen_range(0..5)).collect();
        let b: Vec<usize> = (0..811).map(|_| rng.gen_range(0..5)).collect();
        let r = pearson(
            &a.iter().map(|&v| v as f64).collect::<Vec<_>>(),
            &b.iter().map(|&v| v as f64).collect::<Vec<_>>(),
        )
        .unwrap();
        assert!(r.abs() < 0.2, "independent columns correlate at {}", r);
        let ds = dataset(schema, vec![a, b]);
        let (_, report) = prune_correlated(&ds, 0.9);
        assert!(report.removed.is_empty());
    }

    #[test]
    fn mutually_correlated_triple_keeps_only_first() {
        let schema = schema_with_features(&["a", "b", "c"], 5);
        let base: Vec<usize> = (0..60).map(|i| i % 5).collect();
        // b and c are noisy copies of a, pairwise r > 0.9 for all three pairs
        let b: Vec<usize> = base.iter().map(|&v| if v == 4 { 3 } else { v }).collect();
        let c: Vec<usize> = base.iter().map(|&v| if v == 0 { 1 } else { v }).collect();
        // brute-force pair scan confirms the premise
        for (x, y) in [(&base, &b), (&base, &c), (&b, &c)] {
            let r = pearson(
                &x.iter().map(|&v| v as f64).collect::<Vec<_>>(),
                &y.iter().map(|&v| v as f64).collect::<Vec<_>>(),
            )
            .unwrap();
            assert!(r.abs() > 0.9, "premise violated: r = {}", r);
        }
        let ds = dataset(schema, vec![base, b, c]);
        let (pruned, report) = prune_correlated(&ds, 0.9);
        assert_eq!(report.kept, vec!["a".to_string()]);
        assert_eq!(report.removed.len(), 2);
        assert_eq!(pruned.rows[0].len(), 1);
    }

    #[test]
    fn constant_column_is_retained() {
        let schema = schema_with_features(&["a", "b"], 4);
        let a: Vec<usize> = vec![2; 30];
        let b: Vec<usize> = (0..30).map(|i| i % 3).collect();
        let ds = dataset(schema, vec![a, b]);
        let (_, report) = prune_correlated(&ds, 0.9);
        assert!(report.removed.is_empty());
        assert_eq!(report.kept.len(), 2);
    }

    #[test]
    fn pruning_is_row_order_stable() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let schema = schema_with_features(&["a", "b", "c"], 5);
        let a: Vec<usize> = (0..100).map(|_| rng.gen_range(0..5)).collect();
        let b: Vec<usize> = a.iter().map(|&v| (v + rng.gen_range(0..2)).min(4)).collect();
        let c: Vec<usize> = (0..100).map(|_| rng.gen_range(0..5)).collect();
        let ds = dataset(schema, vec![a, b, c]);
        let (_, report) = prune_correlated(&ds, 0.9);

        let mut perm: Vec<usize> = (0..ds.n_rows()).collect();
        for i in (1..perm.len()).rev() {
            perm.swap(i, rng.gen_range(0..=i));
        }
        let shuffled = ds.subset(&perm);
        let (_, report2) = prune_correlated(&shuffled, 0.9);
        let names = |r: &PruneReport| r.removed.iter().map(|x| x.name.clone()).collect::<Vec<_>>();
        assert_eq!(names(&report), names(&report2));
    }
}
