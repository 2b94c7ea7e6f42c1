//! Interval discretization of continuous columns.

use super::PrepError;
use super::schema::MISSING_LABEL;

/// Maps optional continuous values onto category indices.
///
/// With `k` edges there are `k + 1` value bins plus a trailing missing
/// category: values below the first edge map to bin 0, `edges[i-1] <= v <
/// edges[i]` maps to bin `i` (half-open), values at or above the last edge
/// map to bin `k`, and absent or NaN values map to index `k + 1`.
pub fn discretize(values: &[Option<f64>], edges: &[f64]) -> Result<Vec<usize>, PrepError> {
    if edges.is_empty() {
        return Err(PrepError::Contract("discretize needs at least one edge".into()));
    }
    if edges.windows(2).any(|w| w[0] >= w[1]) {
        return Err(PrepError::Contract(
            "bin edges must be strictly increasing".into(),
        ));
    }
    let missing = edges.len() + 1;
    Ok(values
        .iter()
        .map(|v| match v {
            Some(x) if x.is_finite() => bin_of(*x, edges),
            _ => missing,
        })
        .collect())
}

pub(crate) fn bin_of(x: f64, edges: &[f64]) -> usize {
    edges.partition_point(|&e| e <= x)
}

/// Quantile bin edges fitted on observed values; duplicates collapse, so
/// fewer than `bins - 1` edges may come back (possibly none for a
/// constant column).
pub fn quantile_edges(values: &[f64], bins: usize) -> Vec<f64> {
    if values.is_empty() || bins < 2 {
        return Vec::new();
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    let n = sorted.len();
    let mut edges = Vec::new();
    for k in 1..bins {
        let idx = (k * n / bins).min(n - 1);
        let e = sorted[idx];
        if e > *sorted.first().expect("non-empty") && edges.last() != Some(&e) {
            edges.push(e);
        }
    }
    edges
}

/// Human-readable labels for the value bins of the given edges (the
/// missing category label is appended separately).
pub fn bin_labels(edges: &[f64]) -> Vec<String> {
    if edges.is_empty() {
        return vec!["all".to_string()];
    }
    let mut labels = Vec::with_capacity(edges.len() + 1);
    labels.push(format!("<{}", edges[0]));
    for w in edges.windows(2) {
        labels.push(format!("[{};{})", w[0], w[1]));
    }
    labels.push(format!(">={}", edges[edges.len() - 1]));
    labels
}

/// One representative value per bin: the median of the fitting values that
/// fell into it, with an edge-derived fallback for empty bins.
pub fn bin_midpoints(values: &[f64], edges: &[f64]) -> Vec<f64> {
    let bins = edges.len() + 1;
    let mut per_bin: Vec<Vec<f64>> = vec![Vec::new(); bins];
    for &v in values {
        per_bin[bin_of(v, edges)].push(v);
    }
    (0..bins)
        .map(|i| {
            let members = &mut per_bin[i];
            if members.is_empty() {
                return fallback_midpoint(i, edges);
            }
            members.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
            members[members.len() / 2]
        })
        .collect()
}

fn fallback_midpoint(bin: usize, edges: &[f64]) -> f64 {
    if edges.is_empty() {
        return 0.0;
    }
    let span = if edges.len() >= 2 {
        (edges[edges.len() - 1] - edges[0]) / (edges.len() - 1) as f64
    } else {
        1.0
    };
    if bin == 0 {
        edges[0] - 0.5 * span
    } else if bin == edges.len() {
        edges[edges.len() - 1] + 0.5 * span
    } else {
        0.5 * (edges[bin - 1] + edges[bin])
    }
}

/// Category labels for a fitted binned attribute, missing label included.
pub(crate) fn binned_categories(edges: &[f64]) -> Vec<String> {
    let mut labels = bin_labels(edges);
    labels.push(MISSING_LABEL.to_string());
    labels
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn discretize_definition_and_missing() {
        let out = discretize(&[Some(1.0), Some(5.0), None], &[2.0, 4.0]).unwrap();
        assert_eq!(out, vec![0, 2, 3]);
    }

    #[test]
    fn discretize_boundary_is_half_open() {
        let out = discretize(&[Some(2.0)], &[2.0, 4.0]).unwrap();
        assert_eq!(out, vec![1]);
    }

    #[test]
    fn discretize_nan_is_missing() {
        let out = discretize(&[Some(f64::NAN)], &[0.0]).unwrap();
        assert_eq!(out, vec![2]);
    }

    #[test]
    fn discretize_matches_brute_force_recount() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(5);
        let values: Vec<Option<f64>> = (0..811)
            .map(|_| {
                if rng.gen_bool(0.1) {
                    None
                } else {
                    Some(rng.gen_range(-10.0..10.0))
                }
            })
            .collect();
        let edges: Vec<f64> = (1..10).map(|k| -10.0 + 2.0 * k as f64).collect();
        let out = discretize(&values, &edges).unwrap();

        let mut histogram = vec![0usize; edges.len() + 2];
        for idx in &out {
            histogram[*idx] += 1;
        }
        // brute-force recount straight from the definition
        let mut expected = vec![0usize; edges.len() + 2];
        for v in &values {
            match v {
                None => expected[edges.len() + 1] += 1,
                Some(x) => {
                    let mut bin = edges.len();
                    for (i, e) in edges.iter().enumerate() {
                        if x < e {
                            bin = i;
                            break;
                        }
                    }
                    expected[bin] += 1;
                }
            }
        }
        assert_eq!(histogram, expected);
    }

    #[test]
    fn quantile_edges_dedup_constant_column() {
        assert!(quantile_edges(&[3.0; 40], 5).is_empty());
        let edges = quantile_edges(&(0..100).map(f64::from).collect::<Vec<_>>(), 5);
        assert_eq!(edges.len(), 4);
        assert!(edges.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn midpoints_are_in_bin_medians() {
        let values: Vec<f64> = (0..100).map(f64::from).collect();
        let edges = vec![25.0, 50.0, 75.0];
        let mids = bin_midpoints(&values, &edges);
        assert_eq!(mids.len(), 4);
        for (i, m) in mids.iter().enumerate() {
            assert_eq!(bin_of(*m, &edges), i, "midpoint {} in wrong bin", m);
        }
    }
}
