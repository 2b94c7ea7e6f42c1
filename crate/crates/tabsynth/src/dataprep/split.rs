//! Stratified train/validation/test splitting.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::dataset::Dataset;
use super::PrepError;
use crate::seeds;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SplitSpec {
    pub test_fraction: f64,
    pub validation_fraction: f64,
    pub stratify: bool,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(test_fraction: f64, validation_fraction: f64, seed: u64) -> Self {
        Self {
            test_fraction,
            validation_fraction,
            stratify: true,
            seed,
        }
    }

    fn validate(&self) -> Result<(), PrepError> {
        for (name, f) in [
            ("test", self.test_fraction),
            ("validation", self.validation_fraction),
        ] {
            if !(0.0 < f && f < 1.0) {
                return Err(PrepError::Config(format!(
                    "{} fraction must lie in (0,1), got {}",
                    name, f
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

/// Nested stratified split: the test fraction is carved off the whole set,
/// then the validation fraction off the remainder. Totals are fixed at
/// `ceil(n * fraction)`; the minority class contributes
/// `floor(minority * fraction)` rows and the majority the remainder, so
/// class ratios are preserved to within one row.
pub fn split_indices(labels: &[u8], spec: &SplitSpec) -> Result<SplitIndices, PrepError> {
    spec.validate()?;
    if labels.is_empty() {
        return Err(PrepError::Contract("cannot split an empty dataset".into()));
    }
    if spec.stratify {
        for class in [0u8, 1u8] {
            let count = labels.iter().filter(|&&l| l == class).count();
            if count < 5 {
                return Err(PrepError::Stratification(format!(
                    "class {} has only {} members (need at least 5)",
                    class, count
                )));
            }
        }
    }

    let all: Vec<usize> = (0..labels.len()).collect();
    let (test, rest) = carve(labels, &all, spec.test_fraction, spec, 0)?;
    let (validation, train) = carve(labels, &rest, spec.validation_fraction, spec, 1)?;
    Ok(SplitIndices {
        train,
        validation,
        test,
    })
}

fn carve(
    labels: &[u8],
    pool: &[usize],
    fraction: f64,
    spec: &SplitSpec,
    stage: u64,
) -> Result<(Vec<usize>, Vec<usize>), PrepError> {
    let n = pool.len();
    let total = (n as f64 * fraction).ceil() as usize;
    let total = total.min(n.saturating_sub(1)).max(1);

    let mut rng = seeds::derive_rng(spec.seed, "split", &[stage]);
    if !spec.stratify {
        let mut shuffled = pool.to_vec();
        shuffled.shuffle(&mut rng);
        let (sel, rest) = shuffled.split_at(total);
        let mut selected = sel.to_vec();
        let mut remaining = rest.to_vec();
        selected.sort_unstable();
        remaining.sort_unstable();
        return Ok((selected, remaining));
    }

    let mut class0: Vec<usize> = pool.iter().copied().filter(|&i| labels[i] == 0).collect();
    let mut class1: Vec<usize> = pool.iter().copied().filter(|&i| labels[i] == 1).collect();
    class0.shuffle(&mut rng);
    class1.shuffle(&mut rng);

    // floor on the minority class, remainder from the majority
    let (minority, majority) = if class1.len() <= class0.len() {
        (&mut class1, &mut class0)
    } else {
        (&mut class0, &mut class1)
    };
    let take_min = ((minority.len() as f64) * fraction).floor() as usize;
    let take_min = take_min.min(minority.len());
    let take_maj = total.saturating_sub(take_min).min(majority.len());
    let take_min = take_min + (total - take_min - take_maj); // spill back if the majority ran out

    let mut selected: Vec<usize> = minority[..take_min]
        .iter()
        .chain(&majority[..take_maj])
        .copied()
        .collect();
    let mut remaining: Vec<usize> = minority[take_min..]
        .iter()
        .chain(&majority[take_maj..])
        .copied()
        .collect();
    selected.sort_unstable();
    remaining.sort_unstable();
    Ok((selected, remaining))
}

/// Splits a dataset into train/validation/test subsets.
pub fn split_dataset(
    dataset: &Dataset,
    spec: &SplitSpec,
) -> Result<(Dataset, Dataset, Dataset), PrepError> {
    let idx = split_indices(&dataset.labels, spec)?;
    Ok((
        dataset.subset(&idx.train),
        dataset.subset(&idx.validation),
        dataset.subset(&idx.test),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(n0: usize, n1: usize) -> Vec<u8> {
        let mut l = vec![0u8; n0];
        l.extend(vec![1u8; n1]);
        l
    }

    #[test]
    fn sizes_for_811_rows() {
        // ceil(811*0.2)=163 test, ceil(648*0.2)=130 validation, 518 train
        let l = labels(487, 324);
        let idx = split_indices(&l, &SplitSpec::new(0.2, 0.2, 7)).unwrap();
        assert_eq!(idx.test.len(), 163);
        assert_eq!(idx.validation.len(), 130);
        assert_eq!(idx.train.len(), 518);
    }

    #[test]
    fn splits_are_disjoint_and_cover() {
        let l = labels(60, 40);
        let idx = split_indices(&l, &SplitSpec::new(0.25, 0.25, 3)).unwrap();
        let mut all: Vec<usize> = idx
            .train
            .iter()
            .chain(&idx.validation)
            .chain(&idx.test)
            .copied()
            .collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
    }

    #[test]
    fn same_seed_reproduces_partitions() {
        let l = labels(73, 41);
        let a = split_indices(&l, &SplitSpec::new(0.2, 0.2, 99)).unwrap();
        let b = split_indices(&l, &SplitSpec::new(0.2, 0.2, 99)).unwrap();
        assert_eq!(a, b);
        let c = split_indices(&l, &SplitSpec::new(0.2, 0.2, 100)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn stratification_keeps_class_ratio_within_one_row() {
        let l = labels(600, 400);
        let idx = split_indices(&l, &SplitSpec::new(0.2, 0.2, 5)).unwrap();
        for part in [&idx.train, &idx.validation, &idx.test] {
            let risk = part.iter().filter(|&&i| l[i] == 1).count() as f64;
            let expected = 0.4 * part.len() as f64;
            assert!(
                (risk - expected).abs() <= 1.0,
                "{} risk rows in a split of {} (expected ~{})",
                risk,
                part.len(),
                expected
            );
        }
    }

    #[test]
    fn tiny_class_is_rejected() {
        let l = labels(50, 4);
        assert!(matches!(
            split_indices(&l, &SplitSpec::new(0.2, 0.2, 1)),
            Err(PrepError::Stratification(_))
        ));
    }

    #[test]
    fn fractions_outside_unit_interval_are_rejected() {
        let l = labels(30, 30);
        assert!(split_indices(&l, &SplitSpec::new(0.0, 0.2, 1)).is_err());
        assert!(split_indices(&l, &SplitSpec::new(0.2, 1.0, 1)).is_err());
    }
}
