use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datapipe::dataset::Dataset;
use crate::error::{Error, Result};

/// Sorted train and test row indices forming a partition of `0..labels.len()`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded train/test partition over row labels.
///
/// Stratified mode shuffles each class separately (classes in index order,
/// all drawing from one seeded stream) and sends `round(fraction * count)`
/// rows of each class to the training side.
pub fn split_indices(
    labels: &[usize],
    num_classes: usize,
    train_fraction: f64,
    seed: u64,
    stratified: bool,
) -> Result<SplitIndices> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!("train_fraction must be in (0, 1), got {train_fraction}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    if stratified {
        let mut by_class = vec![Vec::new(); num_classes];
        for (i, &l) in labels.iter().enumerate() {
            if l >= num_classes {
                return Err(Error::LabelOutOfRange { label: l, classes: num_classes });
            }
            by_class[l].push(i);
        }
        if let Some(c) = by_class.iter().position(Vec::is_empty) {
            return Err(Error::InvalidArgument(format!("class {c} has no rows; cannot stratify")));
        }
        for mut rows in by_class {
            rows.shuffle(&mut rng);
            let k = (train_fraction * rows.len() as f64).round() as usize;
            train.extend_from_slice(&rows[..k]);
            test.extend_from_slice(&rows[k..]);
        }
    } else {
        let mut rows: Vec<usize> = (0..labels.len()).collect();
        rows.shuffle(&mut rng);
        let k = (train_fraction * rows.len() as f64).round() as usize;
        train.extend_from_slice(&rows[..k]);
        test.extend_from_slice(&rows[k..]);
    }
    if train.is_empty() || test.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "train_fraction {train_fraction} leaves an empty split for {} rows",
            labels.len()
        )));
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(SplitIndices { train, test })
}

pub fn split_dataset(data: &Dataset, train_fraction: f64, seed: u64, stratified: bool) -> Result<(Dataset, Dataset)> {
    let idx = split_indices(&data.labels, data.num_classes(), train_fraction, seed, stratified)?;
    Ok((data.select(&idx.train), data.select(&idx.test)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ten_percent_of_balanced_hundred() {
        let labels: Vec<usize> = (0..100).map(|i| i % 2).collect();
        let s = split_indices(&labels, 2, 0.10, 1, true).unwrap();
        assert_eq!(s.train.len(), 10);
        assert_eq!(s.train.iter().filter(|&&i| labels[i] == 0).count(), 5);
    }

    #[test]
    fn deterministic_for_seed() {
        let labels: Vec<usize> = (0..50).map(|i| i % 3).collect();
        let a = split_indices(&labels, 3, 0.3, 7, true).unwrap();
        let b = split_indices(&labels, 3, 0.3, 7, true).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn half_split_of_single_class() {
        let labels = vec![0; 10];
        let s = split_indices(&labels, 1, 0.5, 3, true).unwrap();
        assert_eq!((s.train.len(), s.test.len()), (5, 5));
        let mut all: Vec<usize> = s.train.iter().chain(&s.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn errors() {
        assert!(split_indices(&[0, 0, 0], 2, 0.5, 0, true).is_err());
        assert!(split_indices(&[0, 1], 2, 0.0, 0, false).is_err());
        assert!(split_indices(&[0, 1], 2, 1.0, 0, false).is_err());
        // rounds to an empty training side
        assert!(split_indices(&[0, 0, 0, 0], 1, 0.1, 0, false).is_err());
    }

    proptest! {
        #[test]
        fn split_is_a_partition(
            labels in proptest::collection::vec(0usize..3, 20..200),
            frac in 0.1f64..0.9,
            seed in any::<u64>(),
            stratified in any::<bool>(),
        ) {
            let present: Vec<usize> = (0..3).filter(|c| labels.contains(c)).collect();
            let remap: Vec<usize> = labels.iter().map(|l| present.iter().position(|p| p == l).unwrap()).collect();
            let c = present.len();
            if let Ok(s) = split_indices(&remap, c, frac, seed, stratified) {
                let mut all: Vec<usize> = s.train.iter().chain(&s.test).copied().collect();
                all.sort_unstable();
                prop_assert_eq!(all, (0..remap.len()).collect::<Vec<_>>());
                if stratified {
                    for k in 0..c {
                        let count = remap.iter().filter(|&&l| l == k).count() as f64;
                        let got = s.train.iter().filter(|&&i| remap[i] == k).count() as f64;
                        prop_assert!((got - frac * count).abs() <= 1.0);
                    }
                }
            }
        }
    }
}
