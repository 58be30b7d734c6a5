use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::Dataset;
use crate::error::{Error, Result};

/// Splits a dataset into disjoint, exhaustive train/validation/test subsets
/// with a seed-deterministic shuffle.
///
/// Validation and test sizes are floor-based; the remainder goes to train.
pub fn split(
    data: &Dataset,
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<(Dataset, Dataset, Dataset)> {
    let (f_train, f_val, f_test) = fractions;
    let sum = f_train + f_val + f_test;
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::domain(format!(
            "split fractions sum to {sum}, expected 1"
        )));
    }
    if f_train < 0.0 || f_val < 0.0 || f_test < 0.0 {
        return Err(Error::domain("split fractions must be non-negative"));
    }
    if data.is_empty() {
        return Err(Error::domain("cannot split an empty dataset"));
    }

    let n = data.len();
    let n_val = (f_val * n as f64).floor() as usize;
    let n_test = (f_test * n as f64).floor() as usize;
    let n_train = n - n_val - n_test;
    if n_train == 0 || n_val == 0 || n_test == 0 {
        return Err(Error::domain(format!(
            "split of {n} samples yields an empty subset ({n_train}/{n_val}/{n_test})"
        )));
    }

    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    let take = |idx: &[usize]| Dataset {
        xs: idx.iter().map(|i| data.xs[*i].clone()).collect(),
        labels: idx.iter().map(|i| data.labels[*i]).collect(),
        n_classes: data.n_classes,
    };
    let train = take(&order[..n_train]);
    let val = take(&order[n_train..n_train + n_val]);
    let test = take(&order[n_train + n_val..]);
    Ok((train, val, test))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_synthetic, SyntheticSpec};

    fn sample_set(n_per_class: usize) -> Dataset {
        gen_synthetic(&SyntheticSpec {
            classes: 2,
            per_class: vec![n_per_class, n_per_class],
            dim: 3,
            separation: 2.0,
            seed: 4,
        })
        .unwrap()
    }

    #[test]
    fn hundred_samples_split_80_10_10() {
        let data = sample_set(50);
        let (train, val, test) = split(&data, (0.8, 0.1, 0.1), 1).unwrap();
        assert_eq!((train.len(), val.len(), test.len()), (80, 10, 10));
    }

    #[test]
    fn splits_are_disjoint_and_exhaustive() {
        let data = sample_set(30);
        let (train, val, test) = split(&data, (0.8, 0.1, 0.1), 2).unwrap();
        let mut all: Vec<Vec<f64>> = train
            .xs
            .iter()
            .chain(&val.xs)
            .chain(&test.xs)
            .cloned()
            .collect();
        assert_eq!(all.len(), data.len());
        let mut orig = data.xs.clone();
        let key = |x: &Vec<f64>| {
            x.iter()
                .map(|v| v.to_bits())
                .collect::<Vec<u64>>()
        };
        all.sort_by_key(key);
        orig.sort_by_key(key);
        assert_eq!(all, orig);
    }

    #[test]
    fn split_is_seed_deterministic() {
        let data = sample_set(20);
        let a = split(&data, (0.8, 0.1, 0.1), 7).unwrap();
        let b = split(&data, (0.8, 0.1, 0.1), 7).unwrap();
        assert_eq!(a, b);
        let c = split(&data, (0.8, 0.1, 0.1), 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn bad_fractions_and_empty_subsets_are_rejected() {
        let data = sample_set(20);
        assert!(split(&data, (0.8, 0.1, 0.2), 0).is_err());
        let tiny = sample_set(2);
        assert!(split(&tiny, (0.8, 0.1, 0.1), 0).is_err());
    }
}
