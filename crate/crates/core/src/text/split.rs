use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train: usize,
    pub valid: usize,
    pub test: usize,
}

impl SplitSizes {
    /// Validation and test take `frac` of `n` each (at least one record when
    /// `n ≥ 3`); training takes the rest.
    pub fn from_fraction(n: usize, frac: f64) -> Self {
        let held = if n >= 3 {
            ((n as f64 * frac).floor() as usize).max(1)
        } else {
            0
        };
        SplitSizes {
            train: n - 2 * held,
            valid: held,
            test: held,
        }
    }

    pub fn total(&self) -> usize {
        self.train + self.valid + self.test
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Splits<T> {
    pub train: Vec<T>,
    pub valid: Vec<T>,
    pub test: Vec<T>,
}

/// Seeded shuffle followed by a train/valid/test partition. Records beyond
/// `sizes.total()` are dropped.
pub fn split_dataset<T>(records: Vec<T>, seed: u64, sizes: SplitSizes) -> Result<Splits<T>> {
    if sizes.total() > records.len() {
        return Err(Error::contract(format!(
            "split sizes {} exceed the {} available records",
            sizes.total(),
            records.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut slots: Vec<Option<T>> = records.into_iter().map(Some).collect();
    let mut order: Vec<usize> = (0..slots.len()).collect();
    order.shuffle(&mut rng);
    let mut take = |range: std::ops::Range<usize>| -> Vec<T> {
        order[range]
            .iter()
            .map(|&i| slots[i].take().expect("each index used once"))
            .collect()
    };
    let train = take(0..sizes.train);
    let valid = take(sizes.train..sizes.train + sizes.valid);
    let test = take(sizes.train + sizes.valid..sizes.total());
    Ok(Splits { train, valid, test })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_disjoint_cover() {
        let sizes = SplitSizes {
            train: 8,
            valid: 1,
            test: 1,
        };
        let a = split_dataset((0..10).collect(), 42, sizes).unwrap();
        let b = split_dataset((0..10).collect(), 42, sizes).unwrap();
        assert_eq!(a, b);
        let mut all: Vec<i32> = a.train.iter().chain(&a.valid).chain(&a.test).copied().collect();
        all.sort();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn seeds_give_different_permutations() {
        let sizes = SplitSizes {
            train: 10,
            valid: 0,
            test: 0,
        };
        // 10! permutations; a collision across 20 seed pairs would be astronomically unlikely.
        let base = split_dataset((0..10).collect::<Vec<i32>>(), 0, sizes).unwrap();
        for seed in 1..20 {
            let other = split_dataset((0..10).collect::<Vec<i32>>(), seed, sizes).unwrap();
            assert_ne!(base.train, other.train, "seed {seed}");
        }
    }

    #[test]
    fn insufficient_records() {
        let sizes = SplitSizes {
            train: 5,
            valid: 5,
            test: 1,
        };
        assert!(split_dataset(vec![0; 10], 1, sizes).is_err());
    }

    #[test]
    fn fraction_sizes() {
        let s = SplitSizes::from_fraction(100, 0.05);
        assert_eq!((s.train, s.valid, s.test), (90, 5, 5));
        let s = SplitSizes::from_fraction(10, 0.05);
        assert_eq!((s.train, s.valid, s.test), (8, 1, 1));
    }
}
