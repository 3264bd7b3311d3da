use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{DataError, Result};
use crate::slice::Split;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitSizes {
    pub labeled: usize,
    pub unlabeled: usize,
    pub val: usize,
    pub test: usize,
}

impl SplitSizes {
    pub fn total(&self) -> usize {
        self.labeled + self.unlabeled + self.val + self.test
    }

    fn get(&self, s: Split) -> usize {
        match s {
            Split::Labeled => self.labeled,
            Split::Unlabeled => self.unlabeled,
            Split::Val => self.val,
            Split::Test => self.test,
        }
    }
}

/// Volume-level split: entry `v` is the split of volume `v`, `None` if unused.
pub fn split_dataset(volumes: usize, sizes: SplitSizes, seed: u64) -> Result<Vec<Option<Split>>> {
    if sizes.labeled == 0 {
        return Err(DataError::InvalidSplit("at least one labeled volume required".into()));
    }
    if sizes.total() > volumes {
        return Err(DataError::InvalidSplit(format!(
            "{} volumes requested but only {volumes} available",
            sizes.total()
        )));
    }
    let mut order: Vec<usize> = (0..volumes).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut assignment = vec![None; volumes];
    let mut cursor = order.into_iter();
    for split in Split::ALL {
        for v in cursor.by_ref().take(sizes.get(split)) {
            assignment[v] = Some(split);
        }
    }
    Ok(assignment)
}

#[cfg(test)]
mod tests {
    use super::*;

    const SIZES: SplitSizes = SplitSizes {
        labeled: 4,
        unlabeled: 28,
        val: 2,
        test: 6,
    };

    #[test]
    fn counts_and_disjointness() {
        let a = split_dataset(40, SIZES, 3).unwrap();
        for s in Split::ALL {
            assert_eq!(a.iter().filter(|x| **x == Some(s)).count(), SIZES.get(s));
        }
        assert!(a.iter().all(Option::is_some));
    }

    #[test]
    fn rejects_bad_requests() {
        let none = SplitSizes { labeled: 0, ..SIZES };
        assert!(split_dataset(40, none, 0).is_err());
        assert!(split_dataset(39, SIZES, 0).is_err());
    }

    #[test]
    fn seeds_change_assignment_not_cardinality() {
        let a = split_dataset(40, SIZES, 1).unwrap();
        let b = split_dataset(40, SIZES, 2).unwrap();
        assert_ne!(a, b);
        assert_eq!(a, split_dataset(40, SIZES, 1).unwrap());
    }
}
