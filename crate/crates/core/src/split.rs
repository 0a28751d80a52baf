//! Row-level index bookkeeping: train/calibration splits, test blocks,
//! per-hypothesis calibration subsets and fully observed row sets.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ClpError, Result};
use crate::network::{MissingMask, Topology};

/// Partition of row `row` into training, calibration and test columns.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowSplit {
    pub row: usize,
    pub train: Vec<usize>,
    pub calib: Vec<usize>,
    pub test: Vec<usize>,
}

impl RowSplit {
    /// Replaces the test set (undirected rows only test `j > row`).
    pub fn with_test(mut self, test: Vec<usize>) -> Self {
        self.test = test;
        self
    }
}

/// Observed columns of row `i0`.
pub fn observed_columns(mask: &MissingMask, i0: usize) -> Vec<usize> {
    (0..mask.n_cols()).filter(|&j| mask.is_observed(i0, j)).collect()
}

/// Columns tested in row `i0`: every missing cell, or only `j > i0` when undirected.
pub fn row_test_set(mask: &MissingMask, i0: usize, topology: Topology) -> Vec<usize> {
    (0..mask.n_cols())
        .filter(|&j| mask.is_missing(i0, j) && (topology != Topology::Undirected || j > i0))
        .collect()
}

/// Randomly splits the observed columns of row `i0`; `ratio_train` of them
/// (rounded, at least one on each side) go to training.
pub fn split_row(i0: usize, mask: &MissingMask, ratio_train: f64, rng: &mut impl Rng) -> Result<RowSplit> {
    if !(ratio_train > 0.0 && ratio_train < 1.0) {
        return Err(ClpError::config("ratio_train", format!("{ratio_train} is not in (0, 1)")));
    }
    let mut observed = observed_columns(mask, i0);
    if observed.len() < 2 {
        return Err(ClpError::RowDegenerate {
            row: i0,
            observed: observed.len(),
        });
    }
    observed.shuffle(rng);
    let n_train = ((ratio_train * observed.len() as f64).round() as usize).clamp(1, observed.len() - 1);
    let calib = observed.split_off(n_train);
    Ok(RowSplit {
        row: i0,
        train: observed,
        calib,
        test: (0..mask.n_cols()).filter(|&j| mask.is_missing(i0, j)).collect(),
    })
}

/// Disjoint test blocks of one row, each small enough to be calibrated with
/// at least `r0` columns per hypothesis.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestBlockPlan {
    pub row: usize,
    pub r1: usize,
    pub blocks: Vec<Vec<usize>>,
}

pub fn plan_test_blocks(split: &RowSplit, r0: usize, rng: &mut impl Rng) -> Result<TestBlockPlan> {
    if r0 == 0 {
        return Err(ClpError::config("r0", "minimum calibration size must be positive"));
    }
    if split.calib.len() < r0 {
        return Err(ClpError::InsufficientCalibration {
            available: split.calib.len(),
            requested: 1,
            minimum: r0,
        });
    }
    let r1 = split.calib.len() / r0;
    let mut test = split.test.clone();
    test.shuffle(rng);
    let k = test.len().div_ceil(r1);
    Ok(TestBlockPlan {
        row: split.row,
        r1,
        blocks: deal_balanced(test, k),
    })
}

/// Deals `items` into `k` consecutive chunks whose sizes differ by at most one.
fn deal_balanced(items: Vec<usize>, k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return Vec::new();
    }
    let base = items.len() / k;
    let extra = items.len() % k;
    let mut it = items.into_iter();
    (0..k)
        .map(|b| it.by_ref().take(base + usize::from(b < extra)).collect())
        .collect()
}

/// Calibration subsets assigned to the hypotheses of one block.
/// `subsets[t]` belongs to `block[t]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CalibAllocation {
    pub block: Vec<usize>,
    pub subsets: Vec<Vec<usize>>,
}

impl CalibAllocation {
    pub fn subset_size(&self) -> usize {
        self.subsets.first().map_or(0, Vec::len)
    }
}

/// Shuffles the calibration columns and hands each block member a disjoint
/// subset of `floor(|calib| / |block|)` columns; leftovers are dropped.
pub fn allocate_calibration(
    split: &RowSplit,
    block: &[usize],
    r0: usize,
    rng: &mut impl Rng,
) -> Result<CalibAllocation> {
    if block.is_empty() {
        return Ok(CalibAllocation {
            block: Vec::new(),
            subsets: Vec::new(),
        });
    }
    let size = split.calib.len() / block.len();
    if size < r0.max(1) {
        return Err(ClpError::InsufficientCalibration {
            available: split.calib.len(),
            requested: block.len(),
            minimum: r0,
        });
    }
    let mut calib = split.calib.clone();
    calib.shuffle(rng);
    let subsets = calib.chunks_exact(size).take(block.len()).map(<[usize]>::to_vec).collect();
    Ok(CalibAllocation {
        block: block.to_vec(),
        subsets,
    })
}

/// Rows of `candidates` observed on every column of `columns`.
pub fn fully_observed_rows(mask: &MissingMask, candidates: &[usize], columns: &[usize]) -> Vec<usize> {
    candidates
        .iter()
        .copied()
        .filter(|&i| columns.iter().all(|&j| mask.is_observed(i, j)))
        .collect()
}

/// Rows of `omega_j0` observed at both `j2` and `j`. Shared by every `j1`
/// of the calibration group, which is why `j1` is not a parameter.
pub fn omega_triplet(mask: &MissingMask, omega_j0: &[usize], j2: usize, j: usize) -> Vec<usize> {
    omega_j0
        .iter()
        .copied()
        .filter(|&i| mask.is_observed(i, j2) && mask.is_observed(i, j))
        .collect()
}

/// Candidate rows for the fully observed set: training columns reused as
/// row indices for square networks, every other row for bipartite ones.
pub fn omega_candidates(topology: Topology, split: &RowSplit, n_rows: usize) -> Vec<usize> {
    match topology {
        Topology::Bipartite => (0..n_rows).filter(|&i| i != split.row).collect(),
        _ => split.train.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeSet;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(42)
    }

    #[test]
    fn split_sizes_follow_ratio() {
        // row 0 observes columns 2..=101
        let mask = MissingMask::from_fn(102, 102, false, |i, j| i == 0 && j == 1);
        let s = split_row(0, &mask, 0.4, &mut rng()).unwrap();
        assert_eq!(s.train.len(), 40);
        assert_eq!(s.calib.len(), 60);
        assert_eq!(s.test, vec![1]);
        let all: BTreeSet<_> = s.train.iter().chain(&s.calib).copied().collect();
        assert_eq!(all, (2..102).collect());
    }

    #[test]
    fn tiny_row_split_evenly() {
        let mask = MissingMask::from_fn(4, 4, false, |i, j| i == 0 && j == 3);
        let s = split_row(0, &mask, 0.5, &mut rng()).unwrap();
        assert_eq!((s.train.len(), s.calib.len()), (1, 1));
    }

    #[test]
    fn fully_missing_row_is_degenerate() {
        let mask = MissingMask::from_fn(5, 5, false, |i, _| i == 2);
        assert!(matches!(
            split_row(2, &mask, 0.5, &mut rng()),
            Err(ClpError::RowDegenerate { row: 2, observed: 0 })
        ));
    }

    fn split_with(calib: usize, test: usize) -> RowSplit {
        RowSplit {
            row: 0,
            train: vec![],
            calib: (100..100 + calib).collect(),
            test: (1..=test).collect(),
        }
    }

    #[test]
    fn block_plan_example() {
        let plan = plan_test_blocks(&split_with(60, 5), 25, &mut rng()).unwrap();
        assert_eq!(plan.r1, 2);
        let mut sizes: Vec<_> = plan.blocks.iter().map(Vec::len).collect();
        sizes.sort_unstable();
        assert_eq!(sizes, vec![1, 2, 2]);

        let single = plan_test_blocks(&split_with(60, 1), 25, &mut rng()).unwrap();
        assert_eq!(single.blocks, vec![vec![1]]);

        assert!(plan_test_blocks(&split_with(24, 3), 25, &mut rng()).is_err());
    }

    #[test]
    fn block_plan_exhaustive_small_cases() {
        for calib in 1..40 {
            for r0 in 1..=calib {
                for test in 0..30 {
                    let plan = plan_test_blocks(&split_with(calib, test), r0, &mut rng()).unwrap();
                    let r1 = calib / r0;
                    assert_eq!(plan.r1, r1);
                    assert_eq!(plan.blocks.len(), test.div_ceil(r1));
                    let sizes: Vec<_> = plan.blocks.iter().map(Vec::len).collect();
                    assert!(sizes.iter().all(|&s| s <= r1 && s >= 1));
                    let (mn, mx) = (sizes.iter().min(), sizes.iter().max());
                    if let (Some(mn), Some(mx)) = (mn, mx) {
                        assert!(mx - mn <= 1);
                    }
                    let union: BTreeSet<_> = plan.blocks.iter().flatten().copied().collect();
                    assert_eq!(union.len(), test);
                    assert_eq!(union, (1..=test).collect());
                }
            }
        }
    }

    #[test]
    fn allocation_examples() {
        let s = split_with(60, 2);
        let a = allocate_calibration(&s, &[1, 2], 25, &mut rng()).unwrap();
        assert_eq!(a.subsets.len(), 2);
        assert!(a.subsets.iter().all(|x| x.len() == 30));
        let left: BTreeSet<_> = a.subsets[0].iter().collect();
        assert!(a.subsets[1].iter().all(|x| !left.contains(x)));

        let one = allocate_calibration(&s, &[1], 25, &mut rng()).unwrap();
        assert_eq!(one.subsets[0].len(), 60);

        let short = split_with(50, 3);
        assert!(allocate_calibration(&short, &[1, 2, 3], 25, &mut rng()).is_err());
    }

    #[test]
    fn fully_observed_rows_examples() {
        let clean = MissingMask::new(6, 6, false);
        assert_eq!(fully_observed_rows(&clean, &[1, 2, 5], &[0, 3]), vec![1, 2, 5]);

        let mut m = MissingMask::new(6, 6, false);
        m.set_missing(5, 3, true);
        assert_eq!(fully_observed_rows(&m, &[1, 2, 5], &[0, 3]), vec![1, 2]);
        // the diagonal is never observed
        assert_eq!(fully_observed_rows(&clean, &[0, 3], &[0, 3]), Vec::<usize>::new());
    }

    #[test]
    fn omega_triplet_examples() {
        let clean = MissingMask::new(8, 8, false);
        assert_eq!(omega_triplet(&clean, &[4, 5, 6], 1, 2), vec![4, 5, 6]);
        let m = MissingMask::from_fn(8, 8, false, |_, j| j == 1);
        assert!(omega_triplet(&m, &[4, 5, 6], 1, 2).is_empty());
    }
}
