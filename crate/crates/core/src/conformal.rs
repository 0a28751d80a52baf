//! Conformal p-values, the Benjamini–Hochberg step-up rule and the
//! per-block local test.

use std::cmp::Ordering;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ClpError, Result};
use crate::estimator::{predict_group, KernelSpec, PredictionMode};
use crate::network::{MissingMask, Topology, WeightedNetwork};
use crate::split::{omega_candidates, CalibAllocation, RowSplit};
use crate::thresholds::HypothesisThresholds;

/// `S(a_hat; z) = z - a_hat`.
#[inline]
pub fn nonconformity(a_hat: f64, z: f64) -> f64 {
    z - a_hat
}

/// A conformal p-value `num / den`, kept as an exact rational.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PValue {
    pub num: u32,
    pub den: u32,
}

impl PValue {
    #[inline]
    pub fn value(self) -> f64 {
        f64::from(self.num) / f64::from(self.den)
    }
}

impl PartialEq for PValue {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for PValue {}

impl PartialOrd for PValue {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for PValue {
    fn cmp(&self, other: &Self) -> Ordering {
        (u64::from(self.num) * u64::from(other.den)).cmp(&(u64::from(other.num) * u64::from(self.den)))
    }
}

/// Result of ranking one test score against its calibration scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RankOutcome {
    pub pvalue: PValue,
    pub ties: usize,
}

/// `(1 + #{calib < test}) / (1 + |calib|)`, each exact tie counted with
/// probability 1/2.
pub fn conformal_pvalue(calib_scores: &[f64], test_score: f64, tie_rng: &mut impl Rng) -> PValue {
    conformal_rank(calib_scores, test_score, tie_rng).pvalue
}

pub fn conformal_rank(calib_scores: &[f64], test_score: f64, tie_rng: &mut impl Rng) -> RankOutcome {
    assert!(!calib_scores.is_empty(), "conformal p-value needs calibration scores");
    let mut below = 0u32;
    let mut ties = 0usize;
    for &s in calib_scores {
        if s < test_score {
            below += 1;
        } else if s == test_score {
            ties += 1;
            if tie_rng.gen_bool(0.5) {
                below += 1;
            }
        }
    }
    RankOutcome {
        pvalue: PValue {
            num: 1 + below,
            den: 1 + calib_scores.len() as u32,
        },
        ties,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BhOutcome {
    pub l_hat: usize,
    /// Indices into the input, ascending.
    pub rejected: Vec<usize>,
}

/// BH step-up threshold for rank `ell` out of `m`.
#[inline]
pub fn bh_threshold(alpha: f64, ell: usize, m: usize) -> f64 {
    alpha * ell as f64 / m as f64
}

/// Standard (inclusive) Benjamini–Hochberg: rejects the `l_hat` smallest
/// p-values where `l_hat = max{l : p_(l) <= alpha l / m}`.
pub fn bh_procedure(pvalues: &[f64], alpha: f64) -> BhOutcome {
    let m = pvalues.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&x, &y| pvalues[x].total_cmp(&pvalues[y]).then(x.cmp(&y)));
    let l_hat = (1..=m)
        .rev()
        .find(|&ell| pvalues[order[ell - 1]] <= bh_threshold(alpha, ell, m))
        .unwrap_or(0);
    let mut rejected = order[..l_hat].to_vec();
    rejected.sort_unstable();
    BhOutcome { l_hat, rejected }
}

/// Conformal p-value of one test coordinate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PValueRecord {
    pub row: usize,
    pub col: usize,
    pub block: usize,
    pub p: PValue,
    pub calib_size: usize,
    pub threshold: f64,
}

/// BH decision for one test block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalRejection {
    pub row: usize,
    pub block: usize,
    pub alpha_bh: f64,
    /// Test columns of the block, in allocation order.
    pub members: Vec<usize>,
    /// Rejected test columns.
    pub rejected: Vec<usize>,
    pub l_hat: usize,
}

/// Bookkeeping from one local test.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct LocalDiagnostics {
    pub ties: usize,
    pub comparisons: usize,
    pub omega_sizes: Vec<usize>,
    pub empty_omega: usize,
    pub all_excluded: usize,
    pub underflow: usize,
}

#[derive(Debug, Clone)]
pub struct LocalOutcome {
    pub rejection: LocalRejection,
    pub records: Vec<PValueRecord>,
    pub diagnostics: LocalDiagnostics,
}

/// Observed data and hypotheses shared by every local test of a run.
#[derive(Debug, Clone, Copy)]
pub struct LocalContext<'a> {
    pub network: &'a WeightedNetwork,
    pub mask: &'a MissingMask,
    pub thresholds: &'a HypothesisThresholds,
    pub topology: Topology,
}

/// Local test of one block: predict each calibration group, rank the test
/// score `c - a_hat` against the calibration scores `A - a_hat`, then run BH
/// over the block.
pub fn local_test(
    ctx: &LocalContext<'_>,
    split: &RowSplit,
    allocation: &CalibAllocation,
    block_id: usize,
    kernel: &KernelSpec,
    alpha_bh: f64,
    rng: &mut impl Rng,
) -> Result<LocalOutcome> {
    let i0 = split.row;
    if allocation.block.len() != allocation.subsets.len() {
        return Err(ClpError::Internal("allocation does not cover its block".into()));
    }
    let candidates = omega_candidates(ctx.topology, split, ctx.network.n_rows());
    let mut diagnostics = LocalDiagnostics::default();
    let mut records = Vec::with_capacity(allocation.block.len());
    let mut group = Vec::new();

    for (&j0, subset) in allocation.block.iter().zip(&allocation.subsets) {
        let threshold = ctx.thresholds.get(i0, j0).ok_or_else(|| {
            ClpError::Internal(format!("no threshold for test coordinate ({i0}, {j0})"))
        })?;
        group.clear();
        group.extend_from_slice(subset);
        group.push(j0);
        let preds = predict_group(ctx.network, ctx.mask, i0, &split.train, &candidates, &group, kernel);
        diagnostics.omega_sizes.push(preds.omega_size);
        match preds.mode {
            PredictionMode::EmptyOmega => diagnostics.empty_omega += 1,
            PredictionMode::AllExcluded => diagnostics.all_excluded += 1,
            PredictionMode::Kernel => {}
        }
        diagnostics.underflow += preds.underflow;

        let calib_scores: Vec<f64> = subset
            .iter()
            .zip(&preds.predictions)
            .map(|(&j, &a_hat)| nonconformity(a_hat, ctx.network.get(i0, j)))
            .collect();
        let test_score = nonconformity(preds.predictions[subset.len()], threshold);
        let outcome = conformal_rank(&calib_scores, test_score, rng);
        diagnostics.ties += outcome.ties;
        diagnostics.comparisons += calib_scores.len();
        records.push(PValueRecord {
            row: i0,
            col: j0,
            block: block_id,
            p: outcome.pvalue,
            calib_size: subset.len(),
            threshold,
        });
    }

    if records.is_empty() {
        log::warn!("row {i0} block {block_id}: no computable p-values");
    }
    let pvalues: Vec<f64> = records.iter().map(|r| r.p.value()).collect();
    let bh = bh_procedure(&pvalues, alpha_bh);
    let rejected = bh.rejected.iter().map(|&k| allocation.block[k]).collect();
    Ok(LocalOutcome {
        rejection: LocalRejection {
            row: i0,
            block: block_id,
            alpha_bh,
            members: allocation.block.clone(),
            rejected,
            l_hat: bh.l_hat,
        },
        records,
        diagnostics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(1)
    }

    #[test]
    fn nonconformity_examples() {
        assert_eq!(nonconformity(0.0, 0.0), 0.0);
        assert_eq!(nonconformity(1.5, 2.0), 0.5);
        assert_eq!(nonconformity(2.0, 1.5), -0.5);
    }

    #[test]
    fn pvalue_extremes() {
        let calib: Vec<f64> = (0..30).map(f64::from).collect();
        let hi = conformal_pvalue(&calib, 100.0, &mut rng());
        assert_eq!((hi.num, hi.den), (31, 31));
        assert_eq!(hi.value(), 1.0);
        let lo = conformal_pvalue(&calib, -1.0, &mut rng());
        assert_eq!((lo.num, lo.den), (1, 31));
    }

    #[test]
    fn pvalue_hand_count() {
        let p = conformal_pvalue(&[-1.0, 0.0, 2.0], 1.0, &mut rng());
        assert_eq!(p, PValue { num: 3, den: 4 });
        assert_eq!(p.value(), 0.75);
    }

    #[test]
    fn ties_are_half_counted_on_average() {
        let mut r = rng();
        let calib = [0.0; 10];
        let total: u32 = (0..4000).map(|_| conformal_pvalue(&calib, 0.0, &mut r).num - 1).sum();
        let mean = f64::from(total) / 4000.0;
        assert!((mean - 5.0).abs() < 0.15, "mean tied count {mean}");
    }

    #[test]
    fn rational_ordering() {
        let a = PValue { num: 1, den: 2 };
        let b = PValue { num: 2, den: 4 };
        let c = PValue { num: 2, den: 3 };
        assert_eq!(a, b);
        assert!(a < c);
    }

    #[test]
    fn bh_examples() {
        let out = bh_procedure(&[0.01, 0.02, 0.9], 0.1);
        assert_eq!(out.l_hat, 2);
        assert_eq!(out.rejected, vec![0, 1]);
        assert_eq!(bh_procedure(&[1.0, 1.0, 1.0], 0.1).l_hat, 0);
        let edge = bh_procedure(&[0.05], 0.05);
        assert_eq!(edge.rejected, vec![0]);
    }

    #[test]
    fn bh_step_up_rejects_beyond_first_failure() {
        // p_(1) fails its own threshold but p_(2) passes, so both go
        let out = bh_procedure(&[0.04, 0.045], 0.05);
        assert_eq!(out.l_hat, 2);
    }
}
