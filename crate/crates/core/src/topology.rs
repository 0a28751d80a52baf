//! Undirected and bipartite variants of the pipeline.

use rand::Rng;

use crate::conformal::{local_test, LocalContext, LocalOutcome};
use crate::error::{ClpError, Result};
use crate::estimator::KernelSpec;
use crate::evalue::{clp_global_with, ClpOutput, ClpParams, RunOptions};
use crate::network::{MissingMask, Topology, WeightedNetwork};
use crate::split::{CalibAllocation, RowSplit};
use crate::thresholds::HypothesisThresholds;

/// Mirrors the strict upper triangle of a square network and its mask onto
/// the lower triangle. Whatever the lower triangle held is discarded.
pub fn extend_symmetric(upper: &WeightedNetwork, mask: &MissingMask) -> Result<(WeightedNetwork, MissingMask)> {
    let n = upper.n_rows();
    if upper.n_cols() != n || upper.diagonal_defined() {
        return Err(ClpError::Validation("undirected networks must be square without self-loops".into()));
    }
    mask.check_shape(upper)?;
    let mut weights = vec![0.0; n * n];
    let mut full_mask = MissingMask::new(n, n, false);
    for i in 0..n {
        for j in i + 1..n {
            let w = upper.get(i, j);
            weights[i * n + j] = w;
            weights[j * n + i] = w;
            let m = mask.is_missing(i, j);
            full_mask.set_missing(i, j, m);
            full_mask.set_missing(j, i, m);
        }
    }
    Ok((WeightedNetwork::from_vec(n, n, weights, false)?, full_mask))
}

/// Accepts undirected input given either as a full symmetric matrix or as an
/// upper triangle with every lower cell missing, and returns the symmetric
/// pair.
pub fn symmetrize_input(network: &WeightedNetwork, mask: &MissingMask) -> Result<(WeightedNetwork, MissingMask)> {
    let n = network.n_rows();
    if network.n_cols() != n || network.diagonal_defined() {
        return Err(ClpError::Validation("undirected networks must be square without self-loops".into()));
    }
    mask.check_shape(network)?;
    let lower_blank = n > 1 && (1..n).all(|i| (0..i).all(|j| mask.is_missing(i, j)));
    if lower_blank {
        return extend_symmetric(network, mask);
    }
    for i in 0..n {
        for j in i + 1..n {
            if mask.is_missing(i, j) != mask.is_missing(j, i) {
                return Err(ClpError::Validation(format!(
                    "undirected mask is asymmetric at ({i}, {j})"
                )));
            }
            if mask.is_observed(i, j) && network.get(i, j) != network.get(j, i) {
                return Err(ClpError::Validation(format!(
                    "undirected network is asymmetric at ({i}, {j}): {} vs {}",
                    network.get(i, j),
                    network.get(j, i)
                )));
            }
        }
    }
    extend_symmetric(network, mask)
}

/// Runs the pipeline on the symmetric extension of `(upper, mask)`, testing
/// each missing dyad once through its upper-triangle coordinate.
pub fn undirected_clp(
    upper: &WeightedNetwork,
    mask: &MissingMask,
    thresholds: &HypothesisThresholds,
    params: &ClpParams,
    seed: u64,
) -> Result<ClpOutput> {
    undirected_clp_with(upper, mask, thresholds, params, seed, RunOptions::default())
}

pub fn undirected_clp_with(
    upper: &WeightedNetwork,
    mask: &MissingMask,
    thresholds: &HypothesisThresholds,
    params: &ClpParams,
    seed: u64,
    options: RunOptions,
) -> Result<ClpOutput> {
    let (network, full_mask) = extend_symmetric(upper, mask)?;
    let params = ClpParams {
        topology: Topology::Undirected,
        ..params.clone()
    };
    clp_global_with(&network, &full_mask, thresholds, &params, seed, options)
}

/// Local test of a bipartite row: the fully observed row set is searched
/// over every other row rather than the training columns.
#[allow(clippy::too_many_arguments)]
pub fn bipartite_local_test(
    network: &WeightedNetwork,
    mask: &MissingMask,
    thresholds: &HypothesisThresholds,
    split: &RowSplit,
    allocation: &CalibAllocation,
    block_id: usize,
    kernel: &KernelSpec,
    alpha_bh: f64,
    rng: &mut impl Rng,
) -> Result<LocalOutcome> {
    let ctx = LocalContext {
        network,
        mask,
        thresholds,
        topology: Topology::Bipartite,
    };
    local_test(&ctx, split, allocation, block_id, kernel, alpha_bh, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::split::{fully_observed_rows, omega_candidates};

    fn upper_only(n: usize) -> (WeightedNetwork, MissingMask) {
        let net = WeightedNetwork::from_vec(n, n, (0..n * n).map(|k| k as f64).collect(), false).unwrap();
        let mask = MissingMask::from_fn(n, n, false, |i, j| i > j);
        (net, mask)
    }

    #[test]
    fn extension_mirrors_upper_entries() {
        let mut w = vec![0.0; 16];
        w[4 + 3] = 2.5;
        let net = WeightedNetwork::from_vec(4, 4, w, false).unwrap();
        let (full, m) = extend_symmetric(&net, &MissingMask::new(4, 4, false)).unwrap();
        assert_eq!(full.get(3, 1), 2.5);
        assert!(full.is_symmetric() && m.is_symmetric());
        assert_eq!(m.count_missing(), 0);
    }

    #[test]
    fn round_trip_on_upper_triangle() {
        let (net, mask) = upper_only(5);
        let (full, _) = extend_symmetric(&net, &mask).unwrap();
        for i in 0..5 {
            for j in i + 1..5 {
                assert_eq!(full.get(i, j), net.get(i, j));
            }
        }
    }

    #[test]
    fn upper_triangle_input_is_accepted() {
        let (net, mask) = upper_only(4);
        let (full, m) = symmetrize_input(&net, &mask).unwrap();
        assert!(full.is_symmetric());
        assert_eq!(m.count_missing(), 0);
    }

    #[test]
    fn asymmetric_full_input_is_rejected() {
        let net = WeightedNetwork::from_rows(vec![vec![0.0, 1.0], vec![2.0, 0.0]], false).unwrap();
        let err = symmetrize_input(&net, &MissingMask::new(2, 2, false)).unwrap_err();
        assert!(matches!(err, ClpError::Validation(_)));
    }

    #[test]
    fn bipartite_candidates_cover_other_rows() {
        let split = RowSplit {
            row: 0,
            train: vec![1],
            calib: vec![2],
            test: vec![],
        };
        assert_eq!(omega_candidates(Topology::Bipartite, &split, 2), vec![1]);
        let full = MissingMask::new(5, 3, true);
        let cand = omega_candidates(Topology::Bipartite, &split, 5);
        assert_eq!(fully_observed_rows(&full, &cand, &[0, 1, 2]), vec![1, 2, 3, 4]);
    }
}
