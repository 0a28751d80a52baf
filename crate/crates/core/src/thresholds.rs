//! Per-hypothesis thresholds `c_ij` for `H_ij: A_ij <= c_ij`.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{check_probability, ClpError, Result};
use crate::network::{MissingMask, WeightedNetwork};
use crate::rng::{stream_rng, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "kebab-case")]
pub enum ThresholdRule {
    Constant { value: f64 },
    /// `c = truth - delta` on a random `fraction` of the test set, `c = truth` elsewhere.
    Signal { fraction: f64, delta: f64 },
    /// `c` = the `kappa`-quantile of the observed weights.
    Quantile { kappa: f64 },
}

impl ThresholdRule {
    pub fn validate(&self) -> Result<()> {
        match self {
            ThresholdRule::Constant { value } if value.is_nan() => {
                Err(ClpError::config("thresholds.value", "threshold is NaN"))
            }
            ThresholdRule::Signal { fraction, delta } => {
                check_probability("thresholds.fraction", *fraction)?;
                if !delta.is_finite() {
                    return Err(ClpError::config("thresholds.delta", "delta must be finite"));
                }
                Ok(())
            }
            ThresholdRule::Quantile { kappa } => check_probability("thresholds.kappa", *kappa),
            _ => Ok(()),
        }
    }
}

/// One test hypothesis with its threshold and, when known, its ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    pub row: usize,
    pub col: usize,
    pub threshold: f64,
    /// `Some(true)` when the alternative `A_ij > c_ij` holds.
    pub alternative: Option<bool>,
}

/// Thresholds indexed by test coordinate.
#[derive(Debug, Clone, Default)]
pub struct HypothesisThresholds {
    entries: Vec<Hypothesis>,
    index: HashMap<(usize, usize), usize>,
}

impl HypothesisThresholds {
    pub fn from_hypotheses(entries: Vec<Hypothesis>) -> Result<Self> {
        let mut index = HashMap::with_capacity(entries.len());
        for (k, h) in entries.iter().enumerate() {
            if h.threshold.is_nan() {
                return Err(ClpError::Validation(format!(
                    "threshold at ({}, {}) is NaN",
                    h.row, h.col
                )));
            }
            if index.insert((h.row, h.col), k).is_some() {
                return Err(ClpError::Validation(format!(
                    "duplicate hypothesis at ({}, {})",
                    h.row, h.col
                )));
            }
        }
        Ok(Self { entries, index })
    }

    /// Thresholds without ground truth, e.g. for real inference runs.
    pub fn constant(coords: &[(usize, usize)], value: f64) -> Result<Self> {
        Self::from_hypotheses(
            coords
                .iter()
                .map(|&(row, col)| Hypothesis {
                    row,
                    col,
                    threshold: value,
                    alternative: None,
                })
                .collect(),
        )
    }

    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        self.index.get(&(i, j)).map(|&k| self.entries[k].threshold)
    }

    pub fn hypothesis(&self, i: usize, j: usize) -> Option<&Hypothesis> {
        self.index.get(&(i, j)).map(|&k| &self.entries[k])
    }

    pub fn entries(&self) -> &[Hypothesis] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.index.contains_key(&(i, j))
    }

    pub fn n_alternatives(&self) -> usize {
        self.entries.iter().filter(|h| h.alternative == Some(true)).count()
    }
}

/// Builds thresholds on `coords` from a rule.
///
/// `truth` holds the value each hypothesis is about (the complete network,
/// or edge probabilities for Bernoulli simulations); the alternative label
/// `truth > c` is recorded for scoring. `observed` and `mask` feed the
/// quantile rule.
pub fn build_thresholds(
    truth: &WeightedNetwork,
    observed: &WeightedNetwork,
    mask: &MissingMask,
    coords: &[(usize, usize)],
    rule: &ThresholdRule,
    seed: u64,
) -> Result<HypothesisThresholds> {
    rule.validate()?;
    mask.check_shape(observed)?;
    let mut thresholds: Vec<f64> = match rule {
        ThresholdRule::Constant { value } => vec![*value; coords.len()],
        ThresholdRule::Quantile { kappa } => {
            let mut w: Vec<f64> = observed
                .cells()
                .filter(|&(i, j, _)| mask.is_observed(i, j))
                .map(|c| c.2)
                .collect();
            if w.is_empty() {
                return Err(ClpError::config(
                    "thresholds.kappa",
                    "quantile rule needs at least one observed weight",
                ));
            }
            w.sort_by(f64::total_cmp);
            vec![quantile_sorted(&w, *kappa); coords.len()]
        }
        ThresholdRule::Signal { .. } => coords.iter().map(|&(i, j)| truth.get(i, j)).collect(),
    };
    if let ThresholdRule::Signal { fraction, delta } = rule {
        let k = (fraction * coords.len() as f64).round() as usize;
        let mut order: Vec<usize> = (0..coords.len()).collect();
        order.shuffle(&mut stream_rng(seed, Stream::Thresholds, &[]));
        for &idx in &order[..k] {
            thresholds[idx] -= delta;
        }
    }
    let entries = coords
        .iter()
        .zip(thresholds)
        .map(|(&(row, col), threshold)| Hypothesis {
            row,
            col,
            threshold,
            alternative: Some(truth.get(row, col) > threshold),
        })
        .collect();
    HypothesisThresholds::from_hypotheses(entries)
}

/// Linear-interpolation quantile of an ascending slice.
pub fn quantile_sorted(sorted: &[f64], kappa: f64) -> f64 {
    let pos = kappa * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::test_coordinates;
    use crate::network::Topology;

    fn toy() -> (WeightedNetwork, MissingMask) {
        let net = WeightedNetwork::from_vec(4, 4, (0..16).map(f64::from).collect(), false).unwrap();
        let mask = MissingMask::from_fn(4, 4, false, |i, j| (i + j) % 3 == 0);
        (net, mask)
    }

    #[test]
    fn constant_rule() {
        let (net, mask) = toy();
        let coords = test_coordinates(&mask, Topology::Directed);
        let th = build_thresholds(&net, &net, &mask, &coords, &ThresholdRule::Constant { value: 0.5 }, 0)
            .unwrap();
        assert!(th.entries().iter().all(|h| h.threshold == 0.5));
        assert_eq!(th.len(), coords.len());
    }

    #[test]
    fn signal_rule_shifts_the_requested_fraction() {
        let n = 20;
        let net = WeightedNetwork::from_vec(n, n, (0..n * n).map(|v| v as f64 * 0.1).collect(), false)
            .unwrap();
        let mask = MissingMask::from_fn(n, n, false, |_, _| true);
        let coords = test_coordinates(&mask, Topology::Directed);
        let rule = ThresholdRule::Signal {
            fraction: 0.3,
            delta: 1.5,
        };
        let th = build_thresholds(&net, &net, &mask, &coords, &rule, 3).unwrap();
        let shifted = th
            .entries()
            .iter()
            .filter(|h| (net.get(h.row, h.col) - h.threshold - 1.5).abs() < 1e-9)
            .count();
        assert_eq!(shifted, (0.3 * coords.len() as f64).round() as usize);
        assert_eq!(th.n_alternatives(), shifted);
        assert!(th
            .entries()
            .iter()
            .all(|h| h.threshold == net.get(h.row, h.col) || h.alternative == Some(true)));
    }

    #[test]
    fn quantile_zero_is_min_observed() {
        let (net, mask) = toy();
        let coords = test_coordinates(&mask, Topology::Directed);
        let th = build_thresholds(&net, &net, &mask, &coords, &ThresholdRule::Quantile { kappa: 0.0 }, 0)
            .unwrap();
        let min_obs = net
            .cells()
            .filter(|&(i, j, _)| mask.is_observed(i, j))
            .map(|c| c.2)
            .fold(f64::INFINITY, f64::min);
        assert!(th.entries().iter().all(|h| h.threshold == min_obs));
    }

    #[test]
    fn out_of_range_fraction_rejected() {
        let (net, mask) = toy();
        let rule = ThresholdRule::Signal {
            fraction: 1.2,
            delta: 1.0,
        };
        assert!(build_thresholds(&net, &net, &mask, &[], &rule, 0).is_err());
        assert!(ThresholdRule::Quantile { kappa: -0.1 }.validate().is_err());
    }
}
