//! Kernel-weighted link prediction from column dissimilarities.
//!
//! For a calibration group `G = calib(j0) ∪ {j0}` of row `i0`, the rows
//! `Ω` observed on all of `G` are found first. Every pair `(j2, j)` of
//! training columns then restricts `Ω` to the rows also observed at `j2`
//! and `j`; that restriction does not depend on the group member `j1`, so
//! it is computed once per group. The triplet dissimilarity is
//!
//! ```text
//! d(j1, j2, j) = |<A[Ω, j1] - A[Ω, j2], A[Ω, j]>| / |Ω|
//! ```
//!
//! averaged over `j` into `d(j1, j2)`, and the prediction for `(i0, j1)` is
//! the Gaussian-kernel weighted mean of `A[i0, j2]` over training `j2`.

use serde::{Deserialize, Serialize};

use crate::error::{ClpError, Result};
use crate::graphon::GraphonSpec;
use crate::network::{LatentPositions, MissingMask, WeightedNetwork};
use crate::split::{fully_observed_rows, omega_triplet};

/// Kernel weights below this are treated as zero.
pub const WEIGHT_FLOOR: f64 = 1e-300;

/// Default quadrature resolution of the oracle dissimilarity, per axis.
pub const ORACLE_RESOLUTION: usize = 400;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Bandwidth {
    Fixed(f64),
    /// Median of the finite dissimilarities of the calibration group.
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum KernelFamily {
    #[default]
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    #[serde(default)]
    pub family: KernelFamily,
    pub bandwidth: Bandwidth,
}

impl Default for KernelSpec {
    fn default() -> Self {
        Self {
            family: KernelFamily::Gaussian,
            bandwidth: Bandwidth::Fixed(1.0),
        }
    }
}

impl KernelSpec {
    pub fn gaussian(bandwidth: f64) -> Self {
        Self {
            family: KernelFamily::Gaussian,
            bandwidth: Bandwidth::Fixed(bandwidth),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Bandwidth::Fixed(h) = self.bandwidth {
            if !(h.is_finite() && h > 0.0) {
                return Err(ClpError::config("kernel.bandwidth", format!("{h} must be finite and > 0")));
            }
        }
        Ok(())
    }

    /// Kernel weight of a raw dissimilarity at bandwidth `h`.
    #[inline]
    pub fn weight(&self, d: f64, h: f64) -> f64 {
        match self.family {
            KernelFamily::Gaussian => {
                let w = gaussian_kernel(d / h);
                if w < WEIGHT_FLOOR {
                    0.0
                } else {
                    w
                }
            }
        }
    }
}

/// `exp(-x^2 / 2) / sqrt(2 pi)`.
#[inline]
pub fn gaussian_kernel(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Triplet dissimilarity over the rows `omega`; `None` when `omega` is empty.
pub fn dissim_triplet(a: &WeightedNetwork, omega: &[usize], j1: usize, j2: usize, j: usize) -> Option<f64> {
    if omega.is_empty() {
        return None;
    }
    let dot: f64 = omega
        .iter()
        .map(|&i| (a.get(i, j1) - a.get(i, j2)) * a.get(i, j))
        .sum();
    Some(dot.abs() / omega.len() as f64)
}

/// Pairwise dissimilarity `d(j1, j2)`: mean of the defined triplet values
/// over `j in train \ {j2}`. `None` when every triplet is undefined.
pub fn dissim_pair(
    a: &WeightedNetwork,
    mask: &MissingMask,
    train: &[usize],
    omega_j0: &[usize],
    j1: usize,
    j2: usize,
) -> Option<f64> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for &j in train.iter().filter(|&&j| j != j2) {
        let omega = omega_triplet(mask, omega_j0, j2, j);
        if let Some(d) = dissim_triplet(a, &omega, j1, j2, j) {
            sum += d;
            count += 1;
        }
    }
    (count > 0).then(|| sum / count as f64)
}

/// Dissimilarities of one group member against every training column;
/// `values[t]` pairs with `train[t]` and is `None` for excluded columns.
#[derive(Debug, Clone, PartialEq)]
pub struct DissimilarityRow {
    pub j1: usize,
    pub values: Vec<Option<f64>>,
}

/// Kernel-weighted prediction from the row values `train_values[t] = A[i0, train[t]]`.
///
/// Returns the prediction and whether the unweighted-mean fallback was used
/// because every kernel weight underflowed. `None` entries in `dissim` are
/// skipped. Panics if no entry is usable.
pub fn predict_entry(train_values: &[f64], dissim: &[Option<f64>], kernel: &KernelSpec, bandwidth: f64) -> (f64, bool) {
    debug_assert_eq!(train_values.len(), dissim.len());
    let mut num = 0.0;
    let mut den = 0.0;
    let mut plain_sum = 0.0;
    let mut plain_n = 0usize;
    for (&v, d) in train_values.iter().zip(dissim) {
        let Some(d) = d else { continue };
        let w = kernel.weight(*d, bandwidth);
        num += w * v;
        den += w;
        plain_sum += v;
        plain_n += 1;
    }
    assert!(plain_n > 0, "prediction needs at least one usable training column");
    if den > 0.0 {
        (num / den, false)
    } else {
        (plain_sum / plain_n as f64, true)
    }
}

/// How a calibration group's predictions were produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PredictionMode {
    Kernel,
    /// No row was fully observed on the group; every member got the training mean.
    EmptyOmega,
    /// No training column had a defined dissimilarity; every member got the training mean.
    AllExcluded,
}

/// Predictions for every member of a calibration group.
#[derive(Debug, Clone)]
pub struct GroupPredictions {
    /// Aligned with the `group` argument of [`predict_group`].
    pub predictions: Vec<f64>,
    pub mode: PredictionMode,
    pub omega_size: usize,
    pub excluded_train: usize,
    /// Members whose kernel weights all underflowed.
    pub underflow: usize,
    pub bandwidth: f64,
}

struct Triplet {
    t: usize,
    rows: Vec<usize>,
    /// `sum_i A[i, j2] A[i, j]` over `rows`.
    base: f64,
}

/// Predicts `A[i0, j1]` for every `j1` in `group`.
///
/// `candidates` are the rows allowed into `Ω` (training columns for square
/// networks, all other rows for bipartite ones). Every member sees the same
/// `Ω` sets and the same excluded training columns.
pub fn predict_group(
    a: &WeightedNetwork,
    mask: &MissingMask,
    i0: usize,
    train: &[usize],
    candidates: &[usize],
    group: &[usize],
    kernel: &KernelSpec,
) -> GroupPredictions {
    let train_values: Vec<f64> = train.iter().map(|&j| a.get(i0, j)).collect();
    let train_mean = train_values.iter().sum::<f64>() / train_values.len().max(1) as f64;
    let omega = fully_observed_rows(mask, candidates, group);
    let flat = |mode, excluded| GroupPredictions {
        predictions: vec![train_mean; group.len()],
        mode,
        omega_size: omega.len(),
        excluded_train: excluded,
        underflow: 0,
        bandwidth: f64::NAN,
    };
    if omega.is_empty() || train.is_empty() {
        return flat(PredictionMode::EmptyOmega, train.len());
    }

    // Group-shared structure: Ω restricted per (j2, j), independent of j1.
    let triplets: Vec<Vec<Triplet>> = train
        .iter()
        .map(|&j2| {
            train
                .iter()
                .enumerate()
                .filter(|&(_, &j)| j != j2)
                .filter_map(|(t, &j)| {
                    let rows = omega_triplet(mask, &omega, j2, j);
                    (!rows.is_empty()).then(|| {
                        let base = rows.iter().map(|&i| a.get(i, j2) * a.get(i, j)).sum();
                        Triplet { t, rows, base }
                    })
                })
                .collect()
        })
        .collect();
    let excluded = triplets.iter().filter(|t| t.is_empty()).count();
    if excluded == train.len() {
        return flat(PredictionMode::AllExcluded, excluded);
    }

    let rows: Vec<DissimilarityRow> = group
        .iter()
        .map(|&j1| DissimilarityRow {
            j1,
            values: triplets
                .iter()
                .map(|ts| {
                    if ts.is_empty() {
                        return None;
                    }
                    let total: f64 = ts
                        .iter()
                        .map(|tr| {
                            let j = train[tr.t];
                            let cross: f64 = tr.rows.iter().map(|&i| a.get(i, j1) * a.get(i, j)).sum();
                            (cross - tr.base).abs() / tr.rows.len() as f64
                        })
                        .sum();
                    Some(total / ts.len() as f64)
                })
                .collect(),
        })
        .collect();
    debug_assert!(rows
        .iter()
        .all(|r| r.values.iter().zip(&triplets).all(|(v, ts)| v.is_none() == ts.is_empty())));

    let bandwidth = match kernel.bandwidth {
        Bandwidth::Fixed(h) => h,
        Bandwidth::Auto => {
            let mut all: Vec<f64> = rows.iter().flat_map(|r| r.values.iter().flatten().copied()).collect();
            all.sort_by(f64::total_cmp);
            let med = if all.is_empty() { 0.0 } else { all[all.len() / 2] };
            if med.is_finite() && med > 0.0 {
                med
            } else {
                1.0
            }
        }
    };

    let mut underflow = 0;
    let predictions = rows
        .iter()
        .map(|r| {
            let (p, fell_back) = predict_entry(&train_values, &r.values, kernel, bandwidth);
            underflow += usize::from(fell_back);
            p
        })
        .collect();
    if underflow > 0 {
        log::debug!("row {i0}: {underflow} predictions fell back to the unweighted mean");
    }
    GroupPredictions {
        predictions,
        mode: PredictionMode::Kernel,
        omega_size: omega.len(),
        excluded_train: excluded,
        underflow,
        bandwidth,
    }
}

/// Midpoint-rule approximation of the graphon-slice dissimilarity
/// `∫ |∫ (f(u, x1) - f(u, x2)) f(u, v) du| dv`.
pub fn oracle_dissim(f: impl Fn(f64, f64) -> f64, x1: f64, x2: f64, resolution: usize) -> f64 {
    let r = resolution.max(1);
    let grid: Vec<f64> = (0..r).map(|k| (k as f64 + 0.5) / r as f64).collect();
    let delta: Vec<f64> = grid.iter().map(|&u| f(u, x1) - f(u, x2)).collect();
    if delta.iter().all(|&d| d == 0.0) {
        return 0.0;
    }
    let outer: f64 = grid
        .iter()
        .map(|&v| {
            let inner: f64 = grid.iter().zip(&delta).map(|(&u, &d)| d * f(u, v)).sum();
            (inner / r as f64).abs()
        })
        .sum();
    outer / r as f64
}

/// Kernel prediction of `A[i0, j1]` using the oracle dissimilarity against
/// every training column. Simulation-only.
#[allow(clippy::too_many_arguments)]
pub fn oracle_predict(
    a: &WeightedNetwork,
    spec: &GraphonSpec,
    latent: Option<&LatentPositions>,
    i0: usize,
    train: &[usize],
    j1: usize,
    kernel: &KernelSpec,
    resolution: usize,
) -> Result<f64> {
    let latent = latent.ok_or_else(|| ClpError::Unsupported("oracle prediction needs latent positions".into()))?;
    if train.is_empty() {
        return Err(ClpError::Validation("oracle prediction needs a training column".into()));
    }
    let f = |u: f64, v: f64| spec.mean(u, v);
    let x1 = latent.column(j1);
    let dissim: Vec<Option<f64>> = train
        .iter()
        .map(|&j2| Some(oracle_dissim(f, x1, latent.column(j2), resolution)))
        .collect();
    let values: Vec<f64> = train.iter().map(|&j| a.get(i0, j)).collect();
    let h = match kernel.bandwidth {
        Bandwidth::Fixed(h) => h,
        Bandwidth::Auto => 1.0,
    };
    Ok(predict_entry(&values, &dissim, kernel, h).0)
}
