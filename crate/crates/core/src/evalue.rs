//! Local BH decisions turned into e-values, derandomised over repeated
//! splits, optionally inflated, and pooled through e-BH.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::conformal::{local_test, LocalContext, LocalDiagnostics, LocalRejection, PValueRecord};
use crate::error::{ClpError, Result};
use crate::estimator::KernelSpec;
use crate::network::{MissingMask, Topology, WeightedNetwork};
use crate::par;
use crate::rng::{stream_rng, Stream};
use crate::split::{allocate_calibration, observed_columns, plan_test_blocks, split_row, TestBlockPlan};
use crate::thresholds::HypothesisThresholds;

/// `|block| * 1{j in R} / ((|R| ∨ 1) * alpha_bh)` for each block member.
pub fn decisions_to_evalues(rejection: &LocalRejection, alpha_bh: f64) -> Vec<f64> {
    let size = rejection.members.len() as f64;
    let denom = rejection.rejected.len().max(1) as f64 * alpha_bh;
    rejection
        .members
        .iter()
        .map(|j| {
            if rejection.rejected.contains(j) {
                size / denom
            } else {
                0.0
            }
        })
        .collect()
}

/// Entrywise mean of repeated e-value vectors over the same block.
pub fn derandomise(runs: &[Vec<f64>]) -> Result<Vec<f64>> {
    let Some(first) = runs.first() else {
        return Err(ClpError::Internal("derandomisation needs at least one run".into()));
    };
    if runs.iter().any(|r| r.len() != first.len()) {
        return Err(ClpError::Internal("e-value runs cover different blocks".into()));
    }
    let m = runs.len() as f64;
    Ok((0..first.len())
        .map(|k| runs.iter().map(|r| r[k]).sum::<f64>() / m)
        .collect())
}

/// How the inflation constant `c` scales the derandomised e-values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum InflationScale {
    /// Multiply by `c`; `c = 1` leaves the e-values untouched.
    #[default]
    Plain,
    /// Multiply by `c / alpha_bh`, on top of the `1 / alpha_bh` already in
    /// each e-value.
    OverAlphaBh,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Inflation {
    pub c: f64,
    #[serde(default)]
    pub scale: InflationScale,
}

impl Default for Inflation {
    fn default() -> Self {
        Self {
            c: 1.0,
            scale: InflationScale::Plain,
        }
    }
}

impl Inflation {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn factor(&self, alpha_bh: f64) -> f64 {
        match self.scale {
            InflationScale::Plain => self.c,
            InflationScale::OverAlphaBh => self.c / alpha_bh,
        }
    }
}

pub fn inflate(e_bar: f64, inflation: &Inflation, alpha_bh: f64) -> f64 {
    e_bar * inflation.factor(alpha_bh)
}

/// Outcome of the global e-BH procedure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalRejection {
    pub alpha_ebh: f64,
    pub n_total: usize,
    pub k_hat: usize,
    /// `n_total / (alpha_ebh * k_hat)`; infinite when nothing is rejected.
    pub threshold: f64,
    /// Rejected coordinates in row-major order.
    pub rejected: Vec<(usize, usize)>,
}

#[inline]
pub fn ebh_threshold(n_total: usize, alpha: f64, k: usize) -> f64 {
    n_total as f64 / (alpha * k as f64)
}

/// e-BH: `k_hat = max{k : e_(k) >= n_total / (alpha k)}` over e-values
/// sorted in descending order; rejects every e-value at or above the
/// resulting threshold. Coordinates absent from `evalues` count toward
/// `n_total` with e-value zero.
pub fn ebh_procedure(evalues: &[((usize, usize), f64)], alpha: f64, n_total: usize) -> Result<GlobalRejection> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(ClpError::config("alpha_ebh", format!("{alpha} is not in (0, 1)")));
    }
    if n_total < evalues.len() {
        return Err(ClpError::Internal(format!(
            "n_total {n_total} is smaller than the {} supplied e-values",
            evalues.len()
        )));
    }
    let mut order: Vec<usize> = (0..evalues.len()).collect();
    order.sort_by(|&x, &y| {
        evalues[y]
            .1
            .total_cmp(&evalues[x].1)
            .then(evalues[x].0.cmp(&evalues[y].0))
    });
    let k_hat = (1..=order.len())
        .rev()
        .find(|&k| evalues[order[k - 1]].1 >= ebh_threshold(n_total, alpha, k))
        .unwrap_or(0);
    let threshold = if k_hat == 0 {
        f64::INFINITY
    } else {
        ebh_threshold(n_total, alpha, k_hat)
    };
    let mut rejected: Vec<(usize, usize)> = evalues
        .iter()
        .filter(|(_, e)| *e >= threshold)
        .map(|(c, _)| *c)
        .collect();
    rejected.sort_unstable();
    debug_assert_eq!(rejected.len(), k_hat);
    Ok(GlobalRejection {
        alpha_ebh: alpha,
        n_total,
        k_hat,
        threshold,
        rejected,
    })
}

/// Tuning of the full pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClpParams {
    /// Fraction of a row's observed columns used for training.
    pub ratio_train: f64,
    /// Minimum calibration subset size per hypothesis.
    pub r0: usize,
    pub alpha_ebh: f64,
    /// Level of the local BH tests; `alpha_ebh / 2` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha_bh: Option<f64>,
    #[serde(default)]
    pub inflation: Inflation,
    /// Derandomisation repetitions per block.
    pub m_reps: usize,
    /// Per-row overrides of `m_reps`.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub row_reps: BTreeMap<usize, usize>,
    #[serde(default)]
    pub kernel: KernelSpec,
    #[serde(default)]
    pub topology: Topology,
}

impl Default for ClpParams {
    fn default() -> Self {
        Self {
            ratio_train: 0.4,
            r0: 25,
            alpha_ebh: 0.2,
            alpha_bh: None,
            inflation: Inflation::default(),
            m_reps: 20,
            row_reps: BTreeMap::new(),
            kernel: KernelSpec::default(),
            topology: Topology::Directed,
        }
    }
}

impl ClpParams {
    pub fn alpha_bh(&self) -> f64 {
        self.alpha_bh.unwrap_or(self.alpha_ebh / 2.0)
    }

    pub fn reps_for_row(&self, row: usize) -> usize {
        self.row_reps.get(&row).copied().unwrap_or(self.m_reps)
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |field: &str, v: f64| {
            if v > 0.0 && v < 1.0 {
                Ok(())
            } else {
                Err(ClpError::config(field, format!("{v} is not in (0, 1)")))
            }
        };
        unit("ratio_train", self.ratio_train)?;
        unit("alpha_ebh", self.alpha_ebh)?;
        unit("alpha_bh", self.alpha_bh())?;
        if self.r0 == 0 {
            return Err(ClpError::config("r0", "must be positive"));
        }
        if self.m_reps == 0 || self.row_reps.values().any(|&m| m == 0) {
            return Err(ClpError::config("m_reps", "must be positive"));
        }
        if !(self.inflation.c.is_finite() && self.inflation.c >= 0.0) {
            return Err(ClpError::config("inflation.c", "must be finite and >= 0"));
        }
        self.kernel.validate()
    }
}

/// Execution switches that do not change results.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    pub parallel: bool,
    pub keep_pvalues: bool,
    pub keep_splits: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            parallel: true,
            keep_pvalues: false,
            keep_splits: false,
        }
    }
}

/// Derandomised (and inflated) e-value of one test coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EValueRecord {
    pub row: usize,
    pub col: usize,
    /// Mean of the per-repetition e-values, before inflation.
    pub e_bar: f64,
    /// `e_bar` times the inflation factor; what e-BH sees.
    pub e_value: f64,
    pub reps: usize,
    pub reps_completed: usize,
    pub block: Option<usize>,
    pub block_size: usize,
    pub inflation: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SkipReason {
    DegenerateRow,
    StarvedRow,
    InsufficientCalibration,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RowSkip {
    pub row: usize,
    pub reason: SkipReason,
    pub n_test: usize,
}

/// Run-level bookkeeping reported alongside the rejections.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Diagnostics {
    pub n_total: usize,
    pub rows_tested: usize,
    pub rows_skipped: Vec<RowSkip>,
    pub blocks: usize,
    pub local_tests: usize,
    pub reps_skipped: usize,
    pub reps_retried: usize,
    pub ties: usize,
    pub comparisons: usize,
    pub tie_rate: f64,
    pub empty_omega: usize,
    pub all_excluded: usize,
    pub underflow: usize,
    pub omega_mean: f64,
    pub omega_max: usize,
}

/// Block partition of one row, kept for auditing.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RowPlanDump {
    pub initial: crate::split::RowSplit,
    pub plan: TestBlockPlan,
}

#[derive(Debug, Clone)]
pub struct ClpOutput {
    pub rejection: GlobalRejection,
    pub evalues: Vec<EValueRecord>,
    pub diagnostics: Diagnostics,
    pub pvalues: Vec<PValueRecord>,
    pub splits: Vec<RowPlanDump>,
}

struct BlockTask {
    row: usize,
    block: usize,
    members: Vec<usize>,
}

struct BlockResult {
    e_bar: Vec<f64>,
    reps: usize,
    completed: usize,
    retried: usize,
    diag: LocalDiagnostics,
    pvalues: Vec<PValueRecord>,
}

enum RowPlan {
    Planned(RowPlanDump),
    Skipped(RowSkip),
}

/// Checks that thresholds sit on missing cells and, for undirected
/// networks, on the upper triangle; returns each row's test columns.
fn row_test_sets(mask: &MissingMask, thresholds: &HypothesisThresholds, topology: Topology) -> Result<Vec<Vec<usize>>> {
    let mut rows = vec![Vec::new(); mask.n_rows()];
    for h in thresholds.entries() {
        if h.row >= mask.n_rows() || h.col >= mask.n_cols() {
            return Err(ClpError::Validation(format!("hypothesis ({}, {}) is out of range", h.row, h.col)));
        }
        if !mask.is_missing(h.row, h.col) {
            return Err(ClpError::Validation(format!(
                "hypothesis ({}, {}) refers to an observed cell",
                h.row, h.col
            )));
        }
        if topology == Topology::Undirected && h.col <= h.row {
            return Err(ClpError::Validation(format!(
                "undirected hypothesis ({}, {}) is not in the upper triangle",
                h.row, h.col
            )));
        }
        rows[h.row].push(h.col);
    }
    for r in &mut rows {
        r.sort_unstable();
    }
    Ok(rows)
}

/// The full pipeline: per-row block plans, repeated local tests turned into
/// derandomised e-values, and a single e-BH pass over every hypothesis.
pub fn clp_global(
    network: &WeightedNetwork,
    mask: &MissingMask,
    thresholds: &HypothesisThresholds,
    params: &ClpParams,
    seed: u64,
) -> Result<ClpOutput> {
    clp_global_with(network, mask, thresholds, params, seed, RunOptions::default())
}

pub fn clp_global_with(
    network: &WeightedNetwork,
    mask: &MissingMask,
    thresholds: &HypothesisThresholds,
    params: &ClpParams,
    seed: u64,
    options: RunOptions,
) -> Result<ClpOutput> {
    params.validate()?;
    mask.check_shape(network)?;
    let topology = params.topology;
    match topology {
        Topology::Bipartite => {}
        _ if network.n_rows() != network.n_cols() || network.diagonal_defined() => {
            return Err(ClpError::Validation(
                "directed and undirected networks must be square without self-loops".into(),
            ));
        }
        Topology::Undirected if !(network.is_symmetric() && mask.is_symmetric()) => {
            return Err(ClpError::Validation("undirected network or mask is not symmetric".into()));
        }
        _ => {}
    }
    let alpha_bh = params.alpha_bh();
    let factor = params.inflation.factor(alpha_bh);
    if factor > 1.0 {
        log::warn!("inflation factor {factor} exceeds 1: the e-BH FDR guarantee no longer applies");
    }
    let tests = row_test_sets(mask, thresholds, topology)?;
    let ctx = LocalContext {
        network,
        mask,
        thresholds,
        topology,
    };

    let rows: Vec<usize> = (0..mask.n_rows()).filter(|&i| !tests[i].is_empty()).collect();
    let plan_row = |&i0: &usize| -> Result<RowPlan> {
        let test = tests[i0].clone();
        let skip = |reason| {
            log::warn!("row {i0} skipped ({reason:?}); its {} hypotheses get e-value 0", test.len());
            Ok(RowPlan::Skipped(RowSkip {
                row: i0,
                reason,
                n_test: test.len(),
            }))
        };
        if observed_columns(mask, i0).len() < params.r0 + 1 {
            return skip(SkipReason::StarvedRow);
        }
        let mut rng = stream_rng(seed, Stream::Splits, &[i0 as u64]);
        let split = match split_row(i0, mask, params.ratio_train, &mut rng) {
            Ok(s) => s.with_test(test.clone()),
            Err(ClpError::RowDegenerate { .. }) => return skip(SkipReason::DegenerateRow),
            Err(e) => return Err(e),
        };
        match plan_test_blocks(&split, params.r0, &mut rng) {
            Ok(plan) => Ok(RowPlan::Planned(RowPlanDump { initial: split, plan })),
            Err(ClpError::InsufficientCalibration { .. }) => skip(SkipReason::InsufficientCalibration),
            Err(e) => Err(e),
        }
    };
    let plans: Vec<RowPlan> = if options.parallel {
        par::map_tasks(&rows, plan_row)
    } else {
        par::map_tasks_sequential(&rows, plan_row)
    }
    .into_iter()
    .collect::<Result<_>>()?;

    let tasks: Vec<BlockTask> = plans
        .iter()
        .filter_map(|p| match p {
            RowPlan::Planned(d) => Some(d),
            RowPlan::Skipped(_) => None,
        })
        .flat_map(|d| {
            d.plan.blocks.iter().enumerate().map(move |(b, members)| BlockTask {
                row: d.plan.row,
                block: b,
                members: members.clone(),
            })
        })
        .collect();

    let run_block = |task: &BlockTask| -> Result<BlockResult> {
        let reps = params.reps_for_row(task.row);
        let mut sums = vec![0.0; task.members.len()];
        let mut diag = LocalDiagnostics::default();
        let mut pvalues = Vec::new();
        let (mut completed, mut retried) = (0, 0);
        for rep in 0..reps {
            let mut rng = stream_rng(seed, Stream::Repetition, &[task.row as u64, task.block as u64, rep as u64]);
            let mut attempt = || -> Result<Option<_>> {
                let split = split_row(task.row, mask, params.ratio_train, &mut rng)?.with_test(tests[task.row].clone());
                match allocate_calibration(&split, &task.members, params.r0, &mut rng) {
                    Ok(a) => Ok(Some((split, a))),
                    Err(ClpError::InsufficientCalibration { .. }) => Ok(None),
                    Err(e) => Err(e),
                }
            };
            let allocated = match attempt()? {
                Some(x) => Some(x),
                None => {
                    retried += 1;
                    attempt()?
                }
            };
            let Some((split, allocation)) = allocated else {
                continue;
            };
            let outcome = local_test(&ctx, &split, &allocation, task.block, &params.kernel, alpha_bh, &mut rng)?;
            let e = decisions_to_evalues(&outcome.rejection, alpha_bh);
            let cap = task.members.len() as f64 / alpha_bh;
            if e.iter().any(|&v| v > cap * (1.0 + 1e-12)) {
                return Err(ClpError::Internal(format!("e-value above the block cap {cap}")));
            }
            // allocation order follows the block plan, so e aligns with task.members
            debug_assert_eq!(outcome.rejection.members, task.members);
            for (s, v) in sums.iter_mut().zip(&e) {
                *s += v;
            }
            completed += 1;
            merge_local(&mut diag, outcome.diagnostics);
            if options.keep_pvalues {
                pvalues.extend(outcome.records);
            }
        }
        Ok(BlockResult {
            e_bar: sums.into_iter().map(|s| s / reps as f64).collect(),
            reps,
            completed,
            retried,
            diag,
            pvalues,
        })
    };
    let results: Vec<BlockResult> = if options.parallel {
        par::map_tasks(&tasks, run_block)
    } else {
        par::map_tasks_sequential(&tasks, run_block)
    }
    .into_iter()
    .collect::<Result<_>>()?;

    // single-threaded reduction in task order
    let mut diagnostics = Diagnostics {
        n_total: thresholds.len(),
        blocks: tasks.len(),
        ..Diagnostics::default()
    };
    let mut by_coord: BTreeMap<(usize, usize), EValueRecord> = BTreeMap::new();
    let mut pvalues = Vec::new();
    let mut omega_sum = 0usize;
    let mut omega_n = 0usize;
    for (task, res) in tasks.iter().zip(results) {
        diagnostics.local_tests += res.completed;
        diagnostics.reps_skipped += res.reps - res.completed;
        diagnostics.reps_retried += res.retried;
        diagnostics.ties += res.diag.ties;
        diagnostics.comparisons += res.diag.comparisons;
        diagnostics.empty_omega += res.diag.empty_omega;
        diagnostics.all_excluded += res.diag.all_excluded;
        diagnostics.underflow += res.diag.underflow;
        omega_sum += res.diag.omega_sizes.iter().sum::<usize>();
        omega_n += res.diag.omega_sizes.len();
        diagnostics.omega_max = diagnostics
            .omega_max
            .max(res.diag.omega_sizes.iter().copied().max().unwrap_or(0));
        pvalues.extend(res.pvalues);
        for (&col, &e_bar) in task.members.iter().zip(&res.e_bar) {
            by_coord.insert(
                (task.row, col),
                EValueRecord {
                    row: task.row,
                    col,
                    e_bar,
                    e_value: inflate(e_bar, &params.inflation, alpha_bh),
                    reps: res.reps,
                    reps_completed: res.completed,
                    block: Some(task.block),
                    block_size: task.members.len(),
                    inflation: factor,
                },
            );
        }
    }
    let mut splits = Vec::new();
    for p in plans {
        match p {
            RowPlan::Planned(d) => {
                diagnostics.rows_tested += 1;
                if options.keep_splits {
                    splits.push(d);
                }
            }
            RowPlan::Skipped(s) => diagnostics.rows_skipped.push(s),
        }
    }
    diagnostics.tie_rate = if diagnostics.comparisons > 0 {
        diagnostics.ties as f64 / diagnostics.comparisons as f64
    } else {
        0.0
    };
    diagnostics.omega_mean = if omega_n > 0 {
        omega_sum as f64 / omega_n as f64
    } else {
        0.0
    };

    let evalues: Vec<EValueRecord> = thresholds
        .entries()
        .iter()
        .map(|h| {
            by_coord.remove(&(h.row, h.col)).unwrap_or(EValueRecord {
                row: h.row,
                col: h.col,
                e_bar: 0.0,
                e_value: 0.0,
                reps: params.reps_for_row(h.row),
                reps_completed: 0,
                block: None,
                block_size: 0,
                inflation: factor,
            })
        })
        .collect();
    let pooled: Vec<((usize, usize), f64)> = evalues.iter().map(|r| ((r.row, r.col), r.e_value)).collect();
    let rejection = ebh_procedure(&pooled, params.alpha_ebh, thresholds.len())?;
    Ok(ClpOutput {
        rejection,
        evalues,
        diagnostics,
        pvalues,
        splits,
    })
}

fn merge_local(into: &mut LocalDiagnostics, from: LocalDiagnostics) {
    into.ties += from.ties;
    into.comparisons += from.comparisons;
    into.omega_sizes.extend(from.omega_sizes);
    into.empty_omega += from.empty_omega;
    into.all_excluded += from.all_excluded;
    into.underflow += from.underflow;
}
