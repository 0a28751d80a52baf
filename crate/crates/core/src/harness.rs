//! Monte-Carlo experiments: simulate, run the pipeline, score against the
//! simulation's ground truth.

use std::collections::HashSet;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::conformal::{bh_procedure, conformal_pvalue, nonconformity};
use crate::error::{ClpError, Result};
use crate::estimator::predict_group;
use crate::evalue::{clp_global_with, ClpOutput, ClpParams, RunOptions};
use crate::graphon::{generate_network, BaseSetting, GraphonSpec, NetworkShape, SimulatedNetwork};
use crate::mask::{generate_mask, test_coordinates, MissingSpec};
use crate::network::{MissingMask, Topology, WeightedNetwork};
use crate::par;
use crate::rng::{derive_seed, stream_rng, Stream};
use crate::split::{omega_candidates, split_row};
use crate::thresholds::{build_thresholds, HypothesisThresholds, ThresholdRule};
use crate::topology::undirected_clp_with;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Desk,
    Paper,
}

/// Everything needed to regenerate and rerun a batch of replications.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub graphon: GraphonSpec,
    pub missing: MissingSpec,
    pub thresholds: ThresholdRule,
    /// Rows (and columns, unless `n_cols` is set for bipartite networks).
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_cols: Option<usize>,
    #[serde(default)]
    pub params: ClpParams,
    pub replications: usize,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<Preset>,
    /// Also score the single-split pooled BH contrast.
    #[serde(default)]
    pub baseline: bool,
}

impl ExperimentConfig {
    /// Setting 1 with heterogeneous missingness in `[0, 0.4]` and 30%
    /// alternatives shifted by 1.5, at the preset's scale.
    pub fn preset(preset: Preset) -> Self {
        let (n, replications, m_reps) = match preset {
            Preset::Desk => (100, 50, 5),
            Preset::Paper => (200, 100, 20),
        };
        Self {
            graphon: GraphonSpec::setting(BaseSetting::Setting1),
            missing: MissingSpec::HeterogeneousUniform { q_lo: 0.0, q_hi: 0.4 },
            thresholds: ThresholdRule::Signal {
                fraction: 0.3,
                delta: 1.5,
            },
            n,
            n_cols: None,
            params: ClpParams {
                m_reps,
                ..ClpParams::default()
            },
            replications,
            seed: 2024,
            preset: Some(preset),
            baseline: false,
        }
    }

    pub fn shape(&self) -> NetworkShape {
        match (self.params.topology, self.n_cols) {
            (Topology::Bipartite, cols) => NetworkShape::bipartite(self.n, cols.unwrap_or(self.n)),
            (t, _) => NetworkShape::square(self.n, t),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.graphon.validate()?;
        self.missing.validate(self.shape())?;
        self.thresholds.validate()?;
        self.params.validate()?;
        if self.n < 2 {
            return Err(ClpError::config("n", "needs at least 2 nodes"));
        }
        if self.n_cols.is_some() && self.params.topology != Topology::Bipartite {
            return Err(ClpError::config("n_cols", "only bipartite networks may be rectangular"));
        }
        if self.replications == 0 {
            return Err(ClpError::config("replications", "must be positive"));
        }
        Ok(())
    }

    pub fn replication_seed(&self, rep: usize) -> u64 {
        derive_seed(self.seed, Stream::Replication, &[rep as u64])
    }
}

/// One simulated data set ready for the pipeline.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub simulated: SimulatedNetwork,
    pub mask: MissingMask,
    /// The network with every missing cell zeroed, so nothing unobserved
    /// can leak into estimation.
    pub observed: WeightedNetwork,
    pub thresholds: HypothesisThresholds,
}

/// Copy of `network` with missing cells replaced by zero.
pub fn hide_missing(network: &WeightedNetwork, mask: &MissingMask) -> Result<WeightedNetwork> {
    mask.check_shape(network)?;
    let n_cols = network.n_cols();
    let weights = network
        .as_slice()
        .iter()
        .enumerate()
        .map(|(k, &w)| if mask.is_missing(k / n_cols, k % n_cols) { 0.0 } else { w })
        .collect();
    WeightedNetwork::from_vec(network.n_rows(), n_cols, weights, network.diagonal_defined())
}

pub fn simulate_scenario(config: &ExperimentConfig, seed: u64) -> Result<Scenario> {
    let shape = config.shape();
    let simulated = generate_network(&config.graphon, shape, seed)?;
    let mask = generate_mask(&config.missing, shape, seed)?;
    let observed = hide_missing(&simulated.network, &mask)?;
    let coords = test_coordinates(&mask, shape.topology);
    let thresholds = build_thresholds(&simulated.truth, &observed, &mask, &coords, &config.thresholds, seed)?;
    Ok(Scenario {
        simulated,
        mask,
        observed,
        thresholds,
    })
}

/// Runs the pipeline variant matching `params.topology`.
pub fn run_pipeline(
    observed: &WeightedNetwork,
    mask: &MissingMask,
    thresholds: &HypothesisThresholds,
    params: &ClpParams,
    seed: u64,
    options: RunOptions,
) -> Result<ClpOutput> {
    match params.topology {
        Topology::Undirected => undirected_clp_with(observed, mask, thresholds, params, seed, options),
        _ => clp_global_with(observed, mask, thresholds, params, seed, options),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub fdp: f64,
    pub power: f64,
    pub n_rejected: usize,
    pub false_rejections: usize,
    pub n_alternatives: usize,
}

/// FDP = false rejections / (|rejected| ∨ 1), power = true rejections /
/// (alternatives ∨ 1).
pub fn score(rejected: &[(usize, usize)], thresholds: &HypothesisThresholds) -> Result<Score> {
    let mut false_rejections = 0;
    let mut seen = HashSet::with_capacity(rejected.len());
    for &(i, j) in rejected {
        let h = thresholds
            .hypothesis(i, j)
            .ok_or_else(|| ClpError::Accounting(format!("rejected coordinate ({i}, {j}) is not a hypothesis")))?;
        if !seen.insert((i, j)) {
            return Err(ClpError::Accounting(format!("coordinate ({i}, {j}) rejected twice")));
        }
        let alt = h
            .alternative
            .ok_or_else(|| ClpError::Validation(format!("hypothesis ({i}, {j}) has no ground-truth label")))?;
        if !alt {
            false_rejections += 1;
        }
    }
    let n_alternatives = thresholds.n_alternatives();
    let true_rejections = rejected.len() - false_rejections;
    Ok(Score {
        fdp: false_rejections as f64 / rejected.len().max(1) as f64,
        power: true_rejections as f64 / n_alternatives.max(1) as f64,
        n_rejected: rejected.len(),
        false_rejections,
        n_alternatives,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub replication: usize,
    pub alpha_ebh: f64,
    pub fdp: f64,
    pub power: f64,
    pub n_rejected: usize,
    pub n_tests: usize,
    pub n_alternatives: usize,
    // Timings default to zero so tables written without them still load.
    #[serde(default)]
    pub runtime_ms: f64,
    #[serde(default)]
    pub simulate_ms: f64,
    #[serde(default)]
    pub pipeline_ms: f64,
    #[serde(default)]
    pub score_ms: f64,
    #[serde(default)]
    pub baseline_fdp: Option<f64>,
    #[serde(default)]
    pub baseline_power: Option<f64>,
    #[serde(default)]
    pub error: Option<String>,
}

impl MetricRow {
    pub fn failed(&self) -> bool {
        self.error.is_some()
    }

    /// Timings zeroed, for comparing runs bit for bit.
    pub fn without_timings(&self) -> Self {
        Self {
            runtime_ms: 0.0,
            simulate_ms: 0.0,
            pipeline_ms: 0.0,
            score_ms: 0.0,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub alpha_ebh: f64,
    pub replications: usize,
    pub failed: usize,
    pub mean_fdr: f64,
    pub fdr_stderr: f64,
    pub mean_power: f64,
    pub power_stderr: f64,
    pub mean_rejected: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline_fdr: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline_power: Option<f64>,
}

fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Plain means over the successful replications.
pub fn summarize(rows: &[MetricRow]) -> Summary {
    let ok: Vec<&MetricRow> = rows.iter().filter(|r| !r.failed()).collect();
    let fdp: Vec<f64> = ok.iter().map(|r| r.fdp).collect();
    let power: Vec<f64> = ok.iter().map(|r| r.power).collect();
    let rejected: Vec<f64> = ok.iter().map(|r| r.n_rejected as f64).collect();
    let (mean_fdr, fdr_stderr) = mean_stderr(&fdp);
    let (mean_power, power_stderr) = mean_stderr(&power);
    let base = |f: fn(&MetricRow) -> Option<f64>| {
        let v: Vec<f64> = ok.iter().filter_map(|r| f(r)).collect();
        (!v.is_empty()).then(|| mean_stderr(&v).0)
    };
    Summary {
        alpha_ebh: rows.first().map_or(f64::NAN, |r| r.alpha_ebh),
        replications: rows.len(),
        failed: rows.len() - ok.len(),
        mean_fdr,
        fdr_stderr,
        mean_power,
        power_stderr,
        mean_rejected: mean_stderr(&rejected).0,
        baseline_fdr: base(|r| r.baseline_fdp),
        baseline_power: base(|r| r.baseline_power),
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub rows: Vec<MetricRow>,
    pub summary: Summary,
}

fn ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

fn run_replication(config: &ExperimentConfig, rep: usize, options: RunOptions) -> MetricRow {
    let started = Instant::now();
    let mut row = MetricRow {
        replication: rep,
        alpha_ebh: config.params.alpha_ebh,
        fdp: 0.0,
        power: 0.0,
        n_rejected: 0,
        n_tests: 0,
        n_alternatives: 0,
        runtime_ms: 0.0,
        simulate_ms: 0.0,
        pipeline_ms: 0.0,
        score_ms: 0.0,
        baseline_fdp: None,
        baseline_power: None,
        error: None,
    };
    let seed = config.replication_seed(rep);
    let outcome = (|| -> Result<()> {
        let t = Instant::now();
        let sc = simulate_scenario(config, seed)?;
        row.simulate_ms = ms(t);
        row.n_tests = sc.thresholds.len();

        let t = Instant::now();
        let out = run_pipeline(&sc.observed, &sc.mask, &sc.thresholds, &config.params, seed, options)?;
        row.pipeline_ms = ms(t);

        let t = Instant::now();
        let s = score(&out.rejection.rejected, &sc.thresholds)?;
        if config.baseline {
            let naive = naive_baseline(&sc.observed, &sc.mask, &sc.thresholds, &config.params, seed)?;
            let b = score(&naive, &sc.thresholds)?;
            row.baseline_fdp = Some(b.fdp);
            row.baseline_power = Some(b.power);
        }
        row.score_ms = ms(t);
        row.fdp = s.fdp;
        row.power = s.power;
        row.n_rejected = s.n_rejected;
        row.n_alternatives = s.n_alternatives;
        Ok(())
    })();
    if let Err(e) = outcome {
        if matches!(e, ClpError::Accounting(_)) {
            panic!("accounting error in replication {rep}: {e}");
        }
        log::warn!("replication {rep} failed: {e}");
        row.error = Some(e.to_string());
    }
    row.runtime_ms = ms(started);
    row
}

/// Runs every replication (in parallel unless `options.parallel` is off).
/// Per-replication failures are recorded in their row.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult> {
    run_experiment_with(config, RunOptions::default())
}

pub fn run_experiment_with(config: &ExperimentConfig, options: RunOptions) -> Result<ExperimentResult> {
    config.validate()?;
    let reps: Vec<usize> = (0..config.replications).collect();
    let job = |&rep: &usize| run_replication(config, rep, options);
    let rows = if options.parallel {
        par::map_tasks(&reps, job)
    } else {
        par::map_tasks_sequential(&reps, job)
    };
    let summary = summarize(&rows);
    Ok(ExperimentResult { rows, summary })
}

/// One point of an α sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub alpha_ebh: f64,
    pub alpha_bh: f64,
    pub mean_fdr: f64,
    pub fdr_stderr: f64,
    pub mean_power: f64,
    pub power_stderr: f64,
    pub replications: usize,
    pub failed: usize,
}

/// Reruns the experiment at each `alpha_ebh`; `alpha_bh` follows as half of
/// it unless the config pins it.
pub fn alpha_sweep(config: &ExperimentConfig, alphas: &[f64]) -> Result<(Vec<CurvePoint>, Vec<MetricRow>)> {
    let mut curve = Vec::with_capacity(alphas.len());
    let mut rows = Vec::new();
    for &alpha in alphas {
        let mut cfg = config.clone();
        cfg.params.alpha_ebh = alpha;
        let res = run_experiment(&cfg)?;
        let s = &res.summary;
        curve.push(CurvePoint {
            alpha_ebh: alpha,
            alpha_bh: cfg.params.alpha_bh(),
            mean_fdr: s.mean_fdr,
            fdr_stderr: s.fdr_stderr,
            mean_power: s.mean_power,
            power_stderr: s.power_stderr,
            replications: s.replications,
            failed: s.failed,
        });
        rows.extend(res.rows);
    }
    Ok((curve, rows))
}

/// Single-split contrast: one train/calibration split per row, every test
/// entry of the row ranked against the whole calibration set, all p-values
/// pooled into one BH at `alpha_ebh`. No per-hypothesis calibration and no
/// derandomisation, so it carries no finite-sample guarantee here.
pub fn naive_baseline(
    network: &WeightedNetwork,
    mask: &MissingMask,
    thresholds: &HypothesisThresholds,
    params: &ClpParams,
    seed: u64,
) -> Result<Vec<(usize, usize)>> {
    let mut by_row = vec![Vec::new(); mask.n_rows()];
    for h in thresholds.entries() {
        by_row[h.row].push((h.col, h.threshold));
    }
    let mut coords = Vec::new();
    let mut pvalues = Vec::new();
    for (i0, tests) in by_row.iter().enumerate() {
        if tests.is_empty() {
            continue;
        }
        let mut rng = stream_rng(seed, Stream::Holdout, &[i0 as u64]);
        let Ok(split) = split_row(i0, mask, params.ratio_train, &mut rng) else {
            continue;
        };
        let candidates = omega_candidates(params.topology, &split, network.n_rows());
        let mut group = split.calib.clone();
        group.extend(tests.iter().map(|t| t.0));
        let preds = predict_group(network, mask, i0, &split.train, &candidates, &group, &params.kernel);
        let n_calib = split.calib.len();
        let calib: Vec<f64> = split
            .calib
            .iter()
            .zip(&preds.predictions)
            .map(|(&j, &a)| nonconformity(a, network.get(i0, j)))
            .collect();
        for (&(j0, c), &a) in tests.iter().zip(&preds.predictions[n_calib..]) {
            coords.push((i0, j0));
            pvalues.push(conformal_pvalue(&calib, nonconformity(a, c), &mut rng).value());
        }
    }
    let bh = bh_procedure(&pvalues, params.alpha_ebh);
    let mut rejected: Vec<_> = bh.rejected.iter().map(|&k| coords[k]).collect();
    rejected.sort_unstable();
    Ok(rejected)
}

/// Result of masking part of a complete network and testing the masked
/// entries.
#[derive(Debug, Clone)]
pub struct HoldoutReport {
    pub metrics: MetricRow,
    pub n_heldout: usize,
    pub output: ClpOutput,
    pub thresholds: HypothesisThresholds,
}

/// Hides each off-diagonal entry of a complete network with probability
/// `fraction`, tests `A > c` on the hidden entries and scores the
/// rejections against the hidden values.
pub fn run_holdout(
    network: &WeightedNetwork,
    fraction: f64,
    rule: &ThresholdRule,
    params: &ClpParams,
    seed: u64,
) -> Result<HoldoutReport> {
    crate::error::check_probability("holdout", fraction)?;
    let started = Instant::now();
    let shape = NetworkShape {
        n_rows: network.n_rows(),
        n_cols: network.n_cols(),
        topology: params.topology,
    };
    let t = Instant::now();
    let mask = generate_mask(&MissingSpec::Uniform { q: fraction }, shape, derive_seed(seed, Stream::Holdout, &[]))?;
    let observed = hide_missing(network, &mask)?;
    let coords = test_coordinates(&mask, params.topology);
    let thresholds = build_thresholds(network, &observed, &mask, &coords, rule, seed)?;
    let simulate_ms = ms(t);
    let t = Instant::now();
    let output = run_pipeline(&observed, &mask, &thresholds, params, seed, RunOptions::default())?;
    let pipeline_ms = ms(t);
    let t = Instant::now();
    let s = score(&output.rejection.rejected, &thresholds)?;
    let score_ms = ms(t);
    Ok(HoldoutReport {
        metrics: MetricRow {
            replication: 0,
            alpha_ebh: params.alpha_ebh,
            fdp: s.fdp,
            power: s.power,
            n_rejected: s.n_rejected,
            n_tests: thresholds.len(),
            n_alternatives: s.n_alternatives,
            runtime_ms: ms(started),
            simulate_ms,
            pipeline_ms,
            score_ms,
            baseline_fdp: None,
            baseline_power: None,
            error: None,
        },
        n_heldout: coords.len(),
        output,
        thresholds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::thresholds::Hypothesis;

    fn labelled(alts: &[bool]) -> HypothesisThresholds {
        HypothesisThresholds::from_hypotheses(
            alts.iter()
                .enumerate()
                .map(|(k, &a)| Hypothesis {
                    row: 0,
                    col: k + 1,
                    threshold: 0.0,
                    alternative: Some(a),
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn score_examples() {
        let mut alts = vec![true; 10];
        alts.extend([false; 5]);
        let h = labelled(&alts);
        let empty = score(&[], &h).unwrap();
        assert_eq!((empty.fdp, empty.power), (0.0, 0.0));

        let all: Vec<_> = (1..=10).map(|j| (0, j)).collect();
        let s = score(&all, &h).unwrap();
        assert_eq!((s.fdp, s.power), (0.0, 1.0));

        let s = score(&[(0, 1), (0, 2), (0, 3), (0, 11)], &h).unwrap();
        assert_eq!(s.fdp, 0.25);
        assert!((s.power - 0.3).abs() < 1e-15);
    }

    #[test]
    fn pure_null_power_is_zero() {
        let h = labelled(&[false, false]);
        assert_eq!(score(&[(0, 1)], &h).unwrap().power, 0.0);
    }

    #[test]
    fn score_rejects_foreign_coordinates() {
        let h = labelled(&[true]);
        assert!(matches!(score(&[(3, 3)], &h), Err(ClpError::Accounting(_))));
        assert!(matches!(score(&[(0, 1), (0, 1)], &h), Err(ClpError::Accounting(_))));
    }

    #[test]
    fn summary_is_plain_mean() {
        let row = |fdp, power| MetricRow {
            replication: 0,
            alpha_ebh: 0.2,
            fdp,
            power,
            n_rejected: 1,
            n_tests: 1,
            n_alternatives: 1,
            runtime_ms: 0.0,
            simulate_ms: 0.0,
            pipeline_ms: 0.0,
            score_ms: 0.0,
            baseline_fdp: None,
            baseline_power: None,
            error: None,
        };
        let mut failed = row(1.0, 1.0);
        failed.error = Some("x".into());
        let s = summarize(&[row(0.0, 0.5), row(0.5, 1.0), failed]);
        assert_eq!(s.mean_fdr, 0.25);
        assert_eq!(s.mean_power, 0.75);
        assert_eq!(s.failed, 1);
    }

    #[test]
    fn hide_missing_zeroes_masked_cells() {
        let net = WeightedNetwork::from_vec(3, 3, vec![1.0; 9], false).unwrap();
        let mask = MissingMask::from_fn(3, 3, false, |i, j| i == 0 && j == 2);
        let h = hide_missing(&net, &mask).unwrap();
        assert_eq!(h.get(0, 2), 0.0);
        assert_eq!(h.get(2, 0), 1.0);
    }

    #[test]
    fn presets() {
        let d = ExperimentConfig::preset(Preset::Desk);
        assert_eq!((d.n, d.replications, d.params.m_reps), (100, 50, 5));
        let p = ExperimentConfig::preset(Preset::Paper);
        assert_eq!((p.n, p.params.m_reps, p.params.r0), (200, 20, 25));
        assert_eq!(p.params.alpha_bh(), p.params.alpha_ebh / 2.0);
        assert_eq!(p.params.ratio_train, 0.4);
    }
}
