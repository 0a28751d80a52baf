use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use clp_core::graphon::{GraphonFamily, GraphonSpec};
use clp_core::harness::{
    run_experiment, run_holdout, run_pipeline, simulate_scenario, summarize, CurvePoint, ExperimentConfig,
    MetricRow, Preset, Summary,
};
use clp_core::io;
use clp_core::mask::{test_coordinates, MissingSpec};
use clp_core::thresholds::{HypothesisThresholds, ThresholdRule};
use clp_core::topology::symmetrize_input;
use clp_core::{ClpError, ClpParams, MissingMask, Result, RunOptions, Topology};

use crate::config::{self, BenchConfig, HoldoutSpec, PredictConfig, ReportConfig, SimulateConfig, ThresholdSource};
use crate::manifest::Manifest;
use crate::{Command, Common, FamilyArg, ParamArgs, ScenarioArgs};

const DEFAULT_SEED: u64 = 2024;
const DEFAULT_HOLDOUT_FRACTION: f64 = 0.1;
const DEFAULT_HOLDOUT_THRESHOLD: f64 = 0.2;

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Simulate {
            common,
            scenario,
            topology,
        } => {
            let mut cfg: SimulateConfig = load_or(&common, "simulate", SimulateConfig::default)?;
            let mut exp = cfg.experiment();
            apply_scenario(&mut exp, &scenario)?;
            cfg.graphon = exp.graphon;
            cfg.missing = exp.missing;
            cfg.thresholds = exp.thresholds;
            cfg.n = exp.n;
            cfg.n_cols = exp.n_cols;
            if let Some(t) = topology {
                cfg.topology = t.into();
            }
            if let Some(s) = common.seed {
                cfg.seed = s;
            }
            simulate(&cfg, &common.out)
        }
        Command::Predict {
            common,
            network,
            mask,
            thresholds,
            threshold,
            params,
            dump_splits,
            dump_pvalues,
        } => {
            let base = common.config.as_deref().map(|p| config::load::<PredictConfig>(p, "predict")).transpose()?;
            let source = match (thresholds, threshold) {
                (Some(path), _) => Some(ThresholdSource::File { path }),
                (None, Some(value)) => Some(ThresholdSource::Constant { value }),
                (None, None) => None,
            };
            let mut cfg = match base {
                Some(mut cfg) => {
                    if let Some(n) = network {
                        cfg.network = n;
                    }
                    if mask.is_some() {
                        cfg.mask = mask;
                    }
                    if let Some(s) = source {
                        cfg.thresholds = s;
                    }
                    cfg.dump_splits |= dump_splits;
                    cfg.dump_pvalues |= dump_pvalues;
                    cfg
                }
                None => PredictConfig {
                    network: network.ok_or_else(|| ClpError::config("network", "a network CSV is required"))?,
                    mask,
                    thresholds: source.ok_or_else(|| {
                        ClpError::config("thresholds", "pass --thresholds FILE or --threshold VALUE")
                    })?,
                    params: ClpParams::default(),
                    seed: DEFAULT_SEED,
                    dump_splits,
                    dump_pvalues,
                },
            };
            apply_params(&mut cfg.params, &params);
            if let Some(s) = common.seed {
                cfg.seed = s;
            }
            cfg.network = resolve("network", &cfg.network)?;
            cfg.mask = cfg.mask.as_deref().map(|m| resolve("mask", m)).transpose()?;
            if let ThresholdSource::File { path } = &mut cfg.thresholds {
                *path = resolve("thresholds", path)?;
            }
            predict(&cfg, &common.out)
        }
        Command::Bench {
            common,
            preset,
            scenario,
            params,
            replications,
            alphas,
            baseline,
            holdout,
            holdout_fraction,
        } => {
            let mut cfg: BenchConfig = load_or(&common, "bench", || BenchConfig {
                experiment: ExperimentConfig::preset(Preset::Desk),
                alphas: Vec::new(),
                holdout: None,
            })?;
            if let Some(p) = preset {
                if common.config.is_some() {
                    log::warn!("--preset replaces the experiment section of the config file");
                }
                cfg.experiment = ExperimentConfig::preset(p.into());
            }
            let exp = &mut cfg.experiment;
            apply_scenario(exp, &scenario)?;
            apply_params(&mut exp.params, &params);
            if let Some(r) = replications {
                exp.replications = r;
            }
            if let Some(s) = common.seed {
                exp.seed = s;
            }
            exp.baseline |= baseline;
            if let Some(a) = alphas {
                cfg.alphas = a;
            }
            if let Some(path) = holdout {
                cfg.holdout = Some(HoldoutSpec {
                    network: path,
                    fraction: DEFAULT_HOLDOUT_FRACTION,
                    thresholds: ThresholdRule::Constant {
                        value: DEFAULT_HOLDOUT_THRESHOLD,
                    },
                });
            }
            if let Some(h) = &mut cfg.holdout {
                h.network = resolve("holdout", &h.network)?;
                if let Some(f) = holdout_fraction {
                    h.fraction = f;
                }
                if let Some(value) = scenario.threshold {
                    h.thresholds = ThresholdRule::Constant { value };
                }
            } else if holdout_fraction.is_some() {
                return Err(ClpError::config("holdout_fraction", "only applies with --holdout"));
            }
            bench(&cfg, &common.out)
        }
        Command::Report { common, metrics } => {
            let mut cfg = match (&common.config, metrics) {
                (_, Some(metrics)) => ReportConfig { metrics },
                (Some(p), None) => config::load(p, "report")?,
                (None, None) => return Err(ClpError::config("metrics", "a metrics CSV is required")),
            };
            cfg.metrics = resolve("metrics", &cfg.metrics)?;
            report(&cfg, &common.out)
        }
    }
}

fn load_or<T: serde::de::DeserializeOwned>(common: &Common, command: &str, default: impl FnOnce() -> T) -> Result<T> {
    match &common.config {
        Some(p) => config::load(p, command),
        None => Ok(default()),
    }
}

/// Absolute path of an existing input, so manifests replay from any directory.
fn resolve(field: &str, path: &Path) -> Result<PathBuf> {
    fs::canonicalize(path).map_err(|e| ClpError::config(field, format!("cannot open {}: {e}", path.display())))
}

fn apply_scenario(exp: &mut ExperimentConfig, args: &ScenarioArgs) -> Result<()> {
    if let Some(f) = args.family {
        let family = match f {
            FamilyArg::Setting1 => GraphonFamily::Setting1,
            FamilyArg::Setting2 => GraphonFamily::Setting2,
            FamilyArg::Setting3 => GraphonFamily::Setting3,
            FamilyArg::ThresholdBinary => GraphonFamily::ThresholdBinary { t: args.binary_cutoff },
            FamilyArg::RescaledBernoulli => GraphonFamily::RescaledBernoulli { base: args.base.into() },
        };
        exp.graphon = GraphonSpec {
            family,
            noise: exp.graphon.noise,
        };
    }
    if let Some(h) = args.noise {
        exp.graphon.noise = Some(h);
    }
    if let Some(n) = args.n {
        exp.n = n;
    }
    if args.n_cols.is_some() {
        exp.n_cols = args.n_cols;
    }
    if let Some(q) = args.q {
        exp.missing = MissingSpec::Uniform { q };
    }
    if let Some(r) = &args.q_range {
        exp.missing = MissingSpec::HeterogeneousUniform { q_lo: r[0], q_hi: r[1] };
    }
    if let Some(s) = &args.signal {
        exp.thresholds = ThresholdRule::Signal {
            fraction: s[0],
            delta: s[1],
        };
    }
    if let Some(value) = args.threshold {
        exp.thresholds = ThresholdRule::Constant { value };
    }
    Ok(())
}

fn apply_params(params: &mut ClpParams, args: &ParamArgs) {
    if let Some(a) = args.alpha_ebh {
        params.alpha_ebh = a;
    }
    if args.alpha_bh.is_some() {
        params.alpha_bh = args.alpha_bh;
    }
    if let Some(r) = args.r0 {
        params.r0 = r;
    }
    if let Some(m) = args.reps {
        params.m_reps = m;
    }
    if let Some(r) = args.ratio_train {
        params.ratio_train = r;
    }
    if let Some(c) = args.inflate_c {
        params.inflation.c = c;
    }
    if let Some(s) = args.inflate_scale {
        params.inflation.scale = s.into();
    }
    if let Some(t) = args.topology {
        params.topology = t.into();
    }
}

fn prepare_out(out: &Path) -> Result<()> {
    fs::create_dir_all(out)?;
    Ok(())
}

fn simulate(cfg: &SimulateConfig, out: &Path) -> Result<()> {
    let exp = cfg.experiment();
    exp.validate()?;
    let sc = simulate_scenario(&exp, cfg.seed)?;
    prepare_out(out)?;
    io::write_network(&out.join("network.csv"), &sc.simulated.network, Some(&sc.mask))?;
    io::write_mask(&out.join("mask.csv"), &sc.mask)?;
    io::write_network(&out.join("truth.csv"), &sc.simulated.truth, None)?;
    io::write_thresholds(&out.join("thresholds.csv"), &sc.thresholds)?;
    log::info!(
        "simulated {}x{} network, {} missing entries under test",
        sc.simulated.network.n_rows(),
        sc.simulated.network.n_cols(),
        sc.thresholds.len()
    );
    let mut manifest = Manifest::new("simulate", Some(cfg.seed), cfg);
    manifest.outputs = ["network.csv", "mask.csv", "truth.csv", "thresholds.csv"].map(String::from).to_vec();
    manifest.write(out)
}

fn load_inputs(cfg: &PredictConfig) -> Result<(clp_core::WeightedNetwork, MissingMask)> {
    let topology = cfg.params.topology;
    let (network, na_mask) = io::read_network(&cfg.network, topology)?;
    let mask = match &cfg.mask {
        None => na_mask,
        Some(path) => {
            let extra = io::read_mask(path, topology)?;
            extra.check_shape(&network)?;
            MissingMask::from_fn(network.n_rows(), network.n_cols(), topology.has_diagonal(), |i, j| {
                na_mask.is_missing(i, j) || extra.is_missing(i, j)
            })
        }
    };
    if topology == Topology::Undirected {
        return symmetrize_input(&network, &mask);
    }
    Ok((network, mask))
}

fn predict(cfg: &PredictConfig, out: &Path) -> Result<()> {
    cfg.params.validate()?;
    let (network, mask) = load_inputs(cfg)?;
    let observed = clp_core::harness::hide_missing(&network, &mask)?;
    let thresholds = match &cfg.thresholds {
        ThresholdSource::File { path } => io::read_thresholds(path)?,
        ThresholdSource::Constant { value } => {
            HypothesisThresholds::constant(&test_coordinates(&mask, cfg.params.topology), *value)?
        }
    };
    if thresholds.is_empty() {
        log::warn!("no missing entries to test; the rejection set is empty");
    }
    let options = RunOptions {
        parallel: true,
        keep_pvalues: cfg.dump_pvalues,
        keep_splits: cfg.dump_splits,
    };
    let output = run_pipeline(&observed, &mask, &thresholds, &cfg.params, cfg.seed, options)?;
    log::info!(
        "rejected {} of {} hypotheses at alpha_ebh = {}",
        output.rejection.rejected.len(),
        output.rejection.n_total,
        cfg.params.alpha_ebh
    );

    prepare_out(out)?;
    let mut outputs = vec!["rejections.json", "evalues.csv", "diagnostics.json"];
    io::write_string(&out.join("rejections.json"), &io::rejections_json(&output, &thresholds)?)?;
    io::write_evalues(&out.join("evalues.csv"), &output.evalues)?;
    io::write_string(&out.join("diagnostics.json"), &io::diagnostics_json(&output.diagnostics)?)?;
    if cfg.dump_splits {
        io::write_string(&out.join("splits.json"), &serde_json::to_string_pretty(&output.splits)?)?;
        outputs.push("splits.json");
    }
    if cfg.dump_pvalues {
        io::write_pvalues(&out.join("pvalues.csv"), &output.pvalues)?;
        outputs.push("pvalues.csv");
    }

    let mut manifest = Manifest::new("predict", Some(cfg.seed), cfg);
    manifest.input(&cfg.network)?;
    if let Some(m) = &cfg.mask {
        manifest.input(m)?;
    }
    if let ThresholdSource::File { path } = &cfg.thresholds {
        manifest.input(path)?;
    }
    manifest.outputs = outputs.into_iter().map(String::from).collect();
    manifest.write(out)
}

/// `MetricRow` without its timings; those go to a separate file so the
/// metrics table is reproducible byte for byte.
#[derive(Serialize)]
struct MetricLine {
    replication: usize,
    alpha_ebh: f64,
    fdp: f64,
    power: f64,
    n_rejected: usize,
    n_tests: usize,
    n_alternatives: usize,
    baseline_fdp: Option<f64>,
    baseline_power: Option<f64>,
    error: Option<String>,
}

#[derive(Serialize)]
struct TimingLine {
    replication: usize,
    alpha_ebh: f64,
    runtime_ms: f64,
    simulate_ms: f64,
    pipeline_ms: f64,
    score_ms: f64,
}

fn holdout_rows(spec: &HoldoutSpec, exp: &ExperimentConfig) -> Result<Vec<MetricRow>> {
    let (network, mask) = io::read_network(&spec.network, exp.params.topology)?;
    if mask.count_missing() > 0 {
        return Err(ClpError::Validation(format!(
            "holdout network {} must be complete, found {} missing cells",
            spec.network.display(),
            mask.count_missing()
        )));
    }
    let rows = (0..exp.replications)
        .map(|rep| match run_holdout(&network, spec.fraction, &spec.thresholds, &exp.params, exp.replication_seed(rep)) {
            Ok(r) => Ok(MetricRow {
                replication: rep,
                ..r.metrics
            }),
            Err(e) if e.is_user_error() => Err(e),
            Err(e) => Ok(MetricRow {
                replication: rep,
                alpha_ebh: exp.params.alpha_ebh,
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
                error: Some(e.to_string()),
            }),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(rows)
}

#[derive(Serialize)]
struct SummaryFile<'a> {
    format: String,
    summaries: &'a [Summary],
}

fn bench(cfg: &BenchConfig, out: &Path) -> Result<()> {
    cfg.experiment.validate()?;
    if let Some(h) = &cfg.holdout {
        clp_core::error::check_probability("holdout.fraction", h.fraction)?;
        h.thresholds.validate()?;
    }
    let alphas = if cfg.alphas.is_empty() {
        vec![cfg.experiment.params.alpha_ebh]
    } else {
        cfg.alphas.clone()
    };
    let mut rows = Vec::new();
    let mut summaries = Vec::new();
    let mut curve = Vec::new();
    for &alpha in &alphas {
        let mut exp = cfg.experiment.clone();
        exp.params.alpha_ebh = alpha;
        exp.params.validate()?;
        let batch = match &cfg.holdout {
            Some(h) => holdout_rows(h, &exp)?,
            None => run_experiment(&exp)?.rows,
        };
        let s = summarize(&batch);
        log::info!(
            "alpha_ebh {alpha}: FDR {:.4}, power {:.4} over {} replications ({} failed)",
            s.mean_fdr,
            s.mean_power,
            s.replications,
            s.failed
        );
        curve.push(CurvePoint {
            alpha_ebh: alpha,
            alpha_bh: exp.params.alpha_bh(),
            mean_fdr: s.mean_fdr,
            fdr_stderr: s.fdr_stderr,
            mean_power: s.mean_power,
            power_stderr: s.power_stderr,
            replications: s.replications,
            failed: s.failed,
        });
        summaries.push(s);
        rows.extend(batch);
    }

    prepare_out(out)?;
    let lines: Vec<MetricLine> = rows
        .iter()
        .map(|r| MetricLine {
            replication: r.replication,
            alpha_ebh: r.alpha_ebh,
            fdp: r.fdp,
            power: r.power,
            n_rejected: r.n_rejected,
            n_tests: r.n_tests,
            n_alternatives: r.n_alternatives,
            baseline_fdp: r.baseline_fdp,
            baseline_power: r.baseline_power,
            error: r.error.clone(),
        })
        .collect();
    let timings: Vec<TimingLine> = rows
        .iter()
        .map(|r| TimingLine {
            replication: r.replication,
            alpha_ebh: r.alpha_ebh,
            runtime_ms: r.runtime_ms,
            simulate_ms: r.simulate_ms,
            pipeline_ms: r.pipeline_ms,
            score_ms: r.score_ms,
        })
        .collect();
    io::write_records(&out.join("metrics.csv"), "metrics", &lines)?;
    io::write_records(&out.join("timings.csv"), "timings", &timings)?;
    let summary = SummaryFile {
        format: format!("clp summary v{}", io::FORMAT_VERSION),
        summaries: &summaries,
    };
    io::write_string(&out.join("summary.json"), &serde_json::to_string_pretty(&summary)?)?;
    let mut outputs = vec!["metrics.csv", "summary.json"];
    if !cfg.alphas.is_empty() {
        io::write_curves(&out.join("curves.csv"), &curve)?;
        outputs.push("curves.csv");
    }

    let mut manifest = Manifest::new("bench", Some(cfg.experiment.seed), cfg);
    if let Some(h) = &cfg.holdout {
        manifest.input(&h.network)?;
    }
    manifest.outputs = outputs.into_iter().map(String::from).collect();
    manifest.nondeterministic = vec!["timings.csv".into()];
    manifest.write(out)
}

/// Plain-text FDR and power per global level, levels ascending.
pub fn render_report(rows: &[MetricRow]) -> String {
    let mut alphas: Vec<f64> = rows.iter().map(|r| r.alpha_ebh).collect();
    alphas.sort_by(f64::total_cmp);
    alphas.dedup();
    let summaries: Vec<Summary> = alphas
        .iter()
        .map(|&a| {
            let group: Vec<MetricRow> = rows.iter().filter(|r| r.alpha_ebh == a).cloned().collect();
            summarize(&group)
        })
        .collect();
    let with_baseline = summaries.iter().any(|s| s.baseline_fdr.is_some());

    let mut text = format!("# clp report v{}\n", io::FORMAT_VERSION);
    text.push_str(&format!(
        "{:>9}  {:>5}  {:>6}  {:>8}  {:>8}  {:>10}  {:>8}  {:>12}",
        "alpha_ebh", "reps", "failed", "mean_fdr", "fdr_se", "mean_power", "power_se", "mean_rejects"
    ));
    if with_baseline {
        text.push_str(&format!("  {:>12}  {:>14}", "baseline_fdr", "baseline_power"));
    }
    text.push('\n');
    for s in &summaries {
        text.push_str(&format!(
            "{:>9.3}  {:>5}  {:>6}  {:>8.4}  {:>8.4}  {:>10.4}  {:>8.4}  {:>12.2}",
            s.alpha_ebh,
            s.replications,
            s.failed,
            s.mean_fdr,
            s.fdr_stderr,
            s.mean_power,
            s.power_stderr,
            s.mean_rejected
        ));
        if with_baseline {
            let cell = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
            text.push_str(&format!("  {:>12}  {:>14}", cell(s.baseline_fdr), cell(s.baseline_power)));
        }
        text.push('\n');
    }
    text
}

fn report(cfg: &ReportConfig, out: &Path) -> Result<()> {
    let rows = io::read_metrics(&cfg.metrics)?;
    if rows.is_empty() {
        return Err(ClpError::Validation(format!("{} has no metric rows", cfg.metrics.display())));
    }
    let text = render_report(&rows);
    prepare_out(out)?;
    io::write_string(&out.join("report.txt"), &text)?;
    print!("{text}");
    let mut manifest = Manifest::new("report", None, cfg);
    manifest.input(&cfg.metrics)?;
    manifest.outputs = vec!["report.txt".into()];
    manifest.write(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use clp_core::Inflation;

    fn row(alpha: f64, fdp: f64, power: f64) -> MetricRow {
        MetricRow {
            replication: 0,
            alpha_ebh: alpha,
            fdp,
            power,
            n_rejected: 3,
            n_tests: 10,
            n_alternatives: 4,
            runtime_ms: 0.0,
            simulate_ms: 0.0,
            pipeline_ms: 0.0,
            score_ms: 0.0,
            baseline_fdp: None,
            baseline_power: None,
            error: None,
        }
    }

    #[test]
    fn report_groups_levels_in_order() {
        let rows = [row(0.3, 0.2, 1.0), row(0.1, 0.0, 0.5), row(0.1, 0.5, 0.25)];
        let text = render_report(&rows);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 4);
        assert!(lines[2].trim_start().starts_with("0.100"));
        assert!(lines[2].contains("0.2500") && lines[2].contains("0.3750"));
        assert!(lines[3].trim_start().starts_with("0.300"));
    }

    #[test]
    fn params_override_only_given_flags() {
        let mut p = ClpParams::default();
        let args = ParamArgs {
            alpha_ebh: Some(0.1),
            alpha_bh: None,
            r0: None,
            reps: Some(3),
            ratio_train: None,
            inflate_c: Some(2.0),
            inflate_scale: None,
            topology: None,
        };
        apply_params(&mut p, &args);
        assert_eq!((p.alpha_ebh, p.m_reps, p.r0), (0.1, 3, 25));
        assert_eq!(p.alpha_bh(), 0.05);
        assert_eq!(p.inflation, Inflation { c: 2.0, ..Inflation::default() });
    }
}
