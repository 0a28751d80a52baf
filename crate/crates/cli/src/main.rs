//! `clp`: simulate networks, test missing links, benchmark and report.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use clp_core::graphon::BaseSetting;
use clp_core::harness::Preset;
use clp_core::{ClpError, InflationScale, Topology};

#[derive(Debug, Parser)]
#[command(name = "clp", version, about = "Conformal link prediction with FDR control")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    /// Only log errors.
    #[arg(short, long, global = true, conflicts_with = "verbose")]
    pub quiet: bool,
    /// Worker threads for the data-parallel stages (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON config for this command, or a run manifest to replay.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory, created if absent.
    #[arg(long, default_value = "clp-out")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FamilyArg {
    Setting1,
    Setting2,
    Setting3,
    ThresholdBinary,
    RescaledBernoulli,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum BaseArg {
    Setting1,
    Setting2,
    Setting3,
}

impl From<BaseArg> for BaseSetting {
    fn from(b: BaseArg) -> Self {
        match b {
            BaseArg::Setting1 => BaseSetting::Setting1,
            BaseArg::Setting2 => BaseSetting::Setting2,
            BaseArg::Setting3 => BaseSetting::Setting3,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum TopologyArg {
    Directed,
    Undirected,
    Bipartite,
}

impl From<TopologyArg> for Topology {
    fn from(t: TopologyArg) -> Self {
        match t {
            TopologyArg::Directed => Topology::Directed,
            TopologyArg::Undirected => Topology::Undirected,
            TopologyArg::Bipartite => Topology::Bipartite,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ScaleArg {
    /// e-values multiplied by c.
    Plain,
    /// e-values multiplied by c / alpha_bh.
    OverAlphaBh,
}

impl From<ScaleArg> for InflationScale {
    fn from(s: ScaleArg) -> Self {
        match s {
            ScaleArg::Plain => InflationScale::Plain,
            ScaleArg::OverAlphaBh => InflationScale::OverAlphaBh,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PresetArg {
    Desk,
    Paper,
}

impl From<PresetArg> for Preset {
    fn from(p: PresetArg) -> Self {
        match p {
            PresetArg::Desk => Preset::Desk,
            PresetArg::Paper => Preset::Paper,
        }
    }
}

/// Pipeline parameters; unset flags keep the config or default value.
#[derive(Debug, Args)]
pub struct ParamArgs {
    /// Level of the global e-BH test.
    #[arg(long)]
    pub alpha_ebh: Option<f64>,
    /// Level of the per-row BH tests (default: half of --alpha-ebh).
    #[arg(long)]
    pub alpha_bh: Option<f64>,
    /// Minimum calibration columns per hypothesis.
    #[arg(long)]
    pub r0: Option<usize>,
    /// Derandomisation repetitions per block.
    #[arg(long)]
    pub reps: Option<usize>,
    /// Fraction of each row's observed columns used for training.
    #[arg(long)]
    pub ratio_train: Option<f64>,
    /// Inflation constant for the derandomised e-values.
    #[arg(long)]
    pub inflate_c: Option<f64>,
    #[arg(long, value_enum)]
    pub inflate_scale: Option<ScaleArg>,
    #[arg(long, value_enum)]
    pub topology: Option<TopologyArg>,
}

/// Generator settings shared by `simulate` and `bench`.
#[derive(Debug, Args)]
pub struct ScenarioArgs {
    #[arg(long, value_enum)]
    pub family: Option<FamilyArg>,
    /// Cut-off of the threshold-binary family.
    #[arg(long, default_value_t = 0.5)]
    pub binary_cutoff: f64,
    /// Weighted graphon behind the rescaled-Bernoulli family.
    #[arg(long, value_enum, default_value = "setting1")]
    pub base: BaseArg,
    /// Half-width of the uniform edge noise.
    #[arg(long)]
    pub noise: Option<f64>,
    /// Number of nodes (rows).
    #[arg(long)]
    pub n: Option<usize>,
    /// Columns of a bipartite network.
    #[arg(long)]
    pub n_cols: Option<usize>,
    /// Every cell missing independently with this probability.
    #[arg(long, conflicts_with = "q_range")]
    pub q: Option<f64>,
    /// Per-cell missing rates drawn uniformly from LO,HI.
    #[arg(long, num_args = 2, value_delimiter = ',', value_names = ["LO", "HI"])]
    pub q_range: Option<Vec<f64>>,
    /// Shift FRACTION of the hypotheses below the truth by DELTA.
    #[arg(long, num_args = 2, value_delimiter = ',', value_names = ["FRACTION", "DELTA"], conflicts_with = "threshold")]
    pub signal: Option<Vec<f64>>,
    /// The same threshold for every hypothesis.
    #[arg(long)]
    pub threshold: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a network, its missingness mask, ground truth and thresholds.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long, value_enum)]
        topology: Option<TopologyArg>,
    },
    /// Test `A_ij > c_ij` on every missing entry of a network.
    Predict {
        #[command(flatten)]
        common: Common,
        /// Network CSV; `NA` or empty cells are missing.
        network: Option<PathBuf>,
        /// 0/1 CSV marking extra missing cells (1 = missing).
        #[arg(long)]
        mask: Option<PathBuf>,
        /// CSV of row,col,threshold[,alternative].
        #[arg(long, conflicts_with = "threshold")]
        thresholds: Option<PathBuf>,
        /// The same threshold for every missing entry.
        #[arg(long)]
        threshold: Option<f64>,
        #[command(flatten)]
        params: ParamArgs,
        /// Write the row splits and block plans to splits.json.
        #[arg(long)]
        dump_splits: bool,
        /// Write every local conformal p-value to pvalues.csv.
        #[arg(long)]
        dump_pvalues: bool,
    },
    /// Run Monte-Carlo replications (or a holdout study) and score them.
    Bench {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        preset: Option<PresetArg>,
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[command(flatten)]
        params: ParamArgs,
        #[arg(long)]
        replications: Option<usize>,
        /// Sweep of global levels, e.g. 0.1,0.2,0.3.
        #[arg(long, value_delimiter = ',')]
        alphas: Option<Vec<f64>>,
        /// Also score the single-split pooled BH contrast.
        #[arg(long)]
        baseline: bool,
        /// Complete network to mask and test instead of simulating.
        #[arg(long)]
        holdout: Option<PathBuf>,
        /// Fraction of entries hidden in a holdout study [default: 0.1].
        #[arg(long)]
        holdout_fraction: Option<f64>,
    },
    /// Render a plain-text FDR and power table from metrics.csv.
    Report {
        #[command(flatten)]
        common: Common,
        metrics: Option<PathBuf>,
    },
}

fn init_logging(verbose: u8, quiet: bool) {
    let level = match (quiet, verbose) {
        (true, _) => "error",
        (false, 0) => "warn",
        (false, 1) => "info",
        (false, 2) => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
}

fn init_threads(threads: Option<usize>) -> Result<(), ClpError> {
    let Some(n) = threads else { return Ok(()) };
    if n == 0 {
        return Err(ClpError::config("threads", "must be positive"));
    }
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| ClpError::Internal(format!("thread pool: {e}")))?;
    #[cfg(not(feature = "parallel"))]
    if n > 1 {
        log::warn!("built without the `parallel` feature; --threads {n} has no effect");
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(cli.verbose, cli.quiet);
    let result = init_threads(cli.threads).and_then(|()| commands::run(cli.command));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_user_error() { 2 } else { 1 })
        }
    }
}
