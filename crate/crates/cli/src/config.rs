//! Resolved per-command configuration. A config file is either one of these
//! structs as JSON or a run manifest wrapping one.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use clp_core::graphon::GraphonSpec;
use clp_core::harness::{ExperimentConfig, Preset};
use clp_core::mask::MissingSpec;
use clp_core::thresholds::ThresholdRule;
use clp_core::{ClpError, ClpParams, Topology};

use crate::manifest::MANIFEST_FORMAT;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub graphon: GraphonSpec,
    pub missing: MissingSpec,
    pub thresholds: ThresholdRule,
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_cols: Option<usize>,
    #[serde(default)]
    pub topology: Topology,
    pub seed: u64,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        let e = ExperimentConfig::preset(Preset::Desk);
        Self {
            graphon: e.graphon,
            missing: e.missing,
            thresholds: e.thresholds,
            n: e.n,
            n_cols: None,
            topology: Topology::Directed,
            seed: e.seed,
        }
    }
}

impl SimulateConfig {
    pub fn experiment(&self) -> ExperimentConfig {
        ExperimentConfig {
            graphon: self.graphon.clone(),
            missing: self.missing.clone(),
            thresholds: self.thresholds.clone(),
            n: self.n,
            n_cols: self.n_cols,
            params: ClpParams {
                topology: self.topology,
                ..ClpParams::default()
            },
            replications: 1,
            seed: self.seed,
            preset: None,
            baseline: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case")]
pub enum ThresholdSource {
    File { path: PathBuf },
    Constant { value: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictConfig {
    pub network: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<PathBuf>,
    pub thresholds: ThresholdSource,
    #[serde(default)]
    pub params: ClpParams,
    pub seed: u64,
    #[serde(default)]
    pub dump_splits: bool,
    #[serde(default)]
    pub dump_pvalues: bool,
}

/// Masks a random fraction of a complete network and tests the hidden cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HoldoutSpec {
    pub network: PathBuf,
    pub fraction: f64,
    pub thresholds: ThresholdRule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    /// With `holdout` set only `params`, `replications` and `seed` are used.
    pub experiment: ExperimentConfig,
    /// α_eBH sweep; empty runs once at `experiment.params.alpha_ebh`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub alphas: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub holdout: Option<HoldoutSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportConfig {
    pub metrics: PathBuf,
}

/// Known tags of the internally tagged config enums, checked before serde
/// so the error names the field rather than its parent.
const TAGS: &[(&str, &str, &[&str])] = &[
    (
        "graphon",
        "family",
        &["setting1", "setting2", "setting3", "threshold-binary", "rescaled-bernoulli", "custom"],
    ),
    ("missing", "mode", &["uniform", "heterogeneous-uniform", "per-entry", "block", "staggered"]),
    ("thresholds", "rule", &["constant", "signal", "quantile"]),
];

fn check_tags(value: &Value, prefix: &str) -> Result<(), ClpError> {
    for (section, tag, known) in TAGS {
        let Some(found) = value.get(section).and_then(|s| s.get(tag)) else {
            continue;
        };
        let ok = found.as_str().is_some_and(|t| known.contains(&t));
        if !ok {
            return Err(ClpError::config(
                format!("{prefix}{section}.{tag}"),
                format!("unknown tag {found}; expected one of {}", known.join(", ")),
            ));
        }
    }
    Ok(())
}

/// Loads a config file for `command`, unwrapping a manifest if given one.
pub fn load<T: DeserializeOwned>(path: &Path, command: &str) -> Result<T, ClpError> {
    let text = fs::read_to_string(path)
        .map_err(|e| ClpError::config("config", format!("cannot read {}: {e}", path.display())))?;
    let mut value: Value = serde_json::from_str(&text)
        .map_err(|e| ClpError::config("config", format!("{} is not valid JSON: {e}", path.display())))?;
    if value.get("format").and_then(Value::as_str) == Some(MANIFEST_FORMAT) {
        let recorded = value.get("command").and_then(Value::as_str).unwrap_or("");
        if recorded != command {
            return Err(ClpError::config(
                "command",
                format!("manifest was written by `{recorded}`, not `{command}`"),
            ));
        }
        value = value
            .get_mut("config")
            .map(Value::take)
            .ok_or_else(|| ClpError::config("config", "manifest has no config section"))?;
    }
    check_tags(&value, "")?;
    if let Some(e) = value.get("experiment") {
        check_tags(e, "experiment.")?;
    }
    if let Some(h) = value.get("holdout") {
        check_tags(h, "holdout.")?;
    }
    serde_path_to_error::deserialize(value).map_err(|e| {
        let field = e.path().to_string();
        ClpError::config(if field == "." { "config".into() } else { field }, e.into_inner().to_string())
    })
}
