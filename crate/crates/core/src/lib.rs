//! Conformal link prediction with FDR control on partially observed
//! networks.
//!
//! The pipeline predicts each missing entry from fully observed rows,
//! turns per-row conformal BH decisions into e-values, averages them over
//! random splits and runs e-BH over every hypothesis at once.

pub mod conformal;
pub mod error;
pub mod estimator;
pub mod evalue;
pub mod graphon;
pub mod harness;
pub mod io;
pub mod mask;
pub mod network;
pub mod par;
pub mod rng;
pub mod split;
pub mod thresholds;
pub mod topology;

/// Library version recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub use error::{ClpError, Result};
pub use evalue::{clp_global, clp_global_with, ClpOutput, ClpParams, GlobalRejection, Inflation, InflationScale, RunOptions};
pub use network::{MissingMask, Topology, WeightedNetwork};
