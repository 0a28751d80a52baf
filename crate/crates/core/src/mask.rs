//! Missingness generators and the test-set enumeration.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_probability, ClpError, Result};
use crate::graphon::NetworkShape;
use crate::network::{MissingMask, Topology};
use crate::rng::{stream_rng, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum MissingSpec {
    /// Every cell missing independently with probability `q`.
    Uniform { q: f64 },
    /// Per-cell rates `q_ij ~ Uniform[q_lo, q_hi]`, then `M_ij ~ Bernoulli(q_ij)`.
    HeterogeneousUniform { q_lo: f64, q_hi: f64 },
    /// Explicit per-cell missing probabilities.
    PerEntry { probs: Vec<Vec<f64>> },
    /// A random `row_fraction x col_fraction` rectangle is missing.
    Block { row_fraction: f64, col_fraction: f64 },
    /// A random `row_fraction` of rows each go missing from a random
    /// adoption column (no earlier than `earliest * n_cols`) onward.
    Staggered { row_fraction: f64, earliest: f64 },
}

impl MissingSpec {
    pub fn validate(&self, shape: NetworkShape) -> Result<()> {
        match self {
            MissingSpec::Uniform { q } => check_probability("missing.q", *q),
            MissingSpec::HeterogeneousUniform { q_lo, q_hi } => {
                check_probability("missing.q_lo", *q_lo)?;
                check_probability("missing.q_hi", *q_hi)?;
                if q_lo > q_hi {
                    return Err(ClpError::config("missing.q_lo", "q_lo must not exceed q_hi"));
                }
                Ok(())
            }
            MissingSpec::PerEntry { probs } => {
                if probs.len() != shape.n_rows || probs.iter().any(|r| r.len() != shape.n_cols) {
                    return Err(ClpError::config(
                        "missing.probs",
                        format!("expected a {}x{} matrix", shape.n_rows, shape.n_cols),
                    ));
                }
                for p in probs.iter().flatten() {
                    check_probability("missing.probs", *p)?;
                }
                Ok(())
            }
            MissingSpec::Block {
                row_fraction,
                col_fraction,
            } => {
                check_probability("missing.row_fraction", *row_fraction)?;
                check_probability("missing.col_fraction", *col_fraction)
            }
            MissingSpec::Staggered {
                row_fraction,
                earliest,
            } => {
                check_probability("missing.row_fraction", *row_fraction)?;
                check_probability("missing.earliest", *earliest)
            }
        }
    }
}

pub fn generate_mask(spec: &MissingSpec, shape: NetworkShape, seed: u64) -> Result<MissingMask> {
    spec.validate(shape)?;
    let NetworkShape {
        n_rows,
        n_cols,
        topology,
    } = shape;
    let diag = topology.has_diagonal();
    let undirected = topology == Topology::Undirected;
    let mut rng = stream_rng(seed, Stream::Mask, &[]);
    let mut mask = MissingMask::new(n_rows, n_cols, diag);

    let set = |mask: &mut MissingMask, i: usize, j: usize, v: bool| {
        mask.set_missing(i, j, v);
        if undirected {
            mask.set_missing(j, i, v);
        }
    };
    let cells = |i: usize| {
        let start = if undirected { i + 1 } else { 0 };
        (start..n_cols).filter(move |&j| diag || i != j)
    };

    match spec {
        MissingSpec::Uniform { q } => {
            for i in 0..n_rows {
                for j in cells(i) {
                    let m = rng.gen::<f64>() < *q;
                    set(&mut mask, i, j, m);
                }
            }
        }
        MissingSpec::HeterogeneousUniform { q_lo, q_hi } => {
            for i in 0..n_rows {
                for j in cells(i) {
                    let q = q_lo + (q_hi - q_lo) * rng.gen::<f64>();
                    let m = rng.gen::<f64>() < q;
                    set(&mut mask, i, j, m);
                }
            }
        }
        MissingSpec::PerEntry { probs } => {
            for (i, row) in probs.iter().enumerate() {
                for j in cells(i) {
                    let m = rng.gen::<f64>() < row[j];
                    set(&mut mask, i, j, m);
                }
            }
        }
        MissingSpec::Block {
            row_fraction,
            col_fraction,
        } => {
            let rows = random_subset(&mut rng, n_rows, *row_fraction);
            let cols = random_subset(&mut rng, n_cols, *col_fraction);
            for &i in &rows {
                for &j in &cols {
                    if diag || i != j {
                        set(&mut mask, i, j, true);
                    }
                }
            }
        }
        MissingSpec::Staggered {
            row_fraction,
            earliest,
        } => {
            let rows = random_subset(&mut rng, n_rows, *row_fraction);
            let first = ((earliest * n_cols as f64).floor() as usize).min(n_cols - 1);
            for &i in &rows {
                let start = rng.gen_range(first..n_cols);
                for j in start..n_cols {
                    if diag || i != j {
                        set(&mut mask, i, j, true);
                    }
                }
            }
        }
    }
    Ok(mask)
}

fn random_subset(rng: &mut impl Rng, n: usize, fraction: f64) -> Vec<usize> {
    let k = ((fraction * n as f64).round() as usize).min(n);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx.truncate(k);
    idx.sort_unstable();
    idx
}

/// The unobserved coordinates in row-major order. Undirected networks list
/// each missing dyad once, as `(i, j)` with `i < j`.
pub fn test_coordinates(mask: &MissingMask, topology: Topology) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for i in 0..mask.n_rows() {
        for j in 0..mask.n_cols() {
            if topology == Topology::Undirected && j <= i {
                continue;
            }
            if mask.is_missing(i, j) {
                out.push((i, j));
            }
        }
    }
    out
}
