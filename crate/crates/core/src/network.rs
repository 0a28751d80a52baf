//! Dense network and missingness containers.

use serde::{Deserialize, Serialize};

use crate::error::{ClpError, Result};

/// Orientation of the network being analysed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Topology {
    #[default]
    Directed,
    Undirected,
    Bipartite,
}

impl Topology {
    /// Square topologies have no self-loops, so the diagonal is never read.
    pub fn has_diagonal(self) -> bool {
        matches!(self, Topology::Bipartite)
    }
}

impl std::str::FromStr for Topology {
    type Err = ClpError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "directed" => Ok(Topology::Directed),
            "undirected" => Ok(Topology::Undirected),
            "bipartite" => Ok(Topology::Bipartite),
            other => Err(ClpError::config(
                "topology",
                format!("unknown topology `{other}` (expected directed, undirected or bipartite)"),
            )),
        }
    }
}

/// Dense row-major matrix of edge weights.
///
/// For square networks without self-loops the diagonal holds a sentinel
/// (zero) that no iterator or estimator reads.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedNetwork {
    n_rows: usize,
    n_cols: usize,
    weights: Vec<f64>,
    diagonal_defined: bool,
}

impl WeightedNetwork {
    pub fn from_rows(rows: Vec<Vec<f64>>, diagonal_defined: bool) -> Result<Self> {
        let n_rows = rows.len();
        if n_rows == 0 {
            return Err(ClpError::Validation("network has no rows".into()));
        }
        let n_cols = rows[0].len();
        if n_cols == 0 {
            return Err(ClpError::Validation("network has no columns".into()));
        }
        let mut weights = Vec::with_capacity(n_rows * n_cols);
        for (i, row) in rows.into_iter().enumerate() {
            if row.len() != n_cols {
                return Err(ClpError::Validation(format!(
                    "row {i} has {} columns, expected {n_cols}",
                    row.len()
                )));
            }
            weights.extend(row);
        }
        Self::from_vec(n_rows, n_cols, weights, diagonal_defined)
    }

    pub fn from_vec(
        n_rows: usize,
        n_cols: usize,
        mut weights: Vec<f64>,
        diagonal_defined: bool,
    ) -> Result<Self> {
        if n_rows == 0 || n_cols == 0 || weights.len() != n_rows * n_cols {
            return Err(ClpError::Validation(format!(
                "weight buffer of length {} does not match shape {n_rows}x{n_cols}",
                weights.len()
            )));
        }
        if !diagonal_defined && n_rows != n_cols {
            return Err(ClpError::Validation(
                "networks without a diagonal must be square".into(),
            ));
        }
        for i in 0..n_rows {
            for j in 0..n_cols {
                let w = &mut weights[i * n_cols + j];
                if !diagonal_defined && i == j {
                    *w = 0.0;
                } else if !w.is_finite() {
                    return Err(ClpError::Validation(format!(
                        "weight at ({i}, {j}) is not finite"
                    )));
                }
            }
        }
        Ok(Self {
            n_rows,
            n_cols,
            weights,
            diagonal_defined,
        })
    }

    #[inline]
    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    #[inline]
    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    #[inline]
    pub fn diagonal_defined(&self) -> bool {
        self.diagonal_defined
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.weights[i * self.n_cols + j]
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.weights[i * self.n_cols..(i + 1) * self.n_cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.weights
    }

    /// Iterates over every defined `(i, j, weight)` cell.
    pub fn cells(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        let skip_diag = !self.diagonal_defined;
        (0..self.n_rows).flat_map(move |i| {
            (0..self.n_cols)
                .filter(move |&j| !(skip_diag && i == j))
                .map(move |j| (i, j, self.get(i, j)))
        })
    }

    pub fn is_symmetric(&self) -> bool {
        if self.n_rows != self.n_cols {
            return false;
        }
        (0..self.n_rows).all(|i| (i + 1..self.n_cols).all(|j| self.get(i, j) == self.get(j, i)))
    }

    /// Returns a copy with every weight multiplied by `s`.
    pub fn scaled(&self, s: f64) -> Result<Self> {
        let weights = self.weights.iter().map(|w| w * s).collect();
        Self::from_vec(self.n_rows, self.n_cols, weights, self.diagonal_defined)
    }
}

/// Latent node positions of a simulated network. Used only by oracles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentPositions {
    pub xi: Vec<f64>,
    pub zeta: Option<Vec<f64>>,
}

impl LatentPositions {
    /// Latent position of column `j`: `zeta[j]` for bipartite networks, `xi[j]` otherwise.
    pub fn column(&self, j: usize) -> f64 {
        match &self.zeta {
            Some(z) => z[j],
            None => self.xi[j],
        }
    }
}

/// Binary missingness indicator (`true` = unobserved).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MissingMask {
    n_rows: usize,
    n_cols: usize,
    missing: Vec<bool>,
    diagonal_defined: bool,
}

impl MissingMask {
    pub fn new(n_rows: usize, n_cols: usize, diagonal_defined: bool) -> Self {
        Self {
            n_rows,
            n_cols,
            missing: vec![false; n_rows * n_cols],
            diagonal_defined,
        }
    }

    pub fn from_fn(
        n_rows: usize,
        n_cols: usize,
        diagonal_defined: bool,
        mut f: impl FnMut(usize, usize) -> bool,
    ) -> Self {
        let mut mask = Self::new(n_rows, n_cols, diagonal_defined);
        for i in 0..n_rows {
            for j in 0..n_cols {
                if diagonal_defined || i != j {
                    mask.missing[i * n_cols + j] = f(i, j);
                }
            }
        }
        mask
    }

    /// An all-observed mask matching the network's shape.
    pub fn observed_like(network: &WeightedNetwork) -> Self {
        Self::new(network.n_rows(), network.n_cols(), network.diagonal_defined())
    }

    #[inline]
    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    #[inline]
    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    #[inline]
    pub fn diagonal_defined(&self) -> bool {
        self.diagonal_defined
    }

    #[inline]
    pub fn is_missing(&self, i: usize, j: usize) -> bool {
        self.missing[i * self.n_cols + j]
    }

    /// True when `(i, j)` carries an observed weight. Diagonal cells of
    /// square networks are never observed.
    #[inline]
    pub fn is_observed(&self, i: usize, j: usize) -> bool {
        !self.missing[i * self.n_cols + j] && (self.diagonal_defined || i != j)
    }

    pub fn set_missing(&mut self, i: usize, j: usize, value: bool) {
        if self.diagonal_defined || i != j {
            self.missing[i * self.n_cols + j] = value;
        }
    }

    pub fn count_missing(&self) -> usize {
        self.missing.iter().filter(|&&m| m).count()
    }

    /// Number of cells that can be missing (off-diagonal for square networks).
    pub fn n_cells(&self) -> usize {
        if self.diagonal_defined {
            self.n_rows * self.n_cols
        } else {
            self.n_rows * self.n_cols - self.n_rows.min(self.n_cols)
        }
    }

    pub fn missing_fraction(&self) -> f64 {
        self.count_missing() as f64 / self.n_cells().max(1) as f64
    }

    pub fn is_symmetric(&self) -> bool {
        self.n_rows == self.n_cols
            && (0..self.n_rows)
                .all(|i| (i + 1..self.n_cols).all(|j| self.is_missing(i, j) == self.is_missing(j, i)))
    }

    pub fn check_shape(&self, network: &WeightedNetwork) -> Result<()> {
        if self.n_rows != network.n_rows() || self.n_cols != network.n_cols() {
            return Err(ClpError::Validation(format!(
                "mask shape {}x{} does not match network shape {}x{}",
                self.n_rows,
                self.n_cols,
                network.n_rows(),
                network.n_cols()
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_finite_weights() {
        let err = WeightedNetwork::from_rows(vec![vec![0.0, f64::NAN], vec![1.0, 0.0]], false);
        assert!(err.is_err());
    }

    #[test]
    fn diagonal_sentinel_is_ignored() {
        let net = WeightedNetwork::from_rows(vec![vec![f64::NAN, 2.0], vec![3.0, 9.0]], false)
            .unwrap();
        assert_eq!(net.get(0, 0), 0.0);
        let cells: Vec<_> = net.cells().collect();
        assert_eq!(cells, vec![(0, 1, 2.0), (1, 0, 3.0)]);
    }

    #[test]
    fn mask_never_marks_diagonal() {
        let mask = MissingMask::from_fn(3, 3, false, |_, _| true);
        assert_eq!(mask.count_missing(), 6);
        assert!(!mask.is_observed(1, 1));
        assert!(!mask.is_missing(1, 1));
    }
}
