//! Graphon families and the simulated-network generator.
//!
//! Weighted families draw `A[i][j] = f(xi_i, xi_j) + eps` with
//! `eps ~ Uniform[-h, h]`; the binary family thresholds `(xi_i + xi_j)/2 + eps`
//! and the rescaled-Bernoulli family min-max rescales a weighted draw into
//! edge probabilities before sampling.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ClpError, Result};
use crate::network::{LatentPositions, Topology, WeightedNetwork};
use crate::rng::{stream_rng, Stream};

/// Weighted base graphons.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaseSetting {
    /// Low-rank and smooth: `u^3 + 2 v^3`.
    Setting1,
    /// High-rank: `max(u, v)^(2/3) cos(0.1 / ((2u - 1/2)^3 + (v - 1/2)^3 + 0.01))`.
    Setting2,
    /// Non-smooth: `(3u^2 + v^2) cos(1 / (2u^4 + v^4))`.
    Setting3,
}

impl BaseSetting {
    pub fn eval(self, u: f64, v: f64) -> f64 {
        match self {
            BaseSetting::Setting1 => u.powi(3) + 2.0 * v.powi(3),
            BaseSetting::Setting2 => {
                let denom = (2.0 * u - 0.5).powi(3) + (v - 0.5).powi(3) + 0.01;
                let denom = if denom == 0.0 { f64::MIN_POSITIVE } else { denom };
                u.max(v).powf(2.0 / 3.0) * (0.1 / denom).cos()
            }
            BaseSetting::Setting3 => {
                let amp = 3.0 * u * u + v * v;
                let inner = 2.0 * u.powi(4) + v.powi(4);
                if inner == 0.0 {
                    // amplitude vanishes at the origin and cos is bounded
                    0.0
                } else {
                    amp * (1.0 / inner).cos()
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum GraphonFamily {
    Setting1,
    Setting2,
    Setting3,
    /// `A = 1{(u + v)/2 + eps > t}`.
    ThresholdBinary { t: f64 },
    /// Bernoulli edges with probabilities min-max rescaled from a weighted draw.
    RescaledBernoulli { base: BaseSetting },
    /// Step-function graphon: `blocks[a][b]` for `u` in block `a`, `v` in block `b`.
    Custom { blocks: Vec<Vec<f64>> },
}

/// Graphon family plus the additive noise half-width.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphonSpec {
    #[serde(flatten)]
    pub family: GraphonFamily,
    /// Half-width `h` of the uniform noise; family default when absent
    /// (0.25 for the binary family, 0.1 otherwise).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<f64>,
}

impl GraphonSpec {
    pub fn new(family: GraphonFamily) -> Self {
        Self { family, noise: None }
    }

    pub fn with_noise(mut self, h: f64) -> Self {
        self.noise = Some(h);
        self
    }

    pub fn setting(base: BaseSetting) -> Self {
        Self::new(match base {
            BaseSetting::Setting1 => GraphonFamily::Setting1,
            BaseSetting::Setting2 => GraphonFamily::Setting2,
            BaseSetting::Setting3 => GraphonFamily::Setting3,
        })
    }

    pub fn noise_half_width(&self) -> f64 {
        self.noise.unwrap_or(match self.family {
            GraphonFamily::ThresholdBinary { .. } => 0.25,
            _ => 0.1,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let h = self.noise_half_width();
        if !(h.is_finite() && h >= 0.0) {
            return Err(ClpError::config("graphon.noise", format!("{h} must be finite and >= 0")));
        }
        match &self.family {
            GraphonFamily::ThresholdBinary { t } if !t.is_finite() => {
                Err(ClpError::config("graphon.t", "threshold must be finite"))
            }
            GraphonFamily::Custom { blocks } => {
                let k = blocks.len();
                if k == 0 || blocks.iter().any(|r| r.len() != k) {
                    return Err(ClpError::config(
                        "graphon.blocks",
                        "custom graphon needs a non-empty square block matrix",
                    ));
                }
                if blocks.iter().flatten().any(|v| !v.is_finite()) {
                    return Err(ClpError::config("graphon.blocks", "block values must be finite"));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Noise-free mean `E[A | u, v]`. For the rescaled family this is the
    /// base graphon (rescaling is an affine, data-dependent transform).
    pub fn mean(&self, u: f64, v: f64) -> f64 {
        match &self.family {
            GraphonFamily::Setting1 => BaseSetting::Setting1.eval(u, v),
            GraphonFamily::Setting2 => BaseSetting::Setting2.eval(u, v),
            GraphonFamily::Setting3 => BaseSetting::Setting3.eval(u, v),
            GraphonFamily::ThresholdBinary { t } => {
                let h = self.noise_half_width();
                let s = (u + v) / 2.0;
                if h == 0.0 {
                    return if s > *t { 1.0 } else { 0.0 };
                }
                ((s - t + h) / (2.0 * h)).clamp(0.0, 1.0)
            }
            GraphonFamily::RescaledBernoulli { base } => base.eval(u, v),
            GraphonFamily::Custom { blocks } => {
                let k = blocks.len();
                let a = ((u * k as f64) as usize).min(k - 1);
                let b = ((v * k as f64) as usize).min(k - 1);
                blocks[a][b]
            }
        }
    }

    /// One cell given latent positions and a noise draw. For the rescaled
    /// family this is the pre-rescaling value `p*`.
    pub fn realize(&self, u: f64, v: f64, eps: f64) -> f64 {
        match &self.family {
            GraphonFamily::ThresholdBinary { t } => {
                if (u + v) / 2.0 + eps > *t {
                    1.0
                } else {
                    0.0
                }
            }
            _ => self.mean(u, v) + eps,
        }
    }

    pub fn is_binary(&self) -> bool {
        matches!(
            self.family,
            GraphonFamily::ThresholdBinary { .. } | GraphonFamily::RescaledBernoulli { .. }
        )
    }
}

/// Output dimensions and orientation of a simulated network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkShape {
    pub n_rows: usize,
    pub n_cols: usize,
    pub topology: Topology,
}

impl NetworkShape {
    pub fn square(n: usize, topology: Topology) -> Self {
        Self {
            n_rows: n,
            n_cols: n,
            topology,
        }
    }

    pub fn bipartite(n_rows: usize, n_cols: usize) -> Self {
        Self {
            n_rows,
            n_cols,
            topology: Topology::Bipartite,
        }
    }
}

/// A generated network with its simulation oracle.
#[derive(Debug, Clone)]
pub struct SimulatedNetwork {
    pub network: WeightedNetwork,
    pub latent: LatentPositions,
    /// The quantity hypotheses are stated about: `A` itself, or the edge
    /// probabilities for the rescaled-Bernoulli family.
    pub truth: WeightedNetwork,
}

/// Directed `n x n` graphon network.
pub fn generate_graphon_network(spec: &GraphonSpec, n: usize, seed: u64) -> Result<SimulatedNetwork> {
    generate_network(spec, NetworkShape::square(n, Topology::Directed), seed)
}

pub fn generate_network(spec: &GraphonSpec, shape: NetworkShape, seed: u64) -> Result<SimulatedNetwork> {
    spec.validate()?;
    let NetworkShape {
        n_rows,
        n_cols,
        topology,
    } = shape;
    let bipartite = topology == Topology::Bipartite;
    if n_rows < 2 || n_cols < 2 {
        return Err(ClpError::config("n", "network needs at least 2 rows and 2 columns"));
    }
    if !bipartite && n_rows != n_cols {
        return Err(ClpError::config("n", "directed and undirected networks must be square"));
    }

    let mut rng = stream_rng(seed, Stream::Network, &[]);
    let xi: Vec<f64> = (0..n_rows).map(|_| rng.gen::<f64>()).collect();
    let zeta: Option<Vec<f64>> = bipartite.then(|| (0..n_cols).map(|_| rng.gen::<f64>()).collect());
    let latent = LatentPositions { xi, zeta };
    let h = spec.noise_half_width();
    let noise = |rng: &mut crate::rng::StreamRng| if h > 0.0 { rng.gen_range(-h..=h) } else { 0.0 };

    let mut raw = vec![0.0; n_rows * n_cols];
    for i in 0..n_rows {
        let j_start = if topology == Topology::Undirected { i + 1 } else { 0 };
        for j in j_start..n_cols {
            if !bipartite && i == j {
                continue;
            }
            let v = spec.realize(latent.xi[i], latent.column(j), noise(&mut rng));
            raw[i * n_cols + j] = v;
            if topology == Topology::Undirected {
                raw[j * n_cols + i] = v;
            }
        }
    }

    let diag = topology.has_diagonal();
    if let GraphonFamily::RescaledBernoulli { .. } = spec.family {
        let defined = |idx: usize| diag || idx / n_cols != idx % n_cols;
        let (lo, hi) = raw
            .iter()
            .enumerate()
            .filter(|(idx, _)| defined(*idx))
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (_, &v)| (lo.min(v), hi.max(v)));
        let span = hi - lo;
        let probs: Vec<f64> = raw
            .iter()
            .enumerate()
            .map(|(idx, &v)| {
                if !defined(idx) {
                    0.0
                } else if span > 0.0 {
                    ((v - lo) / span).clamp(0.0, 1.0)
                } else {
                    0.5
                }
            })
            .collect();
        let mut adj = vec![0.0; n_rows * n_cols];
        for i in 0..n_rows {
            let j_start = if topology == Topology::Undirected { i + 1 } else { 0 };
            for j in j_start..n_cols {
                if !diag && i == j {
                    continue;
                }
                let a = if rng.gen::<f64>() < probs[i * n_cols + j] { 1.0 } else { 0.0 };
                adj[i * n_cols + j] = a;
                if topology == Topology::Undirected {
                    adj[j * n_cols + i] = a;
                }
            }
        }
        return Ok(SimulatedNetwork {
            network: WeightedNetwork::from_vec(n_rows, n_cols, adj, diag)?,
            latent,
            truth: WeightedNetwork::from_vec(n_rows, n_cols, probs, diag)?,
        });
    }

    let network = WeightedNetwork::from_vec(n_rows, n_cols, raw, diag)?;
    Ok(SimulatedNetwork {
        truth: network.clone(),
        network,
        latent,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn setting1_corners() {
        let spec = GraphonSpec::new(GraphonFamily::Setting1);
        assert_eq!(spec.realize(0.0, 0.0, 0.0), 0.0);
        assert_eq!(spec.realize(1.0, 1.0, 0.0), 3.0);
    }

    #[test]
    fn threshold_binary_is_strict() {
        let spec = GraphonSpec::new(GraphonFamily::ThresholdBinary { t: 0.2 });
        assert_eq!(spec.realize(1.0, 1.0, 0.0), 1.0);
        assert_eq!(spec.realize(0.2, 0.2, 0.0), 0.0);
    }

    #[test]
    fn setting2_uses_regularised_denominator() {
        let v = BaseSetting::Setting2.eval(0.25, 0.5);
        // denominator is exactly the 0.01 regulariser
        assert!((v - 0.5f64.powf(2.0 / 3.0) * 10.0f64.cos()).abs() < 1e-12);
    }

    #[test]
    fn setting3_is_finite_at_origin() {
        assert_eq!(BaseSetting::Setting3.eval(0.0, 0.0), 0.0);
        assert!(BaseSetting::Setting3.eval(1e-3, 1e-3).is_finite());
    }

    #[test]
    fn binary_family_only_emits_zero_one() {
        let spec = GraphonSpec::new(GraphonFamily::ThresholdBinary { t: 0.1 });
        let sim = generate_graphon_network(&spec, 30, 3).unwrap();
        assert!(sim.network.cells().all(|(_, _, a)| a == 0.0 || a == 1.0));
    }

    #[test]
    fn rescaled_bernoulli_probabilities_in_unit_interval() {
        let spec = GraphonSpec::new(GraphonFamily::RescaledBernoulli {
            base: BaseSetting::Setting3,
        });
        let sim = generate_graphon_network(&spec, 25, 11).unwrap();
        let probs: Vec<f64> = sim.truth.cells().map(|c| c.2).collect();
        assert!(probs.iter().all(|p| (0.0..=1.0).contains(p)));
        assert!(probs.contains(&0.0));
        assert!(probs.contains(&1.0));
        assert!(sim.network.cells().all(|(_, _, a)| a == 0.0 || a == 1.0));
    }

    #[test]
    fn undirected_generation_is_symmetric() {
        let spec = GraphonSpec::new(GraphonFamily::Setting2);
        let sim = generate_network(&spec, NetworkShape::square(12, Topology::Undirected), 5).unwrap();
        assert!(sim.network.is_symmetric());
    }

    #[test]
    fn bipartite_generation_has_column_latents() {
        let spec = GraphonSpec::new(GraphonFamily::Setting1);
        let sim = generate_network(&spec, NetworkShape::bipartite(6, 9), 5).unwrap();
        assert_eq!(sim.network.n_cols(), 9);
        assert_eq!(sim.latent.zeta.as_ref().unwrap().len(), 9);
    }

    #[test]
    fn unknown_family_is_config_error() {
        let err = serde_json::from_str::<GraphonSpec>(r#"{"family":"setting9"}"#);
        assert!(err.is_err());
        let ok: GraphonSpec =
            serde_json::from_str(r#"{"family":"threshold-binary","t":0.2}"#).unwrap();
        assert_eq!(ok.noise_half_width(), 0.25);
    }

    #[test]
    fn custom_blocks_step_function() {
        let spec = GraphonSpec::new(GraphonFamily::Custom {
            blocks: vec![vec![1.0, 2.0], vec![3.0, 4.0]],
        });
        assert_eq!(spec.mean(0.1, 0.9), 2.0);
        assert_eq!(spec.mean(1.0, 0.0), 3.0);
    }
}
