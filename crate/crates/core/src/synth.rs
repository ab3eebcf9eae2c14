//! Synthetic attributed graphs with a tunable node→edge dependence.
//!
//! Node features are standard normal. Each edge's features mix a fixed
//! nonlinear map of its endpoint features with independent noise:
//!
//! ```text
//! s_ij = α · tanh(M · [x_i; x_j]) + (1 − α) · σ · ε,    ε ~ N(0, I)
//! y_ij = argmax_c ( W · [s_ij; x_i; x_j] + σ · gumbel )_c
//! ```
//!
//! `M` and `W` are drawn once per seed. At `α = 0` edge features carry no
//! information about the endpoints; at `α = 1` they are a deterministic
//! function of them.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Open01, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::graph::{Graph, GraphError};
use crate::tensor::Tensor;

/// Standard deviation of each pre-activation `(M · [x_i; x_j])_k`.
const PREACTIVATION_STD: f64 = 0.5;

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("invalid `{field}`: {reason}")]
    InvalidField { field: &'static str, reason: String },
    #[error("requested {m} edges but {n} nodes allow at most {max}")]
    TooManyEdges { m: usize, n: usize, max: usize },
    #[error("generated labels never hit class {0}; try more edges or another seed")]
    MissingClass(usize),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n: usize,
    pub m: usize,
    pub d1: usize,
    pub d2: usize,
    pub num_classes: usize,
    pub alpha: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n: 300,
            m: 2000,
            d1: 4,
            d2: 16,
            num_classes: 2,
            alpha: 0.9,
            noise_sigma: 0.05,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn max_edges(&self) -> usize {
        self.n * self.n.saturating_sub(1) / 2
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let invalid = |field, reason: &str| {
            Err(SynthError::InvalidField {
                field,
                reason: reason.to_string(),
            })
        };
        if self.n < 2 {
            return invalid("n", "need at least 2 nodes");
        }
        if self.d1 < 2 {
            return invalid("d1", "must be at least 2");
        }
        if self.d2 < 2 {
            return invalid("d2", "must be at least 2");
        }
        if self.num_classes < 2 {
            return invalid("num_classes", "must be at least 2");
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return invalid("alpha", "must lie in [0, 1]");
        }
        if !(self.noise_sigma > 0.0 && self.noise_sigma.is_finite()) {
            return invalid("noise_sigma", "must be a positive finite number");
        }
        if self.m > self.max_edges() {
            return Err(SynthError::TooManyEdges {
                m: self.m,
                n: self.n,
                max: self.max_edges(),
            });
        }
        Ok(())
    }
}

fn normal_tensor(rng: &mut impl Rng, rows: usize, cols: usize, std: f64) -> Tensor {
    Tensor::from_fn(rows, cols, |_, _| {
        let z: f64 = StandardNormal.sample(rng);
        z * std
    })
}

/// Decodes a linear index over the strict upper triangle of an `n x n`
/// matrix into `(i, j)` with `i < j`.
fn pair_from_index(k: usize, n: usize) -> (usize, usize) {
    // Row i starts at offset(i) = i·(2n − i − 1)/2.
    let offset = |i: usize| i * (2 * n - i - 1) / 2;
    let (mut lo, mut hi) = (0, n - 1);
    while lo + 1 < hi {
        let mid = (lo + hi) / 2;
        if offset(mid) <= k {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let i = lo;
    (i, i + 1 + (k - offset(i)))
}

pub fn generate(config: &SynthConfig) -> Result<Graph, SynthError> {
    config.validate()?;
    let SynthConfig {
        n,
        m,
        d1,
        d2,
        num_classes,
        alpha,
        noise_sigma,
        seed,
    } = *config;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let x = normal_tensor(&mut rng, n, d1, 1.0);
    let mixing = normal_tensor(
        &mut rng,
        d2,
        2 * d1,
        PREACTIVATION_STD / ((2 * d1) as f64).sqrt(),
    );
    let readout = normal_tensor(
        &mut rng,
        num_classes,
        d2 + 2 * d1,
        1.0 / ((d2 + 2 * d1) as f64).sqrt(),
    );

    let mut picks = index::sample(&mut rng, config.max_edges(), m).into_vec();
    picks.sort_unstable();
    let edges: Vec<(usize, usize)> = picks.iter().map(|&k| pair_from_index(k, n)).collect();

    let mut s = Tensor::zeros(m, d2);
    let mut labels = Vec::with_capacity(m);
    let mut endpoints = vec![0.0; 2 * d1];
    let mut full = vec![0.0; d2 + 2 * d1];
    for (e, &(i, j)) in edges.iter().enumerate() {
        endpoints[..d1].copy_from_slice(x.row(i));
        endpoints[d1..].copy_from_slice(x.row(j));
        let row = s.row_mut(e);
        for (k, out) in row.iter_mut().enumerate() {
            let pre: f64 = mixing
                .row(k)
                .iter()
                .zip(&endpoints)
                .map(|(a, b)| a * b)
                .sum();
            let eps: f64 = StandardNormal.sample(&mut rng);
            *out = alpha * pre.tanh() + (1.0 - alpha) * noise_sigma * eps;
        }
        full[..d2].copy_from_slice(row);
        full[d2..].copy_from_slice(&endpoints);

        let mut best = (0, f64::NEG_INFINITY);
        for c in 0..num_classes {
            let logit: f64 = readout.row(c).iter().zip(&full).map(|(a, b)| a * b).sum();
            let u: f64 = Open01.sample(&mut rng);
            let score = logit + noise_sigma * -(-u.ln()).ln();
            if score > best.1 {
                best = (c, score);
            }
        }
        labels.push(best.0);
    }

    let mut seen = vec![false; num_classes];
    labels.iter().for_each(|&y| seen[y] = true);
    if let Some(c) = seen.iter().position(|s| !s) {
        return Err(SynthError::MissingClass(c));
    }
    Ok(Graph::new(x, edges, s, labels, num_classes)?)
}
