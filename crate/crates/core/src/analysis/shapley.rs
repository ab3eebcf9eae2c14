//! Monte Carlo permutation Shapley values, and their grouping into
//! node-representation and edge-feature attributions for a trained model.
//!
//! Absent features take a baseline value (training means). Each sampled
//! permutation adds features one at a time, so per permutation the values
//! telescope to `v(full) − v(baseline)` exactly.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::graph::{EdgeBatch, Graph, NormAdj};
use crate::model::ModelState;
use crate::tensor::Tensor;
use crate::{Error, Result};

/// Instances drawn for grouped attribution unless told otherwise.
pub const DEFAULT_SAMPLE_SIZE: usize = 1000;
pub const DEFAULT_PERMUTATIONS: usize = 64;

/// Permutation estimate of the Shapley values of `x` relative to
/// `baseline`.
///
/// Permutations come in antithetic pairs: every odd-numbered permutation is
/// the reverse of the one before it.
///
/// `value` receives a batch of inputs (one per row) and returns one value
/// per row; each permutation is evaluated as a single batch of
/// `features + 1` rows.
pub fn permutation_shapley<F>(
    x: &[f64],
    baseline: &[f64],
    value: F,
    n_permutations: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>>
where
    F: Fn(&Tensor) -> Result<Vec<f64>>,
{
    let d = x.len();
    if baseline.len() != d {
        return Err(Error::Contract(format!(
            "{d} features but {} baseline values",
            baseline.len()
        )));
    }
    if n_permutations == 0 {
        return Err(Error::Contract("need at least one permutation".into()));
    }
    let mut phi = vec![0.0; d];
    let mut order: Vec<usize> = (0..d).collect();
    let mut inputs = Tensor::zeros(d + 1, d);
    for i in 0..n_permutations {
        if i % 2 == 0 {
            order.shuffle(rng);
        } else {
            order.reverse();
        }
        let mut current = baseline.to_vec();
        inputs.row_mut(0).copy_from_slice(&current);
        for (step, &k) in order.iter().enumerate() {
            current[k] = x[k];
            inputs.row_mut(step + 1).copy_from_slice(&current);
        }
        let v = value(&inputs)?;
        if v.len() != d + 1 {
            return Err(Error::Contract(format!(
                "value function returned {} rows for {}",
                v.len(),
                d + 1
            )));
        }
        for (step, &k) in order.iter().enumerate() {
            phi[k] += v[step + 1] - v[step];
        }
    }
    let n = n_permutations as f64;
    phi.iter_mut().for_each(|p| *p /= n);
    Ok(phi)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupAttribution {
    /// Mean absolute Shapley value over endpoint-embedding dimensions.
    pub node_shapley: f64,
    /// Mean absolute Shapley value over edge-feature dimensions.
    pub edge_shapley: f64,
    pub n_samples: usize,
    pub n_permutations: usize,
    pub seed: u64,
}

/// Uniform sample without replacement of at most `max` of `edges`, in
/// their original order.
pub fn sample_edges(edges: &[usize], max: usize, seed: u64) -> Vec<usize> {
    if edges.len() <= max {
        return edges.to_vec();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picks = rand::seq::index::sample(&mut rng, edges.len(), max).into_vec();
    picks.sort_unstable();
    picks.into_iter().map(|i| edges[i]).collect()
}

/// Rows `[z_src ; z_dst ; s]` for the given edges.
fn head_inputs(graph: &Graph, z: &Tensor, edges: &[usize]) -> Result<Tensor> {
    let batch = EdgeBatch::gather(graph, edges)?;
    let zs = z.select_rows(&batch.src)?;
    let zd = z.select_rows(&batch.dst)?;
    Ok(Tensor::concat_cols(&[&zs, &zd, &batch.features])?)
}

/// Grouped Shapley attribution of the head's predicted-class probability.
///
/// Features absent from a coalition are replaced by their mean over
/// `baseline_edges` (the training split). Edges are processed in parallel,
/// each with its own random stream derived from `seed` and the edge index.
pub fn shapley_group(
    state: &ModelState,
    graph: &Graph,
    adj: &NormAdj,
    sample: &[usize],
    baseline_edges: &[usize],
    n_permutations: usize,
    seed: u64,
) -> Result<GroupAttribution> {
    if sample.is_empty() {
        return Err(Error::Size("Shapley sample is empty".into()));
    }
    if baseline_edges.is_empty() {
        return Err(Error::Size("no edges to compute the baseline from".into()));
    }
    if n_permutations == 0 {
        return Err(Error::Contract("need at least one permutation".into()));
    }
    let z = state.embed(graph, adj)?;
    let node_width = 2 * z.cols();
    let baseline = head_inputs(graph, &z, baseline_edges)?
        .col_means()
        .into_vec();
    let inputs = head_inputs(graph, &z, sample)?;

    let value = |rows: &Tensor, class: usize| -> Result<Vec<f64>> {
        let zs = rows.slice_cols(0, z.cols())?;
        let zd = rows.slice_cols(z.cols(), node_width)?;
        let s = rows.slice_cols(node_width, rows.cols())?;
        let p = state.head_probabilities(&zs, &zd, &s)?;
        Ok((0..p.rows()).map(|r| p.get(r, class)).collect())
    };

    let per_edge: Vec<Result<(f64, f64)>> = sample
        .par_iter()
        .enumerate()
        .map(|(i, &edge)| {
            let x = inputs.row(i);
            let full = Tensor::from_vec(1, x.len(), x.to_vec())?;
            let class = value_argmax(state, &full, z.cols())?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(edge as u64);
            let phi = permutation_shapley(
                x,
                &baseline,
                |rows| value(rows, class),
                n_permutations,
                &mut rng,
            )?;
            let node = phi[..node_width].iter().map(|v| v.abs()).sum::<f64>() / node_width as f64;
            let edge_w = phi.len() - node_width;
            let edge_part = phi[node_width..].iter().map(|v| v.abs()).sum::<f64>() / edge_w as f64;
            Ok((node, edge_part))
        })
        .collect();

    let mut node_total = 0.0;
    let mut edge_total = 0.0;
    for r in per_edge {
        let (n, e) = r?;
        node_total += n;
        edge_total += e;
    }
    let k = sample.len() as f64;
    Ok(GroupAttribution {
        node_shapley: node_total / k,
        edge_shapley: edge_total / k,
        n_samples: sample.len(),
        n_permutations,
        seed,
    })
}

fn value_argmax(state: &ModelState, full: &Tensor, embed: usize) -> Result<usize> {
    let zs = full.slice_cols(0, embed)?;
    let zd = full.slice_cols(embed, 2 * embed)?;
    let s = full.slice_cols(2 * embed, full.cols())?;
    Ok(state.head_probabilities(&zs, &zd, &s)?.argmax_rows()[0])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear(a: Vec<f64>) -> impl Fn(&Tensor) -> Result<Vec<f64>> {
        move |rows: &Tensor| {
            Ok((0..rows.rows())
                .map(|r| rows.row(r).iter().zip(&a).map(|(x, w)| x * w).sum())
                .collect())
        }
    }

    #[test]
    fn additive_model_is_exact_for_any_permutation_count() {
        let a = vec![0.5, -2.0, 1.5, 3.0];
        let x = [1.0, 2.0, -1.0, 0.25];
        for n in [1, 3, 17] {
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            let phi = permutation_shapley(&x, &[0.0; 4], linear(a.clone()), n, &mut rng).unwrap();
            for k in 0..4 {
                assert!((phi[k] - a[k] * x[k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn efficiency_holds_per_permutation() {
        let f = |rows: &Tensor| -> Result<Vec<f64>> {
            Ok((0..rows.rows())
                .map(|r| {
                    let v = rows.row(r);
                    (v[0] * v[1]).tanh() + v[2] * v[2] - v[0] * v[2] * v[3]
                })
                .collect())
        };
        let x = [0.7, -1.2, 2.0, 0.4];
        let base = [0.1, 0.2, -0.3, 0.0];
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let phi = permutation_shapley(&x, &base, f, 5, &mut rng).unwrap();
        let full = f(&Tensor::from_rows(&[&x, &base])).unwrap();
        assert!((phi.iter().sum::<f64>() - (full[0] - full[1])).abs() < 1e-12);
    }

    #[test]
    fn rejects_zero_permutations_and_length_mismatch() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(permutation_shapley(&[1.0], &[0.0], linear(vec![1.0]), 0, &mut rng).is_err());
        assert!(permutation_shapley(&[1.0], &[0.0, 0.0], linear(vec![1.0]), 1, &mut rng).is_err());
    }

    #[test]
    fn sampling_is_bounded_and_deterministic() {
        let edges: Vec<usize> = (0..50).collect();
        assert_eq!(sample_edges(&edges, 100, 1), edges);
        let s = sample_edges(&edges, 10, 1);
        assert_eq!(s.len(), 10);
        assert_eq!(s, sample_edges(&edges, 10, 1));
        assert!(s.windows(2).all(|w| w[0] < w[1]));
    }
}
