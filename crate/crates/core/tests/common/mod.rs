#![allow(dead_code)]

use cecf_core::{Graph, Tensor};
use num_rational::Ratio;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Exact Shapley values by enumerating all `2^d` coalitions.
pub fn exact_shapley(d: usize, v: impl Fn(&[bool]) -> f64) -> Vec<f64> {
    let fact: Vec<f64> = (0..=d)
        .scan(1.0, |acc, k| {
            if k > 0 {
                *acc *= k as f64;
            }
            Some(*acc)
        })
        .collect();
    let mut phi = vec![0.0; d];
    for mask in 0u32..(1 << d) {
        let members: Vec<bool> = (0..d).map(|k| mask & (1 << k) != 0).collect();
        let size = members.iter().filter(|&&b| b).count();
        let base = v(&members);
        for k in (0..d).filter(|&k| !members[k]) {
            let mut with = members.clone();
            with[k] = true;
            let w = fact[size] * fact[d - size - 1] / fact[d];
            phi[k] += w * (v(&with) - base);
        }
    }
    phi
}

/// Small nonlinear two-class model: probability of class 1 under a
/// logistic with pairwise interactions.
pub struct ToyModel {
    pub linear: Vec<f64>,
    pub pairs: Vec<(usize, usize, f64)>,
    pub bias: f64,
}

impl ToyModel {
    pub fn random(d: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let linear = (0..d).map(|_| rng.random_range(-1.5..1.5)).collect();
        let pairs = (0..d)
            .map(|_| {
                let a = rng.random_range(0..d);
                let b = (a + 1 + rng.random_range(0..d - 1)) % d;
                (a, b, rng.random_range(-1.0..1.0))
            })
            .collect();
        Self {
            linear,
            pairs,
            bias: rng.random_range(-0.5..0.5),
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let mut t = self.bias;
        for (w, xi) in self.linear.iter().zip(x) {
            t += w * xi;
        }
        for &(a, b, w) in &self.pairs {
            t += w * x[a] * x[b];
        }
        1.0 / (1.0 + (-t).exp())
    }

    pub fn eval_rows(&self, rows: &Tensor) -> Vec<f64> {
        (0..rows.rows()).map(|r| self.eval(rows.row(r))).collect()
    }

    pub fn coalition_value(&self, x: &[f64], baseline: &[f64], members: &[bool]) -> f64 {
        let masked: Vec<f64> = (0..x.len())
            .map(|k| if members[k] { x[k] } else { baseline[k] })
            .collect();
        self.eval(&masked)
    }
}

pub fn relative_l2(estimate: &[f64], exact: &[f64]) -> f64 {
    let diff: f64 = estimate
        .iter()
        .zip(exact)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt();
    let norm: f64 = exact.iter().map(|b| b * b).sum::<f64>().sqrt();
    diff / norm
}

/// Brute-force BACC and Macro-F1 in exact rational arithmetic.
pub fn rational_metrics(counts: &[Vec<u64>]) -> (Ratio<i128>, Ratio<i128>) {
    let c = counts.len();
    let mut recall_sum = Ratio::from_integer(0i128);
    let mut f1_sum = Ratio::from_integer(0i128);
    for (k, row) in counts.iter().enumerate() {
        let tp = row[k] as i128;
        let support: i128 = row.iter().map(|&v| v as i128).sum();
        let predicted: i128 = (0..c).map(|t| counts[t][k] as i128).sum();
        recall_sum += Ratio::new(tp, support);
        if tp > 0 {
            // 2·P·R/(P+R) = 2tp/(support + predicted)
            f1_sum += Ratio::new(2 * tp, support + predicted);
        }
    }
    let n = Ratio::from_integer(c as i128);
    (recall_sum / n, f1_sum / n)
}

pub fn ratio_to_f64(r: Ratio<i128>) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

/// Random simple graph with at least one edge of every class.
pub fn random_graph(n: usize, m: usize, d1: usize, d2: usize, classes: usize, seed: u64) -> Graph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|a| (a + 1..n).map(move |b| (a, b)))
        .collect();
    rand::seq::SliceRandom::shuffle(pairs.as_mut_slice(), &mut rng);
    pairs.truncate(m);
    let x = Tensor::from_fn(n, d1, |_, _| rng.random_range(-1.0..1.0));
    let s = Tensor::from_fn(pairs.len(), d2, |_, _| rng.random_range(-1.0..1.0));
    let labels = (0..pairs.len()).map(|e| e % classes).collect();
    Graph::new(x, pairs, s, labels, classes).expect("valid random graph")
}

pub fn max_abs_diff(a: &Tensor, b: &Tensor) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}
