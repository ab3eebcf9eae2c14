//! Flipped-case tendency study for binary tasks.
//!
//! A flipped case is an edge the baseline gets wrong and the regularised
//! model gets right. For each such edge and each model, the node-pair
//! embedding and the edge (treatment) embedding are assigned the class whose
//! training mean they are most cosine-similar to. The combined tendency is
//! correct when either of the two is.

use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;
use crate::{Error, Result};

/// One model's view of the evaluated edges plus the training edges used
/// for class means.
#[derive(Debug, Clone, Copy)]
pub struct ModelView<'a> {
    pub predictions: &'a [usize],
    pub node_pairs: &'a Tensor,
    pub treatment: &'a Tensor,
    pub train_node_pairs: &'a Tensor,
    pub train_treatment: &'a Tensor,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TendencyCounts {
    pub node: usize,
    pub edge: usize,
    pub combined: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TendencyReport {
    pub flipped: usize,
    pub baseline: TendencyCounts,
    pub cecf: TendencyCounts,
}

fn class_means(x: &Tensor, labels: &[usize], num_classes: usize) -> Result<Vec<Vec<f64>>> {
    if x.rows() != labels.len() {
        return Err(Error::Contract(format!(
            "{} rows but {} training labels",
            x.rows(),
            labels.len()
        )));
    }
    let mut sums = vec![vec![0.0; x.cols()]; num_classes];
    let mut counts = vec![0usize; num_classes];
    for (r, &y) in labels.iter().enumerate() {
        counts[y] += 1;
        sums[y].iter_mut().zip(x.row(r)).for_each(|(s, v)| *s += v);
    }
    for (c, (sum, &n)) in sums.iter_mut().zip(&counts).enumerate() {
        if n == 0 {
            return Err(Error::Contract(format!("no training edges of class {c}")));
        }
        sum.iter_mut().for_each(|s| *s /= n as f64);
    }
    Ok(sums)
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Most similar class mean; ties go to the lower class index.
fn nearest(v: &[f64], means: &[Vec<f64>]) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (c, m) in means.iter().enumerate() {
        let s = cosine(v, m);
        if s > best.1 {
            best = (c, s);
        }
    }
    best.0
}

fn count(
    view: &ModelView,
    flipped: &[usize],
    labels: &[usize],
    train_labels: &[usize],
) -> Result<TendencyCounts> {
    let node_means = class_means(view.train_node_pairs, train_labels, 2)?;
    let edge_means = class_means(view.train_treatment, train_labels, 2)?;
    let mut out = TendencyCounts::default();
    for &i in flipped {
        let node_ok = nearest(view.node_pairs.row(i), &node_means) == labels[i];
        let edge_ok = nearest(view.treatment.row(i), &edge_means) == labels[i];
        out.node += node_ok as usize;
        out.edge += edge_ok as usize;
        out.combined += (node_ok || edge_ok) as usize;
    }
    Ok(out)
}

pub fn tendency_analysis(
    baseline: &ModelView,
    cecf: &ModelView,
    labels: &[usize],
    train_labels: &[usize],
    num_classes: usize,
) -> Result<TendencyReport> {
    if num_classes != 2 {
        return Err(Error::Scope(format!(
            "tendency analysis covers binary tasks only, got {num_classes} classes"
        )));
    }
    let m = labels.len();
    for view in [baseline, cecf] {
        if view.predictions.len() != m || view.node_pairs.rows() != m || view.treatment.rows() != m
        {
            return Err(Error::Contract(format!(
                "model view does not cover the {m} evaluated edges"
            )));
        }
    }
    if let Some(&bad) = labels.iter().chain(train_labels).find(|&&y| y >= 2) {
        return Err(Error::Contract(format!("label {bad} outside [0, 2)")));
    }
    let flipped: Vec<usize> = (0..m)
        .filter(|&i| baseline.predictions[i] != labels[i] && cecf.predictions[i] == labels[i])
        .collect();
    Ok(TendencyReport {
        flipped: flipped.len(),
        baseline: count(baseline, &flipped, labels, train_labels)?,
        cecf: count(cecf, &flipped, labels, train_labels)?,
    })
}
