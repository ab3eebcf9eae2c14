//! Losses and the alternating adversarial training loop.
//!
//! Each batch takes two optimiser steps:
//!
//! 1. probe step: node embeddings are computed with the encoder frozen and
//!    the probe descends the reconstruction loss `L_rep`;
//! 2. main step: with the probe frozen, encoder and head descend
//!    `L_pre − γ·L_rep`, so the encoder ascends `L_rep`.
//!
//! The HSIC variant drops the probe step and descends
//! `L_pre + w·L_HSIC` instead. The probe's Gaussian likelihood has a fixed
//! variance, which only rescales and shifts the loss, so `L_rep` is the
//! plain mean squared reconstruction error.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::analysis::metrics::{ConfusionCounts, Metrics};
use crate::autodiff::{Tape, Var};
use crate::graph::{self, EdgeBatch, Graph, NormAdj, SplitAssignment};
use crate::model::{self, EncoderVars, HeadVars, ModelDims, ModelState, ProbeParams, ProbeVars};
use crate::optim::{adam_step, AdamState};
use crate::tensor::Tensor;
use crate::{Error, Result};

/// Losses above this magnitude abort training.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regularizer {
    Adversarial,
    Hsic,
    None,
}

impl std::str::FromStr for Regularizer {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "adversarial" => Ok(Self::Adversarial),
            "hsic" => Ok(Self::Hsic),
            "none" => Ok(Self::None),
            other => Err(format!(
                "unknown regularizer `{other}` (adversarial|hsic|none)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub gamma: f64,
    pub lr_main: f64,
    pub lr_probe: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub regularizer: Regularizer,
    pub hsic_weight: f64,
    pub seed: u64,
    pub dims: ModelDims,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            gamma: 1e-3,
            lr_main: 0.01,
            lr_probe: 0.01,
            epochs: 100,
            batch_size: 256,
            regularizer: Regularizer::Adversarial,
            hsic_weight: 0.5,
            seed: 0,
            dims: ModelDims::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field, reason: &str| {
            Err(Error::InvalidConfig {
                field,
                reason: reason.into(),
            })
        };
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return bad("gamma", "must be a finite value >= 0");
        }
        if !(self.lr_main > 0.0 && self.lr_main.is_finite()) {
            return bad("lr_main", "must be positive");
        }
        if !(self.lr_probe > 0.0 && self.lr_probe.is_finite()) {
            return bad("lr_probe", "must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be at least 1");
        }
        if !(self.hsic_weight >= 0.0 && self.hsic_weight.is_finite()) {
            return bad("hsic_weight", "must be a finite value >= 0");
        }
        let d = &self.dims;
        if d.hidden == 0
            || d.embed == 0
            || d.treatment == 0
            || d.attention == 0
            || d.probe_hidden == 0
        {
            return bad("dims", "all widths must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub l_pre: f64,
    pub l_rep: f64,
    pub l_total: f64,
    pub l_hsic: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub l_pre: f64,
    pub l_rep: f64,
    pub l_total: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l_hsic: Option<f64>,
    pub val_bacc: f64,
    pub val_macro_f1: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// Index into `epochs` of the best validation BACC (first one on ties).
    pub best_epoch: Option<usize>,
}

impl TrainHistory {
    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    /// One JSON object per epoch, newline separated.
    pub fn to_ndjson(&self) -> String {
        let mut out = String::new();
        for rec in &self.epochs {
            out.push_str(&serde_json::to_string(rec).expect("epoch records serialise"));
            out.push('\n');
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

/// Mean cross-entropy of `logits` against class indices.
pub fn loss_pre(tape: &mut Tape, logits: Var, labels: &[usize]) -> Result<Var> {
    let (m, c) = tape.value(logits).shape();
    if labels.len() != m {
        return Err(Error::Contract(format!(
            "{} labels for {m} logit rows",
            labels.len()
        )));
    }
    let mut onehot = Tensor::zeros(m, c);
    for (r, &y) in labels.iter().enumerate() {
        if y >= c {
            return Err(Error::Contract(format!("label {y} outside [0, {c})")));
        }
        onehot.set(r, y, -1.0 / m as f64);
    }
    let logp = tape.log_softmax_rows(logits)?;
    let mask = tape.constant(onehot);
    let picked = tape.mul(logp, mask)?;
    Ok(tape.sum(picked))
}

/// `(1/m_b) Σ ‖s − ŝ‖²`.
pub fn loss_rep(tape: &mut Tape, s: Var, s_hat: Var) -> Result<Var> {
    let m = tape.value(s).rows().max(1);
    let diff = tape.sub(s, s_hat)?;
    let sq = tape.mul(diff, diff)?;
    let total = tape.sum(sq);
    Ok(tape.scale(total, 1.0 / m as f64))
}

fn pairwise_sq_dists(x: &Tensor) -> Vec<f64> {
    let b = x.rows();
    let mut out = Vec::with_capacity(b * (b - 1) / 2);
    for i in 0..b {
        for j in i + 1..b {
            out.push(
                x.row(i)
                    .iter()
                    .zip(x.row(j))
                    .map(|(a, c)| (a - c) * (a - c))
                    .sum(),
            );
        }
    }
    out
}

/// Median pairwise Euclidean distance between rows; 1 when that median is 0.
pub fn median_bandwidth(x: &Tensor) -> f64 {
    let mut d: Vec<f64> = pairwise_sq_dists(x).into_iter().map(f64::sqrt).collect();
    if d.is_empty() {
        return 1.0;
    }
    d.sort_by(f64::total_cmp);
    let k = d.len();
    let med = if k % 2 == 1 {
        d[k / 2]
    } else {
        0.5 * (d[k / 2 - 1] + d[k / 2])
    };
    if med > 0.0 {
        med
    } else {
        1.0
    }
}

/// Gaussian Gram matrix `exp(−‖a−b‖² / 2σ²)`.
pub fn gaussian_gram(x: &Tensor, sigma: f64) -> Tensor {
    let b = x.rows();
    let mut k = Tensor::identity(b);
    let denom = 2.0 * sigma * sigma;
    for i in 0..b {
        for j in i + 1..b {
            let d: f64 = x
                .row(i)
                .iter()
                .zip(x.row(j))
                .map(|(a, c)| (a - c) * (a - c))
                .sum();
            let v = (-d / denom).exp();
            k.set(i, j, v);
            k.set(j, i, v);
        }
    }
    k
}

/// `H L H` with `H = I − 11ᵀ/B`, computed by explicit double centering.
pub fn double_center(l: &Tensor) -> Tensor {
    let b = l.rows();
    let row_means: Vec<f64> = (0..b)
        .map(|i| l.row(i).iter().sum::<f64>() / b as f64)
        .collect();
    let col_means = l.col_means();
    let grand = row_means.iter().sum::<f64>() / b as f64;
    Tensor::from_fn(b, b, |i, j| {
        l.get(i, j) - row_means[i] - col_means.data()[j] + grand
    })
}

/// `Tr(K H L H) / (B−1)²` between embeddings `z_cat` (differentiable side)
/// and edge features `s`, Gaussian kernels with median-heuristic
/// bandwidths. Bandwidths are computed from the current values and are
/// not differentiated through.
pub fn hsic(tape: &mut Tape, z_cat: Var, s: &Tensor) -> Result<Var> {
    let sigma_z = median_bandwidth(tape.value(z_cat));
    hsic_with_bandwidths(tape, z_cat, s, sigma_z, median_bandwidth(s))
}

pub fn hsic_with_bandwidths(
    tape: &mut Tape,
    z_cat: Var,
    s: &Tensor,
    sigma_z: f64,
    sigma_s: f64,
) -> Result<Var> {
    let b = tape.value(z_cat).rows();
    if b < 2 {
        return Err(Error::Size(format!("HSIC needs at least 2 rows, got {b}")));
    }
    if s.rows() != b {
        return Err(Error::Contract(format!(
            "HSIC sides have {b} and {} rows",
            s.rows()
        )));
    }
    let centred_l = double_center(&gaussian_gram(s, sigma_s));

    // ‖z_i − z_j‖² = r_i + r_j − 2 z_i·z_j
    let sq = tape.mul(z_cat, z_cat)?;
    let ones_d = tape.constant(Tensor::ones(tape.value(z_cat).cols(), 1));
    let r = tape.matmul(sq, ones_d)?;
    let ones_row = tape.constant(Tensor::ones(1, b));
    let r_rows = tape.matmul(r, ones_row)?;
    let r_cols = tape.transpose(r_rows);
    let zt = tape.transpose(z_cat);
    let gram = tape.matmul(z_cat, zt)?;
    let gram2 = tape.scale(gram, 2.0);
    let d = tape.add(r_rows, r_cols)?;
    let d = tape.sub(d, gram2)?;
    let scaled = tape.scale(d, -1.0 / (2.0 * sigma_z * sigma_z));
    let k = tape.exp(scaled);

    let m = tape.constant(centred_l);
    let prod = tape.mul(k, m)?;
    let tr = tape.sum(prod);
    Ok(tape.scale(tr, 1.0 / ((b - 1) * (b - 1)) as f64))
}

/// HSIC between two plain matrices.
pub fn hsic_value(z_cat: &Tensor, s: &Tensor) -> Result<f64> {
    let mut tape = Tape::new();
    let z = tape.constant(z_cat.clone());
    let out = hsic(&mut tape, z, s)?;
    Ok(tape.value(out).item())
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

/// Replacement for the cross-entropy term of the main step; receives the
/// logits node and batch labels and returns a scalar node.
pub type ClassLossFn = dyn Fn(&mut Tape, Var, &[usize]) -> Result<Var> + Sync;

fn guard(loss: &'static str, value: f64) -> Result<f64> {
    if value.is_finite() && value.abs() <= DIVERGENCE_LIMIT {
        Ok(value)
    } else {
        Err(Error::Divergence {
            loss,
            value,
            epoch: None,
            batch: None,
        })
    }
}

/// Endpoint embeddings with the encoder bound as constants.
fn frozen_endpoints(
    tape: &mut Tape,
    state: &ModelState,
    graph: &Graph,
    adj: &NormAdj,
    batch: &EdgeBatch,
) -> Result<(Var, Var)> {
    let enc = state.encoder.bind(tape, false);
    let x = tape.constant(graph.node_features().clone());
    let a = tape.constant(adj.matrix().clone());
    let z = model::gcn_forward(tape, &enc, x, a)?;
    Ok(model::endpoints(tape, z, batch)?)
}

/// Probe update: embeddings frozen, one Adam step on `L_rep`.
pub fn probe_step(
    state: &mut ModelState,
    batch: &EdgeBatch,
    graph: &Graph,
    adj: &NormAdj,
    lr: f64,
) -> Result<f64> {
    let mut tape = Tape::new();
    let (z_src, z_dst) = frozen_endpoints(&mut tape, state, graph, adj, batch)?;
    let probe: ProbeVars = state.probe.bind(&mut tape, true);
    let s_hat = model::pi_predict(&mut tape, &probe, z_src, z_dst)?;
    let s = tape.constant(batch.features.clone());
    let l_rep = loss_rep(&mut tape, s, s_hat)?;
    let value = guard("l_rep", tape.value(l_rep).item())?;
    let grads = tape.backward(l_rep)?;
    let g = probe.grads(&tape, &grads);
    adam_step(&mut state.probe_opt, &mut state.probe.tensors_mut(), &g, lr)?;
    Ok(value)
}

/// The scalar minimised by the main step together with its parts.
pub struct MainObjective {
    pub total: Var,
    pub l_pre: Var,
    pub l_rep: Var,
    pub l_hsic: Option<Var>,
    pub encoder: EncoderVars,
    pub head: HeadVars,
    pub probe: ProbeVars,
    pub z: Var,
}

/// Records the main-step objective on `tape`. Encoder and head are
/// trainable leaves; the probe is bound as a constant.
pub fn main_objective(
    tape: &mut Tape,
    state: &ModelState,
    batch: &EdgeBatch,
    graph: &Graph,
    adj: &NormAdj,
    cfg: &TrainConfig,
    class_loss: Option<&ClassLossFn>,
) -> Result<MainObjective> {
    let encoder = state.encoder.bind(tape, true);
    let head = state.head.bind(tape, true);
    let probe = state.probe.bind(tape, false);
    objective_on(
        tape, encoder, head, probe, batch, graph, adj, cfg, class_loss, None,
    )
}

/// Main-step objective over already bound parameters. `hsic_bandwidth`
/// pins the embedding-side HSIC bandwidth instead of recomputing it from
/// the current embeddings.
#[allow(clippy::too_many_arguments)]
pub fn objective_on(
    tape: &mut Tape,
    encoder: EncoderVars,
    head: HeadVars,
    probe: ProbeVars,
    batch: &EdgeBatch,
    graph: &Graph,
    adj: &NormAdj,
    cfg: &TrainConfig,
    class_loss: Option<&ClassLossFn>,
    hsic_bandwidth: Option<f64>,
) -> Result<MainObjective> {
    let x = tape.constant(graph.node_features().clone());
    let a = tape.constant(adj.matrix().clone());
    let z = model::gcn_forward(tape, &encoder, x, a)?;
    let (z_src, z_dst) = model::endpoints(tape, z, batch)?;
    let s = tape.constant(batch.features.clone());
    let out = model::head_forward(tape, &head, z_src, z_dst, s)?;
    let l_pre = match class_loss {
        Some(f) => f(tape, out.logits, &batch.labels)?,
        None => loss_pre(tape, out.logits, &batch.labels)?,
    };
    let s_hat = model::pi_predict(tape, &probe, z_src, z_dst)?;
    let l_rep = loss_rep(tape, s, s_hat)?;

    let (total, l_hsic) = match cfg.regularizer {
        Regularizer::Adversarial => {
            let pen = tape.scale(l_rep, -cfg.gamma);
            (tape.add(l_pre, pen)?, None)
        }
        Regularizer::Hsic => {
            let z_cat = tape.concat_cols(&[z_src, z_dst])?;
            let sigma_z = hsic_bandwidth.unwrap_or_else(|| median_bandwidth(tape.value(z_cat)));
            let h = hsic_with_bandwidths(
                tape,
                z_cat,
                &batch.features,
                sigma_z,
                median_bandwidth(&batch.features),
            )?;
            let pen = tape.scale(h, cfg.hsic_weight);
            (tape.add(l_pre, pen)?, Some(h))
        }
        Regularizer::None => (l_pre, None),
    };
    Ok(MainObjective {
        total,
        l_pre,
        l_rep,
        l_hsic,
        encoder,
        head,
        probe,
        z,
    })
}

/// One alternating update on a batch.
pub fn train_step(
    state: &mut ModelState,
    batch: &EdgeBatch,
    graph: &Graph,
    adj: &NormAdj,
    cfg: &TrainConfig,
) -> Result<LossReport> {
    train_step_with(state, batch, graph, adj, cfg, None)
}

pub fn train_step_with(
    state: &mut ModelState,
    batch: &EdgeBatch,
    graph: &Graph,
    adj: &NormAdj,
    cfg: &TrainConfig,
    class_loss: Option<&ClassLossFn>,
) -> Result<LossReport> {
    if cfg.regularizer != Regularizer::Hsic {
        probe_step(state, batch, graph, adj, cfg.lr_probe)?;
    }

    let mut tape = Tape::new();
    let obj = main_objective(&mut tape, state, batch, graph, adj, cfg, class_loss)?;
    let report = LossReport {
        l_pre: guard("l_pre", tape.value(obj.l_pre).item())?,
        l_rep: guard("l_rep", tape.value(obj.l_rep).item())?,
        l_hsic: obj
            .l_hsic
            .map(|h| guard("l_hsic", tape.value(h).item()))
            .transpose()?,
        l_total: guard("l_total", tape.value(obj.total).item())?,
    };
    let grads = tape.backward(obj.total)?;
    let mut g = obj.encoder.grads(&tape, &grads);
    g.extend(obj.head.grads(&tape, &grads));
    let mut params = state.encoder.tensors_mut();
    params.extend(state.head.tensors_mut());
    adam_step(&mut state.main_opt, &mut params, &g, cfg.lr_main)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub bacc: f64,
    pub macro_f1: f64,
    pub per_class_recall: Vec<f64>,
    pub predictions: Vec<usize>,
    pub confusion: ConfusionCounts,
}

/// Forward pass over `edges` and the resulting classification metrics.
pub fn evaluate(
    state: &ModelState,
    graph: &Graph,
    adj: &NormAdj,
    edges: &[usize],
) -> Result<EvalReport> {
    if edges.is_empty() {
        return Err(Error::Size("cannot evaluate an empty edge set".into()));
    }
    let z = state.embed(graph, adj)?;
    let out = state.edge_outputs(graph, &z, edges)?;
    let labels: Vec<usize> = edges.iter().map(|&e| graph.labels()[e]).collect();
    score_predictions(&labels, out.predictions, graph.num_classes())
}

pub fn score_predictions(
    labels: &[usize],
    predictions: Vec<usize>,
    num_classes: usize,
) -> Result<EvalReport> {
    let confusion = ConfusionCounts::from_predictions(labels, &predictions, num_classes)?;
    let m = Metrics::from_confusion(&confusion)?;
    Ok(EvalReport {
        bacc: m.bacc,
        macro_f1: m.macro_f1,
        per_class_recall: m.per_class_recall,
        predictions,
        confusion,
    })
}

/// Best-validation and final states of a run.
#[derive(Debug, Clone)]
pub struct TrainRun {
    pub best: ModelState,
    pub last: ModelState,
    pub history: TrainHistory,
}

/// Runs the full loop and returns the parameters of the epoch with the
/// best validation BACC.
pub fn train(
    graph: &Graph,
    split: &SplitAssignment,
    cfg: &TrainConfig,
) -> Result<(ModelState, TrainHistory)> {
    let run = train_run(graph, split, cfg, None)?;
    Ok((run.best, run.history))
}

pub fn train_run(
    graph: &Graph,
    split: &SplitAssignment,
    cfg: &TrainConfig,
    class_loss: Option<&ClassLossFn>,
) -> Result<TrainRun> {
    cfg.validate()?;
    let adj = graph::normalize_adjacency(graph);
    let mut state = ModelState::for_graph(graph, cfg.dims, cfg.seed);
    let mut best = state.clone();
    let mut best_bacc = f64::NEG_INFINITY;
    let mut history = TrainHistory::default();

    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        let batches =
            graph::batch_edges(graph, &split.train, cfg.batch_size, cfg.seed, epoch as u64)?;
        let mut sums = [0.0; 4];
        let mut seen = 0usize;
        for (b, batch) in batches.iter().enumerate() {
            let report =
                train_step_with(&mut state, batch, graph, &adj, cfg, class_loss).map_err(|e| {
                    match e {
                        Error::Divergence { loss, value, .. } => Error::Divergence {
                            loss,
                            value,
                            epoch: Some(epoch),
                            batch: Some(b + 1),
                        },
                        other => other,
                    }
                })?;
            let w = batch.len() as f64;
            sums[0] += w * report.l_pre;
            sums[1] += w * report.l_rep;
            sums[2] += w * report.l_total;
            sums[3] += w * report.l_hsic.unwrap_or(0.0);
            seen += batch.len();
        }
        let val = evaluate(&state, graph, &adj, &split.val)?;
        let n = seen as f64;
        history.epochs.push(EpochRecord {
            epoch,
            l_pre: sums[0] / n,
            l_rep: sums[1] / n,
            l_total: sums[2] / n,
            l_hsic: (cfg.regularizer == Regularizer::Hsic).then_some(sums[3] / n),
            val_bacc: val.bacc,
            val_macro_f1: val.macro_f1,
            seconds: started.elapsed().as_secs_f64(),
        });
        if val.bacc > best_bacc {
            best_bacc = val.bacc;
            best = state.clone();
            history.best_epoch = Some(history.epochs.len() - 1);
        }
    }
    Ok(TrainRun {
        best,
        last: state,
        history,
    })
}

/// Fits a freshly initialised probe on frozen node embeddings `z` using the
/// `fit_edges`, full batch, then reports its `L_rep` on `eval_edges`.
#[allow(clippy::too_many_arguments)]
pub fn refit_probe(
    z: &Tensor,
    graph: &Graph,
    fit_edges: &[usize],
    eval_edges: &[usize],
    dims: &ModelDims,
    steps: usize,
    lr: f64,
    seed: u64,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probe = ProbeParams::init(&mut rng, graph.edge_dim(), dims);
    let mut opt = AdamState::for_shapes(probe.tensors());
    let fit = EdgeBatch::gather(graph, fit_edges)?;
    let eval = EdgeBatch::gather(graph, eval_edges)?;

    let rep = |probe: &ProbeParams,
               batch: &EdgeBatch,
               train: bool|
     -> Result<(f64, Option<Vec<Tensor>>)> {
        let mut tape = Tape::new();
        let zv = tape.constant(z.clone());
        let (zs, zd) = model::endpoints(&mut tape, zv, batch)?;
        let pv = probe.bind(&mut tape, train);
        let s_hat = model::pi_predict(&mut tape, &pv, zs, zd)?;
        let s = tape.constant(batch.features.clone());
        let l = loss_rep(&mut tape, s, s_hat)?;
        let value = tape.value(l).item();
        if !train {
            return Ok((value, None));
        }
        let grads = tape.backward(l)?;
        Ok((value, Some(pv.grads(&tape, &grads))))
    };

    for _ in 0..steps {
        let (value, grads) = rep(&probe, &fit, true)?;
        guard("l_rep", value)?;
        adam_step(
            &mut opt,
            &mut probe.tensors_mut(),
            &grads.expect("train pass"),
            lr,
        )?;
    }
    Ok(rep(&probe, &eval, false)?.0)
}

/// Coefficient of variation of `‖E‖₂` over `draws` standard-normal vectors
/// of dimension `dim`.
pub fn l2_norm_cv(dim: usize, draws: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let norms: Vec<f64> = (0..draws)
        .map(|_| {
            (0..dim)
                .map(|_| {
                    let e: f64 = StandardNormal.sample(&mut rng);
                    e * e
                })
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    let n = norms.len() as f64;
    let mean = norms.iter().sum::<f64>() / n;
    let var = norms.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    var.sqrt() / mean
}
