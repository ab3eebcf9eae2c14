//! Finite-difference verification of the full training objectives on a
//! tiny random graph.

use crate::autodiff::{Fault, Tape, Var};
use crate::gradcheck::{grad_check_on, GradCheckReport};
use crate::graph::{self, EdgeBatch, Graph, NormAdj};
use crate::model::{
    self, EncoderParams, EncoderVars, HeadParams, HeadVars, ModelDims, ModelState, ProbeParams,
    ProbeVars,
};
use crate::synth::{self, SynthConfig, SynthError};
use crate::tensor::Tensor;
use crate::training::{self, median_bandwidth, Regularizer, TrainConfig};
use crate::Result;

pub const DEFAULT_EPSILON: f64 = 1e-4;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;

/// Small widths keep the coordinate-wise sweep fast.
pub const CHECK_DIMS: ModelDims = ModelDims {
    hidden: 5,
    embed: 4,
    treatment: 4,
    attention: 3,
    probe_hidden: 5,
};

#[derive(Debug, Clone)]
pub struct LossCheck {
    pub loss: &'static str,
    pub block_names: Vec<String>,
    pub report: GradCheckReport,
}

impl LossCheck {
    pub fn failing_blocks(&self, tolerance: f64) -> Vec<String> {
        self.report
            .failing_blocks(tolerance)
            .into_iter()
            .map(|i| self.block_names[i].clone())
            .collect()
    }
}

/// A 6-node graph with both classes present. Seeds that miss a class are
/// skipped deterministically.
pub fn tiny_graph(seed: u64) -> Result<Graph> {
    let mut attempt = 0u64;
    loop {
        let cfg = SynthConfig {
            n: 6,
            m: 10,
            d1: 3,
            d2: 4,
            num_classes: 2,
            alpha: 0.7,
            noise_sigma: 0.3,
            seed: seed.wrapping_add(attempt),
        };
        match synth::generate(&cfg) {
            Err(SynthError::MissingClass(_)) if attempt < 64 => attempt += 1,
            other => return Ok(other?),
        }
    }
}

fn block_names() -> Vec<String> {
    let prefixed =
        |p: &str, names: &[&str]| names.iter().map(|n| format!("{p}.{n}")).collect::<Vec<_>>();
    let mut out = prefixed("encoder", EncoderParams::NAMES);
    out.extend(prefixed("head", HeadParams::NAMES));
    out.extend(prefixed("probe", ProbeParams::NAMES));
    out
}

fn all_params(state: &ModelState) -> Vec<Tensor> {
    state
        .encoder
        .tensors()
        .into_iter()
        .chain(state.head.tensors())
        .chain(state.probe.tensors())
        .cloned()
        .collect()
}

fn split_vars(vars: &[Var]) -> (EncoderVars, HeadVars, ProbeVars) {
    let e = EncoderParams::NAMES.len();
    let h = HeadParams::NAMES.len();
    (
        EncoderVars::from_vars(&vars[..e]),
        HeadVars::from_vars(&vars[e..e + h]),
        ProbeVars::from_vars(&vars[e + h..]),
    )
}

struct Setup {
    graph: Graph,
    adj: NormAdj,
    batch: EdgeBatch,
    state: ModelState,
}

fn setup(seed: u64) -> Result<Setup> {
    let graph = tiny_graph(seed)?;
    let adj = graph::normalize_adjacency(&graph);
    let all: Vec<usize> = (0..graph.num_edges()).collect();
    let batch = EdgeBatch::gather(&graph, &all)?;
    let state = ModelState::for_graph(&graph, CHECK_DIMS, seed);
    Ok(Setup {
        graph,
        adj,
        batch,
        state,
    })
}

/// Checks the main adversarial objective, the probe loss and the HSIC
/// objective. `fault` swaps in a deliberately wrong backward rule on the
/// analytic side.
pub fn check_losses(
    seed: u64,
    epsilon: f64,
    tolerance: f64,
    fault: Option<Fault>,
) -> Result<Vec<LossCheck>> {
    let Setup {
        graph,
        adj,
        batch,
        state,
    } = setup(seed)?;
    let params = all_params(&state);
    let make_tape = || fault.map_or_else(Tape::new, Tape::with_fault);
    let names = block_names();
    let mut out = Vec::new();

    let adversarial = TrainConfig {
        gamma: 0.5,
        regularizer: Regularizer::Adversarial,
        dims: CHECK_DIMS,
        ..TrainConfig::default()
    };
    let report = grad_check_on(
        make_tape,
        |tape, vars| {
            let (e, h, p) = split_vars(vars);
            training::objective_on(
                tape,
                e,
                h,
                p,
                &batch,
                &graph,
                &adj,
                &adversarial,
                None,
                None,
            )
            .map(|o| o.total)
        },
        &params,
        epsilon,
        tolerance,
    )?;
    out.push(LossCheck {
        loss: "adversarial",
        block_names: names.clone(),
        report,
    });

    let report = grad_check_on(
        make_tape,
        |tape, vars| {
            let (e, _, p) = split_vars(vars);
            let x = tape.constant(graph.node_features().clone());
            let a = tape.constant(adj.matrix().clone());
            let z = model::gcn_forward(tape, &e, x, a)?;
            let (zs, zd) = model::endpoints(tape, z, &batch)?;
            let s_hat = model::pi_predict(tape, &p, zs, zd)?;
            let s = tape.constant(batch.features.clone());
            training::loss_rep(tape, s, s_hat)
        },
        &params,
        epsilon,
        tolerance,
    )?;
    out.push(LossCheck {
        loss: "probe",
        block_names: names.clone(),
        report,
    });

    let hsic_cfg = TrainConfig {
        regularizer: Regularizer::Hsic,
        dims: CHECK_DIMS,
        ..TrainConfig::default()
    };
    // the bandwidth is a data-dependent constant; pin it at the base point
    let z = state.embed(&graph, &adj)?;
    let z_cat = Tensor::concat_cols(&[&z.select_rows(&batch.src)?, &z.select_rows(&batch.dst)?])?;
    let sigma = median_bandwidth(&z_cat);
    let report = grad_check_on(
        make_tape,
        |tape, vars| {
            let (e, h, p) = split_vars(vars);
            training::objective_on(
                tape,
                e,
                h,
                p,
                &batch,
                &graph,
                &adj,
                &hsic_cfg,
                None,
                Some(sigma),
            )
            .map(|o| o.total)
        },
        &params,
        epsilon,
        tolerance,
    )?;
    out.push(LossCheck {
        loss: "hsic",
        block_names: names,
        report,
    });
    Ok(out)
}
