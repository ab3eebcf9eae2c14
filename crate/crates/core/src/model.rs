//! Encoder, prediction head and treatment probe.
//!
//! * encoder: two-layer GCN producing node embeddings `z`
//! * head: treatment MLP on edge features, single-head cross-attention
//!   (query from the treatment embedding, keys/values from the two endpoint
//!   embeddings) and a linear read-out over `[attention ; treatment]`
//! * probe: MLP predicting edge features from `[z_src ; z_dst]`
//!
//! Parameters are plain [`Tensor`]s. To differentiate, a block is bound
//! to a [`Tape`] with `bind`, which yields the matching `*Vars` handles.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AutodiffError, Gradients, Result, Tape, Var};
use crate::graph::{EdgeBatch, Graph, NormAdj};
use crate::optim::AdamState;
use crate::tensor::Tensor;
use crate::training::TrainConfig;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelDims {
    /// GCN hidden width.
    pub hidden: usize,
    /// Node embedding width `d_h`.
    pub embed: usize,
    /// Treatment embedding width `d_t`.
    pub treatment: usize,
    /// Attention width `d_a`.
    pub attention: usize,
    /// Probe hidden width.
    pub probe_hidden: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        Self {
            hidden: 32,
            embed: 16,
            treatment: 16,
            attention: 16,
            probe_hidden: 32,
        }
    }
}

macro_rules! param_block {
    ($(#[$meta:meta])* $name:ident, $vars:ident { $($field:ident),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
        pub struct $name {
            $(pub $field: Tensor,)+
        }

        #[derive(Debug, Clone, Copy, PartialEq, Eq)]
        pub struct $vars {
            $(pub $field: Var,)+
        }

        impl $name {
            pub const NAMES: &'static [&'static str] = &[$(stringify!($field)),+];

            pub fn tensors(&self) -> Vec<&Tensor> {
                vec![$(&self.$field),+]
            }

            pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
                vec![$(&mut self.$field),+]
            }

            pub fn bind(&self, tape: &mut Tape, trainable: bool) -> $vars {
                $vars { $($field: tape.leaf(self.$field.clone(), trainable),)+ }
            }

            /// Rebuilds the block from tensors in [`Self::NAMES`] order.
            pub fn from_tensors(tensors: Vec<Tensor>) -> Self {
                let mut it = tensors.into_iter();
                Self { $($field: it.next().expect(concat!("missing ", stringify!($field))),)+ }
            }

            pub fn is_finite(&self) -> bool {
                self.tensors().iter().all(|t| t.is_finite())
            }
        }

        impl $vars {
            pub fn vars(&self) -> Vec<Var> {
                vec![$(self.$field),+]
            }

            pub fn from_vars(vars: &[Var]) -> Self {
                let mut it = vars.iter().copied();
                Self { $($field: it.next().expect(concat!("missing ", stringify!($field))),)+ }
            }

            pub fn grads(&self, tape: &Tape, grads: &Gradients) -> Vec<Tensor> {
                vec![$(grads.wrt(tape, self.$field)),+]
            }
        }
    };
}

param_block!(
    /// Two-layer GCN: `w1: d1 x h`, `w2: h x d_h`.
    EncoderParams, EncoderVars { w1, b1, w2, b2 }
);

param_block!(
    /// Treatment MLP (`d2 → d_t → d_t`), attention projections and read-out.
    HeadParams, HeadVars { t_w1, t_b1, t_w2, t_b2, w_q, w_k, w_v, w_o, b_o }
);

param_block!(
    /// Probe MLP `2·d_h → p_h → d2`.
    ProbeParams, ProbeVars { w1, b1, w2, b2 }
);

fn glorot(rng: &mut impl Rng, fan_in: usize, fan_out: usize) -> Tensor {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::from_fn(fan_in, fan_out, |_, _| rng.random_range(-a..a))
}

impl EncoderParams {
    pub fn init(rng: &mut impl Rng, d1: usize, dims: &ModelDims) -> Self {
        Self {
            w1: glorot(rng, d1, dims.hidden),
            b1: Tensor::zeros(1, dims.hidden),
            w2: glorot(rng, dims.hidden, dims.embed),
            b2: Tensor::zeros(1, dims.embed),
        }
    }
}

impl HeadParams {
    pub fn init(rng: &mut impl Rng, d2: usize, num_classes: usize, dims: &ModelDims) -> Self {
        Self {
            t_w1: glorot(rng, d2, dims.treatment),
            t_b1: Tensor::zeros(1, dims.treatment),
            t_w2: glorot(rng, dims.treatment, dims.treatment),
            t_b2: Tensor::zeros(1, dims.treatment),
            w_q: glorot(rng, dims.treatment, dims.attention),
            w_k: glorot(rng, dims.embed, dims.attention),
            w_v: glorot(rng, dims.embed, dims.attention),
            w_o: glorot(rng, dims.attention + dims.treatment, num_classes),
            b_o: Tensor::zeros(1, num_classes),
        }
    }
}

impl ProbeParams {
    pub fn init(rng: &mut impl Rng, d2: usize, dims: &ModelDims) -> Self {
        Self {
            w1: glorot(rng, 2 * dims.embed, dims.probe_hidden),
            b1: Tensor::zeros(1, dims.probe_hidden),
            w2: glorot(rng, dims.probe_hidden, d2),
            b2: Tensor::zeros(1, d2),
        }
    }
}

// ---------------------------------------------------------------------------
// Forward passes
// ---------------------------------------------------------------------------

/// `Z = Â · ELU(Â·X·W1 + b1) · W2 + b2`.
pub fn gcn_forward(tape: &mut Tape, enc: &EncoderVars, x: Var, adj: Var) -> Result<Var> {
    let xw = tape.matmul(x, enc.w1)?;
    let h = tape.matmul(adj, xw)?;
    let h = tape.add_row_bias(h, enc.b1)?;
    let h = tape.elu(h);
    let hw = tape.matmul(h, enc.w2)?;
    let z = tape.matmul(adj, hw)?;
    tape.add_row_bias(z, enc.b2)
}

/// One-hidden-layer ELU MLP on edge features.
pub fn treatment_embed(tape: &mut Tape, head: &HeadVars, s: Var) -> Result<Var> {
    let h = tape.matmul(s, head.t_w1)?;
    let h = tape.add_row_bias(h, head.t_b1)?;
    let h = tape.elu(h);
    let out = tape.matmul(h, head.t_w2)?;
    tape.add_row_bias(out, head.t_b2)
}

#[derive(Debug, Clone, Copy)]
pub struct Attention {
    /// `m_b x d_a` attended values.
    pub output: Var,
    /// `m_b x 2` weights over (src, dst).
    pub weights: Var,
}

/// Per edge, a single query token attends over the two endpoint tokens.
pub fn cross_attention(
    tape: &mut Tape,
    head: &HeadVars,
    t_emb: Var,
    z_src: Var,
    z_dst: Var,
) -> Result<Attention> {
    let d_a = tape.value(head.w_q).cols();
    let q = tape.matmul(t_emb, head.w_q)?;
    let k_src = tape.matmul(z_src, head.w_k)?;
    let k_dst = tape.matmul(z_dst, head.w_k)?;
    let v_src = tape.matmul(z_src, head.w_v)?;
    let v_dst = tape.matmul(z_dst, head.w_v)?;

    let ones_col = tape.constant(Tensor::ones(d_a, 1));
    let qk_src = tape.mul(q, k_src)?;
    let s_src = tape.matmul(qk_src, ones_col)?;
    let qk_dst = tape.mul(q, k_dst)?;
    let s_dst = tape.matmul(qk_dst, ones_col)?;
    let scores = tape.concat_cols(&[s_src, s_dst])?;
    let scores = tape.scale(scores, 1.0 / (d_a as f64).sqrt());
    let weights = tape.softmax_rows(scores)?;

    let ones_row = tape.constant(Tensor::ones(1, d_a));
    let w_src = tape.slice_cols(weights, 0, 1)?;
    let w_src = tape.matmul(w_src, ones_row)?;
    let w_dst = tape.slice_cols(weights, 1, 2)?;
    let w_dst = tape.matmul(w_dst, ones_row)?;
    let a = tape.mul(w_src, v_src)?;
    let b = tape.mul(w_dst, v_dst)?;
    let output = tape.add(a, b)?;
    Ok(Attention { output, weights })
}

#[derive(Debug, Clone, Copy)]
pub struct HeadOutput {
    pub logits: Var,
    pub treatment: Var,
    pub attention: Attention,
}

/// Head applied to already-gathered endpoint embeddings and edge features.
pub fn head_forward(
    tape: &mut Tape,
    head: &HeadVars,
    z_src: Var,
    z_dst: Var,
    s: Var,
) -> Result<HeadOutput> {
    let treatment = treatment_embed(tape, head, s)?;
    let attention = cross_attention(tape, head, treatment, z_src, z_dst)?;
    let joint = tape.concat_cols(&[attention.output, treatment])?;
    let logits = tape.matmul(joint, head.w_o)?;
    let logits = tape.add_row_bias(logits, head.b_o)?;
    Ok(HeadOutput {
        logits,
        treatment,
        attention,
    })
}

/// Gathers endpoint rows of `z` for the batch.
pub fn endpoints(tape: &mut Tape, z: Var, batch: &EdgeBatch) -> Result<(Var, Var)> {
    Ok((
        tape.select_rows(z, &batch.src)?,
        tape.select_rows(z, &batch.dst)?,
    ))
}

/// `m_b x C` logits for a batch, given node embeddings of the whole graph.
pub fn predict_logits(
    tape: &mut Tape,
    head: &HeadVars,
    z: Var,
    batch: &EdgeBatch,
) -> Result<HeadOutput> {
    let (z_src, z_dst) = endpoints(tape, z, batch)?;
    let s = tape.constant(batch.features.clone());
    head_forward(tape, head, z_src, z_dst, s)
}

/// Probe mean prediction of edge features from `[z_src ; z_dst]`.
pub fn pi_predict(tape: &mut Tape, probe: &ProbeVars, z_src: Var, z_dst: Var) -> Result<Var> {
    let input = tape.concat_cols(&[z_src, z_dst])?;
    let h = tape.matmul(input, probe.w1)?;
    let h = tape.add_row_bias(h, probe.b1)?;
    let h = tape.elu(h);
    let out = tape.matmul(h, probe.w2)?;
    tape.add_row_bias(out, probe.b2)
}

// ---------------------------------------------------------------------------
// Model state
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    pub dims: ModelDims,
    pub encoder: EncoderParams,
    pub head: HeadParams,
    pub probe: ProbeParams,
    /// Moments for encoder then head tensors.
    pub main_opt: AdamState,
    pub probe_opt: AdamState,
}

/// Everything the head computes for a set of edges, materialised.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeOutputs {
    pub logits: Tensor,
    pub probabilities: Tensor,
    pub predictions: Vec<usize>,
    /// `[z_src ; z_dst]` per edge.
    pub node_pairs: Tensor,
    /// Treatment embedding per edge.
    pub treatment: Tensor,
}

impl ModelState {
    /// Glorot-uniform weights, zero biases, fresh optimiser moments.
    pub fn init(d1: usize, d2: usize, num_classes: usize, dims: ModelDims, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = EncoderParams::init(&mut rng, d1, &dims);
        let head = HeadParams::init(&mut rng, d2, num_classes, &dims);
        let probe = ProbeParams::init(&mut rng, d2, &dims);
        let main_opt = AdamState::for_shapes(encoder.tensors().into_iter().chain(head.tensors()));
        let probe_opt = AdamState::for_shapes(probe.tensors());
        Self {
            dims,
            encoder,
            head,
            probe,
            main_opt,
            probe_opt,
        }
    }

    pub fn for_graph(graph: &Graph, dims: ModelDims, seed: u64) -> Self {
        Self::init(
            graph.node_dim(),
            graph.edge_dim(),
            graph.num_classes(),
            dims,
            seed,
        )
    }

    pub fn node_dim(&self) -> usize {
        self.encoder.w1.rows()
    }

    pub fn edge_dim(&self) -> usize {
        self.head.t_w1.rows()
    }

    pub fn num_classes(&self) -> usize {
        self.head.w_o.cols()
    }

    pub fn is_finite(&self) -> bool {
        self.encoder.is_finite() && self.head.is_finite() && self.probe.is_finite()
    }

    /// Node embeddings of the full graph.
    pub fn embed(&self, graph: &Graph, adj: &NormAdj) -> Result<Tensor> {
        let mut tape = Tape::new();
        let enc = self.encoder.bind(&mut tape, false);
        let x = tape.constant(graph.node_features().clone());
        let a = tape.constant(adj.matrix().clone());
        let z = gcn_forward(&mut tape, &enc, x, a)?;
        Ok(tape.value(z).clone())
    }

    /// Head outputs for the given edges using precomputed embeddings `z`.
    pub fn edge_outputs(
        &self,
        graph: &Graph,
        z: &Tensor,
        edges: &[usize],
    ) -> crate::Result<EdgeOutputs> {
        let batch = EdgeBatch::gather(graph, edges)?;
        let mut tape = Tape::new();
        let head = self.head.bind(&mut tape, false);
        let zv = tape.constant(z.clone());
        let (z_src, z_dst) = endpoints(&mut tape, zv, &batch)?;
        let s = tape.constant(batch.features.clone());
        let out = head_forward(&mut tape, &head, z_src, z_dst, s)?;
        let logits = tape.value(out.logits).clone();
        let probabilities = crate::autodiff::softmax_rows(&logits);
        let predictions = logits.argmax_rows();
        let node_pairs = Tensor::concat_cols(&[tape.value(z_src), tape.value(z_dst)])
            .map_err(AutodiffError::from)?;
        Ok(EdgeOutputs {
            logits,
            probabilities,
            predictions,
            node_pairs,
            treatment: tape.value(out.treatment).clone(),
        })
    }

    /// Class probabilities from explicit head inputs (rows of `[z_src ; z_dst ; s]`).
    pub fn head_probabilities(&self, z_src: &Tensor, z_dst: &Tensor, s: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let head = self.head.bind(&mut tape, false);
        let zs = tape.constant(z_src.clone());
        let zd = tape.constant(z_dst.clone());
        let sv = tape.constant(s.clone());
        let out = head_forward(&mut tape, &head, zs, zd, sv)?;
        Ok(crate::autodiff::softmax_rows(tape.value(out.logits)))
    }

    /// Probe prediction of edge features from explicit endpoint embeddings.
    pub fn probe_predict(&self, z_src: &Tensor, z_dst: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let probe = self.probe.bind(&mut tape, false);
        let zs = tape.constant(z_src.clone());
        let zd = tape.constant(z_dst.clone());
        let out = pi_predict(&mut tape, &probe, zs, zd)?;
        Ok(tape.value(out).clone())
    }
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("malformed checkpoint: {0}")]
    Format(#[from] serde_json::Error),
    #[error("unsupported checkpoint version {0} (expected {CHECKPOINT_VERSION})")]
    Version(u32),
    #[error("checkpoint tensor `{name}` has shape {actual:?}, expected {expected:?}")]
    Shape {
        name: String,
        actual: (usize, usize),
        expected: (usize, usize),
    },
}

/// On-disk model: parameter matrices with shape headers plus the
/// configuration that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config: TrainConfig,
    pub node_dim: usize,
    pub edge_dim: usize,
    pub num_classes: usize,
    pub dims: ModelDims,
    pub encoder: EncoderParams,
    pub head: HeadParams,
    pub probe: ProbeParams,
}

impl Checkpoint {
    pub fn new(state: &ModelState, config: &TrainConfig) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            config: config.clone(),
            node_dim: state.node_dim(),
            edge_dim: state.edge_dim(),
            num_classes: state.num_classes(),
            dims: state.dims,
            encoder: state.encoder.clone(),
            head: state.head.clone(),
            probe: state.probe.clone(),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> std::result::Result<(), CheckpointError> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> std::result::Result<Self, CheckpointError> {
        let text = fs::read_to_string(path)?;
        let ck: Self = serde_json::from_str(&text)?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(CheckpointError::Version(ck.version));
        }
        ck.check_shapes()?;
        Ok(ck)
    }

    fn check_shapes(&self) -> std::result::Result<(), CheckpointError> {
        let reference =
            ModelState::init(self.node_dim, self.edge_dim, self.num_classes, self.dims, 0);
        let blocks = [
            (
                EncoderParams::NAMES,
                self.encoder.tensors(),
                reference.encoder.tensors(),
            ),
            (
                HeadParams::NAMES,
                self.head.tensors(),
                reference.head.tensors(),
            ),
            (
                ProbeParams::NAMES,
                self.probe.tensors(),
                reference.probe.tensors(),
            ),
        ];
        for (names, got, want) in blocks {
            for ((name, g), w) in names.iter().zip(got).zip(want) {
                if g.shape() != w.shape() {
                    return Err(CheckpointError::Shape {
                        name: (*name).to_string(),
                        actual: g.shape(),
                        expected: w.shape(),
                    });
                }
            }
        }
        Ok(())
    }

    /// Model state with fresh optimiser moments.
    pub fn into_state(self) -> ModelState {
        let main_opt = AdamState::for_shapes(
            self.encoder
                .tensors()
                .into_iter()
                .chain(self.head.tensors()),
        );
        let probe_opt = AdamState::for_shapes(self.probe.tensors());
        ModelState {
            dims: self.dims,
            encoder: self.encoder,
            head: self.head,
            probe: self.probe,
            main_opt,
            probe_opt,
        }
    }
}
