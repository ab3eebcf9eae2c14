//! Causal edge classification on attributed graphs.
//!
//! Node embeddings from a GCN act as the context of each edge and the edge
//! feature vector acts as a high-dimensional treatment. A probe network
//! tries to recover the treatment from the endpoint embeddings; the encoder
//! is trained to classify edges while making that recovery hard, which
//! balances the representation against node-driven confounding.
//!
//! Crate layout:
//!
//! * [`tensor`], [`autodiff`], [`gradcheck`], [`optim`]: dense matrices,
//!   reverse-mode differentiation and Adam
//! * [`graph`], [`synth`]: data model, CSV I/O, splits and a synthetic
//!   generator with a tunable node→edge dependence
//! * [`model`], [`training`]: the network and its alternating training loop
//! * [`analysis`]: metrics, CCA, grouped Shapley values, tendency study

pub mod analysis;
pub mod autodiff;
pub mod gradcheck;
pub mod graph;
pub mod model;
pub mod optim;
pub mod synth;
pub mod tensor;
pub mod training;
pub mod verify;

pub use graph::{EdgeBatch, Graph, NormAdj, SplitAssignment};
pub use model::{Checkpoint, ModelDims, ModelState};
pub use synth::SynthConfig;
pub use tensor::Tensor;
pub use training::{Regularizer, TrainConfig};

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Autodiff(#[from] autodiff::AutodiffError),
    #[error(transparent)]
    Graph(#[from] graph::GraphError),
    #[error(transparent)]
    Synth(#[from] synth::SynthError),
    #[error(transparent)]
    Checkpoint(#[from] model::CheckpointError),
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("size error: {0}")]
    Size(String),
    #[error("out of scope: {0}")]
    Scope(String),
    #[error("invalid `{field}`: {reason}")]
    InvalidConfig { field: &'static str, reason: String },
    #[error("{loss} diverged to {value}{}", location(*.epoch, *.batch))]
    Divergence {
        loss: &'static str,
        value: f64,
        epoch: Option<usize>,
        batch: Option<usize>,
    },
}

fn location(epoch: Option<usize>, batch: Option<usize>) -> String {
    match (epoch, batch) {
        (Some(e), Some(b)) => format!(" at epoch {e}, batch {b}"),
        (Some(e), None) => format!(" at epoch {e}"),
        _ => String::new(),
    }
}

impl From<tensor::TensorError> for Error {
    fn from(e: tensor::TensorError) -> Self {
        Error::Autodiff(e.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
