//! Adam with bias-corrected moment estimates.

use serde::{Deserialize, Serialize};

use crate::tensor::{Tensor, TensorError};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl AdamState {
    /// Zeroed moments matching the given parameter shapes.
    pub fn for_shapes<'a>(params: impl IntoIterator<Item = &'a Tensor>) -> Self {
        let first: Vec<Tensor> = params
            .into_iter()
            .map(|p| Tensor::zeros(p.rows(), p.cols()))
            .collect();
        Self {
            step: 0,
            second: first.clone(),
            first,
        }
    }

    pub fn len(&self) -> usize {
        self.first.len()
    }

    pub fn is_empty(&self) -> bool {
        self.first.is_empty()
    }
}

/// One Adam update of `params` in place.
pub fn adam_step(
    state: &mut AdamState,
    params: &mut [&mut Tensor],
    grads: &[Tensor],
    lr: f64,
) -> Result<(), TensorError> {
    if params.len() != grads.len() || params.len() != state.first.len() {
        return Err(TensorError::Dimension {
            op: "adam_step",
            lhs: (params.len(), state.first.len()),
            rhs: (grads.len(), 1),
        });
    }
    for ((p, g), m) in params.iter().zip(grads).zip(&state.first) {
        if p.shape() != g.shape() || p.shape() != m.shape() {
            return Err(TensorError::Dimension {
                op: "adam_step",
                lhs: p.shape(),
                rhs: g.shape(),
            });
        }
    }

    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - BETA1.powi(t);
    let bc2 = 1.0 - BETA2.powi(t);
    for (i, p) in params.iter_mut().enumerate() {
        let g = grads[i].data();
        let m = state.first[i].data_mut();
        let v = state.second[i].data_mut();
        for (k, w) in p.data_mut().iter_mut().enumerate() {
            m[k] = BETA1 * m[k] + (1.0 - BETA1) * g[k];
            v[k] = BETA2 * v[k] + (1.0 - BETA2) * g[k] * g[k];
            let m_hat = m[k] / bc1;
            let v_hat = v[k] / bc2;
            *w -= lr * m_hat / (v_hat.sqrt() + EPS);
        }
    }
    Ok(())
}
