//! Central finite-difference check of tape gradients.

use crate::autodiff::{AutodiffError, Result, Tape, Var};
use crate::tensor::Tensor;

/// Relative errors use `max(|analytic|, |numeric|, REL_FLOOR)` as the denominator.
pub const REL_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct BlockError {
    pub index: usize,
    pub max_rel_error: f64,
    /// Coordinate (row-major offset) where the block's worst error occurs.
    pub worst_offset: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub pass: bool,
    pub blocks: Vec<BlockError>,
}

impl GradCheckReport {
    /// Indices of parameter blocks whose worst error exceeds `tolerance`.
    pub fn failing_blocks(&self, tolerance: f64) -> Vec<usize> {
        self.blocks
            .iter()
            .filter(|b| b.max_rel_error.is_nan() || b.max_rel_error >= tolerance)
            .map(|b| b.index)
            .collect()
    }
}

/// Compares the tape gradient of the scalar built by `f` against central
/// differences `(f(θ+ε) − f(θ−ε)) / 2ε`, one coordinate at a time.
pub fn grad_check<F>(
    f: F,
    params: &[Tensor],
    epsilon: f64,
    tolerance: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    grad_check_on(Tape::new, f, params, epsilon, tolerance)
}

/// Like [`grad_check`], but the analytic pass runs on a tape built by
/// `make_tape` (used to inject faulty backward rules).
pub fn grad_check_on<F, T, E>(
    make_tape: T,
    f: F,
    params: &[Tensor],
    epsilon: f64,
    tolerance: f64,
) -> std::result::Result<GradCheckReport, E>
where
    F: Fn(&mut Tape, &[Var]) -> std::result::Result<Var, E>,
    T: Fn() -> Tape,
    E: From<AutodiffError>,
{
    assert!(epsilon > 0.0, "epsilon must be positive");

    let mut tape = make_tape();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;

    let eval = |ps: &[Tensor]| -> std::result::Result<f64, E> {
        let mut t = Tape::new();
        let vs: Vec<Var> = ps.iter().map(|p| t.constant(p.clone())).collect();
        let out = f(&mut t, &vs)?;
        Ok(t.value(out).item())
    };

    let mut work: Vec<Tensor> = params.to_vec();
    let mut blocks = Vec::with_capacity(params.len());
    for (b, var) in vars.iter().enumerate() {
        let analytic = grads.wrt(&tape, *var);
        let mut block = BlockError {
            index: b,
            max_rel_error: 0.0,
            worst_offset: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for k in 0..params[b].len() {
            let orig = params[b].data()[k];
            work[b].data_mut()[k] = orig + epsilon;
            let plus = eval(&work)?;
            work[b].data_mut()[k] = orig - epsilon;
            let minus = eval(&work)?;
            work[b].data_mut()[k] = orig;

            let numeric = (plus - minus) / (2.0 * epsilon);
            let a = analytic.data()[k];
            let rel = relative_error(a, numeric);
            if rel > block.max_rel_error || rel.is_nan() {
                block.max_rel_error = rel;
                block.worst_offset = k;
                block.analytic = a;
                block.numeric = numeric;
            }
        }
        blocks.push(block);
    }

    let max_rel_error = blocks
        .iter()
        .map(|b| b.max_rel_error)
        .fold(
            0.0,
            |m: f64, e| if e.is_nan() { f64::NAN } else { m.max(e) },
        );
    Ok(GradCheckReport {
        max_rel_error,
        pass: max_rel_error < tolerance,
        blocks,
    })
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(REL_FLOOR);
    (analytic - numeric).abs() / denom
}
