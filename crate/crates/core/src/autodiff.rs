//! Tape-based reverse-mode automatic differentiation over dense matrices.
//!
//! Every operation appends a node to the [`Tape`] holding its forward value
//! and enough information to apply its backward rule. Node ids are handed
//! out in creation order, so the tape is topologically sorted by
//! construction and [`Tape::backward`] is a single reverse sweep.
//!
//! Parameters that should not receive gradients (a frozen sub-network) are
//! registered with [`Tape::constant`]; gradients never propagate into them.
//!
//! ```
//! use cecf_core::autodiff::Tape;
//! use cecf_core::tensor::Tensor;
//!
//! let mut tape = Tape::new();
//! let w = tape.param(Tensor::from_rows(&[&[3.0]]));
//! let sq = tape.mul(w, w).unwrap();
//! let loss = tape.sum(sq);
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.wrt(&tape, w).item(), 6.0);
//! ```

use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AutodiffError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss((usize, usize)),
}

pub type Result<T> = std::result::Result<T, AutodiffError>;

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

/// Deliberately wrong backward rules, used as negative controls for the
/// gradient checker.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// ELU backward uses slope 1 on the negative branch.
    EluSlope,
    /// Matmul backward drops the gradient into its right operand's first entry.
    MatmulRhs,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRowBias(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Elu(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    Sum(Var),
    Mean(Var),
    Transpose(Var),
    SelectRows(Var, Vec<usize>),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
    fault: Option<Fault>,
}

/// Gradients of a scalar loss with respect to every node that requires them.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    /// Gradient for `var`, or zeros of its shape when the loss does not
    /// depend on it.
    pub fn wrt(&self, tape: &Tape, var: Var) -> Tensor {
        match self.get(var) {
            Some(g) => g.clone(),
            None => {
                let (r, c) = tape.value(var).shape();
                Tensor::zeros(r, c)
            }
        }
    }
}

pub const ELU_ALPHA: f64 = 1.0;

#[inline]
pub fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        ELU_ALPHA * x.exp_m1()
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    out
}

/// Row-wise `x - logsumexp(x)`.
pub fn log_softmax_rows(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        for v in row.iter_mut() {
            *v -= lse;
        }
    }
    out
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_fault(fault: Fault) -> Self {
        Self {
            nodes: Vec::new(),
            fault: Some(fault),
        }
    }

    pub fn fault(&self) -> Option<Fault> {
        self.fault
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).add(self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    /// `a + bias` where `bias` is `1 x cols` and is added to every row.
    pub fn add_row_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(bias));
        if bv.rows() != 1 || bv.cols() != av.cols() {
            return Err(TensorError::Dimension {
                op: "add_row_bias",
                lhs: av.shape(),
                rhs: bv.shape(),
            }
            .into());
        }
        let mut out = av.clone();
        for r in 0..out.rows() {
            for (o, b) in out.row_mut(r).iter_mut().zip(bv.data()) {
                *o += b;
            }
        }
        let rg = self.rg(&[a, bias]);
        Ok(self.push(out, Op::AddRowBias(a, bias), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).sub(self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).hadamard(self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let out = self.value(a).scale(k);
        let rg = self.rg(&[a]);
        self.push(out, Op::Scale(a, k), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|v| v.max(0.0));
        let rg = self.rg(&[a]);
        self.push(out, Op::Relu(a), rg)
    }

    pub fn elu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(elu);
        let rg = self.rg(&[a]);
        self.push(out, Op::Elu(a), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        let rg = self.rg(&[a]);
        self.push(out, Op::Sigmoid(a), rg)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::exp);
        let rg = self.rg(&[a]);
        self.push(out, Op::Exp(a), rg)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        if let Some(&bad) = av.data().iter().find(|v| v.is_nan() || **v <= 0.0) {
            return Err(TensorError::Domain {
                op: "log",
                value: bad,
            }
            .into());
        }
        let out = av.map(f64::ln);
        let rg = self.rg(&[a]);
        Ok(self.push(out, Op::Log(a), rg))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        self.expect_finite(a, "softmax_rows")?;
        let out = softmax_rows(self.value(a));
        let rg = self.rg(&[a]);
        Ok(self.push(out, Op::SoftmaxRows(a), rg))
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Result<Var> {
        self.expect_finite(a, "log_softmax_rows")?;
        let out = log_softmax_rows(self.value(a));
        let rg = self.rg(&[a]);
        Ok(self.push(out, Op::LogSoftmaxRows(a), rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        let rg = self.rg(&[a]);
        self.push(out, Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let out = Tensor::scalar(v.sum() / v.len() as f64);
        let rg = self.rg(&[a]);
        self.push(out, Op::Mean(a), rg)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).transpose();
        let rg = self.rg(&[a]);
        self.push(out, Op::Transpose(a), rg)
    }

    pub fn select_rows(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let out = self.value(a).select_rows(indices)?;
        let rg = self.rg(&[a]);
        Ok(self.push(out, Op::SelectRows(a, indices.to_vec()), rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let values: Vec<&Tensor> = parts.iter().map(|v| self.value(*v)).collect();
        let out = Tensor::concat_cols(&values)?;
        let rg = self.rg(parts);
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let out = self.value(a).slice_cols(start, end)?;
        let rg = self.rg(&[a]);
        Ok(self.push(out, Op::SliceCols(a, start), rg))
    }

    fn expect_finite(&self, a: Var, op: &'static str) -> Result<()> {
        match self.value(a).data().iter().find(|v| !v.is_finite()) {
            Some(&bad) => Err(TensorError::Domain { op, value: bad }.into()),
            None => Ok(()),
        }
    }

    /// Propagates d(loss)/d(node) back through the tape.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let shape = self.value(loss).shape();
        if shape != (1, 1) {
            return Err(AutodiffError::NonScalarLoss(shape));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else {
                continue;
            };
            self.propagate(node, &g, &mut grads)?;
            grads[id] = Some(g);
        }
        for (id, g) in grads.iter_mut().enumerate() {
            if !self.nodes[id].requires_grad {
                *g = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], var: Var, g: Tensor) -> Result<()> {
        if !self.nodes[var.0].requires_grad {
            return Ok(());
        }
        match &mut grads[var.0] {
            Some(acc) => acc.add_assign(&g)?,
            slot @ None => *slot = Some(g),
        }
        Ok(())
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.requires_grad(*a) {
                    self.accumulate(grads, *a, g.matmul(&bv.transpose())?)?;
                }
                if self.requires_grad(*b) {
                    let mut gb = av.transpose().matmul(g)?;
                    if self.fault == Some(Fault::MatmulRhs) && !gb.is_empty() {
                        gb.data_mut()[0] = 0.0;
                    }
                    self.accumulate(grads, *b, gb)?;
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone())?;
                self.accumulate(grads, *b, g.clone())?;
            }
            Op::AddRowBias(a, bias) => {
                self.accumulate(grads, *a, g.clone())?;
                if self.requires_grad(*bias) {
                    self.accumulate(grads, *bias, g.col_sums())?;
                }
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone())?;
                if self.requires_grad(*b) {
                    self.accumulate(grads, *b, g.scale(-1.0))?;
                }
            }
            Op::Mul(a, b) => {
                if self.requires_grad(*a) {
                    self.accumulate(grads, *a, g.hadamard(self.value(*b))?)?;
                }
                if self.requires_grad(*b) {
                    self.accumulate(grads, *b, g.hadamard(self.value(*a))?)?;
                }
            }
            Op::Scale(a, k) => self.accumulate(grads, *a, g.scale(*k))?,
            Op::Relu(a) => {
                let x = self.value(*a);
                let ga = g.zip_map(x, "relu", |g, x| if x > 0.0 { g } else { 0.0 })?;
                self.accumulate(grads, *a, ga)?;
            }
            Op::Elu(a) => {
                let x = self.value(*a);
                let faulty = self.fault == Some(Fault::EluSlope);
                let mut ga = g.zip_map(x, "elu", |g, x| if x > 0.0 || faulty { g } else { 0.0 })?;
                if !faulty {
                    // Negative branch: d/dx α(eˣ−1) = y + α.
                    for ((o, &gv), (&xv, &yv)) in ga
                        .data_mut()
                        .iter_mut()
                        .zip(g.data())
                        .zip(x.data().iter().zip(y.data()))
                    {
                        if xv <= 0.0 {
                            *o = gv * (yv + ELU_ALPHA);
                        }
                    }
                }
                self.accumulate(grads, *a, ga)?;
            }
            Op::Sigmoid(a) => {
                let ga = g.zip_map(y, "sigmoid", |g, y| g * y * (1.0 - y))?;
                self.accumulate(grads, *a, ga)?;
            }
            Op::Exp(a) => self.accumulate(grads, *a, g.hadamard(y)?)?,
            Op::Log(a) => {
                let ga = g.zip_map(self.value(*a), "log", |g, x| g / x)?;
                self.accumulate(grads, *a, ga)?;
            }
            Op::SoftmaxRows(a) => {
                let mut ga = g.clone();
                for r in 0..ga.rows() {
                    let (yr, gr) = (y.row(r), g.row(r));
                    let dot: f64 = yr.iter().zip(gr).map(|(y, g)| y * g).sum();
                    for ((o, &yv), &gv) in ga.row_mut(r).iter_mut().zip(yr).zip(gr) {
                        *o = yv * (gv - dot);
                    }
                }
                self.accumulate(grads, *a, ga)?;
            }
            Op::LogSoftmaxRows(a) => {
                let mut ga = g.clone();
                for r in 0..ga.rows() {
                    let (yr, gr) = (y.row(r), g.row(r));
                    let total: f64 = gr.iter().sum();
                    for ((o, &yv), &gv) in ga.row_mut(r).iter_mut().zip(yr).zip(gr) {
                        *o = gv - yv.exp() * total;
                    }
                }
                self.accumulate(grads, *a, ga)?;
            }
            Op::Sum(a) => {
                let (r, c) = self.value(*a).shape();
                self.accumulate(grads, *a, Tensor::filled(r, c, g.item()))?;
            }
            Op::Mean(a) => {
                let (r, c) = self.value(*a).shape();
                let k = g.item() / (r * c) as f64;
                self.accumulate(grads, *a, Tensor::filled(r, c, k))?;
            }
            Op::Transpose(a) => self.accumulate(grads, *a, g.transpose())?,
            Op::SelectRows(a, indices) => {
                let (r, c) = self.value(*a).shape();
                let mut ga = Tensor::zeros(r, c);
                for (k, &i) in indices.iter().enumerate() {
                    for (o, v) in ga.row_mut(i).iter_mut().zip(g.row(k)) {
                        *o += v;
                    }
                }
                self.accumulate(grads, *a, ga)?;
            }
            Op::ConcatCols(parts) => {
                let mut start = 0;
                for p in parts {
                    let width = self.value(*p).cols();
                    if self.requires_grad(*p) {
                        self.accumulate(grads, *p, g.slice_cols(start, start + width)?)?;
                    }
                    start += width;
                }
            }
            Op::SliceCols(a, start) => {
                let (r, c) = self.value(*a).shape();
                let mut ga = Tensor::zeros(r, c);
                for row in 0..r {
                    let src = g.row(row);
                    ga.row_mut(row)[*start..*start + src.len()].copy_from_slice(src);
                }
                self.accumulate(grads, *a, ga)?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::grad_check;

    fn unary(f: impl Fn(&mut Tape, Var) -> Var, x: &[f64]) -> Tensor {
        let mut tape = Tape::new();
        let v = tape.constant(Tensor::from_vec(1, x.len(), x.to_vec()).unwrap());
        let out = f(&mut tape, v);
        tape.value(out).clone()
    }

    #[test]
    fn relu_sigmoid_elu_values() {
        assert_eq!(unary(|t, v| t.relu(v), &[-1.0, 2.0]).data(), &[0.0, 2.0]);
        assert_eq!(unary(|t, v| t.sigmoid(v), &[0.0]).data(), &[0.5]);
        let e = unary(|t, v| t.elu(v), &[-1.0]).item();
        assert!((e - (std::f64::consts::E.recip() - 1.0)).abs() < 1e-15);
        assert!((e + 0.6321).abs() < 1e-4);
    }

    #[test]
    fn log_rejects_non_positive() {
        let mut tape = Tape::new();
        let v = tape.constant(Tensor::from_rows(&[&[1.0, 0.0]]));
        assert!(matches!(
            tape.log(v),
            Err(AutodiffError::Tensor(TensorError::Domain { op: "log", .. }))
        ));
    }

    #[test]
    fn binary_shape_mismatch_is_dimension_error() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(2, 2));
        let b = tape.constant(Tensor::zeros(2, 3));
        assert!(tape.add(a, b).is_err());
        assert!(tape.mul(a, b).is_err());
        let bias = tape.constant(Tensor::zeros(1, 3));
        assert!(tape.add_row_bias(a, bias).is_err());
    }

    #[test]
    fn softmax_rows_examples() {
        let s = unary(|t, v| t.softmax_rows(v).unwrap(), &[0.0, 0.0]);
        assert_eq!(s.data(), &[0.5, 0.5]);
        let s = unary(|t, v| t.softmax_rows(v).unwrap(), &[1000.0, 1000.0]);
        assert_eq!(s.data(), &[0.5, 0.5]);
        let s = unary(|t, v| t.softmax_rows(v).unwrap(), &[1f64.ln(), 3f64.ln()]);
        assert!((s.data()[0] - 0.25).abs() < 1e-15);
        assert!((s.data()[1] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn softmax_rejects_non_finite() {
        let mut tape = Tape::new();
        let v = tape.constant(Tensor::from_rows(&[&[f64::NAN, 0.0]]));
        assert!(tape.softmax_rows(v).is_err());
    }

    #[test]
    fn sum_gives_all_ones_gradient() {
        let mut tape = Tape::new();
        let w = tape.param(Tensor::from_fn(3, 4, |r, c| (r * 4 + c) as f64 - 5.0));
        let loss = tape.sum(w);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.wrt(&tape, w), Tensor::ones(3, 4));
    }

    #[test]
    fn quadratic_gradient() {
        let mut tape = Tape::new();
        let w = tape.param(Tensor::from_rows(&[&[3.0]]));
        let sq = tape.mul(w, w).unwrap();
        let loss = tape.sum(sq);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.wrt(&tape, w).item(), 6.0);
    }

    #[test]
    fn loss_gradient_wrt_itself_is_one() {
        let mut tape = Tape::new();
        let w = tape.param(Tensor::from_rows(&[&[0.5, -2.0]]));
        let loss = tape.mean(w);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(loss).unwrap().item(), 1.0);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut tape = Tape::new();
        let w = tape.param(Tensor::zeros(2, 1));
        assert_eq!(
            tape.backward(w).unwrap_err(),
            AutodiffError::NonScalarLoss((2, 1))
        );
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::from_rows(&[&[2.0]]));
        let b = tape.param(Tensor::from_rows(&[&[5.0]]));
        let p = tape.mul(a, b).unwrap();
        let loss = tape.sum(p);
        let g = tape.backward(loss).unwrap();
        assert!(g.get(a).is_none());
        assert_eq!(g.wrt(&tape, b).item(), 2.0);
    }

    fn det_tensor(rows: usize, cols: usize, seed: f64) -> Tensor {
        Tensor::from_fn(rows, cols, |r, c| {
            ((r * 7 + c * 3) as f64 * 0.37 + seed).sin()
        })
    }

    /// Every primitive, composed into one scalar, against central differences.
    #[test]
    fn every_primitive_matches_finite_differences() {
        let params = vec![
            det_tensor(3, 4, 0.1),
            det_tensor(4, 2, 0.7),
            det_tensor(1, 2, 1.3),
            det_tensor(3, 2, 2.1),
        ];
        let f = |tape: &mut Tape, p: &[Var]| -> Result<Var> {
            let h = tape.matmul(p[0], p[1])?;
            let h = tape.add_row_bias(h, p[2])?;
            let e = tape.elu(h);
            let r = tape.relu(h);
            let s = tape.sigmoid(e);
            let m = tape.mul(s, p[3])?;
            let d = tape.sub(m, r)?;
            let sm = tape.softmax_rows(d)?;
            let ls = tape.log_softmax_rows(d)?;
            let t = tape.transpose(ls);
            let tt = tape.transpose(t);
            let sel = tape.select_rows(tt, &[2, 0, 2])?;
            let cat = tape.concat_cols(&[sel, sm])?;
            let sl = tape.slice_cols(cat, 1, 3)?;
            let ex = tape.exp(sl);
            let plus = tape.add(ex, ex)?;
            let lg = tape.log(plus)?;
            let sc = tape.scale(lg, -0.5);
            let a = tape.sum(sc);
            let b = tape.mean(sm);
            tape.add(a, b)
        };
        let report = grad_check(f, &params, 1e-5, 1e-6).unwrap();
        assert!(report.pass, "{report:?}");
    }

    #[test]
    fn faulty_elu_is_caught() {
        let params = vec![Tensor::from_rows(&[&[-0.5, 0.3, -1.2]])];
        let report = crate::gradcheck::grad_check_on(
            || Tape::with_fault(Fault::EluSlope),
            |tape, p| {
                let e = tape.elu(p[0]);
                Ok::<_, AutodiffError>(tape.sum(e))
            },
            &params,
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(!report.pass);
    }
}
