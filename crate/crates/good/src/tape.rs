//! Tape-based reverse-mode differentiation over dense matrices.
//!
//! The model is a static feed-forward composition, so each training step
//! records a fresh tape and replays it backward. Nodes are created in
//! topological order; walking the node list in reverse visits every node
//! after all of its consumers.

use std::rc::Rc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::matrix::{column_stats, CsrMatrix, Matrix, Mode, RunningStats};

/// Handle to a node on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// Probability clamp applied inside the BCE primitive before taking logs.
pub const SCORE_CLAMP: f64 = 1e-12;

enum Op {
    Leaf,
    MatMul(Var, Var),
    SpMM(Rc<CsrMatrix>, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Hadamard(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    MaskScale(Var, Rc<Vec<f64>>),
    ScaleRows(Var, Rc<Vec<f64>>),
    ScaleByEntry { x: Var, coeff: Var, idx: usize },
    Relu(Var),
    Sigmoid(Var),
    Ln(Var),
    SoftmaxRows(Var),
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Matrix,
        inv_std: Vec<f64>,
        train: bool,
    },
    GatherRows(Var, Rc<Vec<usize>>),
    ConcatCols(Vec<Var>),
    MeanRows(Var),
    Sum(Var),
    MeanAll(Var),
    BceMean { scores: Var, labels: Rc<Vec<f64>> },
}

struct Node {
    op: Op,
    value: Matrix,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Per-node gradient accumulators produced by a backward pass. A node that
/// the loss does not depend on has no accumulator; callers treat that as a
/// zero gradient.
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads[v.0].as_ref()
    }

    /// Gradient of `v`, materialized as zeros when the loss is independent
    /// of it.
    pub fn get_or_zeros(&self, v: Var, rows: usize, cols: usize) -> Matrix {
        match self.grads[v.0].as_ref() {
            Some(g) => g.clone(),
            None => Matrix::zeros(rows, cols),
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    fn push(&mut self, op: Op, value: Matrix) -> Var {
        debug_assert!(value.all_finite(), "non-finite value on tape");
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    /// Register a leaf (input, parameter, or constant).
    pub fn input(&mut self, value: Matrix) -> Var {
        self.push(Op::Leaf, value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(Op::MatMul(a, b), value))
    }

    pub fn spmm(&mut self, s: Rc<CsrMatrix>, x: Var) -> Result<Var> {
        let value = s.mul_dense(self.value(x))?;
        Ok(self.push(Op::SpMM(s, x), value))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).add(self.value(b))?;
        Ok(self.push(Op::Add(a, b), value))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).sub(self.value(b))?;
        Ok(self.push(Op::Sub(a, b), value))
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).hadamard(self.value(b))?;
        Ok(self.push(Op::Hadamard(a, b), value))
    }

    /// Broadcast-add a 1xD bias row to every row of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let value = self.value(x).add_row(self.value(row))?;
        Ok(self.push(Op::AddRow(x, row), value))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let value = self.value(x).scale(c);
        self.push(Op::Scale(x, c), value)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let value = self.value(x).map(|v| v + c);
        self.push(Op::AddScalar(x), value)
    }

    fn mask_scale(&mut self, x: Var, mask: Rc<Vec<f64>>) -> Var {
        let value = {
            let xv = self.value(x);
            debug_assert_eq!(xv.data().len(), mask.len());
            let data = xv
                .data()
                .iter()
                .zip(mask.iter())
                .map(|(v, m)| v * m)
                .collect();
            Matrix::from_vec(xv.rows(), xv.cols(), data).expect("mask length checked")
        };
        self.push(Op::MaskScale(x, mask), value)
    }

    /// Scale row i of `x` by `factors[i]` (constant factors).
    pub fn scale_rows(&mut self, x: Var, factors: Rc<Vec<f64>>) -> Result<Var> {
        let xv = self.value(x);
        if factors.len() != xv.rows() {
            return Err(Error::Argument(format!(
                "scale_rows got {} factors for {} rows",
                factors.len(),
                xv.rows()
            )));
        }
        let value = Matrix::from_fn(xv.rows(), xv.cols(), |i, j| xv[(i, j)] * factors[i]);
        Ok(self.push(Op::ScaleRows(x, factors), value))
    }

    /// Scale all of `x` by entry `idx` of the 1xC node `coeff`, keeping the
    /// product differentiable in both operands.
    pub fn scale_by_entry(&mut self, x: Var, coeff: Var, idx: usize) -> Result<Var> {
        let cv = self.value(coeff);
        if cv.rows() != 1 || idx >= cv.cols() {
            return Err(Error::Argument(format!(
                "coefficient index {idx} out of range for 1x{} vector",
                cv.cols()
            )));
        }
        let q = cv[(0, idx)];
        let value = self.value(x).scale(q);
        Ok(self.push(Op::ScaleByEntry { x, coeff, idx }, value))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.max(0.0));
        self.push(Op::Relu(x), value)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self.value(x).map(crate::matrix::sigmoid_scalar);
        self.push(Op::Sigmoid(x), value)
    }

    pub fn ln(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if xv.data().iter().any(|&v| v <= 0.0) {
            return Err(Error::Argument("ln of non-positive entry".into()));
        }
        let value = xv.map(f64::ln);
        Ok(self.push(Op::Ln(x), value))
    }

    /// Max-subtracted softmax applied independently to each row.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if xv.cols() == 0 {
            return Err(Error::Argument("softmax of empty rows".into()));
        }
        let mut value = Matrix::zeros(xv.rows(), xv.cols());
        for i in 0..xv.rows() {
            let s = crate::matrix::softmax(xv.row(i))?;
            for (j, v) in s.into_iter().enumerate() {
                value[(i, j)] = v;
            }
        }
        Ok(self.push(Op::SoftmaxRows(x), value))
    }

    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running: &mut RunningStats,
        mode: Mode,
    ) -> Result<Var> {
        let (rows, cols) = self.value(x).shape();
        if rows == 0 {
            return Err(Error::Argument("batch_norm of empty batch".into()));
        }
        let d = running.mean.len();
        if cols != d || self.value(gamma).cols() != d || self.value(beta).cols() != d {
            return Err(Error::Shape {
                op: "batch_norm",
                lhs_rows: rows,
                lhs_cols: cols,
                rhs_rows: 1,
                rhs_cols: d,
            });
        }
        let xv = self.value(x);
        let (mean, var) = match mode {
            Mode::Train => {
                let (mean, var) = column_stats(xv);
                let m = running.momentum;
                for j in 0..d {
                    running.mean[j] = (1.0 - m) * running.mean[j] + m * mean[j];
                    running.var[j] = (1.0 - m) * running.var[j] + m * var[j];
                }
                (mean, var)
            }
            Mode::Eval => (running.mean.clone(), running.var.clone()),
        };
        let inv_std: Vec<f64> = var.iter().map(|&v| 1.0 / (v + running.epsilon).sqrt()).collect();
        let xhat = Matrix::from_fn(rows, cols, |i, j| (xv[(i, j)] - mean[j]) * inv_std[j]);
        let gv = self.value(gamma);
        let bv = self.value(beta);
        let value = Matrix::from_fn(rows, cols, |i, j| gv[(0, j)] * xhat[(i, j)] + bv[(0, j)]);
        Ok(self.push(
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train: mode == Mode::Train,
            },
            value,
        ))
    }

    /// Inverted dropout. Eval mode records nothing and returns `x` as-is.
    pub fn dropout(&mut self, x: Var, rate: f64, mode: Mode, rng: &mut impl Rng) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Argument(format!(
                "dropout rate {rate} outside [0, 1)"
            )));
        }
        if mode == Mode::Eval || rate == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 - rate;
        let len = self.value(x).data().len();
        let mask: Vec<f64> = (0..len)
            .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { 1.0 / keep })
            .collect();
        Ok(self.mask_scale(x, Rc::new(mask)))
    }

    /// Dropout with a caller-supplied mask of per-entry multipliers. Used to
    /// hold masks fixed during gradient checking.
    pub fn dropout_with_mask(&mut self, x: Var, mask: Rc<Vec<f64>>) -> Result<Var> {
        if mask.len() != self.value(x).data().len() {
            return Err(Error::Argument("dropout mask length mismatch".into()));
        }
        Ok(self.mask_scale(x, mask))
    }

    pub fn gather_rows(&mut self, x: Var, indices: Rc<Vec<usize>>) -> Result<Var> {
        let xv = self.value(x);
        let d = xv.cols();
        let mut value = Matrix::zeros(indices.len(), d);
        for (out_i, &src) in indices.iter().enumerate() {
            if src >= xv.rows() {
                return Err(Error::Argument(format!(
                    "row index {src} out of range for {} rows",
                    xv.rows()
                )));
            }
            for j in 0..d {
                value[(out_i, j)] = xv[(src, j)];
            }
        }
        Ok(self.push(Op::GatherRows(x, indices), value))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Argument("concat of zero matrices".into()));
        }
        let rows = self.value(parts[0]).rows();
        let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut value = Matrix::zeros(rows, total);
        let mut offset = 0;
        for &p in parts {
            let pv = self.value(p);
            if pv.rows() != rows {
                return Err(Error::Argument("concat of unequal row counts".into()));
            }
            for i in 0..rows {
                for j in 0..pv.cols() {
                    value[(i, offset + j)] = pv[(i, j)];
                }
            }
            offset += pv.cols();
        }
        Ok(self.push(Op::ConcatCols(parts.to_vec()), value))
    }

    /// Column means as a 1xD row.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if xv.rows() == 0 {
            return Err(Error::Argument("mean over zero rows".into()));
        }
        let value = xv.col_sums().scale(1.0 / xv.rows() as f64);
        Ok(self.push(Op::MeanRows(x), value))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Matrix::from_vec(1, 1, vec![self.value(x).sum()]).unwrap();
        self.push(Op::Sum(x), value)
    }

    pub fn mean_all(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let n = xv.data().len();
        if n == 0 {
            return Err(Error::Argument("mean of empty matrix".into()));
        }
        let value = Matrix::from_vec(1, 1, vec![xv.sum() / n as f64]).unwrap();
        Ok(self.push(Op::MeanAll(x), value))
    }

    /// Mean binary cross-entropy over an Ex1 column of probabilities against
    /// constant labels, with scores clamped to (SCORE_CLAMP, 1-SCORE_CLAMP).
    pub fn bce_mean(&mut self, scores: Var, labels: Rc<Vec<f64>>) -> Result<Var> {
        let sv = self.value(scores);
        if sv.cols() != 1 || sv.rows() != labels.len() {
            return Err(Error::Argument(format!(
                "bce got {}x{} scores for {} labels",
                sv.rows(),
                sv.cols(),
                labels.len()
            )));
        }
        if labels.is_empty() {
            return Err(Error::Argument("bce of empty batch".into()));
        }
        let mut total = 0.0;
        for (i, &y) in labels.iter().enumerate() {
            let p = sv[(i, 0)].clamp(SCORE_CLAMP, 1.0 - SCORE_CLAMP);
            total -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
        }
        let value = Matrix::from_vec(1, 1, vec![total / labels.len() as f64]).unwrap();
        Ok(self.push(Op::BceMean { scores, labels }, value))
    }

    /// Reverse pass from a scalar loss node. Returns per-node gradient
    /// accumulators; every leaf the loss depends on receives its full
    /// gradient.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).shape() != (1, 1) {
            let (r, c) = self.value(loss).shape();
            return Err(Error::Argument(format!(
                "backward needs a scalar loss, got {r}x{c}"
            )));
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Matrix::from_vec(1, 1, vec![1.0]).unwrap());

        for idx in (0..=loss.0).rev() {
            let g = match grads[idx].take() {
                Some(g) => g,
                None => continue,
            };
            self.accumulate(idx, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn add_grad(grads: &mut [Option<Matrix>], v: Var, delta: Matrix) -> Result<()> {
        match &mut grads[v.0] {
            Some(g) => g.add_assign(&delta)?,
            slot @ None => *slot = Some(delta),
        }
        Ok(())
    }

    fn accumulate(&self, idx: usize, g: &Matrix, grads: &mut [Option<Matrix>]) -> Result<()> {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let da = g.matmul(&self.value(*b).transpose())?;
                let db = self.value(*a).transpose().matmul(g)?;
                Self::add_grad(grads, *a, da)?;
                Self::add_grad(grads, *b, db)?;
            }
            Op::SpMM(s, x) => {
                // the sparse matrix is symmetric, so S^T g == S g
                Self::add_grad(grads, *x, s.mul_dense(g)?)?;
            }
            Op::Add(a, b) => {
                Self::add_grad(grads, *a, g.clone())?;
                Self::add_grad(grads, *b, g.clone())?;
            }
            Op::Sub(a, b) => {
                Self::add_grad(grads, *a, g.clone())?;
                Self::add_grad(grads, *b, g.scale(-1.0))?;
            }
            Op::Hadamard(a, b) => {
                Self::add_grad(grads, *a, g.hadamard(self.value(*b))?)?;
                Self::add_grad(grads, *b, g.hadamard(self.value(*a))?)?;
            }
            Op::AddRow(x, row) => {
                Self::add_grad(grads, *x, g.clone())?;
                Self::add_grad(grads, *row, g.col_sums())?;
            }
            Op::Scale(x, c) => {
                Self::add_grad(grads, *x, g.scale(*c))?;
            }
            Op::AddScalar(x) => {
                Self::add_grad(grads, *x, g.clone())?;
            }
            Op::MaskScale(x, mask) => {
                let data = g
                    .data()
                    .iter()
                    .zip(mask.iter())
                    .map(|(gv, m)| gv * m)
                    .collect();
                Self::add_grad(grads, *x, Matrix::from_vec(g.rows(), g.cols(), data)?)?;
            }
            Op::ScaleRows(x, factors) => {
                let dx = Matrix::from_fn(g.rows(), g.cols(), |i, j| g[(i, j)] * factors[i]);
                Self::add_grad(grads, *x, dx)?;
            }
            Op::ScaleByEntry { x, coeff, idx } => {
                let q = self.value(*coeff)[(0, *idx)];
                Self::add_grad(grads, *x, g.scale(q))?;
                let mut dq = Matrix::zeros(1, self.value(*coeff).cols());
                dq[(0, *idx)] = g.hadamard(self.value(*x))?.sum();
                Self::add_grad(grads, *coeff, dq)?;
            }
            Op::Relu(x) => {
                let xv = self.value(*x);
                let dx = Matrix::from_fn(g.rows(), g.cols(), |i, j| {
                    if xv[(i, j)] > 0.0 {
                        g[(i, j)]
                    } else {
                        0.0
                    }
                });
                Self::add_grad(grads, *x, dx)?;
            }
            Op::Sigmoid(x) => {
                let s = &node.value;
                let dx =
                    Matrix::from_fn(g.rows(), g.cols(), |i, j| {
                        g[(i, j)] * s[(i, j)] * (1.0 - s[(i, j)])
                    });
                Self::add_grad(grads, *x, dx)?;
            }
            Op::Ln(x) => {
                let xv = self.value(*x);
                let dx = Matrix::from_fn(g.rows(), g.cols(), |i, j| g[(i, j)] / xv[(i, j)]);
                Self::add_grad(grads, *x, dx)?;
            }
            Op::SoftmaxRows(x) => {
                let s = &node.value;
                let mut dx = Matrix::zeros(g.rows(), g.cols());
                for i in 0..g.rows() {
                    let dot: f64 = (0..g.cols()).map(|j| g[(i, j)] * s[(i, j)]).sum();
                    for j in 0..g.cols() {
                        dx[(i, j)] = s[(i, j)] * (g[(i, j)] - dot);
                    }
                }
                Self::add_grad(grads, *x, dx)?;
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            } => {
                let gv = self.value(*gamma);
                let dgamma = g.hadamard(xhat)?.col_sums();
                let dbeta = g.col_sums();
                let dxhat =
                    Matrix::from_fn(g.rows(), g.cols(), |i, j| g[(i, j)] * gv[(0, j)]);
                let dx = if *train {
                    let n = g.rows() as f64;
                    let sum_dxhat = dxhat.col_sums();
                    let sum_dxhat_xhat = dxhat.hadamard(xhat)?.col_sums();
                    Matrix::from_fn(g.rows(), g.cols(), |i, j| {
                        inv_std[j] / n
                            * (n * dxhat[(i, j)]
                                - sum_dxhat[(0, j)]
                                - xhat[(i, j)] * sum_dxhat_xhat[(0, j)])
                    })
                } else {
                    Matrix::from_fn(g.rows(), g.cols(), |i, j| dxhat[(i, j)] * inv_std[j])
                };
                Self::add_grad(grads, *x, dx)?;
                Self::add_grad(grads, *gamma, dgamma)?;
                Self::add_grad(grads, *beta, dbeta)?;
            }
            Op::GatherRows(x, indices) => {
                let xv = self.value(*x);
                let mut dx = Matrix::zeros(xv.rows(), xv.cols());
                for (out_i, &src) in indices.iter().enumerate() {
                    for j in 0..xv.cols() {
                        dx[(src, j)] += g[(out_i, j)];
                    }
                }
                Self::add_grad(grads, *x, dx)?;
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let cols = self.value(p).cols();
                    let dp = Matrix::from_fn(g.rows(), cols, |i, j| g[(i, offset + j)]);
                    Self::add_grad(grads, p, dp)?;
                    offset += cols;
                }
            }
            Op::MeanRows(x) => {
                let xv = self.value(*x);
                let n = xv.rows() as f64;
                let dx = Matrix::from_fn(xv.rows(), xv.cols(), |_, j| g[(0, j)] / n);
                Self::add_grad(grads, *x, dx)?;
            }
            Op::Sum(x) => {
                let xv = self.value(*x);
                let gs = g.scalar();
                Self::add_grad(grads, *x, Matrix::from_fn(xv.rows(), xv.cols(), |_, _| gs))?;
            }
            Op::MeanAll(x) => {
                let xv = self.value(*x);
                let gs = g.scalar() / xv.data().len() as f64;
                Self::add_grad(grads, *x, Matrix::from_fn(xv.rows(), xv.cols(), |_, _| gs))?;
            }
            Op::BceMean { scores, labels } => {
                let sv = self.value(*scores);
                let n = labels.len() as f64;
                let gs = g.scalar();
                let mut dx = Matrix::zeros(sv.rows(), 1);
                for (i, &y) in labels.iter().enumerate() {
                    let raw = sv[(i, 0)];
                    // the clamp saturates: no gradient outside its range
                    if raw > SCORE_CLAMP && raw < 1.0 - SCORE_CLAMP {
                        dx[(i, 0)] = gs * ((1.0 - y) / (1.0 - raw) - y / raw) / n;
                    }
                }
                Self::add_grad(grads, *scores, dx)?;
            }
        }
        Ok(())
    }
}
