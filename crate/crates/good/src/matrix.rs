//! Dense matrices in row-major `f64`, plus the sparse symmetric adjacency
//! used for graph convolutions. Everything is 64-bit: the problems are
//! desk-scale and gradient checking needs the precision.

use rand::Rng;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Argument(format!(
                "matrix data length {} does not match {}x{}",
                data.len(),
                rows,
                cols
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Matrix { rows: r, cols: c, data }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Matrix::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m[(i, j)] = f(i, j);
            }
        }
        m
    }

    pub fn identity(n: usize) -> Self {
        Matrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 })
    }

    /// Glorot-uniform initialization for weight matrices.
    pub fn glorot(rows: usize, cols: usize, rng: &mut impl Rng) -> Self {
        let bound = (6.0 / (rows + cols) as f64).sqrt();
        Matrix::from_fn(rows, cols, |_, _| rng.gen_range(-bound..bound))
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn scalar(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1, "not a scalar");
        self.data[0]
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::Shape {
                op: "matmul",
                lhs_rows: self.rows,
                lhs_cols: self.cols,
                rhs_rows: other.rows,
                rhs_cols: other.cols,
            });
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let brow = &other.data[k * other.cols..(k + 1) * other.cols];
                let orow = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (o, b) in orow.iter_mut().zip(brow) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    fn check_same_shape(&self, other: &Matrix, op: &'static str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::Shape {
                op,
                lhs_rows: self.rows,
                lhs_cols: self.cols,
                rhs_rows: other.rows,
                rhs_cols: other.cols,
            });
        }
        Ok(())
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.check_same_shape(other, "add")?;
        Ok(self.zip(other, |a, b| a + b))
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.check_same_shape(other, "sub")?;
        Ok(self.zip(other, |a, b| a - b))
    }

    pub fn hadamard(&self, other: &Matrix) -> Result<Matrix> {
        self.check_same_shape(other, "hadamard")?;
        Ok(self.zip(other, |a, b| a * b))
    }

    pub fn add_assign(&mut self, other: &Matrix) -> Result<()> {
        self.check_same_shape(other, "add_assign")?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    fn zip(&self, other: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data,
        }
    }

    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn scale(&self, c: f64) -> Matrix {
        self.map(|x| x * c)
    }

    /// Broadcast-add a 1xD row vector to every row.
    pub fn add_row(&self, row: &Matrix) -> Result<Matrix> {
        if row.rows != 1 || row.cols != self.cols {
            return Err(Error::Shape {
                op: "add_row",
                lhs_rows: self.rows,
                lhs_cols: self.cols,
                rhs_rows: row.rows,
                rhs_cols: row.cols,
            });
        }
        Ok(Matrix::from_fn(self.rows, self.cols, |i, j| {
            self[(i, j)] + row[(0, j)]
        }))
    }

    /// 1xD vector of per-column sums.
    pub fn col_sums(&self) -> Matrix {
        let mut out = Matrix::zeros(1, self.cols);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[(0, j)] += self[(i, j)];
            }
        }
        out
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

/// Sparse symmetric matrix in CSR layout. Only symmetric matrices are
/// accepted, which lets the backward pass of the sparse-dense product reuse
/// the forward matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    vals: Vec<f64>,
}

impl CsrMatrix {
    /// Build from triplets. Entries for the same (row, col) are summed.
    /// The result must be symmetric within 1e-12.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let mut per_row: Vec<std::collections::BTreeMap<usize, f64>> = vec![Default::default(); n];
        for &(i, j, v) in triplets {
            if i >= n || j >= n {
                return Err(Error::Validation(format!(
                    "index ({i}, {j}) out of range for {n}x{n} sparse matrix"
                )));
            }
            *per_row[i].entry(j).or_insert(0.0) += v;
        }
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for row in &per_row {
            for (&j, &v) in row {
                col_idx.push(j);
                vals.push(v);
            }
            row_ptr.push(col_idx.len());
        }
        let m = CsrMatrix {
            n,
            row_ptr,
            col_idx,
            vals,
        };
        for i in 0..n {
            for (j, v) in m.row(i) {
                if (v - m.get(j, i)).abs() > 1e-12 {
                    return Err(Error::Validation(format!(
                        "sparse matrix not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(m)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let lo = self.row_ptr[i];
        let hi = self.row_ptr[i + 1];
        match self.col_idx[lo..hi].binary_search(&j) {
            Ok(pos) => self.vals[lo + pos],
            Err(_) => 0.0,
        }
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let lo = self.row_ptr[i];
        let hi = self.row_ptr[i + 1];
        self.col_idx[lo..hi]
            .iter()
            .copied()
            .zip(self.vals[lo..hi].iter().copied())
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    /// Sparse-times-dense product: self (NxN) times dense (NxD).
    pub fn mul_dense(&self, dense: &Matrix) -> Result<Matrix> {
        if dense.rows() != self.n {
            return Err(Error::Shape {
                op: "spmm",
                lhs_rows: self.n,
                lhs_cols: self.n,
                rhs_rows: dense.rows(),
                rhs_cols: dense.cols(),
            });
        }
        let d = dense.cols();
        let mut out = Matrix::zeros(self.n, d);
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                let src = dense.row(j);
                let dst = &mut out.data_mut()[i * d..(i + 1) * d];
                for (o, x) in dst.iter_mut().zip(src) {
                    *o += v * x;
                }
            }
        }
        Ok(out)
    }

    pub fn to_dense(&self) -> Matrix {
        Matrix::from_fn(self.n, self.n, |i, j| self.get(i, j))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Exponential-moving-average statistics of a batch-normalization layer.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub momentum: f64,
    pub epsilon: f64,
}

impl RunningStats {
    pub fn new(dim: usize) -> Self {
        RunningStats {
            mean: vec![0.0; dim],
            var: vec![1.0; dim],
            momentum: 0.1,
            epsilon: 1e-5,
        }
    }
}

/// Full batch-normalization layer state for the standalone functional form.
#[derive(Clone, Debug)]
pub struct BatchNormState {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub stats: RunningStats,
}

impl BatchNormState {
    pub fn new(dim: usize) -> Self {
        BatchNormState {
            gamma: vec![1.0; dim],
            beta: vec![0.0; dim],
            stats: RunningStats::new(dim),
        }
    }
}

pub fn relu(x: &Matrix) -> Matrix {
    x.map(|v| v.max(0.0))
}

pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(x: &Matrix) -> Matrix {
    x.map(sigmoid_scalar)
}

/// Max-subtracted softmax over a vector.
pub fn softmax(x: &[f64]) -> Result<Vec<f64>> {
    if x.is_empty() {
        return Err(Error::Argument("softmax of empty vector".into()));
    }
    let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.iter().map(|&v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// Per-column batch statistics: (mean, population variance).
pub fn column_stats(x: &Matrix) -> (Vec<f64>, Vec<f64>) {
    let n = x.rows() as f64;
    let mut mean = vec![0.0; x.cols()];
    let mut var = vec![0.0; x.cols()];
    for i in 0..x.rows() {
        for j in 0..x.cols() {
            mean[j] += x[(i, j)];
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    for i in 0..x.rows() {
        for j in 0..x.cols() {
            let d = x[(i, j)] - mean[j];
            var[j] += d * d;
        }
    }
    for v in &mut var {
        *v /= n;
    }
    (mean, var)
}

pub fn batch_norm(x: &Matrix, state: &mut BatchNormState, mode: Mode) -> Result<Matrix> {
    if x.cols() != state.gamma.len() {
        return Err(Error::Shape {
            op: "batch_norm",
            lhs_rows: x.rows(),
            lhs_cols: x.cols(),
            rhs_rows: 1,
            rhs_cols: state.gamma.len(),
        });
    }
    if x.rows() == 0 {
        return Err(Error::Argument("batch_norm of empty batch".into()));
    }
    let (mean, var) = match mode {
        Mode::Train => {
            let (mean, var) = column_stats(x);
            let m = state.stats.momentum;
            for j in 0..mean.len() {
                state.stats.mean[j] = (1.0 - m) * state.stats.mean[j] + m * mean[j];
                state.stats.var[j] = (1.0 - m) * state.stats.var[j] + m * var[j];
            }
            (mean, var)
        }
        Mode::Eval => (state.stats.mean.clone(), state.stats.var.clone()),
    };
    let eps = state.stats.epsilon;
    Ok(Matrix::from_fn(x.rows(), x.cols(), |i, j| {
        let xhat = (x[(i, j)] - mean[j]) / (var[j] + eps).sqrt();
        state.gamma[j] * xhat + state.beta[j]
    }))
}

/// Inverted dropout: scales survivors by 1/(1-rate) at train time so that
/// eval mode is the identity.
pub fn dropout(x: &Matrix, rate: f64, mode: Mode, rng: &mut impl Rng) -> Result<Matrix> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Argument(format!(
            "dropout rate {rate} outside [0, 1)"
        )));
    }
    match mode {
        Mode::Eval => Ok(x.clone()),
        Mode::Train => {
            if rate == 0.0 {
                return Ok(x.clone());
            }
            let keep = 1.0 - rate;
            Ok(x.map(|v| {
                if rng.gen::<f64>() < rate {
                    0.0
                } else {
                    v / keep
                }
            }))
        }
    }
}
