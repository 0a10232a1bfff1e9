//! Downstream heads: the link predictor applied to element-wise products of
//! endpoint embeddings, and the coefficient disentangler reconstructing the
//! mixing coefficients from the aggregated embedding.

use std::rc::Rc;

use rand::Rng;

use crate::encoder::Forward;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::params::{BnId, BnStates, ParamId, ParamStore};
use crate::tape::Var;

#[derive(Clone, Debug)]
pub struct LinkHeadParams {
    pub w_hidden: ParamId,
    pub b_hidden: ParamId,
    pub w_out: ParamId,
    pub b_out: ParamId,
    pub bn_gamma: ParamId,
    pub bn_beta: ParamId,
    pub bn: BnId,
    pub dropout_rate: f64,
}

#[derive(Clone, Debug)]
pub struct DisentanglerParams {
    pub w_hidden: ParamId,
    pub b_hidden: ParamId,
    pub w_out: ParamId,
    pub b_out: ParamId,
    pub bn_gamma: ParamId,
    pub bn_beta: ParamId,
    pub bn: BnId,
    pub dropout_rate: f64,
}

/// sigma(W_out DP(ReLU(BN(W_hidden (H_src . H_dst) + b_hidden))) + b_out),
/// one probability per pair. BN statistics are taken over the pair batch in
/// train mode. An empty pair list yields an empty 0x1 output.
pub fn predict_links<R: Rng>(
    fwd: &mut Forward<'_, R>,
    h: Var,
    pairs: &[(usize, usize)],
    p: &LinkHeadParams,
) -> Result<Var> {
    if pairs.is_empty() {
        return Ok(fwd.tape.input(Matrix::zeros(0, 1)));
    }
    let n = fwd.tape.value(h).rows();
    for &(s, d) in pairs {
        if s >= n || d >= n {
            return Err(Error::Argument(format!(
                "pair ({s}, {d}) out of range for {n} nodes"
            )));
        }
    }
    let srcs: Rc<Vec<usize>> = Rc::new(pairs.iter().map(|p| p.0).collect());
    let dsts: Rc<Vec<usize>> = Rc::new(pairs.iter().map(|p| p.1).collect());
    let hs = fwd.tape.gather_rows(h, srcs)?;
    let hd = fwd.tape.gather_rows(h, dsts)?;
    let e = fwd.tape.hadamard(hs, hd)?;
    let z = fwd.tape.matmul(e, fwd.var(p.w_hidden))?;
    let z = fwd.tape.add_row(z, fwd.var(p.b_hidden))?;
    let z = fwd.tape.batch_norm(
        z,
        fwd.var(p.bn_gamma),
        fwd.var(p.bn_beta),
        fwd.bn.get_mut(p.bn),
        fwd.mode,
    )?;
    let z = fwd.tape.relu(z);
    let z = fwd.tape.dropout(z, p.dropout_rate, fwd.mode, fwd.rng)?;
    let z = fwd.tape.matmul(z, fwd.var(p.w_out))?;
    let z = fwd.tape.add_row(z, fwd.var(p.b_out))?;
    Ok(fwd.tape.sigmoid(z))
}

/// Per-node logits through the two-layer network, mean-pooled over nodes,
/// then softmax: a single predicted coefficient vector on the simplex.
pub fn disentangle<R: Rng>(
    fwd: &mut Forward<'_, R>,
    h: Var,
    p: &DisentanglerParams,
) -> Result<Var> {
    if fwd.tape.value(h).rows() == 0 {
        return Err(Error::Argument("disentangle needs at least one node".into()));
    }
    let z = fwd.tape.matmul(h, fwd.var(p.w_hidden))?;
    let z = fwd.tape.add_row(z, fwd.var(p.b_hidden))?;
    let z = fwd.tape.batch_norm(
        z,
        fwd.var(p.bn_gamma),
        fwd.var(p.bn_beta),
        fwd.bn.get_mut(p.bn),
        fwd.mode,
    )?;
    let z = fwd.tape.relu(z);
    let z = fwd.tape.dropout(z, p.dropout_rate, fwd.mode, fwd.rng)?;
    let z = fwd.tape.matmul(z, fwd.var(p.w_out))?;
    let z = fwd.tape.add_row(z, fwd.var(p.b_out))?;
    let pooled = fwd.tape.mean_rows(z)?;
    fwd.tape.softmax_rows(pooled)
}

pub fn build_link_head(
    store: &mut ParamStore,
    bn: &mut BnStates,
    prefix: &str,
    input_dim: usize,
    hidden_dim: usize,
    dropout_rate: f64,
    rng: &mut impl Rng,
) -> LinkHeadParams {
    LinkHeadParams {
        w_hidden: store.add(format!("{prefix}.wh"), Matrix::glorot(input_dim, hidden_dim, rng)),
        b_hidden: store.add(format!("{prefix}.bh"), Matrix::zeros(1, hidden_dim)),
        w_out: store.add(format!("{prefix}.wo"), Matrix::glorot(hidden_dim, 1, rng)),
        b_out: store.add(format!("{prefix}.bo"), Matrix::zeros(1, 1)),
        bn_gamma: store.add(format!("{prefix}.gamma"), Matrix::from_fn(1, hidden_dim, |_, _| 1.0)),
        bn_beta: store.add(format!("{prefix}.beta"), Matrix::zeros(1, hidden_dim)),
        bn: bn.add(hidden_dim),
        dropout_rate,
    }
}

pub fn build_disentangler(
    store: &mut ParamStore,
    bn: &mut BnStates,
    prefix: &str,
    input_dim: usize,
    hidden_dim: usize,
    num_contexts: usize,
    dropout_rate: f64,
    rng: &mut impl Rng,
) -> DisentanglerParams {
    DisentanglerParams {
        w_hidden: store.add(format!("{prefix}.wh"), Matrix::glorot(input_dim, hidden_dim, rng)),
        b_hidden: store.add(format!("{prefix}.bh"), Matrix::zeros(1, hidden_dim)),
        w_out: store.add(format!("{prefix}.wo"), Matrix::glorot(hidden_dim, num_contexts, rng)),
        b_out: store.add(format!("{prefix}.bo"), Matrix::zeros(1, num_contexts)),
        bn_gamma: store.add(format!("{prefix}.gamma"), Matrix::from_fn(1, hidden_dim, |_, _| 1.0)),
        bn_beta: store.add(format!("{prefix}.beta"), Matrix::zeros(1, hidden_dim)),
        bn: bn.add(hidden_dim),
        dropout_rate,
    }
}
