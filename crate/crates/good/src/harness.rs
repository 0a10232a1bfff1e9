//! Gradient-check harness: runs `grad_check` over every differentiable model
//! composite (encoder subblock, residual stack, both heads, both losses).

use std::rc::Rc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::encoder::{build_context_params, encode_context, subblock_forward, Forward, SubblockParams};
use crate::error::Result;
use crate::gradcheck::grad_check;
use crate::graph::{build_snapshot, ContextId, EdgeLabel, EdgeSet, Snapshot};
use crate::heads::{build_disentangler, build_link_head};
use crate::matrix::{Matrix, Mode};
use crate::mixagg::MixingCoefficients;
use crate::objective::{disentangle_loss_var, link_loss_var};
use crate::params::{BnId, BnStates, ParamId, ParamStore};

pub const GRADCHECK_EPS: f64 = 1e-5;
pub const GRADCHECK_TOL: f64 = 1e-4;

#[derive(Clone, Debug)]
pub struct CompositeReport {
    pub name: &'static str,
    pub max_rel_err: f64,
}

impl CompositeReport {
    pub fn pass(&self) -> bool {
        self.max_rel_err < GRADCHECK_TOL
    }
}

fn chain_snapshot(n: usize) -> Result<Snapshot> {
    let edges: Vec<_> = (0..n - 1)
        .map(|i| (i, i + 1, 1.0, EdgeLabel::Positive))
        .collect();
    let set = EdgeSet::from_undirected(ContextId(0), Some(1), &edges)?;
    build_snapshot(&set, n)
}

fn smooth(rows: usize, cols: usize, scale: f64) -> Matrix {
    Matrix::from_fn(rows, cols, |i, j| {
        scale * ((i * cols + j) as f64 * 0.73 + 0.41).sin()
    })
}

/// A plain mean of a batch-normalized output is constant in the upstream
/// parameters (each x-hat column has zero mean), which zeroes the analytic
/// gradient and leaves only finite-difference noise. Reduce through fixed
/// per-entry weights instead so every gradient path stays excited.
fn weighted_mean(tape: &mut crate::tape::Tape, out: crate::tape::Var) -> Result<crate::tape::Var> {
    let (rows, cols) = tape.value(out).shape();
    let w = tape.input(Matrix::from_fn(rows, cols, |i, j| {
        0.5 + ((i * cols + j) as f64 * 1.3).cos()
    }));
    let prod = tape.hadamard(out, w)?;
    tape.mean_all(prod)
}

/// Eq. 1 subblock BN(DP(ReLU(A_hat H W))) in train mode with a fixed-seed
/// dropout mask; params are [X, W, gamma, beta].
fn check_subblock(eps: f64) -> Result<f64> {
    let snap = chain_snapshot(4)?;
    let params = [
        smooth(4, 3, 0.8),
        smooth(3, 2, 0.6),
        Matrix::from_fn(1, 2, |_, j| 1.0 + 0.1 * j as f64),
        Matrix::from_fn(1, 2, |_, j| 0.2 - 0.3 * j as f64),
    ];
    let bn0 = {
        let mut bn = BnStates::new();
        bn.add(2);
        bn
    };
    let sub = SubblockParams {
        conv_weight: ParamId(1),
        bn_gamma: ParamId(2),
        bn_beta: ParamId(3),
        bn: BnId(0),
        dropout_rate: 0.3,
    };
    grad_check(
        |tape, vars| {
            let mut bn = bn0.clone();
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            let mut fwd = Forward {
                tape,
                vars,
                bn: &mut bn,
                mode: Mode::Train,
                rng: &mut rng,
            };
            let out = subblock_forward(&mut fwd, vars[0], &snap, &sub)?;
            weighted_mean(fwd.tape, out)
        },
        &params,
        eps,
    )
}

/// Eq. 2 two-step stack with changing width, so the residual goes through
/// the projection M; params are the encoder's store followed by X.
fn check_residual_stack(eps: f64) -> Result<f64> {
    let mut store = ParamStore::new();
    let mut bn = BnStates::new();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let enc = build_context_params(
        &mut store,
        &mut bn,
        "c0",
        3,
        &[vec![3], vec![2]],
        0.3,
        true,
        &mut rng,
    )?;
    let mut params: Vec<Matrix> = store.values().to_vec();
    params.push(smooth(4, 3, 0.9));
    let x_index = params.len() - 1;
    let snaps = vec![chain_snapshot(4)?, chain_snapshot(4)?];
    grad_check(
        |tape, vars| {
            let mut bn = bn.clone();
            let mut rng = ChaCha8Rng::seed_from_u64(12);
            let mut fwd = Forward {
                tape,
                vars: &vars[..x_index],
                bn: &mut bn,
                mode: Mode::Train,
                rng: &mut rng,
            };
            let out = encode_context(&mut fwd, vars[x_index], &snaps, &enc)?;
            weighted_mean(fwd.tape, out)
        },
        &params,
        eps,
    )
}

/// Link predictor g_L composed into the BCE it feeds; params are the head's
/// store followed by H.
fn check_link_head(eps: f64) -> Result<f64> {
    let mut store = ParamStore::new();
    let mut bn = BnStates::new();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let head = build_link_head(&mut store, &mut bn, "link", 3, 4, 0.3, &mut rng);
    let mut params: Vec<Matrix> = store.values().to_vec();
    params.push(smooth(5, 3, 0.7));
    let h_index = params.len() - 1;
    let pairs = [(0usize, 1usize), (2, 3), (1, 4), (3, 0)];
    let labels = Rc::new(vec![1.0, 0.0, 1.0, 0.0]);
    grad_check(
        |tape, vars| {
            let mut bn = bn.clone();
            let mut rng = ChaCha8Rng::seed_from_u64(13);
            let mut fwd = Forward {
                tape,
                vars: &vars[..h_index],
                bn: &mut bn,
                mode: Mode::Train,
                rng: &mut rng,
            };
            let scores = crate::heads::predict_links(&mut fwd, vars[h_index], &pairs, &head)?;
            fwd.tape.bce_mean(scores, labels.clone())
        },
        &params,
        eps,
    )
}

/// Disentangler g_Q composed into L_Q against a fixed q; params are the
/// head's store followed by H.
fn check_disentangler(eps: f64) -> Result<f64> {
    let mut store = ParamStore::new();
    let mut bn = BnStates::new();
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let head = build_disentangler(&mut store, &mut bn, "disent", 3, 4, 2, 0.3, &mut rng);
    let mut params: Vec<Matrix> = store.values().to_vec();
    params.push(smooth(5, 3, 0.8));
    let h_index = params.len() - 1;
    let q = MixingCoefficients::new(vec![0.3, 0.7])?;
    grad_check(
        |tape, vars| {
            let mut bn = bn.clone();
            let mut rng = ChaCha8Rng::seed_from_u64(14);
            let mut fwd = Forward {
                tape,
                vars: &vars[..h_index],
                bn: &mut bn,
                mode: Mode::Train,
                rng: &mut rng,
            };
            let q_hat = crate::heads::disentangle(&mut fwd, vars[h_index], &head)?;
            disentangle_loss_var(fwd.tape, q_hat, &q)
        },
        &params,
        eps,
    )
}

/// L_link over two target contexts with unequal batch sizes; params are the
/// pre-sigmoid logits per context.
fn check_link_loss(eps: f64) -> Result<f64> {
    let params = [smooth(4, 1, 1.2), smooth(3, 1, 0.9)];
    let labels_a = Rc::new(vec![1.0, 0.0, 1.0, 0.0]);
    let labels_b = Rc::new(vec![1.0, 1.0, 0.0]);
    grad_check(
        |tape, vars| {
            let sa = tape.sigmoid(vars[0]);
            let sb = tape.sigmoid(vars[1]);
            link_loss_var(tape, &[(sa, labels_a.clone()), (sb, labels_b.clone())])
        },
        &params,
        eps,
    )
}

/// L_Q through the softmax that produces q_hat; the param is the raw logit
/// vector.
fn check_disentangle_loss(eps: f64) -> Result<f64> {
    let params = [Matrix::from_rows(&[&[0.4, -0.2, 0.7]])];
    let q = MixingCoefficients::new(vec![0.5, 0.3, 0.2])?;
    grad_check(
        |tape, vars| {
            let q_hat = tape.softmax_rows(vars[0])?;
            disentangle_loss_var(tape, q_hat, &q)
        },
        &params,
        eps,
    )
}

/// A deliberately broken composite whose loss branches on the parameter
/// value, so the analytic gradient cannot match central differences. Used to
/// prove the harness detects bad backward rules.
fn check_corrupted(eps: f64) -> Result<f64> {
    let params = [Matrix::from_rows(&[&[1.0]])];
    grad_check(
        |tape, vars| {
            let v = tape.value(vars[0]).scalar();
            if (v - 1.0).abs() < 1e-7 {
                Ok(tape.sum(vars[0]))
            } else {
                let s = tape.scale(vars[0], 5.0);
                Ok(tape.sum(s))
            }
        },
        &params,
        eps,
    )
}

/// Run every composite; `corrupt` appends the broken fixture used to verify
/// harness sensitivity.
pub fn model_gradcheck(eps: f64, corrupt: bool) -> Result<Vec<CompositeReport>> {
    let mut out = vec![
        CompositeReport { name: "eq1_subblock", max_rel_err: check_subblock(eps)? },
        CompositeReport { name: "eq2_residual_stack", max_rel_err: check_residual_stack(eps)? },
        CompositeReport { name: "g_link_head", max_rel_err: check_link_head(eps)? },
        CompositeReport { name: "g_disentangler", max_rel_err: check_disentangler(eps)? },
        CompositeReport { name: "l_link", max_rel_err: check_link_loss(eps)? },
        CompositeReport { name: "l_q", max_rel_err: check_disentangle_loss(eps)? },
    ];
    if corrupt {
        out.push(CompositeReport {
            name: "corrupted_fixture",
            max_rel_err: check_corrupted(eps)?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_composites_pass() {
        let reports = model_gradcheck(GRADCHECK_EPS, false).unwrap();
        assert_eq!(reports.len(), 6);
        for r in &reports {
            assert!(r.pass(), "{} max_rel_err {}", r.name, r.max_rel_err);
        }
    }

    #[test]
    fn corrupted_fixture_fails() {
        let reports = model_gradcheck(GRADCHECK_EPS, true).unwrap();
        let bad = reports.iter().find(|r| r.name == "corrupted_fixture").unwrap();
        assert!(!bad.pass(), "fixture should fail, err {}", bad.max_rel_err);
    }
}
