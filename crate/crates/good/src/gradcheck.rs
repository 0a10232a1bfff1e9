//! Central-difference verification of tape gradients.

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::tape::{Tape, Var};

/// Compare analytic gradients of a scalar-valued composite against central
/// finite differences. `build` must be deterministic in its inputs; anything
/// stochastic (dropout masks, sampled coefficients) has to be fixed outside
/// the closure. Returns the max over coordinates of
/// |analytic - numeric| / max(1e-8, |analytic| + |numeric|).
pub fn grad_check<F>(build: F, params: &[Matrix], eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if eps <= 0.0 {
        return Err(Error::Argument("grad_check eps must be positive".into()));
    }

    let eval = |params: &[Matrix]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = params.iter().map(|p| tape.input(p.clone())).collect();
        let loss = build(&mut tape, &vars)?;
        Ok(tape.value(loss).scalar())
    };

    // analytic pass
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.input(p.clone())).collect();
    let loss = build(&mut tape, &vars)?;
    if tape.value(loss).shape() != (1, 1) {
        return Err(Error::Argument("grad_check needs a scalar loss".into()));
    }
    let grads = tape.backward(loss)?;

    let mut max_rel = 0.0_f64;
    let mut perturbed: Vec<Matrix> = params.to_vec();
    for (pi, param) in params.iter().enumerate() {
        let analytic = grads.get_or_zeros(vars[pi], param.rows(), param.cols());
        for i in 0..param.rows() {
            for j in 0..param.cols() {
                let base = param[(i, j)];
                perturbed[pi][(i, j)] = base + eps;
                let plus = eval(&perturbed)?;
                perturbed[pi][(i, j)] = base - eps;
                let minus = eval(&perturbed)?;
                perturbed[pi][(i, j)] = base;
                let numeric = (plus - minus) / (2.0 * eps);
                let a = analytic[(i, j)];
                let rel = (a - numeric).abs() / (1e-8_f64).max(a.abs() + numeric.abs());
                max_rel = max_rel.max(rel);
            }
        }
    }
    Ok(max_rel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::rc::Rc;

    #[test]
    fn linear_is_near_exact() {
        let params = [Matrix::from_rows(&[&[1.0, -2.0, 3.0]])];
        let err = grad_check(
            |tape, vars| {
                let s = tape.scale(vars[0], 2.5);
                Ok(tape.sum(s))
            },
            &params,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-9, "err {err}");
    }

    #[test]
    fn sigmoid_matmul_chain() {
        let params = [
            Matrix::from_rows(&[&[0.2, -0.4], &[0.7, 0.1]]),
            Matrix::from_rows(&[&[0.5], &[-0.3]]),
        ];
        let err = grad_check(
            |tape, vars| {
                let z = tape.matmul(vars[0], vars[1])?;
                let s = tape.sigmoid(z);
                tape.mean_all(s)
            },
            &params,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "err {err}");
    }

    #[test]
    fn fixed_dropout_mask_checks() {
        let params = [Matrix::from_rows(&[&[0.4, -0.9], &[1.2, 0.3]])];
        let mask = Rc::new(vec![2.0, 0.0, 2.0, 2.0]);
        let err = grad_check(
            |tape, vars| {
                let d = tape.dropout_with_mask(vars[0], mask.clone())?;
                let s = tape.sigmoid(d);
                tape.mean_all(s)
            },
            &params,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "err {err}");
    }

    #[test]
    fn corrupted_gradient_is_detected() {
        // sum(2x) has gradient 2 everywhere; pretend it is scale-by-3 in the
        // analytic path by comparing a different function numerically.
        let params = [Matrix::from_rows(&[&[1.0]])];
        let err = grad_check(
            |tape, vars| {
                // hadamard with itself: d/dx x^2 = 2x = 2, but loss value at
                // perturbed points follows x^2, so analytic vs numeric agree;
                // instead corrupt via a non-differentiable trick: use the
                // value to branch.
                let v = tape.value(vars[0]).scalar();
                if (v - 1.0).abs() < 1e-7 {
                    Ok(tape.sum(vars[0]))
                } else {
                    let s = tape.scale(vars[0], 5.0);
                    Ok(tape.sum(s))
                }
            },
            &params,
            1e-5,
        )
        .unwrap();
        assert!(err > 1e-2, "corruption not detected: {err}");
    }
}
