//! Mixing-coefficient generation and the aggregation functions that combine
//! per-context embeddings into a single embedding matrix.

use std::rc::Rc;

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::softmax;
use crate::tape::{Tape, Var};

/// Simplex vector q of length C' driving the aggregation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixingCoefficients(Vec<f64>);

impl MixingCoefficients {
    pub fn new(q: Vec<f64>) -> Result<Self> {
        if q.is_empty() {
            return Err(Error::Argument("empty coefficient vector".into()));
        }
        if q.iter().any(|&v| v < 0.0) {
            return Err(Error::Argument("negative mixing coefficient".into()));
        }
        let sum: f64 = q.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Argument(format!(
                "mixing coefficients sum to {sum}, not 1"
            )));
        }
        Ok(MixingCoefficients(q))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum AggregatorKind {
    Sum,
    Stack,
    DSum,
    DStack,
}

impl AggregatorKind {
    pub fn needs_degrees(self) -> bool {
        matches!(self, AggregatorKind::DSum | AggregatorKind::DStack)
    }

    /// Output feature dimension given per-context dimension d.
    pub fn output_dim(self, d: usize, num_contexts: usize) -> usize {
        match self {
            AggregatorKind::Sum | AggregatorKind::DSum => d,
            AggregatorKind::Stack | AggregatorKind::DStack => d * num_contexts,
        }
    }
}

impl std::str::FromStr for AggregatorKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sum" => Ok(AggregatorKind::Sum),
            "stack" => Ok(AggregatorKind::Stack),
            "dsum" => Ok(AggregatorKind::DSum),
            "dstack" => Ok(AggregatorKind::DStack),
            other => Err(Error::Config(format!(
                "unknown aggregator '{other}' (expected sum|stack|dsum|dstack)"
            ))),
        }
    }
}

impl std::fmt::Display for AggregatorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            AggregatorKind::Sum => "sum",
            AggregatorKind::Stack => "stack",
            AggregatorKind::DSum => "dsum",
            AggregatorKind::DStack => "dstack",
        };
        write!(f, "{s}")
    }
}

/// Concentration floor: the sampled uniform range [0,1) includes 0, which is
/// not a valid Gamma shape.
const ALPHA_FLOOR: f64 = 1e-3;

/// Draw q ~ Dirichlet(alpha) with each alpha_i uniform in [ALPHA_FLOOR, 1),
/// via normalized Gamma draws.
pub fn sample_coefficients(num_contexts: usize, rng: &mut impl Rng) -> MixingCoefficients {
    assert!(num_contexts >= 1, "need at least one context");
    if num_contexts == 1 {
        return MixingCoefficients(vec![1.0]);
    }
    for _ in 0..100 {
        let mut draws = Vec::with_capacity(num_contexts);
        for _ in 0..num_contexts {
            let alpha = rng.gen_range(ALPHA_FLOOR..1.0);
            let gamma = Gamma::new(alpha, 1.0).expect("positive shape");
            draws.push(gamma.sample(rng));
        }
        let sum: f64 = draws.iter().sum();
        if sum.is_finite() && sum > 0.0 {
            let q: Vec<f64> = draws.into_iter().map(|d| d / sum).collect();
            if q.iter().all(|v| v.is_finite()) {
                return MixingCoefficients(q);
            }
        }
    }
    // all draws underflowed; extremely small concentrations degenerate to a
    // vertex anyway, so fall back to uniform
    inference_coefficients(num_contexts)
}

/// Uniform inference coefficients q_i = 1/C'.
pub fn inference_coefficients(num_contexts: usize) -> MixingCoefficients {
    assert!(num_contexts >= 1, "need at least one context");
    MixingCoefficients(vec![1.0 / num_contexts as f64; num_contexts])
}

/// Softmax-normalize a raw learned vector onto the simplex. This is the
/// parameterization used during learned-coefficient training, so every
/// intermediate coefficient vector is already valid.
pub fn normalize_learned(raw: &[f64]) -> Result<MixingCoefficients> {
    Ok(MixingCoefficients(softmax(raw)?))
}

/// Where the aggregation coefficients come from: a fixed simplex vector, or
/// a differentiable 1xC' node (softmax of the learned raw parameters).
pub enum CoeffSource {
    Const(MixingCoefficients),
    Node(Var),
}

/// Combine per-context embeddings on the tape.
///
/// Degree factors for the D-variants are the raw per-context degrees divided
/// by the per-context max degree; zero-degree nodes contribute zero.
pub fn aggregate(
    tape: &mut Tape,
    kind: AggregatorKind,
    embeddings: &[Var],
    coeffs: &CoeffSource,
    degrees: Option<&[Vec<usize>]>,
) -> Result<Var> {
    if embeddings.is_empty() {
        return Err(Error::Argument("aggregate of zero contexts".into()));
    }
    let count = embeddings.len();
    let shape = tape.value(embeddings[0]).shape();
    for &e in embeddings {
        if tape.value(e).shape() != shape {
            return Err(Error::Argument(
                "aggregate requires all embeddings to share one shape".into(),
            ));
        }
    }
    if let CoeffSource::Const(q) = coeffs {
        if q.len() != count {
            return Err(Error::Argument(format!(
                "{} coefficients for {count} embeddings",
                q.len()
            )));
        }
    }
    let factors: Option<Vec<Rc<Vec<f64>>>> = if kind.needs_degrees() {
        let degrees = degrees.ok_or_else(|| {
            Error::Argument(format!("aggregator {kind} requires per-context degrees"))
        })?;
        if degrees.len() != count {
            return Err(Error::Argument(
                "degree vectors must match embedding count".into(),
            ));
        }
        Some(
            degrees
                .iter()
                .map(|d| {
                    let max = d.iter().copied().max().unwrap_or(0).max(1) as f64;
                    Rc::new(d.iter().map(|&v| v as f64 / max).collect::<Vec<f64>>())
                })
                .collect(),
        )
    } else {
        None
    };

    let mut weighted = Vec::with_capacity(count);
    for (c, &h) in embeddings.iter().enumerate() {
        let h = match &factors {
            Some(f) => tape.scale_rows(h, f[c].clone())?,
            None => h,
        };
        let scaled = match coeffs {
            CoeffSource::Const(q) => tape.scale(h, q.as_slice()[c]),
            CoeffSource::Node(v) => tape.scale_by_entry(h, *v, c)?,
        };
        weighted.push(scaled);
    }

    match kind {
        AggregatorKind::Sum | AggregatorKind::DSum => {
            let mut acc = weighted[0];
            for &w in &weighted[1..] {
                acc = tape.add(acc, w)?;
            }
            Ok(acc)
        }
        AggregatorKind::Stack | AggregatorKind::DStack => tape.concat_cols(&weighted),
    }
}
