//! The multi-objective loss L = L_link + L_Q, the variant-dependent
//! deactivation of L_Q, and negative sampling for balanced link batches.

use std::rc::Rc;
use std::str::FromStr;

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{ContextId, MultiRelGraph, NodeId, TimeStep};
use crate::matrix::Matrix;
use crate::mixagg::MixingCoefficients;
use crate::tape::{Tape, Var, SCORE_CLAMP};

/// One balanced supervision batch for one target context.
#[derive(Clone, Debug)]
pub struct LinkBatch {
    pub context: ContextId,
    pub pairs: Vec<(NodeId, NodeId)>,
    /// 1.0 for positives, 0.0 for negatives, aligned with `pairs`.
    pub labels: Vec<f64>,
}

impl LinkBatch {
    /// Positives followed by negatives; lengths are allowed to differ only
    /// when `negatives` cannot be filled (callers enforce balance upstream).
    pub fn balanced(
        context: ContextId,
        positives: Vec<(NodeId, NodeId)>,
        negatives: Vec<(NodeId, NodeId)>,
    ) -> Self {
        let mut labels = vec![1.0; positives.len()];
        labels.extend(std::iter::repeat(0.0).take(negatives.len()));
        let mut pairs = positives;
        pairs.extend(negatives);
        LinkBatch { context, pairs, labels }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    Good,
    GoodLc,
    GoodLcPlus,
}

impl Variant {
    /// GOOD_LC deactivates L_Q; the other two train the disentangler.
    pub fn uses_disentangler(self) -> bool {
        !matches!(self, Variant::GoodLc)
    }

    /// GOOD_LC learns softmax-parameterized coefficients instead of sampling.
    pub fn learns_coefficients(self) -> bool {
        matches!(self, Variant::GoodLc)
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Good => "good",
            Variant::GoodLc => "good_lc",
            Variant::GoodLcPlus => "good_lc_plus",
        }
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "good" => Ok(Variant::Good),
            "good_lc" | "goodlc" => Ok(Variant::GoodLc),
            "good_lc_plus" | "good_lc+" | "goodlc+" => Ok(Variant::GoodLcPlus),
            other => Err(Error::Config(format!(
                "unknown variant '{other}' (expected good | good_lc | good_lc_plus)"
            ))),
        }
    }
}

fn bce(score: f64, label: f64) -> f64 {
    let p = score.clamp(SCORE_CLAMP, 1.0 - SCORE_CLAMP);
    -(label * p.ln() + (1.0 - label) * (1.0 - p).ln())
}

/// Mean BCE per target context, averaged over target contexts.
pub fn link_loss(batches: &[(LinkBatch, Vec<f64>)]) -> Result<f64> {
    if batches.is_empty() {
        return Err(Error::Argument("link_loss needs at least one target context".into()));
    }
    let mut total = 0.0;
    for (batch, scores) in batches {
        if batch.pairs.is_empty() {
            return Err(Error::Config(format!(
                "target context {} has no supervision edges",
                batch.context.0
            )));
        }
        if scores.len() != batch.labels.len() {
            return Err(Error::Argument(format!(
                "{} scores for {} labels in context {}",
                scores.len(),
                batch.labels.len(),
                batch.context.0
            )));
        }
        let sum: f64 = scores
            .iter()
            .zip(&batch.labels)
            .map(|(&s, &y)| bce(s, y))
            .sum();
        total += sum / batch.labels.len() as f64;
    }
    Ok(total / batches.len() as f64)
}

/// Tape version of `link_loss`: each element pairs an Ex1 score node with its
/// labels. Gradients flow into the score nodes.
pub fn link_loss_var(tape: &mut Tape, per_context: &[(Var, Rc<Vec<f64>>)]) -> Result<Var> {
    if per_context.is_empty() {
        return Err(Error::Argument("link_loss needs at least one target context".into()));
    }
    let mut acc: Option<Var> = None;
    for &(scores, ref labels) in per_context {
        let l = tape.bce_mean(scores, Rc::clone(labels))?;
        acc = Some(match acc {
            None => l,
            Some(a) => tape.add(a, l)?,
        });
    }
    Ok(tape.scale(acc.unwrap(), 1.0 / per_context.len() as f64))
}

/// MSLE between two coefficient vectors: (1/C') Σ (ln(1+q) − ln(1+q̂))².
pub fn disentangle_loss(q: &[f64], q_hat: &[f64]) -> Result<f64> {
    if q.len() != q_hat.len() {
        return Err(Error::Argument(format!(
            "coefficient length mismatch: {} vs {}",
            q.len(),
            q_hat.len()
        )));
    }
    if q.is_empty() {
        return Err(Error::Argument("empty coefficient vectors".into()));
    }
    let sum: f64 = q
        .iter()
        .zip(q_hat)
        .map(|(&a, &b)| {
            let d = (1.0 + a).ln() - (1.0 + b).ln();
            d * d
        })
        .sum();
    Ok(sum / q.len() as f64)
}

/// Tape version of `disentangle_loss` against a constant target q; `q_hat` is
/// a 1xC' node (the disentangler output).
pub fn disentangle_loss_var(tape: &mut Tape, q_hat: Var, q: &MixingCoefficients) -> Result<Var> {
    let c = q.len();
    if tape.value(q_hat).shape() != (1, c) {
        let (r, k) = tape.value(q_hat).shape();
        return Err(Error::Argument(format!(
            "disentangle_loss got {r}x{k} prediction for {c} coefficients"
        )));
    }
    let shifted = tape.add_scalar(q_hat, 1.0);
    let log_pred = tape.ln(shifted)?;
    let target = Matrix::from_vec(1, c, q.as_slice().iter().map(|&v| (1.0 + v).ln()).collect())?;
    let target = tape.input(target);
    let diff = tape.sub(log_pred, target)?;
    let sq = tape.hadamard(diff, diff)?;
    tape.mean_all(sq)
}

/// Eq. 4: GOOD and GOOD_LC+ train on link + disent; GOOD_LC on link only.
pub fn total_loss(variant: Variant, link: f64, disent: f64) -> f64 {
    if variant.uses_disentangler() {
        link + disent
    } else {
        link
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum NegSampleStrategy {
    /// Ground-truth negatives drawn proportionally to edge weight.
    MultinomialByWeight,
    /// Uniform over the ground-truth negative set.
    UniformGroundTruthNeg,
    /// Uniform over non-edges, rejection-sampled.
    UniformNonEdge,
    /// Ratios over (multinomial, gt_uniform, non_edge); must sum to 1.
    Mixture {
        multinomial: f64,
        gt_uniform: f64,
        non_edge: f64,
    },
}

impl NegSampleStrategy {
    pub fn validate(&self) -> Result<()> {
        if let NegSampleStrategy::Mixture { multinomial, gt_uniform, non_edge } = self {
            let parts = [*multinomial, *gt_uniform, *non_edge];
            if parts.iter().any(|&r| r < 0.0 || !r.is_finite()) {
                return Err(Error::Config("mixture ratios must be non-negative".into()));
            }
            let sum: f64 = parts.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::Config(format!("mixture ratios sum to {sum}, need 1")));
            }
        }
        Ok(())
    }

    /// Default from the appendix's mixture description: half weighted
    /// ground-truth negatives, half uniform non-edges, when ground-truth
    /// negatives exist.
    pub fn default_for(has_gt_negatives: bool) -> Self {
        if has_gt_negatives {
            NegSampleStrategy::Mixture { multinomial: 0.5, gt_uniform: 0.0, non_edge: 0.5 }
        } else {
            NegSampleStrategy::UniformNonEdge
        }
    }
}

impl FromStr for NegSampleStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        match lower.as_str() {
            "multinomial" => return Ok(NegSampleStrategy::MultinomialByWeight),
            "gt_uniform" => return Ok(NegSampleStrategy::UniformGroundTruthNeg),
            "non_edge" => return Ok(NegSampleStrategy::UniformNonEdge),
            _ => {}
        }
        if let Some(rest) = lower.strip_prefix("mixture:") {
            let parts: Vec<&str> = rest.split(',').collect();
            if parts.len() != 3 {
                return Err(Error::Config(format!(
                    "mixture strategy needs 3 comma-separated ratios, got '{rest}'"
                )));
            }
            let mut r = [0.0; 3];
            for (slot, tok) in r.iter_mut().zip(&parts) {
                *slot = tok
                    .trim()
                    .parse()
                    .map_err(|_| Error::Config(format!("bad mixture ratio '{tok}'")))?;
            }
            let s = NegSampleStrategy::Mixture {
                multinomial: r[0],
                gt_uniform: r[1],
                non_edge: r[2],
            };
            s.validate()?;
            return Ok(s);
        }
        Err(Error::Config(format!(
            "unknown negative strategy '{s}' \
             (expected multinomial | gt_uniform | non_edge | mixture:a,b,c)"
        )))
    }
}

/// Largest-remainder apportionment of `k` among non-negative ratios.
fn apportion(k: usize, ratios: &[f64]) -> Vec<usize> {
    let quotas: Vec<f64> = ratios.iter().map(|r| r * k as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..ratios.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    for i in 0..k.saturating_sub(assigned) {
        counts[order[i % order.len()]] += 1;
    }
    counts
}

/// Sample `k` negative pairs for (context, time), none of which is a positive
/// edge there. Non-edge sampling yields distinct pairs; ground-truth draws
/// sample with replacement (multinomial) or without (uniform, when k fits).
pub fn sample_negatives(
    graph: &MultiRelGraph,
    context: ContextId,
    time: Option<TimeStep>,
    k: usize,
    strategy: &NegSampleStrategy,
    rng: &mut impl Rng,
) -> Result<Vec<(NodeId, NodeId)>> {
    if k == 0 {
        return Err(Error::Argument("sample_negatives needs k >= 1".into()));
    }
    strategy.validate()?;
    let set = graph.edge_set(context, time)?;
    let positives: std::collections::BTreeSet<(NodeId, NodeId)> =
        set.positive_pairs().into_iter().collect();
    let gt: Vec<(NodeId, NodeId, f64)> = set
        .ground_truth_negatives()
        .iter()
        .map(|e| (e.src, e.dst, e.weight))
        .collect();

    match strategy {
        NegSampleStrategy::MultinomialByWeight => {
            if gt.is_empty() {
                return Err(Error::Sampling(format!(
                    "context {} has no ground-truth negatives for multinomial sampling",
                    context.0
                )));
            }
            let dist = WeightedIndex::new(gt.iter().map(|e| e.2))
                .map_err(|e| Error::Sampling(format!("bad multinomial weights: {e}")))?;
            Ok((0..k)
                .map(|_| {
                    let e = &gt[dist.sample(rng)];
                    (e.0, e.1)
                })
                .collect())
        }
        NegSampleStrategy::UniformGroundTruthNeg => {
            if gt.is_empty() {
                return Err(Error::Sampling(format!(
                    "context {} has no ground-truth negatives for uniform sampling",
                    context.0
                )));
            }
            if k <= gt.len() {
                let idx = rand::seq::index::sample(rng, gt.len(), k);
                Ok(idx.iter().map(|i| (gt[i].0, gt[i].1)).collect())
            } else {
                Ok((0..k)
                    .map(|_| {
                        let e = &gt[rng.gen_range(0..gt.len())];
                        (e.0, e.1)
                    })
                    .collect())
            }
        }
        NegSampleStrategy::UniformNonEdge => {
            let n = graph.meta.num_nodes;
            if n < 2 {
                return Err(Error::Sampling("need at least 2 nodes".into()));
            }
            let mut out = Vec::with_capacity(k);
            let mut seen = std::collections::BTreeSet::new();
            let mut rejections = 0usize;
            while out.len() < k {
                let u = rng.gen_range(0..n);
                let v = rng.gen_range(0..n);
                let pair = (u.min(v), u.max(v));
                if u == v || positives.contains(&pair) || !seen.insert(pair) {
                    rejections += 1;
                    if rejections > 100 * k {
                        return Err(Error::Sampling(format!(
                            "could not find {k} distinct non-edges after {rejections} rejections"
                        )));
                    }
                    continue;
                }
                out.push(pair);
            }
            Ok(out)
        }
        NegSampleStrategy::Mixture { multinomial, gt_uniform, non_edge } => {
            let counts = apportion(k, &[*multinomial, *gt_uniform, *non_edge]);
            let subs = [
                NegSampleStrategy::MultinomialByWeight,
                NegSampleStrategy::UniformGroundTruthNeg,
                NegSampleStrategy::UniformNonEdge,
            ];
            let mut out = Vec::with_capacity(k);
            for (count, sub) in counts.iter().zip(&subs) {
                if *count > 0 {
                    out.extend(sample_negatives(graph, context, time, *count, sub, rng)?);
                }
            }
            Ok(out)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{EdgeLabel, EdgeSet, FeatureSource, GraphMeta};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const LN2: f64 = std::f64::consts::LN_2;

    fn batch(n: usize, labels: Vec<f64>) -> LinkBatch {
        LinkBatch {
            context: ContextId(1),
            pairs: (0..n).map(|i| (i, i + 1)).collect(),
            labels,
        }
    }

    #[test]
    fn bce_at_half_is_ln_two() {
        let b = batch(4, vec![1.0, 0.0, 1.0, 0.0]);
        let loss = link_loss(&[(b, vec![0.5; 4])]).unwrap();
        assert!((loss - LN2).abs() < 1e-12);
    }

    #[test]
    fn bce_hand_computed() {
        let b = batch(2, vec![1.0, 0.0]);
        let loss = link_loss(&[(b, vec![0.9, 0.2])]).unwrap();
        let expect = -(0.9f64.ln() + 0.8f64.ln()) / 2.0;
        assert!((loss - expect).abs() < 1e-12);
        assert!((loss - 0.164252).abs() < 1e-6);
    }

    #[test]
    fn perfect_prediction_nearly_zero() {
        let b = batch(2, vec![1.0, 0.0]);
        let loss = link_loss(&[(b, vec![1.0, 0.0])]).unwrap();
        assert!(loss < 1e-10);
    }

    #[test]
    fn empty_target_batch_is_error() {
        let b = LinkBatch { context: ContextId(2), pairs: vec![], labels: vec![] };
        assert!(link_loss(&[(b, vec![])]).is_err());
    }

    #[test]
    fn link_loss_averages_over_targets_order_free() {
        let b1 = (batch(2, vec![1.0, 0.0]), vec![0.7, 0.4]);
        let b2 = (batch(3, vec![1.0, 1.0, 0.0]), vec![0.6, 0.8, 0.1]);
        let a = link_loss(&[b1.clone(), b2.clone()]).unwrap();
        let b = link_loss(&[b2, b1]).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn tape_link_loss_matches_scalar() {
        let mut tape = Tape::new();
        let scores = tape.input(Matrix::from_vec(3, 1, vec![0.6, 0.8, 0.1]).unwrap());
        let labels = Rc::new(vec![1.0, 1.0, 0.0]);
        let l = link_loss_var(&mut tape, &[(scores, Rc::clone(&labels))]).unwrap();
        let b = batch(3, vec![1.0, 1.0, 0.0]);
        let scalar = link_loss(&[(b, vec![0.6, 0.8, 0.1])]).unwrap();
        assert!((tape.value(l)[(0, 0)] - scalar).abs() < 1e-12);
    }

    #[test]
    fn msle_closed_forms() {
        assert_eq!(disentangle_loss(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        let v = disentangle_loss(&[1.0, 0.0], &[0.0, 1.0]).unwrap();
        assert!((v - LN2 * LN2).abs() < 1e-12);
        assert!((v - 0.480453).abs() < 1e-6);
        assert_eq!(disentangle_loss(&[1.0], &[1.0]).unwrap(), 0.0);
        assert!(disentangle_loss(&[0.5, 0.5], &[1.0]).is_err());
    }

    #[test]
    fn msle_symmetric() {
        let a = [0.2, 0.5, 0.3];
        let b = [0.6, 0.1, 0.3];
        assert_eq!(
            disentangle_loss(&a, &b).unwrap(),
            disentangle_loss(&b, &a).unwrap()
        );
    }

    #[test]
    fn tape_msle_matches_scalar_and_differentiates() {
        let q = MixingCoefficients::new(vec![0.5, 0.3, 0.2]).unwrap();
        let q_hat = [0.2, 0.4, 0.4];
        let scalar = disentangle_loss(q.as_slice(), &q_hat).unwrap();
        let mut tape = Tape::new();
        let pred = tape.input(Matrix::from_vec(1, 3, q_hat.to_vec()).unwrap());
        let l = disentangle_loss_var(&mut tape, pred, &q).unwrap();
        assert!((tape.value(l)[(0, 0)] - scalar).abs() < 1e-12);
        let grads = tape.backward(l).unwrap();
        assert!(grads.get(pred).unwrap().data().iter().any(|&g| g != 0.0));
    }

    #[test]
    fn total_loss_per_variant() {
        assert_eq!(total_loss(Variant::Good, 0.5, 0.1), 0.6);
        assert_eq!(total_loss(Variant::GoodLcPlus, 0.5, 0.1), 0.6);
        assert_eq!(total_loss(Variant::GoodLc, 0.5, 123.0), 0.5);
        assert_eq!(total_loss(Variant::GoodLc, 0.5, f64::NAN), 0.5);
        assert_eq!(total_loss(Variant::Good, 0.0, 0.0), 0.0);
    }

    #[test]
    fn variant_parsing() {
        assert_eq!("good".parse::<Variant>().unwrap(), Variant::Good);
        assert_eq!("GOOD_LC".parse::<Variant>().unwrap(), Variant::GoodLc);
        assert_eq!("good_lc+".parse::<Variant>().unwrap(), Variant::GoodLcPlus);
        assert!("goood".parse::<Variant>().is_err());
    }

    fn tiny_graph() -> MultiRelGraph {
        let meta = GraphMeta {
            num_nodes: 6,
            node_type_of: vec![0; 6],
            num_contexts: 2,
            num_known_contexts: 1,
            num_steps: 2,
            time_dependent: vec![false, false],
        };
        let entries = vec![
            (0, 1, 1.0, EdgeLabel::Positive),
            (1, 2, 1.0, EdgeLabel::Positive),
            (2, 3, 3.0, EdgeLabel::NegativeGroundTruth),
            (4, 5, 1.0, EdgeLabel::NegativeGroundTruth),
        ];
        let sets = vec![
            EdgeSet::from_undirected(ContextId(0), None, &entries).unwrap(),
            EdgeSet::from_undirected(ContextId(1), None, &entries).unwrap(),
        ];
        MultiRelGraph::new(meta, sets, FeatureSource::Learnable { dim: 3 }).unwrap()
    }

    #[test]
    fn uniform_gt_exhausts_support() {
        let g = tiny_graph();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut got = sample_negatives(
            &g,
            ContextId(1),
            None,
            2,
            &NegSampleStrategy::UniformGroundTruthNeg,
            &mut rng,
        )
        .unwrap();
        got.sort();
        assert_eq!(got, vec![(2, 3), (4, 5)]);
    }

    #[test]
    fn multinomial_frequency_tracks_weights() {
        let g = tiny_graph();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let draws = sample_negatives(
            &g,
            ContextId(1),
            None,
            10_000,
            &NegSampleStrategy::MultinomialByWeight,
            &mut rng,
        )
        .unwrap();
        let heavy = draws.iter().filter(|&&p| p == (2, 3)).count() as f64 / draws.len() as f64;
        assert!((heavy - 0.75).abs() < 0.02, "frequency {heavy}");
    }

    #[test]
    fn samples_never_positive() {
        let g = tiny_graph();
        let positives: std::collections::BTreeSet<_> = g
            .edge_set(ContextId(1), None)
            .unwrap()
            .positive_pairs()
            .into_iter()
            .collect();
        for strategy in [
            NegSampleStrategy::MultinomialByWeight,
            NegSampleStrategy::UniformGroundTruthNeg,
            NegSampleStrategy::UniformNonEdge,
            NegSampleStrategy::Mixture { multinomial: 0.3, gt_uniform: 0.3, non_edge: 0.4 },
        ] {
            let mut rng = ChaCha8Rng::seed_from_u64(13);
            let got = sample_negatives(&g, ContextId(1), None, 10, &strategy, &mut rng).unwrap();
            assert_eq!(got.len(), 10);
            assert!(got.iter().all(|p| !positives.contains(p)), "{strategy:?}");
        }
    }

    #[test]
    fn sampling_deterministic_under_seed() {
        let g = tiny_graph();
        let strategy = NegSampleStrategy::Mixture { multinomial: 0.5, gt_uniform: 0.0, non_edge: 0.5 };
        let mut r1 = ChaCha8Rng::seed_from_u64(17);
        let mut r2 = ChaCha8Rng::seed_from_u64(17);
        let a = sample_negatives(&g, ContextId(1), None, 9, &strategy, &mut r1).unwrap();
        let b = sample_negatives(&g, ContextId(1), None, 9, &strategy, &mut r2).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn infeasible_strategies_error() {
        let meta = GraphMeta {
            num_nodes: 3,
            node_type_of: vec![0; 3],
            num_contexts: 2,
            num_known_contexts: 1,
            num_steps: 2,
            time_dependent: vec![false, false],
        };
        // complete graph on 3 nodes, no GT negatives
        let entries = vec![
            (0, 1, 1.0, EdgeLabel::Positive),
            (0, 2, 1.0, EdgeLabel::Positive),
            (1, 2, 1.0, EdgeLabel::Positive),
        ];
        let sets = vec![
            EdgeSet::from_undirected(ContextId(0), None, &entries).unwrap(),
            EdgeSet::from_undirected(ContextId(1), None, &entries).unwrap(),
        ];
        let g = MultiRelGraph::new(meta, sets, FeatureSource::Learnable { dim: 2 }).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        assert!(sample_negatives(
            &g,
            ContextId(1),
            None,
            2,
            &NegSampleStrategy::MultinomialByWeight,
            &mut rng
        )
        .is_err());
        assert!(sample_negatives(
            &g,
            ContextId(1),
            None,
            2,
            &NegSampleStrategy::UniformNonEdge,
            &mut rng
        )
        .is_err());
    }

    #[test]
    fn strategy_parsing() {
        assert_eq!(
            "multinomial".parse::<NegSampleStrategy>().unwrap(),
            NegSampleStrategy::MultinomialByWeight
        );
        assert_eq!(
            "mixture:0.5,0,0.5".parse::<NegSampleStrategy>().unwrap(),
            NegSampleStrategy::Mixture { multinomial: 0.5, gt_uniform: 0.0, non_edge: 0.5 }
        );
        assert!("mixture:0.5,0.5,0.5".parse::<NegSampleStrategy>().is_err());
        assert!("bogus".parse::<NegSampleStrategy>().is_err());
    }

    #[test]
    fn apportionment_sums_to_k() {
        for k in [1usize, 5, 9, 100] {
            let counts = apportion(k, &[0.5, 0.2, 0.3]);
            assert_eq!(counts.iter().sum::<usize>(), k);
        }
        assert_eq!(apportion(10, &[0.5, 0.0, 0.5]), vec![5, 0, 5]);
    }
}
