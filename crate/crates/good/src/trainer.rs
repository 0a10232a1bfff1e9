//! Training loop for the three variants, Adam updates, inference, and the
//! versioned checkpoint container.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;
use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::{build_context_params, encode_all, ContextEncoderParams, Forward};
use crate::error::{Error, Result};
use crate::graph::{
    build_snapshot, ContextId, MultiRelGraph, Snapshot, SplitSpec, TimeStep, Window,
};
use crate::heads::{
    build_disentangler, build_link_head, disentangle, predict_links, DisentanglerParams,
    LinkHeadParams,
};
use crate::matrix::{Matrix, Mode};
use crate::mixagg::{
    aggregate, inference_coefficients, normalize_learned, sample_coefficients, AggregatorKind,
    CoeffSource, MixingCoefficients,
};
use crate::objective::{
    disentangle_loss_var, link_loss_var, sample_negatives, LinkBatch, NegSampleStrategy, Variant,
};
use crate::params::{BnStates, ParamId, ParamStore};
use crate::tape::{Tape, Var};

pub const CHECKPOINT_VERSION: u32 = 1;
const CHECKPOINT_MAGIC: &[u8; 8] = b"GOODCKPT";

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainConfig {
    pub variant: Variant,
    pub aggregator: AggregatorKind,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    /// Early-stop patience on validation ROC-AUC.
    pub patience: usize,
    pub dropout_rate: f64,
    /// Subblock output widths per input step, e.g. [[48,32],[24],[16]] for
    /// the 2-1-1 architecture over a 3-step window.
    pub schedule: Vec<Vec<usize>>,
    /// Hidden width of the link predictor and disentangler MLPs.
    pub head_hidden: usize,
    /// None selects the default for the dataset (mixture when ground-truth
    /// negatives exist, else uniform non-edges).
    pub strategy: Option<NegSampleStrategy>,
    /// Input window length; schedule length must match.
    pub window: usize,
    pub seed: u64,
    /// Freeze q to uniform in training and inference and disable L_Q (the
    /// coefficient-ablated baseline of Table III).
    pub ablate_coefficients: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            variant: Variant::Good,
            aggregator: AggregatorKind::Sum,
            learning_rate: 1e-4,
            weight_decay: 1e-5,
            epochs: 100,
            patience: 15,
            dropout_rate: 0.3,
            schedule: vec![vec![48, 32], vec![24], vec![16]],
            head_hidden: 16,
            strategy: None,
            window: 3,
            seed: 0,
            ablate_coefficients: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 {
            return Err(Error::Config("learning_rate must be > 0".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config("dropout_rate must be in [0, 1)".into()));
        }
        if self.schedule.len() != self.window {
            return Err(Error::Config(format!(
                "schedule has {} steps for a {}-step window",
                self.schedule.len(),
                self.window
            )));
        }
        if self.schedule.iter().any(|s| s.is_empty()) || self.head_hidden == 0 {
            return Err(Error::Config("empty schedule step or zero head width".into()));
        }
        if let Some(s) = &self.strategy {
            s.validate()?;
        }
        Ok(())
    }

    /// Final per-context embedding dimension.
    pub fn final_dim(&self) -> usize {
        *self.schedule.last().unwrap().last().unwrap()
    }
}

/// Parameter layout for one assembled model. Rebuilt deterministically from
/// (config, graph meta), so checkpoints only carry values.
pub struct Model {
    pub store: ParamStore,
    pub bn: BnStates,
    pub encoders: Vec<ContextEncoderParams>,
    pub link_heads: Vec<LinkHeadParams>,
    pub disentangler: DisentanglerParams,
    /// Raw 1xC' logits behind the softmax, GOOD_LC only.
    pub coeff_raw: Option<ParamId>,
    /// Learnable input features when the dataset provides none.
    pub feature_param: Option<ParamId>,
}

pub fn build_model(graph: &MultiRelGraph, cfg: &TrainConfig, rng: &mut impl Rng) -> Result<Model> {
    cfg.validate()?;
    let meta = &graph.meta;
    let input_dim = graph.features.dim();
    if input_dim == 0 {
        return Err(Error::Config("zero-dimensional input features".into()));
    }
    let mut store = ParamStore::new();
    let mut bn = BnStates::new();
    let feature_param = match &graph.features {
        crate::graph::FeatureSource::Learnable { dim } => Some(store.add(
            "features",
            Matrix::glorot(meta.num_nodes, *dim, rng),
        )),
        crate::graph::FeatureSource::Loaded(_) => None,
    };
    let mut encoders = Vec::with_capacity(meta.num_known_contexts);
    for c in 0..meta.num_known_contexts {
        encoders.push(build_context_params(
            &mut store,
            &mut bn,
            &format!("enc.c{c}"),
            input_dim,
            &cfg.schedule,
            cfg.dropout_rate,
            meta.time_dependent[c],
            rng,
        )?);
    }
    let d = cfg.final_dim();
    let agg_dim = cfg.aggregator.output_dim(d, meta.num_known_contexts);
    let mut link_heads = Vec::new();
    for c in meta.target_contexts() {
        link_heads.push(build_link_head(
            &mut store,
            &mut bn,
            &format!("link.c{}", c.0),
            agg_dim,
            cfg.head_hidden,
            cfg.dropout_rate,
            rng,
        ));
    }
    let disentangler = build_disentangler(
        &mut store,
        &mut bn,
        "disent",
        agg_dim,
        cfg.head_hidden,
        meta.num_known_contexts,
        cfg.dropout_rate,
        rng,
    );
    let coeff_raw = if cfg.variant.learns_coefficients() && !cfg.ablate_coefficients {
        Some(store.add("coeff.raw", Matrix::zeros(1, meta.num_known_contexts)))
    } else {
        None
    };
    Ok(Model {
        store,
        bn,
        encoders,
        link_heads,
        disentangler,
        coeff_raw,
        feature_param,
    })
}

/// All snapshots of the graph, normalized once.
pub struct SnapshotCache {
    map: BTreeMap<(usize, Option<TimeStep>), Snapshot>,
}

impl SnapshotCache {
    pub fn build(graph: &MultiRelGraph) -> Result<Self> {
        let mut map = BTreeMap::new();
        for set in graph.edge_sets() {
            let snap = build_snapshot(set, graph.meta.num_nodes)?;
            map.insert((set.context.0, set.time), snap);
        }
        Ok(SnapshotCache { map })
    }

    fn get(&self, context: ContextId, time: Option<TimeStep>) -> Result<&Snapshot> {
        self.map.get(&(context.0, time)).ok_or_else(|| {
            Error::Lookup(format!(
                "no snapshot for context {} at {:?}",
                context.0, time
            ))
        })
    }

    /// Input snapshots for one context over a window: the per-step snapshots
    /// for time-dependent contexts, the single static snapshot otherwise.
    pub fn window_snaps(
        &self,
        graph: &MultiRelGraph,
        context: ContextId,
        inputs: &[TimeStep],
    ) -> Result<Vec<Snapshot>> {
        if graph.meta.time_dependent[context.0] {
            inputs
                .iter()
                .map(|&t| self.get(context, Some(t)).cloned())
                .collect()
        } else {
            Ok(vec![self.get(context, None)?.clone()])
        }
    }
}

/// One differentiable pass over a window: encode, aggregate, score.
pub struct PassOutput {
    pub tape: Tape,
    /// Tape nodes of the bound parameters, in store order.
    pub param_vars: Vec<Var>,
    pub agg: Var,
    /// Score node per target batch, aligned with the batch list.
    pub scores: Vec<Var>,
    pub link_loss: Var,
    pub q_hat: Option<Var>,
}

#[allow(clippy::too_many_arguments)]
fn forward_pass(
    model: &mut Model,
    graph: &MultiRelGraph,
    cache: &SnapshotCache,
    cfg: &TrainConfig,
    inputs: &[TimeStep],
    batches: &[LinkBatch],
    coeffs: &CoeffValue,
    mode: Mode,
    rng: &mut ChaCha8Rng,
    with_disentangler: bool,
) -> Result<PassOutput> {
    let mut tape = Tape::new();
    let vars = model.store.bind(&mut tape);
    let coeff_source = match coeffs {
        CoeffValue::Fixed(q) => CoeffSource::Const(q.clone()),
        CoeffValue::Learned => {
            let raw = model
                .coeff_raw
                .ok_or_else(|| Error::Config("no learned coefficients in this model".into()))?;
            let node = tape.softmax_rows(vars[raw.0])?;
            CoeffSource::Node(node)
        }
    };
    let x = match model.feature_param {
        Some(p) => vars[p.0],
        None => match &graph.features {
            crate::graph::FeatureSource::Loaded(m) => tape.input(m.clone()),
            crate::graph::FeatureSource::Learnable { .. } => {
                return Err(Error::Config("learnable features without parameter".into()))
            }
        },
    };
    let mut fwd = Forward {
        tape: &mut tape,
        vars: &vars,
        bn: &mut model.bn,
        mode,
        rng,
    };
    let mut snaps_per_context = Vec::with_capacity(model.encoders.len());
    for c in graph.meta.known_contexts() {
        snaps_per_context.push(cache.window_snaps(graph, c, inputs)?);
    }
    let embeddings = encode_all(&mut fwd, x, &snaps_per_context, &model.encoders)?;
    let degrees: Option<Vec<Vec<usize>>> = if cfg.aggregator.needs_degrees() {
        Some(
            snaps_per_context
                .iter()
                .map(|s| s.last().unwrap().degree.clone())
                .collect(),
        )
    } else {
        None
    };
    let agg = aggregate(
        fwd.tape,
        cfg.aggregator,
        &embeddings,
        &coeff_source,
        degrees.as_deref(),
    )?;

    let mut scores = Vec::with_capacity(batches.len());
    let mut per_context = Vec::with_capacity(batches.len());
    for (batch, head) in batches.iter().zip(&model.link_heads) {
        if batch.pairs.is_empty() {
            return Err(Error::Config(format!(
                "target context {} has no supervision edges",
                batch.context.0
            )));
        }
        let s = predict_links(&mut fwd, agg, &batch.pairs, head)?;
        scores.push(s);
        per_context.push((s, Rc::new(batch.labels.clone())));
    }
    if batches.len() != model.link_heads.len() {
        return Err(Error::Config(format!(
            "{} batches for {} target heads",
            batches.len(),
            model.link_heads.len()
        )));
    }
    let link_loss = link_loss_var(fwd.tape, &per_context)?;
    let q_hat = if with_disentangler {
        Some(disentangle(&mut fwd, agg, &model.disentangler)?)
    } else {
        None
    };
    Ok(PassOutput {
        tape,
        param_vars: vars,
        agg,
        scores,
        link_loss,
        q_hat,
    })
}

enum CoeffValue {
    Fixed(MixingCoefficients),
    Learned,
}

/// Standard Adam with bias correction and coupled (additive) weight decay.
/// Parameters without a gradient this step are left untouched.
#[allow(clippy::too_many_arguments)]
pub fn adam_step(
    params: &mut [Matrix],
    grads: &[Option<Matrix>],
    m: &mut [Matrix],
    v: &mut [Matrix],
    lr: f64,
    wd: f64,
    betas: (f64, f64),
    eps: f64,
    t: u64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != m.len() || params.len() != v.len() {
        return Err(Error::Argument("adam_step length mismatch".into()));
    }
    if t == 0 {
        return Err(Error::Argument("adam step index starts at 1".into()));
    }
    let (b1, b2) = betas;
    let bc1 = 1.0 - b1.powi(t as i32);
    let bc2 = 1.0 - b2.powi(t as i32);
    for i in 0..params.len() {
        let Some(g) = &grads[i] else { continue };
        if g.shape() != params[i].shape() {
            return Err(Error::Shape {
                op: "adam_step",
                lhs_rows: params[i].rows(),
                lhs_cols: params[i].cols(),
                rhs_rows: g.rows(),
                rhs_cols: g.cols(),
            });
        }
        let p = &mut params[i];
        for k in 0..p.data().len() {
            let grad = g.data()[k] + wd * p.data()[k];
            let mi = b1 * m[i].data()[k] + (1.0 - b1) * grad;
            let vi = b2 * v[i].data()[k] + (1.0 - b2) * grad * grad;
            m[i].data_mut()[k] = mi;
            v[i].data_mut()[k] = vi;
            let update = lr * (mi / bc1) / ((vi / bc2).sqrt() + eps);
            p.data_mut()[k] -= update;
        }
    }
    Ok(())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub total_loss: f64,
    pub link_loss: f64,
    pub disent_loss: f64,
    pub val_roc_auc: f64,
    pub val_accuracy: f64,
}

/// In-memory checkpoint: current state for bit-exact resume plus the
/// best-validation parameters for evaluation.
#[derive(Clone)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub param_names: Vec<String>,
    pub params: Vec<Matrix>,
    pub adam_m: Vec<Matrix>,
    pub adam_v: Vec<Matrix>,
    pub adam_t: u64,
    pub bn: BnStates,
    pub best_params: Vec<Matrix>,
    pub best_bn: BnStates,
    pub best_epoch: usize,
    pub best_val_auc: f64,
    /// Epochs completed.
    pub epoch: usize,
    pub rng_word_pos: u128,
    /// Learned normalized coefficients at the best epoch (GOOD_LC and
    /// GOOD_LC+), else the last sampled q.
    pub coefficients: Vec<f64>,
}

pub struct TrainResult {
    pub checkpoint: Checkpoint,
    pub metrics: Vec<EpochMetrics>,
}

/// Validation/test negatives are drawn from a stream derived from (seed,
/// salt) only, so they are identical across suite members and across
/// resumed runs.
pub fn derived_rng(seed: u64, salt: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

const VAL_SALT: u64 = 1;
pub const TEST_SALT: u64 = 2;

/// Balanced evaluation batches for a window's target step: all positives
/// plus an equal count of frozen negatives from `rng`.
pub fn eval_batches(
    graph: &MultiRelGraph,
    window: &Window,
    strategy: &NegSampleStrategy,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<LinkBatch>> {
    let mut out = Vec::new();
    for c in graph.meta.target_contexts() {
        let key = graph.time_key(c, window.target);
        let positives = graph.positive_edges(c, key)?;
        if positives.is_empty() {
            return Err(Error::Config(format!(
                "target context {} has no positive edges at step {}",
                c.0, window.target
            )));
        }
        let negatives = sample_negatives(graph, c, key, positives.len(), strategy, rng)?;
        out.push(LinkBatch::balanced(c, positives, negatives));
    }
    Ok(out)
}

fn effective_strategy(graph: &MultiRelGraph, cfg: &TrainConfig) -> NegSampleStrategy {
    cfg.strategy.clone().unwrap_or_else(|| {
        let has_gt = graph.meta.target_contexts().any(|c| {
            graph
                .edge_sets()
                .any(|s| s.context == c && !s.ground_truth_negatives().is_empty())
        });
        NegSampleStrategy::default_for(has_gt)
    })
}

/// Eval-mode scores for `batches` using the given parameters.
fn score_batches(
    model: &mut Model,
    graph: &MultiRelGraph,
    cache: &SnapshotCache,
    cfg: &TrainConfig,
    window: &Window,
    batches: &[LinkBatch],
    q: &MixingCoefficients,
) -> Result<Vec<Vec<f64>>> {
    // eval mode consumes no randomness; the rng is inert here
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let pass = forward_pass(
        model,
        graph,
        cache,
        cfg,
        &window.inputs,
        batches,
        &CoeffValue::Fixed(q.clone()),
        Mode::Eval,
        &mut rng,
        false,
    )?;
    Ok(pass
        .scores
        .iter()
        .map(|&s| pass.tape.value(s).data().to_vec())
        .collect())
}

/// Inference coefficients for a trained model per the variant protocol.
fn variant_coefficients(cfg: &TrainConfig, model: &Model, c_prime: usize) -> Result<MixingCoefficients> {
    if cfg.ablate_coefficients || !cfg.variant.learns_coefficients() {
        return Ok(inference_coefficients(c_prime));
    }
    let raw = model
        .coeff_raw
        .ok_or_else(|| Error::Config("learned-coefficient model without raw vector".into()))?;
    normalize_learned(model.store.get(raw).data())
}

pub fn train(graph: &MultiRelGraph, splits: &SplitSpec, cfg: &TrainConfig) -> Result<TrainResult> {
    if cfg.variant == Variant::GoodLcPlus {
        return train_good_lc_plus(graph, splits, cfg);
    }
    train_from(graph, splits, cfg, None)
}

/// GOOD_LC+ two-run protocol: learn coefficients with GOOD_LC, weights with
/// GOOD, and combine them in one checkpoint.
fn train_good_lc_plus(
    graph: &MultiRelGraph,
    splits: &SplitSpec,
    cfg: &TrainConfig,
) -> Result<TrainResult> {
    let mut lc_cfg = cfg.clone();
    lc_cfg.variant = Variant::GoodLc;
    let lc = train_from(graph, splits, &lc_cfg, None)?;
    let mut good_cfg = cfg.clone();
    good_cfg.variant = Variant::Good;
    let mut good = train_from(graph, splits, &good_cfg, None)?;
    good.checkpoint.config = cfg.clone();
    good.checkpoint.coefficients = lc.checkpoint.coefficients;
    Ok(good)
}

/// Resume training from a saved checkpoint; continues to `epochs` from the
/// checkpoint's config, bit-exactly matching an uninterrupted run.
pub fn resume(graph: &MultiRelGraph, splits: &SplitSpec, ckpt: Checkpoint) -> Result<TrainResult> {
    let cfg = ckpt.config.clone();
    if cfg.variant == Variant::GoodLcPlus {
        return Err(Error::Config(
            "cannot resume a combined good_lc_plus checkpoint; resume its runs separately".into(),
        ));
    }
    train_from(graph, splits, &cfg, Some(ckpt))
}

fn train_from(
    graph: &MultiRelGraph,
    splits: &SplitSpec,
    cfg: &TrainConfig,
    start: Option<Checkpoint>,
) -> Result<TrainResult> {
    cfg.validate()?;
    graph.meta.validate()?;
    if graph.meta.num_target_contexts() == 0 {
        return Err(Error::Config("graph has no target context".into()));
    }
    if splits.train.inputs.len() != cfg.window {
        return Err(Error::Config(format!(
            "split window {} does not match config window {}",
            splits.train.inputs.len(),
            cfg.window
        )));
    }
    let c_prime = graph.meta.num_known_contexts;
    let strategy = effective_strategy(graph, cfg);
    let cache = SnapshotCache::build(graph)?;

    let mut build_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = build_model(graph, cfg, &mut build_rng)?;
    let mut adam_m: Vec<Matrix> = model
        .store
        .values()
        .iter()
        .map(|p| Matrix::zeros(p.rows(), p.cols()))
        .collect();
    let mut adam_v = adam_m.clone();
    let mut adam_t: u64 = 0;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x7261_6E64));
    let mut best_params = model.store.values().to_vec();
    let mut best_bn = model.bn.clone();
    let mut best_epoch = 0usize;
    let mut best_val_auc = f64::NEG_INFINITY;
    let mut start_epoch = 0usize;
    let mut coefficients = inference_coefficients(c_prime).as_slice().to_vec();

    if let Some(ckpt) = start {
        let names: Vec<String> = model.store.names().to_vec();
        if ckpt.param_names != names {
            return Err(Error::Incompatible(
                "checkpoint parameters do not match this graph/config".into(),
            ));
        }
        for (slot, value) in model.store.values_mut().iter_mut().zip(&ckpt.params) {
            if slot.shape() != value.shape() {
                return Err(Error::Incompatible("checkpoint parameter shape mismatch".into()));
            }
            *slot = value.clone();
        }
        model.bn = ckpt.bn.clone();
        adam_m = ckpt.adam_m.clone();
        adam_v = ckpt.adam_v.clone();
        adam_t = ckpt.adam_t;
        best_params = ckpt.best_params.clone();
        best_bn = ckpt.best_bn.clone();
        best_epoch = ckpt.best_epoch;
        best_val_auc = ckpt.best_val_auc;
        start_epoch = ckpt.epoch;
        coefficients = ckpt.coefficients.clone();
        rng.set_word_pos(ckpt.rng_word_pos);
    }

    // frozen validation negatives, independent of the training stream
    let val_batches = eval_batches(
        graph,
        &splits.validation,
        &strategy,
        &mut derived_rng(cfg.seed, VAL_SALT),
    )?;

    let with_disent = cfg.variant.uses_disentangler() && !cfg.ablate_coefficients;
    let mut metrics = Vec::new();

    for epoch in start_epoch..cfg.epochs {
        // per-epoch coefficients, constant across the epoch's batches
        let coeff_value = if cfg.ablate_coefficients {
            CoeffValue::Fixed(inference_coefficients(c_prime))
        } else if cfg.variant.learns_coefficients() {
            CoeffValue::Learned
        } else {
            let q = sample_coefficients(c_prime, &mut rng);
            coefficients = q.as_slice().to_vec();
            CoeffValue::Fixed(q)
        };

        // fresh balanced negatives each epoch, positives fixed
        let mut batches = Vec::new();
        for c in graph.meta.target_contexts() {
            let key = graph.time_key(c, splits.train.target);
            let positives = graph.positive_edges(c, key)?;
            if positives.is_empty() {
                return Err(Error::Config(format!(
                    "target context {} has no training edges at step {}",
                    c.0, splits.train.target
                )));
            }
            let negatives =
                sample_negatives(graph, c, key, positives.len(), &strategy, &mut rng)?;
            batches.push(LinkBatch::balanced(c, positives, negatives));
        }

        let pass = forward_pass(
            &mut model,
            graph,
            &cache,
            cfg,
            &splits.train.inputs,
            &batches,
            &coeff_value,
            Mode::Train,
            &mut rng,
            with_disent,
        )?;
        let mut tape = pass.tape;
        let link_val = tape.value(pass.link_loss)[(0, 0)];
        let (loss_node, disent_val) = match pass.q_hat {
            Some(q_hat) => {
                let q = match &coeff_value {
                    CoeffValue::Fixed(q) => q.clone(),
                    CoeffValue::Learned => unreachable!("learned coefficients disable L_Q"),
                };
                let dl = disentangle_loss_var(&mut tape, q_hat, &q)?;
                let total = tape.add(pass.link_loss, dl)?;
                (total, tape.value(dl)[(0, 0)])
            }
            None => (pass.link_loss, 0.0),
        };
        let total_val = tape.value(loss_node)[(0, 0)];
        if !total_val.is_finite() {
            return Err(Error::Diverged {
                epoch: epoch + 1,
                msg: format!("loss became {total_val}"),
            });
        }

        let grads = tape.backward(loss_node)?;
        let grad_list: Vec<Option<Matrix>> = pass
            .param_vars
            .iter()
            .map(|&v| grads.get(v).cloned())
            .collect();
        adam_t += 1;
        adam_step(
            model.store.values_mut(),
            &grad_list,
            &mut adam_m,
            &mut adam_v,
            cfg.learning_rate,
            cfg.weight_decay,
            (0.9, 0.999),
            1e-8,
            adam_t,
        )?;

        // validation with the variant's inference coefficients
        let q_inf = variant_coefficients(cfg, &model, c_prime)?;
        let val_scores = score_batches(
            &mut model,
            graph,
            &cache,
            cfg,
            &splits.validation,
            &val_batches,
            &q_inf,
        )?;
        let mut all_scores = Vec::new();
        let mut all_labels = Vec::new();
        for (batch, scores) in val_batches.iter().zip(&val_scores) {
            all_scores.extend_from_slice(scores);
            all_labels.extend_from_slice(&batch.labels);
        }
        let val_auc = crate::eval::roc_auc(&all_scores, &all_labels)?;
        let val_acc = crate::eval::accuracy(&all_scores, &all_labels, 0.5)?;
        metrics.push(EpochMetrics {
            epoch: epoch + 1,
            total_loss: total_val,
            link_loss: link_val,
            disent_loss: disent_val,
            val_roc_auc: val_auc,
            val_accuracy: val_acc,
        });

        if val_auc > best_val_auc {
            best_val_auc = val_auc;
            best_epoch = epoch + 1;
            best_params = model.store.values().to_vec();
            best_bn = model.bn.clone();
            if cfg.variant.learns_coefficients() && !cfg.ablate_coefficients {
                coefficients = q_inf.as_slice().to_vec();
            }
        }

        if epoch + 1 >= best_epoch + cfg.patience && best_val_auc.is_finite() {
            break;
        }
    }

    let epoch_done = metrics.last().map(|m| m.epoch).unwrap_or(start_epoch);
    let checkpoint = Checkpoint {
        config: cfg.clone(),
        param_names: model.store.names().to_vec(),
        params: model.store.values().to_vec(),
        adam_m,
        adam_v,
        adam_t,
        bn: model.bn.clone(),
        best_params,
        best_bn,
        best_epoch,
        best_val_auc,
        epoch: epoch_done.max(start_epoch),
        rng_word_pos: rng.get_word_pos(),
        coefficients,
    };
    Ok(TrainResult { checkpoint, metrics })
}

/// Eval-mode scores for `batches` on `window`, using the checkpoint's
/// best-validation parameters and the variant's inference coefficients.
/// GOOD_LC+ requires learned coefficients, either stored by its two-run
/// training or passed as `coefficients_override`.
pub fn infer(
    ckpt: &Checkpoint,
    graph: &MultiRelGraph,
    window: &Window,
    batches: &[LinkBatch],
    coefficients_override: Option<&[f64]>,
) -> Result<Vec<Vec<f64>>> {
    let cfg = &ckpt.config;
    let c_prime = graph.meta.num_known_contexts;
    let mut build_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = build_model(graph, cfg, &mut build_rng)?;
    if ckpt.param_names != model.store.names() {
        return Err(Error::Incompatible(
            "checkpoint does not match this dataset/config".into(),
        ));
    }
    for (slot, value) in model.store.values_mut().iter_mut().zip(&ckpt.best_params) {
        if slot.shape() != value.shape() {
            return Err(Error::Incompatible("checkpoint parameter shape mismatch".into()));
        }
        *slot = value.clone();
    }
    model.bn = ckpt.best_bn.clone();

    let q = match coefficients_override {
        Some(raw) => MixingCoefficients::new(raw.to_vec())?,
        None => match cfg.variant {
            _ if cfg.ablate_coefficients => inference_coefficients(c_prime),
            Variant::Good => inference_coefficients(c_prime),
            Variant::GoodLc | Variant::GoodLcPlus => {
                if ckpt.coefficients.len() != c_prime {
                    return Err(Error::Config(format!(
                        "{} inference needs {c_prime} learned coefficients, checkpoint has {}",
                        cfg.variant.name(),
                        ckpt.coefficients.len()
                    )));
                }
                MixingCoefficients::new(ckpt.coefficients.clone())?
            }
        },
    };
    let cache = SnapshotCache::build(graph)?;
    score_batches(&mut model, graph, &cache, cfg, window, batches, &q)
}

/// Disentangler output q_hat for the checkpoint's best parameters when the
/// window is aggregated with the given coefficients, eval mode.
pub fn predict_coefficients(
    ckpt: &Checkpoint,
    graph: &MultiRelGraph,
    window: &Window,
    q: &MixingCoefficients,
) -> Result<Vec<f64>> {
    let cfg = &ckpt.config;
    let mut build_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = build_model(graph, cfg, &mut build_rng)?;
    if ckpt.param_names != model.store.names() {
        return Err(Error::Incompatible(
            "checkpoint does not match this dataset/config".into(),
        ));
    }
    for (slot, value) in model.store.values_mut().iter_mut().zip(&ckpt.best_params) {
        *slot = value.clone();
    }
    model.bn = ckpt.best_bn.clone();
    let cache = SnapshotCache::build(graph)?;
    // the link heads need a batch each; one placeholder pair suffices
    let batches: Vec<LinkBatch> = graph
        .meta
        .target_contexts()
        .map(|c| LinkBatch {
            context: c,
            pairs: vec![(0, 0)],
            labels: vec![1.0],
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let pass = forward_pass(
        &mut model,
        graph,
        &cache,
        cfg,
        &window.inputs,
        &batches,
        &CoeffValue::Fixed(q.clone()),
        Mode::Eval,
        &mut rng,
        true,
    )?;
    let q_hat = pass.q_hat.expect("disentangler requested");
    Ok(pass.tape.value(q_hat).data().to_vec())
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    format_version: u32,
    config: TrainConfig,
    param_names: Vec<String>,
    param_shapes: Vec<(usize, usize)>,
    bn_dims: Vec<usize>,
    adam_t: u64,
    best_epoch: usize,
    best_val_auc: f64,
    epoch: usize,
    rng_word_pos: u128,
    coefficients: Vec<f64>,
}

fn write_block(buf: &mut Vec<u8>, data: &[f64]) {
    for v in data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

fn write_bn(buf: &mut Vec<u8>, bn: &BnStates) {
    for s in bn.states() {
        write_block(buf, &s.mean);
        write_block(buf, &s.var);
    }
}

/// Binary checkpoint: magic, u64 header length, JSON header, then raw
/// little-endian f64 blocks in a fixed order (params, Adam m, Adam v, BN
/// mean/var pairs, best params, best BN).
pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let display = path.display().to_string();
    let header = CheckpointHeader {
        format_version: CHECKPOINT_VERSION,
        config: ckpt.config.clone(),
        param_names: ckpt.param_names.clone(),
        param_shapes: ckpt.params.iter().map(|p| p.shape()).collect(),
        bn_dims: ckpt.bn.states().iter().map(|s| s.mean.len()).collect(),
        adam_t: ckpt.adam_t,
        best_epoch: ckpt.best_epoch,
        best_val_auc: ckpt.best_val_auc,
        epoch: ckpt.epoch,
        rng_word_pos: ckpt.rng_word_pos,
        coefficients: ckpt.coefficients.clone(),
    };
    let header_json = serde_json::to_vec(&header)
        .map_err(|e| Error::Argument(format!("checkpoint header serialization: {e}")))?;
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&(header_json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&header_json);
    for block in [&ckpt.params, &ckpt.adam_m, &ckpt.adam_v] {
        for m in block.iter() {
            write_block(&mut buf, m.data());
        }
    }
    write_bn(&mut buf, &ckpt.bn);
    for m in &ckpt.best_params {
        write_block(&mut buf, m.data());
    }
    write_bn(&mut buf, &ckpt.best_bn);
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(&display, e))?;
    f.write_all(&buf).map_err(|e| Error::io(&display, e))?;
    Ok(())
}

struct BlockReader<'a> {
    data: &'a [u8],
    pos: usize,
    path: &'a str,
}

impl<'a> BlockReader<'a> {
    fn read_matrix(&mut self, rows: usize, cols: usize) -> Result<Matrix> {
        let n = rows * cols;
        let need = n * 8;
        if self.pos + need > self.data.len() {
            return Err(Error::Parse {
                path: self.path.to_string(),
                line: 0,
                msg: "truncated checkpoint".into(),
            });
        }
        let mut values = Vec::with_capacity(n);
        for k in 0..n {
            let start = self.pos + k * 8;
            let bytes: [u8; 8] = self.data[start..start + 8].try_into().unwrap();
            values.push(f64::from_le_bytes(bytes));
        }
        self.pos += need;
        Matrix::from_vec(rows, cols, values)
    }

    fn read_bn(&mut self, dims: &[usize]) -> Result<BnStates> {
        let mut bn = BnStates::new();
        for &d in dims {
            let id = bn.add(d);
            let mean = self.read_matrix(1, d)?;
            let var = self.read_matrix(1, d)?;
            let s = bn.get_mut(id);
            s.mean = mean.data().to_vec();
            s.var = var.data().to_vec();
        }
        Ok(bn)
    }
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let display = path.display().to_string();
    let mut data = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut data))
        .map_err(|e| Error::io(&display, e))?;
    let parse_err = |msg: &str| Error::Parse {
        path: display.clone(),
        line: 0,
        msg: msg.into(),
    };
    if data.len() < 16 || &data[..8] != CHECKPOINT_MAGIC {
        return Err(parse_err("not a checkpoint file"));
    }
    let header_len = u64::from_le_bytes(data[8..16].try_into().unwrap()) as usize;
    if 16 + header_len > data.len() {
        return Err(parse_err("truncated checkpoint header"));
    }
    let header: CheckpointHeader = serde_json::from_slice(&data[16..16 + header_len])
        .map_err(|e| parse_err(&format!("bad header: {e}")))?;
    if header.format_version != CHECKPOINT_VERSION {
        return Err(Error::Incompatible(format!(
            "checkpoint format version {} (expected {CHECKPOINT_VERSION})",
            header.format_version
        )));
    }
    if header.param_names.len() != header.param_shapes.len() {
        return Err(parse_err("header name/shape count mismatch"));
    }
    let mut reader = BlockReader {
        data: &data,
        pos: 16 + header_len,
        path: &display,
    };
    let read_params = |r: &mut BlockReader| -> Result<Vec<Matrix>> {
        header
            .param_shapes
            .iter()
            .map(|&(rows, cols)| r.read_matrix(rows, cols))
            .collect()
    };
    let params = read_params(&mut reader)?;
    let adam_m = read_params(&mut reader)?;
    let adam_v = read_params(&mut reader)?;
    let bn = reader.read_bn(&header.bn_dims)?;
    let best_params = read_params(&mut reader)?;
    let best_bn = reader.read_bn(&header.bn_dims)?;
    if reader.pos != data.len() {
        return Err(parse_err("trailing bytes after checkpoint blocks"));
    }
    Ok(Checkpoint {
        config: header.config,
        param_names: header.param_names,
        params,
        adam_m,
        adam_v,
        adam_t: header.adam_t,
        bn,
        best_params,
        best_bn,
        best_epoch: header.best_epoch,
        best_val_auc: header.best_val_auc,
        epoch: header.epoch,
        rng_word_pos: header.rng_word_pos,
        coefficients: header.coefficients,
    })
}
