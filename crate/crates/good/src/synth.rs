//! Synthetic discrete dynamic multi-relational graphs with a known mixture
//! linking the target context to the known contexts, generated from a
//! logistic latent-factor model so the mixture is exact in logit space.

use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{
    ContextId, DatasetManifest, EdgeLabel, EdgeSet, FeatureSource, GraphMeta, MultiRelGraph,
    NodeId, TimeStep, MANIFEST_VERSION,
};
use crate::matrix::{sigmoid_scalar, Matrix};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SynthConfig {
    pub num_nodes: usize,
    pub latent_dim: usize,
    pub num_known_contexts: usize,
    pub num_target_contexts: usize,
    pub num_steps: usize,
    /// Ground-truth contribution of each known context to the target.
    pub target_mixture: Vec<f64>,
    pub edge_density: f64,
    pub temporal_drift: f64,
    pub noise: f64,
    pub seed: u64,
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_target_contexts == 0 {
            return Err(Error::Argument("num_target_contexts must be >= 1".into()));
        }
        if self.num_known_contexts == 0 {
            return Err(Error::Argument("num_known_contexts must be >= 1".into()));
        }
        if self.num_nodes < 2 || self.latent_dim == 0 || self.num_steps < 2 {
            return Err(Error::Argument(
                "need num_nodes >= 2, latent_dim >= 1, num_steps >= 2".into(),
            ));
        }
        if self.target_mixture.len() != self.num_known_contexts {
            return Err(Error::Argument(format!(
                "target_mixture has {} entries for {} known contexts",
                self.target_mixture.len(),
                self.num_known_contexts
            )));
        }
        if self.target_mixture.iter().any(|&q| q < 0.0 || !q.is_finite()) {
            return Err(Error::Argument("target_mixture entries must be >= 0".into()));
        }
        let sum: f64 = self.target_mixture.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Argument(format!(
                "target_mixture sums to {sum}, need 1"
            )));
        }
        if !(0.0 < self.edge_density && self.edge_density < 1.0) {
            return Err(Error::Argument(format!(
                "edge_density {} outside (0, 1)",
                self.edge_density
            )));
        }
        let pairs = self.num_nodes * (self.num_nodes - 1) / 2;
        if self.edge_density * pairs as f64 + 1e-9 < self.num_nodes as f64 {
            return Err(Error::Argument(format!(
                "edge_density {} gives fewer expected edges than nodes; raise it above {:.4}",
                self.edge_density,
                2.0 / (self.num_nodes as f64 - 1.0)
            )));
        }
        if self.temporal_drift < 0.0 || self.noise < 0.0 {
            return Err(Error::Argument("temporal_drift and noise must be >= 0".into()));
        }
        Ok(())
    }

    /// The graph metadata implied by this config: known contexts first, all
    /// contexts time-dependent.
    pub fn graph_meta(&self) -> GraphMeta {
        let c = self.num_known_contexts + self.num_target_contexts;
        GraphMeta {
            num_nodes: self.num_nodes,
            node_type_of: vec![0; self.num_nodes],
            num_contexts: c,
            num_known_contexts: self.num_known_contexts,
            num_steps: self.num_steps,
            time_dependent: vec![true; c],
        }
    }
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_nodes: 300,
            latent_dim: 16,
            num_known_contexts: 3,
            num_target_contexts: 1,
            num_steps: 6,
            target_mixture: vec![0.5, 0.3, 0.2],
            edge_density: 0.05,
            temporal_drift: 0.05,
            noise: 0.5,
            seed: 0,
        }
    }
}

/// Generator-side truth retained for oracles: the latent embedding and the
/// per-context matrices, from which any noiseless logit can be recomputed.
#[derive(Clone, Debug)]
pub struct GroundTruth {
    pub target_mixture: Vec<f64>,
    pub latent: Matrix,
    r: Vec<Matrix>,
    dr: Vec<Matrix>,
    drift: f64,
}

impl GroundTruth {
    /// Noiseless logit of known context `c` at 1-based step `t` (before the
    /// density-calibrating bias).
    pub fn context_score(&self, c: usize, t: TimeStep, u: NodeId, v: NodeId) -> f64 {
        let d = self.latent.cols();
        let rc = &self.r[c];
        let dc = &self.dr[c];
        let mut s = 0.0;
        for i in 0..d {
            for j in 0..d {
                let r = rc[(i, j)] + t as f64 * self.drift * dc[(i, j)];
                s += self.latent[(u, i)] * r * self.latent[(v, j)];
            }
        }
        s
    }

    /// Noiseless target logit: the mixture of known-context scores.
    pub fn target_score(&self, t: TimeStep, u: NodeId, v: NodeId) -> f64 {
        self.target_mixture
            .iter()
            .enumerate()
            .map(|(c, &q)| q * self.context_score(c, t, u, v))
            .sum()
    }
}

fn symmetric_normal(dim: usize, rng: &mut impl Rng) -> Matrix {
    // scaled so logits z_u^T R z_v have std of a few units: sharp enough
    // that edge sampling is rankable, soft enough to stay stochastic
    let scale = 3.0 / (dim as f64).sqrt();
    let g = Matrix::from_fn(dim, dim, |_, _| {
        rng.sample::<f64, _>(StandardNormal) * scale
    });
    let gt = g.transpose();
    g.add(&gt).unwrap().scale(0.5)
}

/// Bias b such that the mean of sigmoid(s + b) over all scores hits the
/// density, found by bisection (the mean is strictly increasing in b).
fn calibrate_bias(scores: &[f64], density: f64) -> Result<f64> {
    let mean_at = |b: f64| -> f64 {
        scores.iter().map(|&s| sigmoid_scalar(s + b)).sum::<f64>() / scores.len() as f64
    };
    let (mut lo, mut hi) = (-60.0, 60.0);
    if mean_at(lo) > density || mean_at(hi) < density {
        return Err(Error::Generation(format!(
            "edge_density {density} unreachable for this latent geometry; \
             adjust edge_density or latent_dim"
        )));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mean_at(mid) < density {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let b = 0.5 * (lo + hi);
    if (mean_at(b) - density).abs() > 1e-3 {
        return Err(Error::Generation(format!(
            "bias calibration failed to reach density {density}"
        )));
    }
    Ok(b)
}

/// Sample one snapshot from per-pair logits: Bernoulli positives, plus hard
/// ground-truth negatives taken from the highest-probability non-edges.
fn sample_snapshot(
    context: ContextId,
    time: TimeStep,
    pairs: &[(NodeId, NodeId)],
    logits: &[f64],
    density: f64,
    rng: &mut impl Rng,
) -> Result<EdgeSet> {
    let bias = calibrate_bias(logits, density)?;
    let mut entries: Vec<(NodeId, NodeId, f64, EdgeLabel)> = Vec::new();
    let mut non_edges: Vec<(usize, f64)> = Vec::new();
    for (idx, (&(u, v), &s)) in pairs.iter().zip(logits).enumerate() {
        let p = sigmoid_scalar(s + bias);
        if rng.gen::<f64>() < p {
            entries.push((u, v, 1.0, EdgeLabel::Positive));
        } else {
            non_edges.push((idx, p));
        }
    }
    if entries.is_empty() {
        return Err(Error::Generation(format!(
            "no edges sampled for context {} at t{time}; raise edge_density",
            context.0
        )));
    }
    // hard negatives: top-probability non-edges, a quarter of the positives
    let num_neg = (entries.len() / 4).max(1).min(non_edges.len());
    non_edges.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    for &(idx, p) in non_edges.iter().take(num_neg) {
        let (u, v) = pairs[idx];
        entries.push((u, v, p, EdgeLabel::NegativeGroundTruth));
    }
    EdgeSet::from_undirected(context, Some(time), &entries)
}

pub fn generate(config: &SynthConfig) -> Result<(MultiRelGraph, GroundTruth)> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n = config.num_nodes;
    let d = config.latent_dim;
    let z = Matrix::from_fn(n, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let r: Vec<Matrix> = (0..config.num_known_contexts)
        .map(|_| symmetric_normal(d, &mut rng))
        .collect();
    let dr: Vec<Matrix> = (0..config.num_known_contexts)
        .map(|_| symmetric_normal(d, &mut rng))
        .collect();
    let truth = GroundTruth {
        target_mixture: config.target_mixture.clone(),
        latent: z.clone(),
        r,
        dr,
        drift: config.temporal_drift,
    };

    let pairs: Vec<(NodeId, NodeId)> = (0..n)
        .flat_map(|u| ((u + 1)..n).map(move |v| (u, v)))
        .collect();
    let mut sets = Vec::new();
    for t in 1..=config.num_steps {
        let known: Vec<Vec<f64>> = (0..config.num_known_contexts)
            .map(|c| {
                pairs
                    .iter()
                    .map(|&(u, v)| truth.context_score(c, t, u, v))
                    .collect()
            })
            .collect();
        for (c, logits) in known.iter().enumerate() {
            sets.push(sample_snapshot(
                ContextId(c),
                t,
                &pairs,
                logits,
                config.edge_density,
                &mut rng,
            )?);
        }
        for k in 0..config.num_target_contexts {
            let logits: Vec<f64> = pairs
                .iter()
                .enumerate()
                .map(|(i, _)| {
                    let mixed: f64 = config
                        .target_mixture
                        .iter()
                        .zip(&known)
                        .map(|(&q, s)| q * s[i])
                        .sum();
                    mixed + config.noise * rng.sample::<f64, _>(StandardNormal)
                })
                .collect();
            sets.push(sample_snapshot(
                ContextId(config.num_known_contexts + k),
                t,
                &pairs,
                &logits,
                config.edge_density,
                &mut rng,
            )?);
        }
    }

    let graph = MultiRelGraph::new(
        config.graph_meta(),
        sets,
        FeatureSource::Loaded(z),
    )?;
    Ok((graph, truth))
}

/// Write edges.csv (both directions per logical edge), features.csv, and
/// manifest.json into `dir`, creating it if needed.
pub fn write_dataset(graph: &MultiRelGraph, config: &SynthConfig, dir: &Path) -> Result<()> {
    use std::io::Write;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(&dir.display().to_string(), e))?;
    let io_err = |p: &Path| {
        let display = p.display().to_string();
        move |e: std::io::Error| Error::io(&display, e)
    };

    let edges_path = dir.join("edges.csv");
    let mut f = std::io::BufWriter::new(
        std::fs::File::create(&edges_path).map_err(io_err(&edges_path))?,
    );
    writeln!(f, "src,dst,context,time,weight,label").map_err(io_err(&edges_path))?;
    for set in graph.edge_sets() {
        let time = match set.time {
            Some(t) => format!("t{t}"),
            None => "static".into(),
        };
        for e in set.edges() {
            let label = match e.label {
                EdgeLabel::Positive => "pos",
                EdgeLabel::NegativeGroundTruth => "neg",
            };
            writeln!(
                f,
                "{},{},c{},{},{},{}",
                e.src, e.dst, set.context.0, time, e.weight, label
            )
            .map_err(io_err(&edges_path))?;
        }
    }
    f.flush().map_err(io_err(&edges_path))?;

    if let FeatureSource::Loaded(m) = &graph.features {
        let feat_path = dir.join("features.csv");
        let mut f = std::io::BufWriter::new(
            std::fs::File::create(&feat_path).map_err(io_err(&feat_path))?,
        );
        let header: Vec<String> = (0..m.cols()).map(|j| format!("f{j}")).collect();
        writeln!(f, "node,{}", header.join(",")).map_err(io_err(&feat_path))?;
        for i in 0..m.rows() {
            let row: Vec<String> = (0..m.cols()).map(|j| m[(i, j)].to_string()).collect();
            writeln!(f, "{},{}", i, row.join(",")).map_err(io_err(&feat_path))?;
        }
        f.flush().map_err(io_err(&feat_path))?;
    }

    let manifest = DatasetManifest {
        format_version: MANIFEST_VERSION,
        config: config.clone(),
        target_mixture: config.target_mixture.clone(),
    };
    let manifest_path = dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::Argument(format!("manifest serialization: {e}")))?;
    std::fs::write(&manifest_path, json).map_err(io_err(&manifest_path))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> SynthConfig {
        SynthConfig {
            num_nodes: 40,
            latent_dim: 6,
            num_known_contexts: 2,
            num_target_contexts: 1,
            num_steps: 3,
            target_mixture: vec![1.0, 0.0],
            edge_density: 0.15,
            temporal_drift: 0.0,
            noise: 0.0,
            seed: 5,
        }
    }

    /// Brute-force pairwise AUC, small inputs only.
    fn auc(scores: &[f64], labels: &[bool]) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for (i, &si) in scores.iter().enumerate() {
            if !labels[i] {
                continue;
            }
            for (j, &sj) in scores.iter().enumerate() {
                if labels[j] {
                    continue;
                }
                den += 1.0;
                if si > sj {
                    num += 1.0;
                } else if si == sj {
                    num += 0.5;
                }
            }
        }
        num / den
    }

    fn oracle_auc(config: &SynthConfig, context: usize) -> f64 {
        let (graph, truth) = generate(config).unwrap();
        let t = config.num_steps;
        let target = ContextId(config.num_known_contexts);
        let positives: std::collections::BTreeSet<_> = graph
            .edge_set(target, Some(t))
            .unwrap()
            .positive_pairs()
            .into_iter()
            .collect();
        let mut scores = Vec::new();
        let mut labels = Vec::new();
        for u in 0..config.num_nodes {
            for v in (u + 1)..config.num_nodes {
                scores.push(truth.context_score(context, t, u, v));
                labels.push(positives.contains(&(u, v)));
            }
        }
        auc(&scores, &labels)
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut c = small_config();
        c.num_target_contexts = 0;
        assert!(generate(&c).is_err());
        let mut c = small_config();
        c.target_mixture = vec![0.6, 0.6];
        assert!(c.validate().is_err());
        let mut c = small_config();
        c.edge_density = 1.5;
        assert!(c.validate().is_err());
        let mut c = small_config();
        c.edge_density = 0.01; // expected edges below node count
        assert!(c.validate().is_err());
    }

    #[test]
    fn fixed_seed_bit_identical() {
        let c = small_config();
        let (g1, t1) = generate(&c).unwrap();
        let (g2, t2) = generate(&c).unwrap();
        assert_eq!(t1.latent.data(), t2.latent.data());
        let s1: Vec<_> = g1.edge_sets().collect();
        let s2: Vec<_> = g2.edge_sets().collect();
        assert_eq!(s1, s2);
    }

    #[test]
    fn different_seeds_differ() {
        let c = small_config();
        let mut c2 = c.clone();
        c2.seed = 6;
        let (g1, _) = generate(&c).unwrap();
        let (g2, _) = generate(&c2).unwrap();
        let e1: Vec<_> = g1.edge_sets().flat_map(|s| s.edges().to_vec()).collect();
        let e2: Vec<_> = g2.edge_sets().flat_map(|s| s.edges().to_vec()).collect();
        assert_ne!(e1, e2);
    }

    #[test]
    fn pure_mixture_oracle_ranks_target_edges() {
        // noise=0, drift=0, mixture=[1,0]: target edges follow context 0
        let a = oracle_auc(&small_config(), 0);
        assert!(a > 0.95, "oracle AUC {a}");
    }

    #[test]
    fn noise_degrades_oracle_auc() {
        let mut medians = Vec::new();
        for noise in [0.0, 1.0, 4.0] {
            let mut aucs: Vec<f64> = (0..3)
                .map(|s| {
                    let mut c = small_config();
                    c.noise = noise;
                    c.seed = 100 + s;
                    oracle_auc(&c, 0)
                })
                .collect();
            aucs.sort_by(|a, b| a.partial_cmp(b).unwrap());
            medians.push(aucs[1]);
        }
        assert!(
            medians[0] > medians[1] && medians[1] > medians[2],
            "medians {medians:?}"
        );
    }

    #[test]
    fn edge_count_tracks_density() {
        let c = SynthConfig {
            num_nodes: 200,
            latent_dim: 8,
            num_known_contexts: 1,
            num_target_contexts: 1,
            num_steps: 2,
            target_mixture: vec![1.0],
            edge_density: 0.05,
            temporal_drift: 0.0,
            noise: 0.1,
            seed: 21,
        };
        let (graph, _) = generate(&c).unwrap();
        let expected = 0.05 * (200.0 * 199.0 / 2.0);
        for set in graph.edge_sets() {
            let count = set.positive_pairs().len() as f64;
            assert!(
                (count - expected).abs() / expected < 0.2,
                "count {count} vs expected {expected}"
            );
        }
    }

    #[test]
    fn mixture_recoverable_by_least_squares() {
        let mut c = small_config();
        c.target_mixture = vec![0.7, 0.3];
        c.noise = 0.0;
        let (_, truth) = generate(&c).unwrap();
        // regress target logits onto the two known-context logits
        let mut xtx = [[0.0f64; 2]; 2];
        let mut xty = [0.0f64; 2];
        for u in 0..c.num_nodes {
            for v in (u + 1)..c.num_nodes {
                let x = [truth.context_score(0, 2, u, v), truth.context_score(1, 2, u, v)];
                let y = truth.target_score(2, u, v);
                for i in 0..2 {
                    for j in 0..2 {
                        xtx[i][j] += x[i] * x[j];
                    }
                    xty[i] += x[i] * y;
                }
            }
        }
        let det = xtx[0][0] * xtx[1][1] - xtx[0][1] * xtx[1][0];
        let b0 = (xty[0] * xtx[1][1] - xty[1] * xtx[0][1]) / det;
        let b1 = (xty[1] * xtx[0][0] - xty[0] * xtx[1][0]) / det;
        assert!((b0 - 0.7).abs() < 0.05, "b0 {b0}");
        assert!((b1 - 0.3).abs() < 0.05, "b1 {b1}");
    }

    #[test]
    fn dataset_round_trip() {
        let c = small_config();
        let (graph, _) = generate(&c).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&graph, &c, dir.path()).unwrap();
        let loaded = crate::graph::load_dataset(dir.path(), None).unwrap();
        assert_eq!(loaded.meta.num_contexts, graph.meta.num_contexts);
        for set in graph.edge_sets() {
            let got = loaded.edge_set(set.context, set.time).unwrap();
            assert_eq!(got.edges(), set.edges());
        }
        match (&loaded.features, &graph.features) {
            (FeatureSource::Loaded(a), FeatureSource::Loaded(b)) => {
                assert_eq!(a.data(), b.data())
            }
            _ => panic!("features not loaded"),
        }
        // row count is 2x the logical undirected edge count
        let raw = std::fs::read_to_string(dir.path().join("edges.csv")).unwrap();
        let rows = raw.lines().count() - 1;
        let logical: usize = graph.edge_sets().map(|s| s.undirected().count()).sum();
        assert_eq!(rows, 2 * logical);
        // manifest carries the exact mixture
        let manifest: DatasetManifest = serde_json::from_str(
            &std::fs::read_to_string(dir.path().join("manifest.json")).unwrap(),
        )
        .unwrap();
        assert_eq!(manifest.target_mixture, c.target_mixture);
    }
}
