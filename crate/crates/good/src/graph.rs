//! Discrete dynamic multi-relational graph store: typed node sets,
//! per-(context, time) edge sets, node features, normalized adjacency
//! construction, and the rolling-window season split protocol.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{CsrMatrix, Matrix};

pub type NodeId = usize;
/// 1-based time step index.
pub type TimeStep = usize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ContextId(pub usize);

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GraphMeta {
    pub num_nodes: usize,
    /// Node type index per node; metadata only, the convolution does not
    /// parameterize by node type.
    pub node_type_of: Vec<usize>,
    /// Total number of contexts C (known + target).
    pub num_contexts: usize,
    /// Known contexts C'; known contexts are 0..C', targets C'..C.
    pub num_known_contexts: usize,
    /// Total time steps T.
    pub num_steps: usize,
    pub time_dependent: Vec<bool>,
}

impl GraphMeta {
    pub fn validate(&self) -> Result<()> {
        if self.num_known_contexts < 1 || self.num_known_contexts >= self.num_contexts {
            return Err(Error::Validation(format!(
                "need 1 <= C' < C, got C'={} C={}",
                self.num_known_contexts, self.num_contexts
            )));
        }
        if self.time_dependent.len() != self.num_contexts {
            return Err(Error::Validation(
                "time_dependent length must equal context count".into(),
            ));
        }
        if self.time_dependent.iter().any(|&d| d) && self.num_steps < 2 {
            return Err(Error::Validation(
                "time-dependent contexts need at least 2 time steps".into(),
            ));
        }
        if self.node_type_of.len() != self.num_nodes {
            return Err(Error::Validation(
                "node_type_of length must equal node count".into(),
            ));
        }
        Ok(())
    }

    pub fn known_contexts(&self) -> impl Iterator<Item = ContextId> {
        (0..self.num_known_contexts).map(ContextId)
    }

    pub fn target_contexts(&self) -> impl Iterator<Item = ContextId> + '_ {
        (self.num_known_contexts..self.num_contexts).map(ContextId)
    }

    pub fn num_target_contexts(&self) -> usize {
        self.num_contexts - self.num_known_contexts
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum EdgeLabel {
    Positive,
    NegativeGroundTruth,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Edge {
    pub src: NodeId,
    pub dst: NodeId,
    pub weight: f64,
    pub label: EdgeLabel,
}

/// Edges of one context at one time step, stored in both directions.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeSet {
    pub context: ContextId,
    pub time: Option<TimeStep>,
    edges: Vec<Edge>,
}

impl EdgeSet {
    /// Build from logical undirected entries keyed (src, dst). Duplicate
    /// entries for the same unordered pair merge by summing weight; their
    /// labels must agree. Self-loops are rejected.
    pub fn from_undirected(
        context: ContextId,
        time: Option<TimeStep>,
        entries: &[(NodeId, NodeId, f64, EdgeLabel)],
    ) -> Result<Self> {
        let mut merged: BTreeMap<(NodeId, NodeId), (f64, EdgeLabel)> = BTreeMap::new();
        for &(src, dst, weight, label) in entries {
            if src == dst {
                return Err(Error::Validation(format!("self-loop on node {src}")));
            }
            if weight < 0.0 {
                return Err(Error::Validation(format!(
                    "negative weight {weight} on edge ({src}, {dst})"
                )));
            }
            let key = (src.min(dst), src.max(dst));
            match merged.entry(key) {
                std::collections::btree_map::Entry::Vacant(e) => {
                    e.insert((weight, label));
                }
                std::collections::btree_map::Entry::Occupied(mut e) => {
                    if e.get().1 != label {
                        return Err(Error::Validation(format!(
                            "conflicting labels for edge ({}, {})",
                            key.0, key.1
                        )));
                    }
                    e.get_mut().0 += weight;
                }
            }
        }
        let mut edges = Vec::with_capacity(merged.len() * 2);
        for ((u, v), (weight, label)) in merged {
            edges.push(Edge { src: u, dst: v, weight, label });
            edges.push(Edge { src: v, dst: u, weight, label });
        }
        Ok(EdgeSet { context, time, edges })
    }

    /// All stored directed edges (both directions of each logical edge).
    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// Canonical (src < dst) undirected view.
    pub fn undirected(&self) -> impl Iterator<Item = &Edge> {
        self.edges.iter().filter(|e| e.src < e.dst)
    }

    pub fn positive_pairs(&self) -> Vec<(NodeId, NodeId)> {
        self.undirected()
            .filter(|e| e.label == EdgeLabel::Positive)
            .map(|e| (e.src, e.dst))
            .collect()
    }

    pub fn ground_truth_negatives(&self) -> Vec<&Edge> {
        self.undirected()
            .filter(|e| e.label == EdgeLabel::NegativeGroundTruth)
            .collect()
    }
}

/// Normalized adjacency and raw degrees of one (context, time) snapshot.
#[derive(Clone, Debug)]
pub struct Snapshot {
    pub context: ContextId,
    pub time: Option<TimeStep>,
    /// D^{-1/2} (A + I) D^{-1/2}, symmetric.
    pub adj_norm: Rc<CsrMatrix>,
    /// Positive-edge degree per node, without the added self-loop.
    pub degree: Vec<usize>,
}

/// Â with self-loops added at normalization time; only positive-label edges
/// enter the adjacency.
pub fn build_snapshot(edges: &EdgeSet, num_nodes: usize) -> Result<Snapshot> {
    for e in edges.edges() {
        if e.src >= num_nodes || e.dst >= num_nodes {
            return Err(Error::Validation(format!(
                "node id {} out of range ({num_nodes} nodes)",
                e.src.max(e.dst)
            )));
        }
    }
    let mut degree = vec![0usize; num_nodes];
    let mut weighted_degree = vec![1.0f64; num_nodes]; // self-loop weight
    let positives: Vec<&Edge> = edges
        .edges()
        .iter()
        .filter(|e| e.label == EdgeLabel::Positive)
        .collect();
    for e in &positives {
        degree[e.src] += 1;
        weighted_degree[e.src] += e.weight;
    }
    // degree counts directed copies once each; halve to undirected count? No:
    // each undirected edge is stored in both directions, so counting rows per
    // src already yields the undirected degree of that node.
    let inv_sqrt: Vec<f64> = weighted_degree.iter().map(|&d| 1.0 / d.sqrt()).collect();
    let mut triplets = Vec::with_capacity(positives.len() + num_nodes);
    for e in &positives {
        triplets.push((e.src, e.dst, e.weight * inv_sqrt[e.src] * inv_sqrt[e.dst]));
    }
    for i in 0..num_nodes {
        triplets.push((i, i, inv_sqrt[i] * inv_sqrt[i]));
    }
    let adj_norm = CsrMatrix::from_triplets(num_nodes, &triplets)?;
    Ok(Snapshot {
        context: edges.context,
        time: edges.time,
        adj_norm: Rc::new(adj_norm),
        degree,
    })
}

/// One (input steps -> target step) window.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub inputs: Vec<TimeStep>,
    pub target: TimeStep,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: Window,
    pub validation: Window,
    pub test: Window,
}

/// Rolling-window season splits: train inputs 1..window -> window+1, with
/// validation and test shifted by one and two.
pub fn rolling_splits(num_steps: usize, window: usize) -> Result<SplitSpec> {
    if window < 1 {
        return Err(Error::Argument("window must be at least 1".into()));
    }
    if num_steps < window + 3 {
        return Err(Error::Argument(format!(
            "need T >= window + 3 for three shifted windows, got T={num_steps} window={window}"
        )));
    }
    let make = |shift: usize| Window {
        inputs: (1 + shift..=window + shift).collect(),
        target: window + shift + 1,
    };
    Ok(SplitSpec {
        train: make(0),
        validation: make(1),
        test: make(2),
    })
}

/// How initial node features are supplied.
#[derive(Clone, Debug)]
pub enum FeatureSource {
    Loaded(Matrix),
    Learnable { dim: usize },
}

impl FeatureSource {
    pub fn dim(&self) -> usize {
        match self {
            FeatureSource::Loaded(m) => m.cols(),
            FeatureSource::Learnable { dim } => *dim,
        }
    }
}

#[derive(Clone, Debug)]
pub struct MultiRelGraph {
    pub meta: GraphMeta,
    sets: BTreeMap<(usize, Option<TimeStep>), EdgeSet>,
    pub features: FeatureSource,
}

impl MultiRelGraph {
    pub fn new(meta: GraphMeta, sets: Vec<EdgeSet>, features: FeatureSource) -> Result<Self> {
        meta.validate()?;
        if let FeatureSource::Loaded(m) = &features {
            if m.rows() != meta.num_nodes {
                return Err(Error::Validation(format!(
                    "feature matrix has {} rows for {} nodes",
                    m.rows(),
                    meta.num_nodes
                )));
            }
        }
        let mut map = BTreeMap::new();
        for set in sets {
            let key = (set.context.0, set.time);
            if map.insert(key, set).is_some() {
                return Err(Error::Validation(format!(
                    "duplicate edge set for context {} time {:?}",
                    key.0, key.1
                )));
            }
        }
        Ok(MultiRelGraph { meta, sets: map, features })
    }

    pub fn edge_set(&self, context: ContextId, time: Option<TimeStep>) -> Result<&EdgeSet> {
        self.sets.get(&(context.0, time)).ok_or_else(|| {
            Error::Lookup(format!(
                "no edge set for context {} at time {:?}",
                context.0, time
            ))
        })
    }

    pub fn edge_sets(&self) -> impl Iterator<Item = &EdgeSet> {
        self.sets.values()
    }

    /// Replace one edge set (test fixtures and ablation studies).
    pub fn replace_edge_set(&mut self, set: EdgeSet) {
        self.sets.insert((set.context.0, set.time), set);
    }

    /// The time key to use when addressing edges of `context` at `step`:
    /// time-independent contexts have a single `None`-keyed set.
    pub fn time_key(&self, context: ContextId, step: TimeStep) -> Option<TimeStep> {
        if self.meta.time_dependent[context.0] {
            Some(step)
        } else {
            None
        }
    }

    /// Positive edges of (context, time) as canonical (src < dst) pairs with
    /// label 1.
    pub fn positive_edges(
        &self,
        context: ContextId,
        time: Option<TimeStep>,
    ) -> Result<Vec<(NodeId, NodeId)>> {
        Ok(self.edge_set(context, time)?.positive_pairs())
    }
}

/// Dataset manifest: generator config, ground-truth mixture, and format tag.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub config: crate::synth::SynthConfig,
    pub target_mixture: Vec<f64>,
}

pub const MANIFEST_VERSION: u32 = 1;

fn parse_context(token: &str) -> Option<usize> {
    let t = token.strip_prefix('c').unwrap_or(token);
    t.parse().ok()
}

fn parse_time(token: &str) -> std::result::Result<Option<TimeStep>, String> {
    if token == "static" {
        return Ok(None);
    }
    let t = token.strip_prefix('t').unwrap_or(token);
    t.parse::<usize>()
        .map(Some)
        .map_err(|_| format!("bad time token '{token}'"))
}

/// Load the edge-list CSV: header `src,dst,context,time,weight,label`,
/// grouped by (context, time), symmetrized, duplicates merged by summing
/// weight.
pub fn load_edges(path: &Path, meta: &GraphMeta) -> Result<Vec<EdgeSet>> {
    let display = path.display().to_string();
    let file = std::fs::File::open(path).map_err(|e| Error::io(&display, e))?;
    let reader = BufReader::new(file);
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: display.clone(),
        line,
        msg,
    };

    let mut groups: BTreeMap<(usize, Option<TimeStep>), Vec<(NodeId, NodeId, f64, EdgeLabel)>> =
        BTreeMap::new();
    let mut saw_header = false;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(&display, e))?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if !saw_header {
            saw_header = true;
            if line.starts_with("src") {
                continue;
            }
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 6 {
            return Err(parse_err(lineno + 1, format!("expected 6 fields, got {}", fields.len())));
        }
        let src: NodeId = fields[0]
            .parse()
            .map_err(|_| parse_err(lineno + 1, format!("bad src '{}'", fields[0])))?;
        let dst: NodeId = fields[1]
            .parse()
            .map_err(|_| parse_err(lineno + 1, format!("bad dst '{}'", fields[1])))?;
        if src >= meta.num_nodes || dst >= meta.num_nodes {
            return Err(parse_err(
                lineno + 1,
                format!("unknown node id {} ({} nodes)", src.max(dst), meta.num_nodes),
            ));
        }
        let context = parse_context(fields[2])
            .filter(|&c| c < meta.num_contexts)
            .ok_or_else(|| parse_err(lineno + 1, format!("unknown context '{}'", fields[2])))?;
        let time = parse_time(fields[3]).map_err(|m| parse_err(lineno + 1, m))?;
        match time {
            Some(t) if t < 1 || t > meta.num_steps => {
                return Err(parse_err(lineno + 1, format!("unknown time step {t}")));
            }
            Some(_) if !meta.time_dependent[context] => {
                return Err(parse_err(
                    lineno + 1,
                    format!("context {context} is time-independent but row has a time step"),
                ));
            }
            None if meta.time_dependent[context] => {
                return Err(parse_err(
                    lineno + 1,
                    format!("context {context} is time-dependent but row is static"),
                ));
            }
            _ => {}
        }
        let weight: f64 = fields[4]
            .parse()
            .map_err(|_| parse_err(lineno + 1, format!("bad weight '{}'", fields[4])))?;
        if weight < 0.0 {
            return Err(Error::Validation(format!(
                "negative weight {weight} at {display}:{}",
                lineno + 1
            )));
        }
        let label = match fields[5] {
            "pos" => EdgeLabel::Positive,
            "neg" => EdgeLabel::NegativeGroundTruth,
            other => return Err(parse_err(lineno + 1, format!("unknown label '{other}'"))),
        };
        groups
            .entry((context, time))
            .or_default()
            .push((src, dst, weight, label));
    }

    let mut sets = Vec::with_capacity(groups.len());
    for ((context, time), entries) in groups {
        // a symmetric pair of rows is one logical edge, not a duplicate:
        // pair mirrored rows off per unordered pair before merging
        let mut by_pair: BTreeMap<(NodeId, NodeId), (Vec<(f64, EdgeLabel)>, Vec<(f64, EdgeLabel)>)> =
            BTreeMap::new();
        for (s, d, w, l) in entries {
            let slot = by_pair.entry((s.min(d), s.max(d))).or_default();
            if s <= d {
                slot.0.push((w, l));
            } else {
                slot.1.push((w, l));
            }
        }
        let mut logical: Vec<(NodeId, NodeId, f64, EdgeLabel)> = Vec::new();
        for ((u, v), (fwd, mut back)) in by_pair {
            for (w, l) in fwd {
                if let Some(pos) = back.iter().position(|&(bw, bl)| bw == w && bl == l) {
                    back.remove(pos);
                }
                logical.push((u, v, w, l));
            }
            for (w, l) in back {
                logical.push((u, v, w, l));
            }
        }
        sets.push(EdgeSet::from_undirected(
            ContextId(context),
            time,
            &logical,
        )?);
    }
    Ok(sets)
}

/// Load the feature CSV: header `node,f0,f1,...`, one row per node.
pub fn load_features(path: &Path, num_nodes: usize) -> Result<Matrix> {
    let display = path.display().to_string();
    let file = std::fs::File::open(path).map_err(|e| Error::io(&display, e))?;
    let reader = BufReader::new(file);
    let mut rows: Vec<(usize, Vec<f64>)> = Vec::new();
    let mut dim = None;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(&display, e))?;
        let line = line.trim();
        if line.is_empty() || (lineno == 0 && line.starts_with("node")) {
            continue;
        }
        let mut fields = line.split(',').map(str::trim);
        let node: usize = fields
            .next()
            .and_then(|f| f.parse().ok())
            .ok_or_else(|| Error::Parse {
                path: display.clone(),
                line: lineno + 1,
                msg: "bad node id".into(),
            })?;
        let feats: Vec<f64> = fields
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse {
                path: display.clone(),
                line: lineno + 1,
                msg: format!("bad feature value: {e}"),
            })?;
        if *dim.get_or_insert(feats.len()) != feats.len() {
            return Err(Error::Parse {
                path: display.clone(),
                line: lineno + 1,
                msg: "inconsistent feature dimension".into(),
            });
        }
        rows.push((node, feats));
    }
    let dim = dim.unwrap_or(0);
    let mut m = Matrix::zeros(num_nodes, dim);
    let mut seen = vec![false; num_nodes];
    for (node, feats) in rows {
        if node >= num_nodes {
            return Err(Error::Validation(format!("feature row for unknown node {node}")));
        }
        seen[node] = true;
        for (j, v) in feats.into_iter().enumerate() {
            m[(node, j)] = v;
        }
    }
    if let Some(missing) = seen.iter().position(|&s| !s) {
        return Err(Error::Validation(format!("no feature row for node {missing}")));
    }
    Ok(m)
}

/// Load a full dataset directory written by the generator (manifest.json,
/// edges.csv, features.csv). `feature_override` replaces the on-disk
/// features, e.g. with learnable embeddings.
pub fn load_dataset(dir: &Path, feature_override: Option<FeatureSource>) -> Result<MultiRelGraph> {
    let manifest_path = dir.join("manifest.json");
    let display = manifest_path.display().to_string();
    let raw = std::fs::read_to_string(&manifest_path).map_err(|e| Error::io(&display, e))?;
    let manifest: DatasetManifest = serde_json::from_str(&raw).map_err(|e| Error::Parse {
        path: display.clone(),
        line: 0,
        msg: e.to_string(),
    })?;
    if manifest.format_version != MANIFEST_VERSION {
        return Err(Error::Incompatible(format!(
            "manifest format version {} (expected {MANIFEST_VERSION})",
            manifest.format_version
        )));
    }
    let meta = manifest.config.graph_meta();
    let sets = load_edges(&dir.join("edges.csv"), &meta)?;
    let features = match feature_override {
        Some(f) => f,
        None => {
            let fpath = dir.join("features.csv");
            if fpath.exists() {
                FeatureSource::Loaded(load_features(&fpath, meta.num_nodes)?)
            } else {
                FeatureSource::Learnable { dim: manifest.config.latent_dim }
            }
        }
    };
    MultiRelGraph::new(meta, sets, features)
}
