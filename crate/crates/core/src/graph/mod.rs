//! Text-attributed graph representation and structural utilities.
//!
//! A [`TextGraph`] is undirected: raw edges are symmetrized and deduplicated on
//! construction and self-loops are dropped. Self-loops only reappear inside
//! [`NormalizedAdjacency`], which is the propagation matrix used by the GCN.

mod dot;

use std::collections::BTreeSet;
use std::fmt;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng;
use crate::text;

pub use dot::to_dot;

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("graph needs at least one category")]
    NoCategories,
    #[error("duplicate node id {0}")]
    DuplicateNodeId(usize),
    #[error("node ids must cover 0..{n} exactly; id {id} is out of range")]
    NodeIdOutOfRange { id: usize, n: usize },
    #[error("edge ({0}, {1}) has an endpoint outside 0..{2}")]
    EdgeOutOfRange(usize, usize, usize),
    #[error("node {node} has label {label} but only {num_classes} categories exist")]
    LabelOutOfRange {
        node: usize,
        label: usize,
        num_classes: usize,
    },
    #[error("node {node} has feature dimension {found}, expected {expected}")]
    FeatureDimMismatch {
        node: usize,
        expected: usize,
        found: usize,
    },
    #[error("noise rate must be a finite non-negative number, got {0}")]
    InvalidNoiseRate(f64),
    #[error("cannot add {requested} noise edges: only {available} non-edges exist")]
    NotEnoughNonEdges { requested: usize, available: usize },
    #[error("gave up after {attempts} attempts while sampling {requested} noise edges")]
    NoiseSamplingExhausted { requested: usize, attempts: usize },
    #[error("split ratios must be positive and sum to 1, got {0:?}")]
    InvalidRatios([f64; 3]),
    #[error("splitting needs at least 3 nodes, graph has {0}")]
    TooFewNodes(usize),
    #[error("node {0} is not in the graph")]
    UnknownNode(usize),
}

/// Undirected edge stored as `(lo, hi)` with `lo < hi`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "[usize; 2]", try_from = "[usize; 2]")]
pub struct Edge {
    lo: usize,
    hi: usize,
}

impl Edge {
    /// `None` for self-pairs.
    pub fn new(a: usize, b: usize) -> Option<Self> {
        match a.cmp(&b) {
            std::cmp::Ordering::Less => Some(Self { lo: a, hi: b }),
            std::cmp::Ordering::Greater => Some(Self { lo: b, hi: a }),
            std::cmp::Ordering::Equal => None,
        }
    }

    pub fn lo(self) -> usize {
        self.lo
    }

    pub fn hi(self) -> usize {
        self.hi
    }

    pub fn endpoints(self) -> (usize, usize) {
        (self.lo, self.hi)
    }

    /// Cache key in the `"(min,max)"` form.
    pub fn key(self) -> String {
        format!("({},{})", self.lo, self.hi)
    }

    pub fn parse_key(key: &str) -> Option<Self> {
        let inner = key.trim().strip_prefix('(')?.strip_suffix(')')?;
        let (a, b) = inner.split_once(',')?;
        Edge::new(a.trim().parse().ok()?, b.trim().parse().ok()?)
    }
}

impl From<Edge> for [usize; 2] {
    fn from(e: Edge) -> Self {
        [e.lo, e.hi]
    }
}

impl TryFrom<[usize; 2]> for Edge {
    type Error = String;

    fn try_from(v: [usize; 2]) -> Result<Self, Self::Error> {
        Edge::new(v[0], v[1]).ok_or_else(|| format!("self-loop ({}, {})", v[0], v[1]))
    }
}

impl fmt::Display for Edge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.lo, self.hi)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub id: usize,
    pub title: String,
    #[serde(rename = "abstract")]
    pub abstract_text: String,
    pub label: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<Vec<f64>>,
    pub token_count: usize,
}

impl NodeRecord {
    pub fn new(id: usize, title: impl Into<String>, abstract_text: impl Into<String>, label: usize) -> Self {
        let title = title.into();
        let abstract_text = abstract_text.into();
        let token_count = text::token_count(&title) + text::token_count(&abstract_text);
        Self {
            id,
            title,
            abstract_text,
            label,
            features: None,
            token_count,
        }
    }

    pub fn with_features(mut self, features: Vec<f64>) -> Self {
        self.features = Some(features);
        self
    }

    /// Title and abstract joined, the text an embedding provider sees.
    pub fn text(&self) -> String {
        if self.abstract_text.is_empty() {
            self.title.clone()
        } else {
            format!("{} {}", self.title, self.abstract_text)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TextGraph {
    nodes: Vec<NodeRecord>,
    edges: BTreeSet<Edge>,
    category_names: Vec<String>,
}

/// Validate nodes, symmetrize and deduplicate `raw_edges`, drop self-loops.
///
/// Node ids must be exactly `0..N` (in any order); nodes are stored sorted by id.
pub fn build_graph(
    mut nodes: Vec<NodeRecord>,
    raw_edges: &[(usize, usize)],
    categories: Vec<String>,
) -> Result<TextGraph, GraphError> {
    if categories.is_empty() {
        return Err(GraphError::NoCategories);
    }
    let n = nodes.len();
    let mut seen = vec![false; n];
    for node in &nodes {
        if node.id >= n {
            return Err(GraphError::NodeIdOutOfRange { id: node.id, n });
        }
        if std::mem::replace(&mut seen[node.id], true) {
            return Err(GraphError::DuplicateNodeId(node.id));
        }
    }
    nodes.sort_by_key(|node| node.id);

    let num_classes = categories.len();
    let mut feature_dim = None;
    for node in &nodes {
        if node.label >= num_classes {
            return Err(GraphError::LabelOutOfRange {
                node: node.id,
                label: node.label,
                num_classes,
            });
        }
        if let Some(f) = &node.features {
            match feature_dim {
                None => feature_dim = Some(f.len()),
                Some(d) if d != f.len() => {
                    return Err(GraphError::FeatureDimMismatch {
                        node: node.id,
                        expected: d,
                        found: f.len(),
                    })
                }
                _ => {}
            }
        }
    }
    if let Some(d) = feature_dim {
        if let Some(node) = nodes.iter().find(|node| node.features.is_none()) {
            return Err(GraphError::FeatureDimMismatch {
                node: node.id,
                expected: d,
                found: 0,
            });
        }
    }

    let mut edges = BTreeSet::new();
    for &(a, b) in raw_edges {
        if a >= n || b >= n {
            return Err(GraphError::EdgeOutOfRange(a, b, n));
        }
        if let Some(e) = Edge::new(a, b) {
            edges.insert(e);
        }
    }

    Ok(TextGraph {
        nodes,
        edges,
        category_names: categories,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphStats {
    pub nodes: usize,
    pub undirected_edges: usize,
    /// Edge count after symmetrization, i.e. each undirected edge counted twice.
    pub directed_edges: usize,
    pub isolated_nodes: usize,
    pub num_classes: usize,
    pub class_counts: Vec<usize>,
    pub intra_class_edges: usize,
    pub inter_class_edges: usize,
}

impl TextGraph {
    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn num_classes(&self) -> usize {
        self.category_names.len()
    }

    pub fn nodes(&self) -> &[NodeRecord] {
        &self.nodes
    }

    pub fn node(&self, i: usize) -> Result<&NodeRecord, GraphError> {
        self.nodes.get(i).ok_or(GraphError::UnknownNode(i))
    }

    pub fn edges(&self) -> &BTreeSet<Edge> {
        &self.edges
    }

    pub fn has_edge(&self, e: Edge) -> bool {
        self.edges.contains(&e)
    }

    pub fn category_names(&self) -> &[String] {
        &self.category_names
    }

    pub fn labels(&self) -> Vec<usize> {
        self.nodes.iter().map(|n| n.label).collect()
    }

    pub fn label(&self, i: usize) -> usize {
        self.nodes[i].label
    }

    pub fn is_intra_class(&self, e: Edge) -> bool {
        self.nodes[e.lo].label == self.nodes[e.hi].label
    }

    pub fn feature_dim(&self) -> Option<usize> {
        self.nodes.first().and_then(|n| n.features.as_ref().map(Vec::len))
    }

    /// Node features as an `N x d` matrix, when the dataset ships them.
    pub fn feature_matrix(&self) -> Option<Array2<f64>> {
        let d = self.feature_dim()?;
        let mut x = Array2::zeros((self.num_nodes(), d));
        for (i, node) in self.nodes.iter().enumerate() {
            let f = node.features.as_ref()?;
            x.row_mut(i).iter_mut().zip(f).for_each(|(dst, &v)| *dst = v);
        }
        Some(x)
    }

    /// Same nodes and categories with a different edge set.
    pub fn with_edges<I: IntoIterator<Item = Edge>>(&self, edges: I) -> Result<TextGraph, GraphError> {
        let n = self.num_nodes();
        let mut set = BTreeSet::new();
        for e in edges {
            if e.hi >= n {
                return Err(GraphError::EdgeOutOfRange(e.lo, e.hi, n));
            }
            set.insert(e);
        }
        Ok(TextGraph {
            nodes: self.nodes.clone(),
            edges: set,
            category_names: self.category_names.clone(),
        })
    }

    pub fn edge_list(&self) -> Vec<(usize, usize)> {
        self.edges.iter().map(|e| e.endpoints()).collect()
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.num_nodes()];
        for e in &self.edges {
            deg[e.lo] += 1;
            deg[e.hi] += 1;
        }
        deg
    }

    pub fn stats(&self) -> GraphStats {
        let mut class_counts = vec![0; self.num_classes()];
        for node in &self.nodes {
            class_counts[node.label] += 1;
        }
        let intra = self.edges.iter().filter(|&&e| self.is_intra_class(e)).count();
        GraphStats {
            nodes: self.num_nodes(),
            undirected_edges: self.num_edges(),
            directed_edges: 2 * self.num_edges(),
            isolated_nodes: self.degrees().iter().filter(|&&d| d == 0).count(),
            num_classes: self.num_classes(),
            class_counts,
            intra_class_edges: intra,
            inter_class_edges: self.num_edges() - intra,
        }
    }
}

/// Sparse symmetric propagation matrix `D^-1/2 (A + I) D^-1/2` in CSR layout.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedAdjacency {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    values: Vec<f64>,
}

pub fn normalize_adjacency(g: &TextGraph) -> NormalizedAdjacency {
    NormalizedAdjacency::from_edges(g.num_nodes(), g.edges().iter().copied())
}

impl NormalizedAdjacency {
    /// Edges must have endpoints below `n`; duplicates are ignored.
    pub fn from_edges<I: IntoIterator<Item = Edge>>(n: usize, edges: I) -> Self {
        let mut neighbors: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
        let unique: BTreeSet<Edge> = edges.into_iter().collect();
        for e in unique {
            assert!(e.hi < n, "edge {e} outside 0..{n}");
            neighbors[e.lo].push(e.hi);
            neighbors[e.hi].push(e.lo);
        }
        let deg: Vec<f64> = neighbors.iter().map(|nb| nb.len() as f64).collect();

        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for (i, nb) in neighbors.iter_mut().enumerate() {
            nb.sort_unstable();
            for &j in nb.iter() {
                cols.push(j);
                values.push(1.0 / (deg[i] * deg[j]).sqrt());
            }
            row_ptr.push(cols.len());
        }
        Self {
            n,
            row_ptr,
            cols,
            values,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let row = &self.cols[self.row_ptr[i]..self.row_ptr[i + 1]];
        match row.binary_search(&j) {
            Ok(pos) => self.values[self.row_ptr[i] + pos],
            Err(_) => 0.0,
        }
    }

    /// `(row, col, value)` for every stored entry, row-major.
    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n).flat_map(move |i| {
            (self.row_ptr[i]..self.row_ptr[i + 1]).map(move |k| (i, self.cols[k], self.values[k]))
        })
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut m = Array2::zeros((self.n, self.n));
        for (i, j, v) in self.triplets() {
            m[[i, j]] = v;
        }
        m
    }

    /// Sparse-dense product `self * x`.
    pub fn matmul(&self, x: &Array2<f64>) -> Array2<f64> {
        assert_eq!(x.nrows(), self.n, "propagation dimension mismatch");
        let mut out = Array2::zeros((self.n, x.ncols()));
        for i in 0..self.n {
            let mut dst = out.row_mut(i);
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                dst.scaled_add(self.values[k], &x.row(self.cols[k]));
            }
        }
        out
    }
}

/// Add `floor(rate * |E|)` uniformly random new edges. Original edges are untouched.
pub fn inject_noise(g: &TextGraph, rate: f64, seed: u64) -> Result<TextGraph, GraphError> {
    if !rate.is_finite() || rate < 0.0 {
        return Err(GraphError::InvalidNoiseRate(rate));
    }
    let requested = (rate * g.num_edges() as f64 + 1e-9).floor() as usize;
    let n = g.num_nodes();
    let available = (n * n.saturating_sub(1) / 2).saturating_sub(g.num_edges());
    if requested > available {
        return Err(GraphError::NotEnoughNonEdges { requested, available });
    }
    let mut edges = g.edges().clone();
    let mut rng = rng::derived(seed, "inject_noise");
    let max_attempts = 50 * requested;
    let mut added = 0;
    let mut attempts = 0;
    while added < requested {
        if attempts == max_attempts {
            return Err(GraphError::NoiseSamplingExhausted { requested, attempts });
        }
        attempts += 1;
        let a = rng.gen_range(0..n);
        let b = rng.gen_range(0..n);
        if let Some(e) = Edge::new(a, b) {
            if edges.insert(e) {
                added += 1;
            }
        }
    }
    g.with_edges(edges)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeSplit {
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
    pub test: Vec<usize>,
}

impl NodeSplit {
    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.train.len(), self.valid.len(), self.test.len())
    }
}

pub const DEFAULT_RATIOS: [f64; 3] = [0.6, 0.2, 0.2];

/// Uniform shuffle then cut: `train = floor(r0 N)`, `valid = floor(r1 N)`, test takes the rest.
pub fn split_nodes(n: usize, ratios: [f64; 3], seed: u64) -> Result<NodeSplit, GraphError> {
    if ratios.iter().any(|r| !(r.is_finite() && *r > 0.0)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(GraphError::InvalidRatios(ratios));
    }
    if n < 3 {
        return Err(GraphError::TooFewNodes(n));
    }
    let n_train = (ratios[0] * n as f64 + 1e-9).floor() as usize;
    let n_valid = (ratios[1] * n as f64 + 1e-9).floor() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::derived(seed, "split_nodes"));
    let mut train = order[..n_train].to_vec();
    let mut valid = order[n_train..n_train + n_valid].to_vec();
    let mut test = order[n_train + n_valid..].to_vec();
    train.sort_unstable();
    valid.sort_unstable();
    test.sort_unstable();
    Ok(NodeSplit { train, valid, test })
}
