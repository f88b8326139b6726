//! Lightweight edge predictor over node embeddings.
//!
//! Node pairs are sampled from the training nodes, labeled 1 when both nodes
//! share a class, and a one-hidden-layer network on the concatenation
//! `[h_i, h_j]` is trained with binary cross-entropy. The trained scorer then
//! proposes the top-k most likely neighbors of every node.
//!
//! The hidden pre-activation of a pair splits as `W_a h_i + W_b h_j + b`, where
//! `W_a`/`W_b` are the first and second halves of the hidden weight matrix. All
//! batch computations project each distinct node once and combine projections
//! per pair, which keeps full-batch training over tens of thousands of pairs cheap.

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use ndarray::{s, Array1, Array2, ArrayView1, Axis};
use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embed::EmbeddingMatrix;
use crate::graph::Edge;
use crate::optim::Adam;
use crate::rng;

pub const DEFAULT_PAIR_COUNT: usize = 20_000;
const MODEL_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum PredictorError {
    #[error("pair sampling needs at least 2 training nodes, got {0}")]
    TooFewNodes(usize),
    #[error("pair count must be at least 1")]
    NoPairs,
    #[error("node {0} has no label")]
    MissingLabel(usize),
    #[error("training needs both positive and negative pairs (positives: {positives}, negatives: {negatives})")]
    OneClass { positives: usize, negatives: usize },
    #[error("expected vectors of dimension {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("node {node} is outside the embedding matrix ({rows} rows)")]
    NodeOutOfRange { node: usize, rows: usize },
    #[error("k must be in 1..={max}, got {k}")]
    InvalidK { k: usize, max: usize },
    #[error("training diverged at epoch {0}")]
    Diverged(usize),
    #[error("invalid model file: {0}")]
    BadModel(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

/// An ordered node pair drawn for training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NodePair {
    pub i: usize,
    pub j: usize,
}

/// A sampled pair with its consistency label (`y = 1` iff `c_i == c_j`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairSample {
    pub i: usize,
    pub j: usize,
    pub y: u8,
    pub c_i: usize,
    pub c_j: usize,
}

impl PairSample {
    pub fn labeled(i: usize, j: usize, c_i: usize, c_j: usize) -> Self {
        Self {
            i,
            j,
            y: u8::from(c_i == c_j),
            c_i,
            c_j,
        }
    }
}

/// Draw `m` ordered pairs uniformly from `train × train` minus the diagonal,
/// with replacement.
pub fn sample_pairs(train_nodes: &[usize], m: usize, seed: u64) -> Result<Vec<NodePair>, PredictorError> {
    let nodes: Vec<usize> = train_nodes.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    if nodes.len() < 2 {
        return Err(PredictorError::TooFewNodes(nodes.len()));
    }
    if m == 0 {
        return Err(PredictorError::NoPairs);
    }
    let n = nodes.len();
    let mut rng = rng::derived(seed, "sample_pairs");
    Ok((0..m)
        .map(|_| {
            let a = rng.gen_range(0..n);
            let mut b = rng.gen_range(0..n - 1);
            if b >= a {
                b += 1;
            }
            NodePair { i: nodes[a], j: nodes[b] }
        })
        .collect())
}

/// Attach class labels; `labels[v]` is node `v`'s class.
pub fn label_pairs(pairs: &[NodePair], labels: &[usize]) -> Result<Vec<PairSample>, PredictorError> {
    pairs
        .iter()
        .map(|p| {
            let c_i = *labels.get(p.i).ok_or(PredictorError::MissingLabel(p.i))?;
            let c_j = *labels.get(p.j).ok_or(PredictorError::MissingLabel(p.j))?;
            Ok(PairSample::labeled(p.i, p.j, c_i, c_j))
        })
        .collect()
}

/// `sigmoid(w_out · relu(W^T [h_i, h_j] + b_hidden) + b_out)`.
///
/// The same struct carries gradients in [`loss_and_grads`].
#[derive(Debug, Clone, PartialEq)]
pub struct EdgePredictorModel {
    /// `2d x h`; rows `0..d` act on the first node, rows `d..2d` on the second.
    pub w_hidden: Array2<f64>,
    pub b_hidden: Array1<f64>,
    pub w_out: Array1<f64>,
    pub b_out: f64,
}

impl EdgePredictorModel {
    pub fn zeros(dim: usize, hidden: usize) -> Self {
        Self {
            w_hidden: Array2::zeros((2 * dim, hidden)),
            b_hidden: Array1::zeros(hidden),
            w_out: Array1::zeros(hidden),
            b_out: 0.0,
        }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn glorot(dim: usize, hidden: usize, seed: u64) -> Self {
        let mut rng = rng::derived(seed, "edge_predictor_init");
        let mut m = Self::zeros(dim, hidden);
        let a1 = (6.0 / (2 * dim + hidden) as f64).sqrt();
        m.w_hidden.mapv_inplace(|_| rng.gen_range(-a1..a1));
        let a2 = (6.0 / (hidden + 1) as f64).sqrt();
        m.w_out.mapv_inplace(|_| rng.gen_range(-a2..a2));
        m
    }

    pub fn dim(&self) -> usize {
        self.w_hidden.nrows() / 2
    }

    pub fn hidden(&self) -> usize {
        self.w_hidden.ncols()
    }

    fn is_finite(&self) -> bool {
        self.w_hidden.iter().chain(&self.b_hidden).chain(&self.w_out).all(|v| v.is_finite()) && self.b_out.is_finite()
    }

    /// Output logit for pre-projected halves `first = W_a^T h_i`, `second = W_b^T h_j`.
    fn logit(&self, first: ArrayView1<f64>, second: ArrayView1<f64>) -> f64 {
        let mut o = self.b_out;
        let (b, w) = (self.b_hidden.as_slice().expect("contiguous"), self.w_out.as_slice().expect("contiguous"));
        let rows = first.as_slice().zip(second.as_slice());
        match rows {
            Some((f, s)) => {
                for k in 0..b.len() {
                    let z = f[k] + s[k] + b[k];
                    if z > 0.0 {
                        o += w[k] * z;
                    }
                }
            }
            None => {
                for k in 0..b.len() {
                    let z = first[k] + second[k] + b[k];
                    if z > 0.0 {
                        o += w[k] * z;
                    }
                }
            }
        }
        o
    }

    /// Per-node projections through the first and second halves of `w_hidden`.
    fn project(&self, x: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
        let d = self.dim();
        (
            x.dot(&self.w_hidden.slice(s![..d, ..])),
            x.dot(&self.w_hidden.slice(s![d.., ..])),
        )
    }

    pub fn save(&self, path: &Path) -> Result<(), PredictorError> {
        let file = ModelFile {
            version: MODEL_VERSION,
            dim: self.dim(),
            hidden: self.hidden(),
            w_hidden: self.w_hidden.iter().copied().collect(),
            b_hidden: self.b_hidden.to_vec(),
            w_out: self.w_out.to_vec(),
            b_out: self.b_out,
        };
        let json = serde_json::to_string(&file).map_err(|e| PredictorError::BadModel(e.to_string()))?;
        std::fs::write(path, json).map_err(|e| PredictorError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, PredictorError> {
        let raw = std::fs::read_to_string(path).map_err(|e| PredictorError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let file: ModelFile = serde_json::from_str(&raw).map_err(|e| PredictorError::BadModel(e.to_string()))?;
        file.try_into()
    }
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    version: u32,
    dim: usize,
    hidden: usize,
    w_hidden: Vec<f64>,
    b_hidden: Vec<f64>,
    w_out: Vec<f64>,
    b_out: f64,
}

impl TryFrom<ModelFile> for EdgePredictorModel {
    type Error = PredictorError;

    fn try_from(f: ModelFile) -> Result<Self, Self::Error> {
        if f.version != MODEL_VERSION {
            return Err(PredictorError::BadModel(format!("unsupported version {}", f.version)));
        }
        let w_hidden = Array2::from_shape_vec((2 * f.dim, f.hidden), f.w_hidden)
            .map_err(|e| PredictorError::BadModel(e.to_string()))?;
        if f.b_hidden.len() != f.hidden || f.w_out.len() != f.hidden {
            return Err(PredictorError::BadModel("bias/output length differs from hidden width".into()));
        }
        let m = EdgePredictorModel {
            w_hidden,
            b_hidden: f.b_hidden.into(),
            w_out: f.w_out.into(),
            b_out: f.b_out,
        };
        if !m.is_finite() {
            return Err(PredictorError::BadModel("non-finite parameter".into()));
        }
        Ok(m)
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy of `sigmoid(logit)` against `y`, computed stably.
fn bce_with_logit(logit: f64, y: f64) -> f64 {
    logit.max(0.0) - logit * y + (-logit.abs()).exp().ln_1p()
}

/// Probability that `(h_i, h_j)` is a same-class pair. Order matters.
pub fn predict_edge(model: &EdgePredictorModel, h_i: ArrayView1<f64>, h_j: ArrayView1<f64>) -> Result<f64, PredictorError> {
    let d = model.dim();
    for v in [&h_i, &h_j] {
        if v.len() != d {
            return Err(PredictorError::DimensionMismatch {
                expected: d,
                found: v.len(),
            });
        }
    }
    let first = h_i.dot(&model.w_hidden.slice(s![..d, ..]));
    let second = h_j.dot(&model.w_hidden.slice(s![d.., ..]));
    Ok(sigmoid(model.logit(first.view(), second.view())))
}

/// Mean of both concatenation orders; the score used for candidate ranking.
pub fn predict_symmetric(model: &EdgePredictorModel, h_i: ArrayView1<f64>, h_j: ArrayView1<f64>) -> Result<f64, PredictorError> {
    Ok(0.5 * (predict_edge(model, h_i, h_j)? + predict_edge(model, h_j, h_i)?))
}

fn check_samples(emb: &EmbeddingMatrix, model: &EdgePredictorModel, samples: &[PairSample]) -> Result<(), PredictorError> {
    if emb.dim() != model.dim() {
        return Err(PredictorError::DimensionMismatch {
            expected: model.dim(),
            found: emb.dim(),
        });
    }
    let rows = emb.num_rows();
    if let Some(s) = samples.iter().find(|s| s.i >= rows || s.j >= rows) {
        return Err(PredictorError::NodeOutOfRange {
            node: s.i.max(s.j),
            rows,
        });
    }
    Ok(())
}

/// Distinct nodes of a batch and each sample's position among them.
struct BatchNodes {
    x: Array2<f64>,
    first: Vec<usize>,
    second: Vec<usize>,
}

fn gather(emb: &EmbeddingMatrix, samples: &[PairSample]) -> BatchNodes {
    let mut slot = vec![usize::MAX; emb.num_rows()];
    let mut nodes = Vec::new();
    let mut index = |v: usize| {
        if slot[v] == usize::MAX {
            slot[v] = nodes.len();
            nodes.push(v);
        }
        slot[v]
    };
    let (first, second): (Vec<usize>, Vec<usize>) = samples.iter().map(|s| (index(s.i), index(s.j))).unzip();
    let x = emb.vectors().select(Axis(0), &nodes);
    BatchNodes { x, first, second }
}

/// Mean (optionally positive-weighted) binary cross-entropy over `samples` and
/// its gradient with respect to every parameter, in the shape of the model.
pub fn loss_and_grads(
    model: &EdgePredictorModel,
    emb: &EmbeddingMatrix,
    samples: &[PairSample],
    pos_weight: Option<f64>,
) -> Result<(f64, EdgePredictorModel), PredictorError> {
    check_samples(emb, model, samples)?;
    let batch = gather(emb, samples);
    let (proj_a, proj_b) = model.project(&batch.x);
    let h = model.hidden();
    let scale = 1.0 / samples.len().max(1) as f64;

    let mut grads = EdgePredictorModel::zeros(model.dim(), h);
    let mut grad_a = Array2::<f64>::zeros(proj_a.raw_dim());
    let mut grad_b = Array2::<f64>::zeros(proj_b.raw_dim());
    let mut loss = 0.0;
    let mut z = vec![0.0; h];
    let b_hidden = model.b_hidden.as_slice().expect("contiguous");
    let w_out = model.w_out.as_slice().expect("contiguous");
    let g_w_out = grads.w_out.as_slice_mut().expect("contiguous");
    let g_b_hidden = grads.b_hidden.as_slice_mut().expect("contiguous");
    let ga_all = grad_a.as_slice_mut().expect("contiguous");
    let gb_all = grad_b.as_slice_mut().expect("contiguous");
    let (pa_all, pb_all) = (proj_a.as_slice().expect("contiguous"), proj_b.as_slice().expect("contiguous"));
    for (s, (&pa, &pb)) in samples.iter().zip(batch.first.iter().zip(&batch.second)) {
        let (ra, rb) = (&pa_all[pa * h..(pa + 1) * h], &pb_all[pb * h..(pb + 1) * h]);
        let mut o = model.b_out;
        for k in 0..h {
            let v = ra[k] + rb[k] + b_hidden[k];
            z[k] = v;
            if v > 0.0 {
                o += w_out[k] * v;
            }
        }
        let y = f64::from(s.y);
        let w = if s.y == 1 { pos_weight.unwrap_or(1.0) } else { 1.0 };
        loss += w * bce_with_logit(o, y);
        let d_out = w * (sigmoid(o) - y) * scale;
        grads.b_out += d_out;
        let ga = &mut ga_all[pa * h..(pa + 1) * h];
        for k in 0..h {
            if z[k] > 0.0 {
                g_w_out[k] += d_out * z[k];
                let dz = d_out * w_out[k];
                ga[k] += dz;
                g_b_hidden[k] += dz;
            }
        }
        let gb = &mut gb_all[pb * h..(pb + 1) * h];
        for k in 0..h {
            if z[k] > 0.0 {
                gb[k] += d_out * w_out[k];
            }
        }
    }
    let d = model.dim();
    grads.w_hidden.slice_mut(s![..d, ..]).assign(&batch.x.t().dot(&grad_a));
    grads.w_hidden.slice_mut(s![d.., ..]).assign(&batch.x.t().dot(&grad_b));
    Ok((loss * scale, grads))
}

/// Fraction of samples where `p >= 0.5` agrees with the label.
pub fn pair_accuracy(model: &EdgePredictorModel, emb: &EmbeddingMatrix, samples: &[PairSample]) -> Result<f64, PredictorError> {
    check_samples(emb, model, samples)?;
    if samples.is_empty() {
        return Ok(0.0);
    }
    let batch = gather(emb, samples);
    let (proj_a, proj_b) = model.project(&batch.x);
    let correct = samples
        .iter()
        .zip(batch.first.iter().zip(&batch.second))
        .filter(|(s, (&pa, &pb))| {
            let predicted = model.logit(proj_a.row(pa), proj_b.row(pb)) >= 0.0;
            predicted == (s.y == 1)
        })
        .count();
    Ok(correct as f64 / samples.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PredictorConfig {
    pub hidden: usize,
    pub lr: f64,
    pub epochs: usize,
    /// Minibatch size; 0 trains full-batch.
    pub batch: usize,
    pub seed: u64,
    /// Loss weight for positive pairs; `None` leaves classes unweighted.
    pub pos_weight: Option<f64>,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        Self {
            hidden: 128,
            lr: 0.01,
            epochs: 200,
            batch: 0,
            seed: 0,
            pos_weight: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorReport {
    /// Mean training loss per epoch, measured before that epoch's updates.
    pub loss_curve: Vec<f64>,
    pub final_loss: f64,
    pub train_accuracy: f64,
}

pub fn train_edge_predictor(
    emb: &EmbeddingMatrix,
    samples: &[PairSample],
    cfg: &PredictorConfig,
) -> Result<(EdgePredictorModel, PredictorReport), PredictorError> {
    let positives = samples.iter().filter(|s| s.y == 1).count();
    let negatives = samples.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(PredictorError::OneClass { positives, negatives });
    }
    let model = EdgePredictorModel::glorot(emb.dim(), cfg.hidden, cfg.seed);
    check_samples(emb, &model, samples)?;
    train_from(model, emb, samples, cfg)
}

/// Continue training from the given parameters.
pub fn train_from(
    mut model: EdgePredictorModel,
    emb: &EmbeddingMatrix,
    samples: &[PairSample],
    cfg: &PredictorConfig,
) -> Result<(EdgePredictorModel, PredictorReport), PredictorError> {
    let mut opt_w = Adam::new(model.w_hidden.len(), cfg.lr);
    let mut opt_b = Adam::new(model.b_hidden.len(), cfg.lr);
    let mut opt_v = Adam::new(model.w_out.len(), cfg.lr);
    let mut opt_c = Adam::new(1, cfg.lr);
    let mut shuffle_rng = rng::derived(cfg.seed, "edge_predictor_batches");
    let batch = if cfg.batch == 0 { samples.len() } else { cfg.batch.min(samples.len()) };
    let mut order: Vec<PairSample> = samples.to_vec();
    let mut loss_curve = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        if batch < samples.len() {
            order.shuffle(&mut shuffle_rng);
        }
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(batch) {
            let (loss, grads) = loss_and_grads(&model, emb, chunk, cfg.pos_weight)?;
            if !loss.is_finite() {
                return Err(PredictorError::Diverged(epoch));
            }
            epoch_loss += loss * chunk.len() as f64;
            opt_w.step(model.w_hidden.as_slice_mut().unwrap(), grads.w_hidden.as_slice().unwrap());
            opt_b.step(model.b_hidden.as_slice_mut().unwrap(), grads.b_hidden.as_slice().unwrap());
            opt_v.step(model.w_out.as_slice_mut().unwrap(), grads.w_out.as_slice().unwrap());
            opt_c.step(std::slice::from_mut(&mut model.b_out), &[grads.b_out]);
        }
        loss_curve.push(epoch_loss / samples.len() as f64);
    }
    if !model.is_finite() {
        return Err(PredictorError::Diverged(cfg.epochs));
    }
    let (final_loss, _) = loss_and_grads(&model, emb, samples, cfg.pos_weight)?;
    let train_accuracy = pair_accuracy(&model, emb, samples)?;
    Ok((
        model,
        PredictorReport {
            loss_curve,
            final_loss,
            train_accuracy,
        },
    ))
}

/// Per-node ranked neighbor proposals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub k: usize,
    /// `lists[i]` holds `(neighbor, score)` sorted by descending score, then ascending id.
    pub lists: Vec<Vec<(usize, f64)>>,
}

fn rank(a: &(usize, f64), b: &(usize, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then(a.0.cmp(&b.0))
}

impl CandidateSet {
    /// Top-k by an arbitrary symmetric-or-not score; `restrict_to` limits the neighbor pool.
    pub fn from_scores<F>(n: usize, k: usize, restrict_to: Option<&[usize]>, score: F) -> Result<Self, PredictorError>
    where
        F: Fn(usize, usize) -> f64 + Sync,
    {
        let max = n.saturating_sub(1);
        if k == 0 || k > max {
            return Err(PredictorError::InvalidK { k, max });
        }
        let pool: Vec<usize> = match restrict_to {
            Some(r) => {
                let set: BTreeSet<usize> = r.iter().copied().collect();
                if let Some(&bad) = set.iter().find(|&&v| v >= n) {
                    return Err(PredictorError::NodeOutOfRange { node: bad, rows: n });
                }
                set.into_iter().collect()
            }
            None => (0..n).collect(),
        };
        let lists = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut scored: Vec<(usize, f64)> = pool.iter().filter(|&&j| j != i).map(|&j| (j, score(i, j))).collect();
                if scored.len() > k {
                    scored.select_nth_unstable_by(k - 1, rank);
                    scored.truncate(k);
                }
                scored.sort_by(rank);
                scored
            })
            .collect();
        Ok(Self { k, lists })
    }

    /// Distinct undirected edges across all lists.
    pub fn edges(&self) -> BTreeSet<Edge> {
        self.lists
            .iter()
            .enumerate()
            .flat_map(|(i, list)| list.iter().filter_map(move |&(j, _)| Edge::new(i, j)))
            .collect()
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (i, list) in self.lists.iter().enumerate() {
            for (j, s) in list {
                let _ = writeln!(out, "{i}\t{j}\t{s}");
            }
        }
        out
    }

    /// Parse `node<TAB>neighbor<TAB>score` lines; `n` is the node count.
    pub fn from_tsv(text: &str, n: usize, k: usize) -> Result<Self, PredictorError> {
        let mut lists = vec![Vec::new(); n];
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            let bad = || PredictorError::BadModel(format!("candidate line {}: {line:?}", lineno + 1));
            if cols.len() != 3 {
                return Err(bad());
            }
            let i: usize = cols[0].parse().map_err(|_| bad())?;
            let j: usize = cols[1].parse().map_err(|_| bad())?;
            let s: f64 = cols[2].parse().map_err(|_| bad())?;
            if i >= n || j >= n {
                return Err(PredictorError::NodeOutOfRange { node: i.max(j), rows: n });
            }
            lists[i].push((j, s));
        }
        for list in &mut lists {
            list.sort_by(rank);
        }
        Ok(Self { k, lists })
    }
}

/// Score every node against every other node (or `restrict_to`) with the
/// symmetrized probability and keep the `k` best per node.
pub fn top_k_candidates(
    model: &EdgePredictorModel,
    emb: &EmbeddingMatrix,
    k: usize,
    restrict_to: Option<&[usize]>,
) -> Result<CandidateSet, PredictorError> {
    if emb.dim() != model.dim() {
        return Err(PredictorError::DimensionMismatch {
            expected: model.dim(),
            found: emb.dim(),
        });
    }
    let (proj_a, proj_b) = model.project(emb.vectors());
    CandidateSet::from_scores(emb.num_rows(), k, restrict_to, |i, j| {
        let forward = sigmoid(model.logit(proj_a.row(i), proj_b.row(j)));
        let backward = sigmoid(model.logit(proj_a.row(j), proj_b.row(i)));
        0.5 * (forward + backward)
    })
}
