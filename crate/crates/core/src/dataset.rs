//! Dataset loading, saving and synthetic planted-partition generation.
//!
//! On-disk layout (one directory per graph):
//!
//! * `manifest.toml` with `name`, `node_file`, `edge_file`, `categories` and an
//!   optional `feature_dim`. File paths are relative to the manifest.
//! * node file: JSON lines `{"id": int, "title": str, "abstract": str, "label": str}`,
//!   optionally with a `"features": [float]` array.
//! * edge file: `src<TAB>dst` per line; `#` starts a comment.

use std::collections::HashMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{build_graph, GraphError, NodeRecord, TextGraph};
use crate::rng;

pub const MANIFEST_FILE: &str = "manifest.toml";
const NODE_FILE: &str = "nodes.jsonl";
const EDGE_FILE: &str = "edges.tsv";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: invalid manifest: {message}")]
    Manifest { path: PathBuf, message: String },
    #[error("{path}:{line}: {message}")]
    Malformed { path: PathBuf, line: usize, message: String },
    #[error("{path}:{line}: unknown label {label:?}")]
    UnknownLabel { path: PathBuf, line: usize, label: String },
    #[error("{path}:{line}: duplicate node id {id}")]
    DuplicateId { path: PathBuf, line: usize, id: usize },
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub node_file: PathBuf,
    pub edge_file: PathBuf,
    pub categories: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_dim: Option<usize>,
}

impl DatasetManifest {
    /// Parse a manifest and resolve its file paths against the manifest's directory.
    pub fn from_file(path: &Path) -> Result<Self, DatasetError> {
        let raw = fs::read_to_string(path).map_err(io_err(path))?;
        let mut manifest: DatasetManifest = toml::from_str(&raw).map_err(|e| DatasetError::Manifest {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        if manifest.categories.is_empty() {
            return Err(DatasetError::Manifest {
                path: path.to_path_buf(),
                message: "categories must not be empty".into(),
            });
        }
        let base = path.parent().unwrap_or(Path::new("."));
        manifest.node_file = base.join(&manifest.node_file);
        manifest.edge_file = base.join(&manifest.edge_file);
        Ok(manifest)
    }
}

#[derive(Deserialize)]
struct NodeLine {
    id: usize,
    title: String,
    #[serde(default, rename = "abstract")]
    abstract_text: Option<String>,
    label: String,
    #[serde(default)]
    features: Option<Vec<f64>>,
}

#[derive(Serialize)]
struct NodeLineOut<'a> {
    id: usize,
    title: &'a str,
    #[serde(rename = "abstract")]
    abstract_text: &'a str,
    label: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    features: Option<&'a [f64]>,
}

pub fn load_dataset(manifest: &DatasetManifest) -> Result<TextGraph, DatasetError> {
    let label_index: HashMap<&str, usize> = manifest
        .categories
        .iter()
        .enumerate()
        .map(|(i, c)| (c.as_str(), i))
        .collect();

    let path = &manifest.node_file;
    let raw = fs::read_to_string(path).map_err(io_err(path))?;
    let mut nodes = Vec::new();
    let mut seen = HashMap::new();
    for (lineno, line) in raw.lines().enumerate().map(|(i, l)| (i + 1, l)) {
        if line.trim().is_empty() {
            continue;
        }
        let parsed: NodeLine = serde_json::from_str(line).map_err(|e| DatasetError::Malformed {
            path: path.clone(),
            line: lineno,
            message: e.to_string(),
        })?;
        if seen.insert(parsed.id, lineno).is_some() {
            return Err(DatasetError::DuplicateId {
                path: path.clone(),
                line: lineno,
                id: parsed.id,
            });
        }
        let label = *label_index
            .get(parsed.label.as_str())
            .ok_or_else(|| DatasetError::UnknownLabel {
                path: path.clone(),
                line: lineno,
                label: parsed.label.clone(),
            })?;
        if let (Some(dim), Some(f)) = (manifest.feature_dim, &parsed.features) {
            if f.len() != dim {
                return Err(DatasetError::Malformed {
                    path: path.clone(),
                    line: lineno,
                    message: format!("expected {dim} features, found {}", f.len()),
                });
            }
        }
        let mut node = NodeRecord::new(parsed.id, parsed.title, parsed.abstract_text.unwrap_or_default(), label);
        node.features = parsed.features;
        nodes.push(node);
    }

    let edges = read_edge_file(&manifest.edge_file)?;
    Ok(build_graph(nodes, &edges, manifest.categories.clone())?)
}

/// Parse a tab-separated edge file. Extra columns after the first two are ignored.
pub fn read_edge_file(path: &Path) -> Result<Vec<(usize, usize)>, DatasetError> {
    let raw = fs::read_to_string(path).map_err(io_err(path))?;
    let mut edges = Vec::new();
    for (lineno, line) in raw.lines().enumerate().map(|(i, l)| (i + 1, l)) {
        let content = line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let mut cols = content.split('\t');
        let mut next_id = || -> Result<usize, DatasetError> {
            cols.next()
                .and_then(|c| c.trim().parse().ok())
                .ok_or_else(|| DatasetError::Malformed {
                    path: path.to_path_buf(),
                    line: lineno,
                    message: format!("expected `src<TAB>dst`, got {content:?}"),
                })
        };
        let a = next_id()?;
        let b = next_id()?;
        edges.push((a, b));
    }
    Ok(edges)
}

pub fn write_edge_file<'a, I>(path: &Path, edges: I) -> Result<(), DatasetError>
where
    I: IntoIterator<Item = &'a crate::graph::Edge>,
{
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    for e in edges {
        writeln!(w, "{}\t{}", e.lo(), e.hi()).map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Write `g` to `dir` in the loader's schema. The directory is created if needed.
pub fn save_graph(g: &TextGraph, dir: &Path) -> Result<(), DatasetError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let node_path = dir.join(NODE_FILE);
    let file = fs::File::create(&node_path).map_err(io_err(&node_path))?;
    let mut w = BufWriter::new(file);
    for node in g.nodes() {
        let line = NodeLineOut {
            id: node.id,
            title: &node.title,
            abstract_text: &node.abstract_text,
            label: &g.category_names()[node.label],
            features: node.features.as_deref(),
        };
        serde_json::to_writer(&mut w, &line).map_err(|e| io_err(&node_path)(e.into()))?;
        writeln!(w).map_err(io_err(&node_path))?;
    }
    w.flush().map_err(io_err(&node_path))?;

    write_edge_file(&dir.join(EDGE_FILE), g.edges())?;

    let manifest = DatasetManifest {
        name: dir
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "graph".into()),
        node_file: NODE_FILE.into(),
        edge_file: EDGE_FILE.into(),
        categories: g.category_names().to_vec(),
        feature_dim: g.feature_dim(),
    };
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = toml::to_string(&manifest).map_err(|e| DatasetError::Manifest {
        path: manifest_path.clone(),
        message: e.to_string(),
    })?;
    fs::write(&manifest_path, text).map_err(io_err(&manifest_path))
}

/// Load a graph directory written by [`save_graph`] (or any directory with a manifest).
pub fn load_graph(dir: &Path) -> Result<TextGraph, DatasetError> {
    load_dataset(&DatasetManifest::from_file(&dir.join(MANIFEST_FILE))?)
}

/// Share of each node's tokens drawn from its own class vocabulary.
pub const CLASS_TOKEN_SHARE: f64 = 0.7;
const TITLE_TOKENS: usize = 8;

/// Planted-partition graph with class-correlated node text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub n: usize,
    pub num_classes: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub vocab_per_class: usize,
    pub tokens_per_node: usize,
    pub shared_vocab: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n: 300,
            num_classes: 3,
            p_in: 0.05,
            p_out: 0.02,
            vocab_per_class: 400,
            tokens_per_node: 12,
            shared_vocab: 400,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), DatasetError> {
        let bad = |m: &str| Err(DatasetError::InvalidSpec(m.to_string()));
        if !(0.0 <= self.p_out && self.p_out < self.p_in && self.p_in <= 1.0) && !(self.p_in == 0.0 && self.p_out == 0.0) {
            return bad("need 0 <= p_out < p_in <= 1");
        }
        if self.num_classes == 0 || self.n < self.num_classes {
            return bad("need n >= num_classes >= 1");
        }
        if self.vocab_per_class == 0 || self.tokens_per_node == 0 || self.shared_vocab == 0 {
            return bad("token counts must be positive");
        }
        Ok(())
    }

    /// Class whose vocabulary contains `token`, or `None` for shared or foreign tokens.
    pub fn token_class(&self, token: &str) -> Option<usize> {
        let idx: usize = token.strip_prefix('w')?.parse().ok()?;
        let c = idx / self.vocab_per_class;
        (c < self.num_classes).then_some(c)
    }

    pub fn category_names(&self) -> Vec<String> {
        let width = (self.num_classes.max(2) - 1).to_string().len();
        (0..self.num_classes).map(|c| format!("Category {c:0width$}")).collect()
    }
}

/// Generate a planted-partition graph. Node `i` has class `i % num_classes`.
///
/// The degenerate `p_in == p_out == 0` spec is accepted and yields no edges.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<TextGraph, DatasetError> {
    spec.validate()?;
    let c = spec.num_classes;
    let labels: Vec<usize> = (0..spec.n).map(|i| i % c).collect();

    let mut edge_rng = rng::derived(spec.seed, "synthetic_edges");
    let mut edges = Vec::new();
    for i in 0..spec.n {
        for j in i + 1..spec.n {
            let p = if labels[i] == labels[j] { spec.p_in } else { spec.p_out };
            if edge_rng.gen::<f64>() < p {
                edges.push((i, j));
            }
        }
    }

    let mut text_rng = rng::derived(spec.seed, "synthetic_text");
    let class_tokens = (CLASS_TOKEN_SHARE * spec.tokens_per_node as f64).round() as usize;
    let shared_base = c * spec.vocab_per_class;
    let nodes = labels
        .iter()
        .enumerate()
        .map(|(i, &label)| {
            let mut ids: Vec<usize> = (0..spec.tokens_per_node)
                .map(|t| {
                    if t < class_tokens {
                        label * spec.vocab_per_class + text_rng.gen_range(0..spec.vocab_per_class)
                    } else {
                        shared_base + text_rng.gen_range(0..spec.shared_vocab)
                    }
                })
                .collect();
            ids.shuffle(&mut text_rng);
            let words: Vec<String> = ids.iter().map(|id| format!("w{id}")).collect();
            let split = TITLE_TOKENS.min(words.len());
            NodeRecord::new(i, words[..split].join(" "), words[split..].join(" "), label)
        })
        .collect();

    Ok(build_graph(nodes, &edges, spec.category_names())?)
}
