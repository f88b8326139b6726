//! Candidate-pool assembly and LLM screening of edges.
//!
//! The augmented structure is the original edge set plus predictor
//! candidates. Each mode decides which part of it goes through screening and
//! which part is kept as is.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::{self, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{self, DatasetError};
use crate::graph::{Edge, GraphError, TextGraph};
use crate::llm::{query_verdicts, EdgeVerdict, GatewayError, QueryOptions, VerdictBackend};
use crate::predictor::CandidateSet;

pub const REFINED_EDGES_FILE: &str = "refined_edges.tsv";
pub const REFINED_SIDECAR_FILE: &str = "refined.json";

#[derive(Debug, Error)]
pub enum RefineError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("candidate set covers {found} nodes, graph has {expected}")]
    CandidateMismatch { expected: usize, found: usize },
    #[error("verdict cache {path}, line {line}: {message}")]
    Cache { path: PathBuf, line: usize, message: String },
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    KeptOriginal,
    AddedCandidate,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RefinementMode {
    /// Screen originals and candidates.
    #[default]
    Full,
    /// Screen originals only; nothing is added.
    NoAdd,
    /// Keep every original; screen candidates only.
    NoDel,
    /// Build the graph from screened candidates alone.
    ConstructOnly,
}

impl RefinementMode {
    pub const ALL: [RefinementMode; 4] = [Self::Full, Self::NoAdd, Self::NoDel, Self::ConstructOnly];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Full => "full",
            Self::NoAdd => "no-add",
            Self::NoDel => "no-del",
            Self::ConstructOnly => "construct-only",
        }
    }
}

impl std::fmt::Display for RefinementMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for RefinementMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown refinement mode {s:?} (expected full, no-add, no-del or construct-only)"))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CandidatePool {
    /// Edges to screen, sorted, each once.
    pub screen: Vec<(Edge, Provenance)>,
    /// Edges that bypass screening.
    pub keep: Vec<Edge>,
}

impl CandidatePool {
    /// Every edge the refined graph could contain.
    pub fn augmented(&self) -> BTreeSet<Edge> {
        self.screen.iter().map(|&(e, _)| e).chain(self.keep.iter().copied()).collect()
    }
}

pub fn assemble_candidate_pool(g: &TextGraph, cands: &CandidateSet, mode: RefinementMode) -> Result<CandidatePool, RefineError> {
    let n = g.num_nodes();
    if cands.lists.len() != n {
        return Err(RefineError::CandidateMismatch {
            expected: n,
            found: cands.lists.len(),
        });
    }
    let candidates = cands.edges();
    if let Some(e) = candidates.iter().find(|e| e.hi() >= n) {
        return Err(GraphError::EdgeOutOfRange(e.lo(), e.hi(), n).into());
    }
    let originals = || g.edges().iter().map(|&e| (e, Provenance::KeptOriginal));
    let new_candidates = || {
        candidates
            .iter()
            .filter(|&&e| !g.has_edge(e))
            .map(|&e| (e, Provenance::AddedCandidate))
    };
    let pool = match mode {
        RefinementMode::Full => {
            let screen: BTreeMap<Edge, Provenance> = originals().chain(new_candidates()).collect();
            CandidatePool {
                screen: screen.into_iter().collect(),
                keep: Vec::new(),
            }
        }
        RefinementMode::NoAdd => CandidatePool {
            screen: originals().collect(),
            keep: Vec::new(),
        },
        RefinementMode::NoDel => CandidatePool {
            screen: new_candidates().collect(),
            keep: g.edges().iter().copied().collect(),
        },
        RefinementMode::ConstructOnly => CandidatePool {
            screen: candidates
                .iter()
                .map(|&e| {
                    let prov = if g.has_edge(e) {
                        Provenance::KeptOriginal
                    } else {
                        Provenance::AddedCandidate
                    };
                    (e, prov)
                })
                .collect(),
            keep: Vec::new(),
        },
    };
    Ok(pool)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RefinedGraph {
    pub edges: BTreeMap<Edge, Provenance>,
    pub deleted_originals: BTreeSet<Edge>,
    /// Verdict for every screened edge, in pool order.
    pub verdict_log: Vec<EdgeVerdict>,
    pub parse_failures: usize,
    /// Screened edges answered from the verdict cache.
    pub cache_hits: usize,
}

impl RefinedGraph {
    pub fn edge_set(&self) -> BTreeSet<Edge> {
        self.edges.keys().copied().collect()
    }

    /// The refined structure over the nodes of `g`.
    pub fn apply(&self, g: &TextGraph) -> Result<TextGraph, GraphError> {
        g.with_edges(self.edges.keys().copied())
    }

    pub fn count(&self, prov: Provenance) -> usize {
        self.edges.values().filter(|&&p| p == prov).count()
    }
}

/// Append-only JSON-lines store of verdicts keyed by `"(min,max)"`.
#[derive(Debug)]
pub struct VerdictCache {
    path: PathBuf,
    entries: HashMap<Edge, EdgeVerdict>,
}

#[derive(Serialize, Deserialize)]
struct CacheLine {
    key: String,
    verdict: EdgeVerdict,
}

impl VerdictCache {
    /// Opens (or starts) a cache at `path`. Later lines override earlier ones.
    pub fn open(path: &Path) -> Result<Self, RefineError> {
        let mut entries = HashMap::new();
        match fs::File::open(path) {
            Ok(file) => {
                for (idx, line) in BufReader::new(file).lines().enumerate() {
                    let cache_err = |message: String| RefineError::Cache {
                        path: path.to_path_buf(),
                        line: idx + 1,
                        message,
                    };
                    let line = line.map_err(|e| cache_err(e.to_string()))?;
                    if line.trim().is_empty() {
                        continue;
                    }
                    let rec: CacheLine = serde_json::from_str(&line).map_err(|e| cache_err(e.to_string()))?;
                    if Edge::parse_key(&rec.key) != Some(rec.verdict.edge) {
                        return Err(cache_err(format!("key {} does not match edge {}", rec.key, rec.verdict.edge)));
                    }
                    entries.insert(rec.verdict.edge, rec.verdict);
                }
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
            Err(e) => {
                return Err(RefineError::Io {
                    path: path.to_path_buf(),
                    message: e.to_string(),
                })
            }
        }
        Ok(Self {
            path: path.to_path_buf(),
            entries,
        })
    }

    pub fn get(&self, e: Edge) -> Option<&EdgeVerdict> {
        self.entries.get(&e)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn append(&mut self, verdicts: &[EdgeVerdict]) -> Result<(), RefineError> {
        if verdicts.is_empty() {
            return Ok(());
        }
        let io_err = |e: std::io::Error| RefineError::Io {
            path: self.path.clone(),
            message: e.to_string(),
        };
        if let Some(parent) = self.path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(io_err)?;
        }
        let mut file = OpenOptions::new().create(true).append(true).open(&self.path).map_err(io_err)?;
        let mut buf = String::new();
        for v in verdicts {
            let line = CacheLine {
                key: v.edge.key(),
                verdict: v.clone(),
            };
            buf.push_str(&serde_json::to_string(&line).expect("verdicts serialize"));
            buf.push('\n');
        }
        file.write_all(buf.as_bytes()).map_err(io_err)?;
        for v in verdicts {
            self.entries.insert(v.edge, v.clone());
        }
        Ok(())
    }
}

/// Screen the pool and assemble the refined graph.
///
/// Verdicts already in `cache` are reused; fresh verdicts are appended to it,
/// including those that completed before a backend abort. An abort still fails
/// the whole call and no refined graph is produced.
pub fn refine(
    g: &TextGraph,
    pool: &CandidatePool,
    backend: &dyn VerdictBackend,
    opts: QueryOptions,
    mut cache: Option<&mut VerdictCache>,
) -> Result<RefinedGraph, RefineError> {
    let n = g.num_nodes();
    if let Some(e) = pool.screen.iter().map(|&(e, _)| e).chain(pool.keep.iter().copied()).find(|e| e.hi() >= n) {
        return Err(GraphError::EdgeOutOfRange(e.lo(), e.hi(), n).into());
    }
    let mut known: HashMap<Edge, EdgeVerdict> = HashMap::new();
    let mut missing = Vec::new();
    for &(e, _) in &pool.screen {
        match cache.as_deref().and_then(|c| c.get(e)) {
            Some(v) => {
                known.insert(e, v.clone());
            }
            None => missing.push(e),
        }
    }
    let cache_hits = known.len();
    let fresh = match query_verdicts(g, &missing, backend, opts) {
        Ok(report) => report.verdicts,
        Err(GatewayError::Aborted {
            edge,
            attempts,
            completed,
            total,
            partial,
            source,
        }) => {
            if let Some(c) = cache.as_deref_mut() {
                c.append(&partial)?;
            }
            return Err(GatewayError::Aborted {
                edge,
                attempts,
                completed,
                total,
                partial,
                source,
            }
            .into());
        }
        Err(e) => return Err(e.into()),
    };
    if let Some(c) = cache {
        c.append(&fresh)?;
    }
    known.extend(fresh.into_iter().map(|v| (v.edge, v)));

    let mut out = RefinedGraph {
        cache_hits,
        ..Default::default()
    };
    for &e in &pool.keep {
        out.edges.insert(e, Provenance::KeptOriginal);
    }
    for &(e, prov) in &pool.screen {
        let v = known.remove(&e).expect("every screened edge has a verdict");
        if v.parse_failed {
            out.parse_failures += 1;
        }
        if v.same_category {
            out.edges.entry(e).or_insert(prov);
        } else if g.has_edge(e) && !out.edges.contains_key(&e) {
            out.deleted_originals.insert(e);
        }
        out.verdict_log.push(v);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementReport {
    pub original_edges: usize,
    pub refined_edges: usize,
    pub screened_originals: usize,
    pub kept_originals: usize,
    pub deleted_originals: usize,
    pub screened_candidates: usize,
    pub added_edges: usize,
    pub parse_failures: usize,
    pub intra_fraction_before: f64,
    pub intra_fraction_after: f64,
    pub inter_edges_before: usize,
    pub inter_edges_after: usize,
    /// Share of screened inter-class originals that were deleted; 0 when none were screened.
    pub inter_deletion_rate: f64,
}

fn intra_fraction(g: &TextGraph, edges: impl Iterator<Item = Edge>) -> (f64, usize) {
    let (mut total, mut intra) = (0usize, 0usize);
    for e in edges {
        total += 1;
        intra += usize::from(g.is_intra_class(e));
    }
    let frac = if total == 0 { 0.0 } else { intra as f64 / total as f64 };
    (frac, total - intra)
}

/// Accounting of a refinement against the original graph. Labels are used for
/// reporting only.
pub fn refinement_report(r: &RefinedGraph, g: &TextGraph) -> RefinementReport {
    let screened: Vec<Edge> = r.verdict_log.iter().map(|v| v.edge).collect();
    let screened_originals: Vec<Edge> = screened.iter().copied().filter(|&e| g.has_edge(e)).collect();
    let screened_inter = screened_originals.iter().filter(|&&e| !g.is_intra_class(e)).count();
    let deleted_inter = r.deleted_originals.iter().filter(|&&e| !g.is_intra_class(e)).count();
    let (before, inter_before) = intra_fraction(g, g.edges().iter().copied());
    let (after, inter_after) = intra_fraction(g, r.edges.keys().copied());
    RefinementReport {
        original_edges: g.num_edges(),
        refined_edges: r.edges.len(),
        screened_originals: screened_originals.len(),
        kept_originals: screened_originals.iter().filter(|e| r.edges.contains_key(e)).count(),
        deleted_originals: r.deleted_originals.len(),
        screened_candidates: screened.len() - screened_originals.len(),
        added_edges: r.count(Provenance::AddedCandidate),
        parse_failures: r.parse_failures,
        intra_fraction_before: before,
        intra_fraction_after: after,
        inter_edges_before: inter_before,
        inter_edges_after: inter_after,
        inter_deletion_rate: if screened_inter == 0 {
            0.0
        } else {
            deleted_inter as f64 / screened_inter as f64
        },
    }
}

#[derive(Serialize, Deserialize)]
struct ProvenanceEntry {
    edge: Edge,
    provenance: Provenance,
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    edges: Vec<ProvenanceEntry>,
    deleted_originals: Vec<Edge>,
    parse_failures: usize,
    cache_hits: usize,
    verdicts_true: usize,
    verdicts_false: usize,
    verdict_log: Vec<EdgeVerdict>,
}

/// Writes the refined edge list and a JSON sidecar into `dir`.
pub fn save_refined(r: &RefinedGraph, dir: &Path) -> Result<(), RefineError> {
    fs::create_dir_all(dir).map_err(|e| RefineError::Io {
        path: dir.to_path_buf(),
        message: e.to_string(),
    })?;
    dataset::write_edge_file(&dir.join(REFINED_EDGES_FILE), r.edges.keys())?;
    let verdicts_true = r.verdict_log.iter().filter(|v| v.same_category).count();
    let sidecar = Sidecar {
        edges: r
            .edges
            .iter()
            .map(|(&edge, &provenance)| ProvenanceEntry { edge, provenance })
            .collect(),
        deleted_originals: r.deleted_originals.iter().copied().collect(),
        parse_failures: r.parse_failures,
        cache_hits: r.cache_hits,
        verdicts_true,
        verdicts_false: r.verdict_log.len() - verdicts_true,
        verdict_log: r.verdict_log.clone(),
    };
    let path = dir.join(REFINED_SIDECAR_FILE);
    let text = serde_json::to_string_pretty(&sidecar).expect("sidecar serializes");
    fs::write(&path, text + "\n").map_err(|e| RefineError::Io {
        path,
        message: e.to_string(),
    })
}

pub fn load_refined(dir: &Path) -> Result<RefinedGraph, RefineError> {
    let path = dir.join(REFINED_SIDECAR_FILE);
    let text = fs::read_to_string(&path).map_err(|e| RefineError::Io {
        path: path.clone(),
        message: e.to_string(),
    })?;
    let sidecar: Sidecar = serde_json::from_str(&text).map_err(|e| RefineError::Io {
        path,
        message: e.to_string(),
    })?;
    Ok(RefinedGraph {
        edges: sidecar.edges.into_iter().map(|p| (p.edge, p.provenance)).collect(),
        deleted_originals: sidecar.deleted_originals.into_iter().collect(),
        verdict_log: sidecar.verdict_log,
        parse_failures: sidecar.parse_failures,
        cache_hits: sidecar.cache_hits,
    })
}
