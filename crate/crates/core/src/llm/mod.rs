//! Gateway to the verdict model: prompts, backends, response parsing,
//! concurrent querying and instruction-dataset export.

mod backend;
mod prompt;

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use backend::{oracle_answer, BackendError, ConstantBackend, HttpBackend, OracleBackend, OracleConfig, Query, VerdictBackend};
pub use prompt::{
    answer_text, build_node_prompt, build_pair_prompt, build_pair_prompt_with, find_category, parse_answer_grammar,
    parse_verdict, PairPrompt, ParseFailure, PromptTemplate, Verdict,
};

use crate::concurrency::bounded_map;
use crate::graph::{Edge, GraphError, TextGraph};
use crate::predictor::PairSample;

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("cannot build a pair prompt for node {0} with itself")]
    SelfPair(usize),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("backend failed on edge {edge} after {attempts} attempts ({completed} of {total} edges done): {source}")]
    Aborted {
        edge: Edge,
        attempts: usize,
        completed: usize,
        total: usize,
        /// Verdicts that did come back, in input order.
        partial: Vec<EdgeVerdict>,
        #[source]
        source: BackendError,
    },
    #[error("backend failed on node {node} after {attempts} attempts: {source}")]
    NodeAborted {
        node: usize,
        attempts: usize,
        #[source]
        source: BackendError,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Parsed answer for one undirected edge.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeVerdict {
    pub edge: Edge,
    pub same_category: bool,
    pub category: Option<usize>,
    pub raw_response: String,
    /// No attempt produced a parseable answer; the edge defaulted to rejection.
    #[serde(default)]
    pub parse_failed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QueryOptions {
    /// Maximum requests in flight.
    pub parallelism: usize,
    /// Extra attempts after a transport error or unparseable answer.
    pub retries: usize,
    pub template: PromptTemplate,
}

impl Default for QueryOptions {
    fn default() -> Self {
        Self {
            parallelism: 4,
            retries: 2,
            template: PromptTemplate::WithCategory,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryReport {
    /// One verdict per input edge, in input order.
    pub verdicts: Vec<EdgeVerdict>,
    pub parse_failures: usize,
    /// Attempts beyond the first, summed over edges.
    pub retries_used: usize,
}

/// Ask the backend about each edge, rendered with the lower node id first.
///
/// Unparseable answers are retried and then default to `same_category = false`.
/// Transport failures are retried too; once retries run out the whole call
/// aborts and reports whatever verdicts did complete.
pub fn query_verdicts(
    g: &TextGraph,
    edges: &[Edge],
    backend: &dyn VerdictBackend,
    opts: QueryOptions,
) -> Result<QueryReport, GatewayError> {
    let n = g.num_nodes();
    if let Some(e) = edges.iter().find(|e| e.hi() >= n) {
        return Err(GraphError::EdgeOutOfRange(e.lo(), e.hi(), n).into());
    }
    let outcome = bounded_map(edges, opts.parallelism, |_, &edge| {
        let prompt = build_pair_prompt_with(g, edge.lo(), edge.hi(), opts.template).map_err(|e| (0, BackendError(e.to_string())))?;
        let query = Query::Pair {
            first: edge.lo(),
            second: edge.hi(),
            template: opts.template,
            prompt: &prompt.prompt_text,
        };
        let mut last_raw = String::new();
        let mut last_err = None;
        for attempt in 0..=opts.retries {
            match backend.complete(&query) {
                Ok(raw) => match parse_verdict(&raw, g.category_names()) {
                    Ok(v) => {
                        return Ok((
                            EdgeVerdict {
                                edge,
                                same_category: v.same_category,
                                category: v.category,
                                raw_response: raw,
                                parse_failed: false,
                            },
                            attempt,
                        ))
                    }
                    Err(_) => {
                        last_raw = raw;
                        last_err = None;
                    }
                },
                Err(e) => last_err = Some(e),
            }
        }
        match last_err {
            Some(e) => Err((opts.retries + 1, e)),
            None => Ok((
                EdgeVerdict {
                    edge,
                    same_category: false,
                    category: None,
                    raw_response: last_raw,
                    parse_failed: true,
                },
                opts.retries,
            )),
        }
    });

    if let Some((idx, (attempts, source))) = outcome.error {
        let partial: Vec<EdgeVerdict> = outcome.results.into_iter().flatten().map(|(v, _)| v).collect();
        return Err(GatewayError::Aborted {
            edge: edges[idx],
            attempts,
            completed: partial.len(),
            total: edges.len(),
            partial,
            source,
        });
    }
    let mut verdicts = Vec::with_capacity(edges.len());
    let mut retries_used = 0;
    for (v, extra) in outcome.results.into_iter().flatten() {
        retries_used += extra;
        verdicts.push(v);
    }
    let parse_failures = verdicts.iter().filter(|v| v.parse_failed).count();
    Ok(QueryReport {
        verdicts,
        parse_failures,
        retries_used,
    })
}

/// Ask the backend for node `i`'s category directly. `Ok(None)` means no
/// attempt named a known category.
pub fn classify_node_direct(
    g: &TextGraph,
    i: usize,
    backend: &dyn VerdictBackend,
    retries: usize,
) -> Result<Option<usize>, GatewayError> {
    let prompt = build_node_prompt(g, i)?;
    let query = Query::Node { node: i, prompt: &prompt };
    let mut last_err = None;
    for _ in 0..=retries {
        match backend.complete(&query) {
            Ok(raw) => {
                if let Some(c) = find_category(&raw, g.category_names()) {
                    return Ok(Some(c));
                }
                last_err = None;
            }
            Err(e) => last_err = Some(e),
        }
    }
    match last_err {
        Some(source) => Err(GatewayError::NodeAborted {
            node: i,
            attempts: retries + 1,
            source,
        }),
        None => Ok(None),
    }
}

/// One supervised example for instruction tuning.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructionRecord {
    pub instruction: String,
    pub output: String,
}

pub fn instruction_record(g: &TextGraph, pair: &PairSample, template: PromptTemplate) -> Result<InstructionRecord, GatewayError> {
    let prompt = build_pair_prompt_with(g, pair.i, pair.j, template)?;
    let shared = (pair.y == 1).then(|| g.category_names()[pair.c_i].as_str());
    Ok(InstructionRecord {
        instruction: prompt.prompt_text,
        output: answer_text(shared, template),
    })
}

/// Write one JSON line per labeled pair. Returns the number of lines written.
pub fn export_instruction_dataset(
    g: &TextGraph,
    pairs: &[PairSample],
    path: &Path,
    template: PromptTemplate,
) -> Result<usize, GatewayError> {
    let io = |source| GatewayError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut w = BufWriter::new(fs::File::create(path).map_err(io)?);
    for pair in pairs {
        let record = instruction_record(g, pair, template)?;
        serde_json::to_writer(&mut w, &record).map_err(|e| io(e.into()))?;
        w.write_all(b"\n").map_err(io)?;
    }
    w.flush().map_err(io)?;
    Ok(pairs.len())
}
