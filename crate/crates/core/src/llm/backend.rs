//! Verdict backends: a label oracle for offline runs and an HTTP completion client.

use std::time::Duration;

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::prompt::{answer_text, PromptTemplate};
use crate::graph::{Edge, TextGraph};
use crate::rng;

/// What a backend is asked. The prompt is always present; node ids let
/// label-aware test doubles answer without parsing prompt text.
#[derive(Debug, Clone, Copy)]
pub enum Query<'a> {
    Pair {
        first: usize,
        second: usize,
        template: PromptTemplate,
        prompt: &'a str,
    },
    Node {
        node: usize,
        prompt: &'a str,
    },
}

impl Query<'_> {
    pub fn prompt(&self) -> &str {
        match self {
            Query::Pair { prompt, .. } | Query::Node { prompt, .. } => prompt,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("backend unavailable: {0}")]
pub struct BackendError(pub String);

/// Anything that answers prompts. Shared across worker threads.
pub trait VerdictBackend: Sync {
    fn complete(&self, query: &Query<'_>) -> Result<String, BackendError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OracleConfig {
    /// Probability that the consistency answer is inverted.
    pub flip_rate: f64,
    /// Probability that a `True` answer names a wrong category.
    pub category_error_rate: f64,
    pub seed: u64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            flip_rate: 0.0,
            category_error_rate: 0.0,
            seed: 0,
        }
    }
}

impl OracleConfig {
    pub fn perfect() -> Self {
        Self::default()
    }

    pub fn validate(&self) -> Result<(), String> {
        for (name, p) in [("flip_rate", self.flip_rate), ("category_error_rate", self.category_error_rate)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(format!("{name} must be in [0, 1], got {p}"));
            }
        }
        Ok(())
    }
}

/// Answers from ground-truth labels. Noise is a pure function of the queried
/// pair and the seed, so answers never depend on query order or concurrency.
#[derive(Debug, Clone)]
pub struct OracleBackend {
    labels: Vec<usize>,
    categories: Vec<String>,
    cfg: OracleConfig,
}

impl OracleBackend {
    pub fn new(g: &TextGraph, cfg: OracleConfig) -> Result<Self, String> {
        cfg.validate()?;
        Ok(Self {
            labels: g.labels(),
            categories: g.category_names().to_vec(),
            cfg,
        })
    }

    fn wrong_category(&self, truth: usize, rng: &mut rng::Rng) -> usize {
        let c = self.categories.len();
        if c < 2 {
            return truth;
        }
        let pick = rng.gen_range(0..c - 1);
        if pick >= truth {
            pick + 1
        } else {
            pick
        }
    }

    pub fn pair_answer(&self, i: usize, j: usize, template: PromptTemplate) -> String {
        let (lo, hi) = (i.min(j), i.max(j));
        let mut rng = rng::seeded(rng::hash_words(&[0, lo as u64, hi as u64], self.cfg.seed));
        let flip = rng.gen::<f64>() < self.cfg.flip_rate;
        let category_error = rng.gen::<f64>() < self.cfg.category_error_rate;
        let truth = self.labels[lo] == self.labels[hi];
        if truth == flip {
            return answer_text(None, template);
        }
        let shared = self.labels[lo];
        let named = if category_error {
            self.wrong_category(shared, &mut rng)
        } else {
            shared
        };
        answer_text(Some(&self.categories[named]), template)
    }

    pub fn node_answer(&self, i: usize) -> String {
        let mut rng = rng::seeded(rng::hash_words(&[1, i as u64], self.cfg.seed));
        let truth = self.labels[i];
        let named = if rng.gen::<f64>() < self.cfg.category_error_rate {
            self.wrong_category(truth, &mut rng)
        } else {
            truth
        };
        self.categories[named].clone()
    }
}

impl VerdictBackend for OracleBackend {
    fn complete(&self, query: &Query<'_>) -> Result<String, BackendError> {
        let n = self.labels.len();
        match *query {
            Query::Pair {
                first,
                second,
                template,
                ..
            } if first < n && second < n => Ok(self.pair_answer(first, second, template)),
            Query::Node { node, .. } if node < n => Ok(self.node_answer(node)),
            _ => Err(BackendError("oracle queried about an unknown node".into())),
        }
    }
}

/// Raw oracle answer for the pair `(i, j)` with the category template.
pub fn oracle_answer(g: &TextGraph, i: usize, j: usize, cfg: &OracleConfig) -> Result<String, String> {
    Edge::new(i, j).ok_or_else(|| format!("self pair ({i}, {i})"))?;
    Ok(OracleBackend::new(g, cfg.clone())?.pair_answer(i, j, PromptTemplate::WithCategory))
}

/// Completion-style HTTP service: `POST {"prompt", "max_tokens"}` -> `{"text"}`.
pub struct HttpBackend {
    url: String,
    token: Option<String>,
    max_tokens: u32,
    client: reqwest::blocking::Client,
}

#[derive(Serialize)]
struct CompletionRequest<'a> {
    prompt: &'a str,
    max_tokens: u32,
}

#[derive(Deserialize)]
struct CompletionResponse {
    text: String,
}

impl HttpBackend {
    pub fn new(url: impl Into<String>, token: Option<String>, max_tokens: u32, timeout: Duration) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| BackendError(e.to_string()))?;
        Ok(Self {
            url: url.into(),
            token,
            max_tokens,
            client,
        })
    }
}

impl VerdictBackend for HttpBackend {
    fn complete(&self, query: &Query<'_>) -> Result<String, BackendError> {
        let body = CompletionRequest {
            prompt: query.prompt(),
            max_tokens: self.max_tokens,
        };
        let mut req = self.client.post(&self.url).json(&body);
        if let Some(token) = &self.token {
            req = req.bearer_auth(token);
        }
        let resp = req.send().map_err(|e| BackendError(e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            return Err(BackendError(format!("HTTP {status}")));
        }
        resp.json::<CompletionResponse>()
            .map(|r| r.text)
            .map_err(|e| BackendError(format!("bad response body: {e}")))
    }
}

/// Answers every query with the same text.
#[derive(Debug, Clone)]
pub struct ConstantBackend(pub String);

impl VerdictBackend for ConstantBackend {
    fn complete(&self, _: &Query<'_>) -> Result<String, BackendError> {
        Ok(self.0.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_graph, NodeRecord};
    use crate::llm::prompt::parse_verdict;

    fn graph() -> TextGraph {
        let nodes = (0..6).map(|i| NodeRecord::new(i, "t", "a", i % 3)).collect();
        build_graph(nodes, &[], vec!["A".into(), "B".into(), "C".into()]).unwrap()
    }

    #[test]
    fn perfect_oracle_tells_truth() {
        let g = graph();
        let cfg = OracleConfig::perfect();
        assert_eq!(oracle_answer(&g, 0, 3, &cfg).unwrap(), "True, A");
        assert_eq!(oracle_answer(&g, 4, 1, &cfg).unwrap(), "True, B");
        assert_eq!(oracle_answer(&g, 0, 1, &cfg).unwrap(), "False");
    }

    #[test]
    fn full_flip_inverts() {
        let g = graph();
        let cfg = OracleConfig {
            flip_rate: 1.0,
            ..Default::default()
        };
        assert_eq!(oracle_answer(&g, 0, 3, &cfg).unwrap(), "False");
        assert_eq!(oracle_answer(&g, 0, 1, &cfg).unwrap(), "True, A");
    }

    #[test]
    fn category_error_keeps_consistency() {
        let g = graph();
        let cfg = OracleConfig {
            category_error_rate: 1.0,
            ..Default::default()
        };
        for (i, j) in [(0, 3), (1, 4), (2, 5)] {
            let raw = oracle_answer(&g, i, j, &cfg).unwrap();
            let v = parse_verdict(&raw, g.category_names()).unwrap();
            assert!(v.same_category);
            assert_ne!(v.category, Some(g.label(i)), "{raw}");
        }
    }

    #[test]
    fn answers_are_per_edge_deterministic() {
        let g = graph();
        let cfg = OracleConfig {
            flip_rate: 0.5,
            category_error_rate: 0.5,
            seed: 11,
        };
        for i in 0..6 {
            for j in 0..6 {
                if i != j {
                    assert_eq!(oracle_answer(&g, i, j, &cfg), oracle_answer(&g, j, i, &cfg));
                }
            }
        }
    }

    #[test]
    fn rejects_bad_probabilities_and_self_pairs() {
        let g = graph();
        let cfg = OracleConfig {
            flip_rate: 1.5,
            ..Default::default()
        };
        assert!(oracle_answer(&g, 0, 1, &cfg).is_err());
        assert!(oracle_answer(&g, 2, 2, &OracleConfig::perfect()).is_err());
    }
}
