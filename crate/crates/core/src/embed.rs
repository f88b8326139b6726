//! Per-node text representations.
//!
//! Two providers implement [`EmbeddingProvider`]: a deterministic hashed
//! bag-of-words model for local runs, and an HTTP client for an external
//! embedding service (`POST {"texts": [..]}` -> `{"vectors": [[..]]}`).
//! Every row of an [`EmbeddingMatrix`] has unit L2 norm.

use std::time::Duration;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::concurrency::bounded_map;
use crate::graph::TextGraph;
use crate::rng;
use crate::text::tokenize;

pub const DEFAULT_HASHED_DIM: usize = 256;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("hashed embedding dimension must be at least 16, got {0}")]
    DimensionTooSmall(usize),
    #[error("embedding provider failed on batch starting at node {node}: {message}")]
    Provider { node: usize, message: String },
    #[error("dimension mismatch: node {node} has {found} entries, expected {expected}")]
    DimensionMismatch { node: usize, expected: usize, found: usize },
    #[error("node {node} has a non-finite embedding entry")]
    NonFinite { node: usize },
}

/// Dense `N x d` node representations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "EmbeddingRepr", into = "EmbeddingRepr")]
pub struct EmbeddingMatrix {
    vectors: Array2<f64>,
    provider_id: String,
}

#[derive(Serialize, Deserialize)]
struct EmbeddingRepr {
    provider_id: String,
    dim: usize,
    rows: Vec<Vec<f64>>,
}

impl From<EmbeddingMatrix> for EmbeddingRepr {
    fn from(m: EmbeddingMatrix) -> Self {
        EmbeddingRepr {
            dim: m.dim(),
            rows: m.vectors.rows().into_iter().map(|r| r.to_vec()).collect(),
            provider_id: m.provider_id,
        }
    }
}

impl TryFrom<EmbeddingRepr> for EmbeddingMatrix {
    type Error = EmbedError;

    fn try_from(r: EmbeddingRepr) -> Result<Self, Self::Error> {
        EmbeddingMatrix::from_rows(r.rows, r.dim, r.provider_id)
    }
}

impl EmbeddingMatrix {
    /// Rows are stored as given; they are not renormalized.
    pub fn from_rows(rows: Vec<Vec<f64>>, dim: usize, provider_id: impl Into<String>) -> Result<Self, EmbedError> {
        let mut vectors = Array2::zeros((rows.len(), dim));
        for (i, row) in rows.iter().enumerate() {
            if row.len() != dim {
                return Err(EmbedError::DimensionMismatch {
                    node: i,
                    expected: dim,
                    found: row.len(),
                });
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(EmbedError::NonFinite { node: i });
            }
            vectors.row_mut(i).iter_mut().zip(row).for_each(|(d, &v)| *d = v);
        }
        Ok(Self {
            vectors,
            provider_id: provider_id.into(),
        })
    }

    pub fn vectors(&self) -> &Array2<f64> {
        &self.vectors
    }

    pub fn num_rows(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn provider_id(&self) -> &str {
        &self.provider_id
    }

    pub fn row(&self, i: usize) -> ndarray::ArrayView1<'_, f64> {
        self.vectors.row(i)
    }
}

/// Maps texts to fixed-dimension vectors. Implementations must be thread-safe.
pub trait EmbeddingProvider: Sync {
    fn id(&self) -> String;

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, String>;

    fn batch_size(&self) -> usize {
        256
    }

    /// Maximum number of batches in flight.
    fn parallelism(&self) -> usize {
        1
    }
}

/// Embed every node's `title + abstract`; row `i` belongs to node `i`.
pub fn embed_nodes(g: &TextGraph, provider: &dyn EmbeddingProvider) -> Result<EmbeddingMatrix, EmbedError> {
    let texts: Vec<String> = g.nodes().iter().map(|n| n.text()).collect();
    let batch = provider.batch_size().max(1);
    let chunks: Vec<&[String]> = texts.chunks(batch).collect();
    let outcome = bounded_map(&chunks, provider.parallelism(), |_, chunk| {
        provider.embed_batch(chunk).and_then(|rows| {
            if rows.len() == chunk.len() {
                Ok(rows)
            } else {
                Err(format!("expected {} vectors, got {}", chunk.len(), rows.len()))
            }
        })
    });
    let batches = outcome
        .into_result()
        .map_err(|(k, message)| EmbedError::Provider { node: k * batch, message })?;

    let mut rows: Vec<Vec<f64>> = batches.into_iter().flatten().collect();
    let dim = rows.first().map_or(0, Vec::len);
    for (i, row) in rows.iter_mut().enumerate() {
        if row.len() != dim {
            return Err(EmbedError::DimensionMismatch {
                node: i,
                expected: dim,
                found: row.len(),
            });
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(EmbedError::NonFinite { node: i });
        }
        l2_normalize(row);
    }
    EmbeddingMatrix::from_rows(rows, dim, provider.id())
}

/// Scale to unit norm; an all-zero vector becomes the uniform unit vector.
pub fn l2_normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    } else if !v.is_empty() {
        let u = 1.0 / (v.len() as f64).sqrt();
        v.iter_mut().for_each(|x| *x = u);
    }
}

/// Bucket and sign a token hashes to.
pub fn token_slot(token: &str, dim: usize, seed: u64) -> (usize, f64) {
    let h = rng::hash_bytes(token.as_bytes(), seed);
    let bucket = (h % dim as u64) as usize;
    let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
    (bucket, sign)
}

/// Signed feature-hashing of the token bag, L2-normalized.
pub fn hashed_bow_embed(text: &str, dim: usize, seed: u64) -> Result<Vec<f64>, EmbedError> {
    let mut v = hashed_bow_counts(text, dim, seed)?;
    l2_normalize(&mut v);
    Ok(v)
}

/// Unnormalized signed token counts.
pub fn hashed_bow_counts(text: &str, dim: usize, seed: u64) -> Result<Vec<f64>, EmbedError> {
    if dim < 16 {
        return Err(EmbedError::DimensionTooSmall(dim));
    }
    let mut v = vec![0.0; dim];
    for token in tokenize(text) {
        let (bucket, sign) = token_slot(&token, dim, seed);
        v[bucket] += sign;
    }
    Ok(v)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HashedBowProvider {
    pub dim: usize,
    pub seed: u64,
}

impl HashedBowProvider {
    pub fn new(dim: usize, seed: u64) -> Result<Self, EmbedError> {
        if dim < 16 {
            return Err(EmbedError::DimensionTooSmall(dim));
        }
        Ok(Self { dim, seed })
    }
}

impl EmbeddingProvider for HashedBowProvider {
    fn id(&self) -> String {
        format!("hashed-bow:d={}:seed={}", self.dim, self.seed)
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, String> {
        texts
            .iter()
            .map(|t| hashed_bow_counts(t, self.dim, self.seed).map_err(|e| e.to_string()))
            .collect()
    }
}

/// Client for an external `text -> vector` service.
pub struct HttpEmbeddingProvider {
    url: String,
    token: Option<String>,
    batch_size: usize,
    retries: usize,
    parallelism: usize,
    client: reqwest::blocking::Client,
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [String],
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f64>>,
}

impl HttpEmbeddingProvider {
    pub fn new(
        url: impl Into<String>,
        token: Option<String>,
        batch_size: usize,
        retries: usize,
        parallelism: usize,
        timeout: Duration,
    ) -> Result<Self, String> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| e.to_string())?;
        Ok(Self {
            url: url.into(),
            token,
            batch_size: batch_size.max(1),
            retries,
            parallelism: parallelism.max(1),
            client,
        })
    }

    fn post_once(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, String> {
        let mut req = self.client.post(&self.url).json(&EmbedRequest { texts });
        if let Some(token) = &self.token {
            req = req.bearer_auth(token);
        }
        let resp = req.send().map_err(|e| e.to_string())?;
        let status = resp.status();
        if !status.is_success() {
            return Err(format!("HTTP {status}"));
        }
        resp.json::<EmbedResponse>()
            .map(|r| r.vectors)
            .map_err(|e| e.to_string())
    }
}

impl EmbeddingProvider for HttpEmbeddingProvider {
    fn id(&self) -> String {
        // The URL is left out so provider ids can be persisted safely.
        "http-embedding".into()
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, String> {
        let mut last = String::new();
        for attempt in 0..=self.retries {
            if attempt > 0 {
                std::thread::sleep(Duration::from_millis(100 * attempt as u64));
            }
            match self.post_once(texts) {
                Ok(v) => return Ok(v),
                Err(e) => last = e,
            }
        }
        Err(format!("after {} attempts: {last}", self.retries + 1))
    }

    fn batch_size(&self) -> usize {
        self.batch_size
    }

    fn parallelism(&self) -> usize {
        self.parallelism
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_graph, NodeRecord};

    #[test]
    fn counts_follow_token_slots() {
        let (a_bucket, a_sign) = token_slot("a", 64, 5);
        let (b_bucket, b_sign) = token_slot("b", 64, 5);
        let v = hashed_bow_counts("a a b", 64, 5).unwrap();
        let mut expected = vec![0.0; 64];
        expected[a_bucket] += 2.0 * a_sign;
        expected[b_bucket] += b_sign;
        assert_eq!(v, expected);
    }

    #[test]
    fn bag_is_order_free_and_deterministic() {
        let a = hashed_bow_embed("graph neural network", 64, 1).unwrap();
        let b = hashed_bow_embed("network Graph, neural", 64, 1).unwrap();
        assert_eq!(a, b);
        let norm: f64 = a.iter().map(|x| x * x).sum();
        assert!((norm - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_text_is_uniform_unit_vector() {
        let v = hashed_bow_embed("", 16, 0).unwrap();
        assert!(v.iter().all(|&x| (x - 0.25).abs() < 1e-15));
    }

    #[test]
    fn small_dimension_rejected() {
        assert!(matches!(hashed_bow_embed("x", 8, 0), Err(EmbedError::DimensionTooSmall(8))));
    }

    #[test]
    fn identical_texts_identical_rows() {
        let nodes = vec![
            NodeRecord::new(0, "same title", "body", 0),
            NodeRecord::new(1, "same title", "body", 0),
            NodeRecord::new(2, "other", "", 0),
        ];
        let g = build_graph(nodes, &[], vec!["c".into()]).unwrap();
        let m = embed_nodes(&g, &HashedBowProvider::new(32, 0).unwrap()).unwrap();
        assert_eq!(m.row(0), m.row(1));
        assert_ne!(m.row(0), m.row(2));
        assert_eq!(m.provider_id(), "hashed-bow:d=32:seed=0");
    }

    struct Ragged;
    impl EmbeddingProvider for Ragged {
        fn id(&self) -> String {
            "ragged".into()
        }
        fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, String> {
            Ok(texts.iter().map(|t| vec![1.0; 2 + t.len() % 2]).collect())
        }
        fn batch_size(&self) -> usize {
            1
        }
    }

    struct Failing;
    impl EmbeddingProvider for Failing {
        fn id(&self) -> String {
            "failing".into()
        }
        fn embed_batch(&self, _: &[String]) -> Result<Vec<Vec<f64>>, String> {
            Err("down".into())
        }
    }

    #[test]
    fn provider_errors_surface() {
        let nodes = vec![NodeRecord::new(0, "ab", "", 0), NodeRecord::new(1, "abc", "", 0)];
        let g = build_graph(nodes, &[], vec!["c".into()]).unwrap();
        assert!(matches!(
            embed_nodes(&g, &Ragged),
            Err(EmbedError::DimensionMismatch { node: 1, .. })
        ));
        assert!(matches!(embed_nodes(&g, &Failing), Err(EmbedError::Provider { node: 0, .. })));
    }

    #[test]
    fn serde_round_trip() {
        let m = EmbeddingMatrix::from_rows(vec![vec![0.1, 0.2], vec![1.0 / 3.0, -2.5]], 2, "p").unwrap();
        let json = serde_json::to_string(&m).unwrap();
        assert_eq!(serde_json::from_str::<EmbeddingMatrix>(&json).unwrap(), m);
    }
}
