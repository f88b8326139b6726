//! Graph structure refinement: an embedding-based edge predictor proposes
//! candidate edges, an LLM verdict backend screens original and candidate
//! edges for label consistency, and a GCN measures the refined structure.

pub mod concurrency;
pub mod dataset;
pub mod embed;
pub mod gcn;
pub mod graph;
pub mod llm;
pub mod optim;
pub mod pipeline;
pub mod predictor;
pub mod refine;
pub mod rng;
pub mod text;
