//! Experiment configuration. One TOML file drives every stage; every CLI flag
//! overrides a field here.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::PipelineError;
use crate::dataset::SyntheticSpec;
use crate::gcn::GcnConfig;
use crate::graph::DEFAULT_RATIOS;
use crate::llm::{OracleConfig, PromptTemplate};
use crate::predictor::{PredictorConfig, DEFAULT_PAIR_COUNT};
use crate::refine::RefinementMode;

/// Read at run time and never written to any output file.
pub const BACKEND_URL_ENV: &str = "GRAPHEDIT_BACKEND_URL";
pub const BACKEND_TOKEN_ENV: &str = "GRAPHEDIT_BACKEND_TOKEN";
pub const EMBEDDING_URL_ENV: &str = "GRAPHEDIT_EMBEDDING_URL";
pub const EMBEDDING_TOKEN_ENV: &str = "GRAPHEDIT_EMBEDDING_TOKEN";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DataSource {
    Synthetic(SyntheticSpec),
    /// A dataset manifest on disk.
    Manifest { path: PathBuf },
}

impl Default for DataSource {
    fn default() -> Self {
        Self::Synthetic(SyntheticSpec::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EmbeddingConfig {
    HashedBow {
        #[serde(default = "default_embedding_dim")]
        dim: usize,
        #[serde(default)]
        seed: u64,
    },
    Http {
        #[serde(default = "default_http_batch")]
        batch_size: usize,
        #[serde(default = "default_retries")]
        retries: usize,
        #[serde(default = "default_parallelism")]
        parallelism: usize,
        #[serde(default = "default_timeout_secs")]
        timeout_secs: u64,
    },
}

fn default_embedding_dim() -> usize {
    256
}
fn default_http_batch() -> usize {
    64
}
fn default_retries() -> usize {
    2
}
fn default_parallelism() -> usize {
    4
}
fn default_timeout_secs() -> u64 {
    60
}
fn default_max_tokens() -> u32 {
    32
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        Self::HashedBow {
            dim: default_embedding_dim(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BackendConfig {
    Oracle(OracleConfig),
    Http {
        #[serde(default = "default_max_tokens")]
        max_tokens: u32,
        #[serde(default = "default_timeout_secs")]
        timeout_secs: u64,
    },
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self::Oracle(OracleConfig::default())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Classifier {
    #[default]
    Gcn,
    Mlp,
    /// Ask the verdict backend for each test node's category.
    LlmDirect,
}

impl std::str::FromStr for Classifier {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "gcn" => Ok(Self::Gcn),
            "mlp" => Ok(Self::Mlp),
            "llm-direct" => Ok(Self::LlmDirect),
            _ => Err(format!("unknown classifier {s:?} (expected gcn, mlp or llm-direct)")),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureSource {
    /// Dataset features when every node has them, node embeddings otherwise.
    #[default]
    Auto,
    Embedding,
    Dataset,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Base seed: split, pair sampling, noise and initialization derive from it.
    pub seed: u64,
    pub repeats: usize,
    pub out_dir: PathBuf,
    /// Stage cache; defaults to `<out_dir>/cache`.
    pub cache_dir: Option<PathBuf>,
    /// Fraction of extra random edges injected before anything else.
    pub noise_rate: f64,
    pub split_ratios: [f64; 3],
    pub pair_count: usize,
    pub k: usize,
    pub mode: RefinementMode,
    pub classifier: Classifier,
    pub features: FeatureSource,
    /// Also train on the unrefined graph with the same splits and seeds.
    pub compare_unrefined: bool,
    /// Recompute the refined structure for every repeat instead of once.
    pub refine_per_repeat: bool,
    pub template: PromptTemplate,
    pub parallelism: usize,
    pub retries: usize,
    pub data: DataSource,
    pub embedding: EmbeddingConfig,
    pub predictor: PredictorConfig,
    pub gcn: GcnConfig,
    pub backend: BackendConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            repeats: 10,
            out_dir: PathBuf::from("out"),
            cache_dir: None,
            noise_rate: 0.0,
            split_ratios: DEFAULT_RATIOS,
            pair_count: DEFAULT_PAIR_COUNT,
            k: 3,
            mode: RefinementMode::Full,
            classifier: Classifier::Gcn,
            features: FeatureSource::Auto,
            compare_unrefined: true,
            refine_per_repeat: false,
            template: PromptTemplate::WithCategory,
            parallelism: default_parallelism(),
            retries: default_retries(),
            data: DataSource::default(),
            embedding: EmbeddingConfig::default(),
            predictor: PredictorConfig::default(),
            gcn: GcnConfig::default(),
            backend: BackendConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        let cfg: Self = toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        Ok(cfg)
    }

    /// Loads a config; a relative manifest path is resolved against the config file.
    pub fn from_file(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        if let DataSource::Manifest { path: manifest } = &mut cfg.data {
            if manifest.is_relative() {
                if let Some(dir) = path.parent() {
                    *manifest = dir.join(&*manifest);
                }
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.cache_dir.clone().unwrap_or_else(|| self.out_dir.join("cache"))
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if self.repeats == 0 {
            return bad("repeats must be at least 1".into());
        }
        if !(self.noise_rate.is_finite() && self.noise_rate >= 0.0) {
            return bad(format!("noise_rate must be >= 0, got {}", self.noise_rate));
        }
        if self.k == 0 {
            return bad("k must be at least 1".into());
        }
        if self.pair_count == 0 {
            return bad("pair_count must be at least 1".into());
        }
        if self.parallelism == 0 {
            return bad("parallelism must be at least 1".into());
        }
        if let BackendConfig::Oracle(o) = &self.backend {
            o.validate().map_err(PipelineError::Config)?;
        }
        if let DataSource::Synthetic(spec) = &self.data {
            spec.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        }
        if let EmbeddingConfig::HashedBow { dim, .. } = self.embedding {
            if dim < 16 {
                return bad(format!("embedding dim must be at least 16, got {dim}"));
            }
        }
        if self.gcn.hidden == 0 || self.predictor.hidden == 0 {
            return bad("hidden sizes must be positive".into());
        }
        Ok(())
    }
}

/// Stable SHA-256 over the JSON form of `parts`.
pub fn content_hash<T: Serialize + ?Sized>(parts: &T) -> String {
    let json = serde_json::to_vec(parts).expect("hash input serializes");
    hex::encode(Sha256::digest(&json))
}
