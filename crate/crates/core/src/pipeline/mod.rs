//! End-to-end experiment driver.
//!
//! Stages: data, embed, predictor, candidates, refine, classify. The expensive
//! ones are cached under `cache_dir`, each keyed by a hash of its own settings
//! and the key of the stage it consumes, so editing one field only
//! invalidates the stages downstream of it.

pub mod config;
pub mod report;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use config::{
    content_hash, BackendConfig, Classifier, DataSource, EmbeddingConfig, ExperimentConfig, FeatureSource, BACKEND_TOKEN_ENV,
    BACKEND_URL_ENV, EMBEDDING_TOKEN_ENV, EMBEDDING_URL_ENV,
};
pub use report::{format_pm, render_table, write_sweep_csv, Summary, SweepRow};

use crate::concurrency::bounded_map;
use crate::dataset::{self, DatasetManifest};
use crate::embed::{embed_nodes, EmbeddingMatrix, EmbeddingProvider, HashedBowProvider, HttpEmbeddingProvider};
use crate::gcn::{train_with_classes, GcnConfig};
use crate::graph::{inject_noise, normalize_adjacency, split_nodes, TextGraph};
use crate::llm::{classify_node_direct, HttpBackend, OracleBackend, QueryOptions, VerdictBackend};
use crate::predictor::{label_pairs, sample_pairs, top_k_candidates, train_edge_predictor, CandidateSet, EdgePredictorModel};
use crate::refine::{self, assemble_candidate_pool, refinement_report, RefinedGraph, RefinementReport, VerdictCache};

pub const RESULT_FILE: &str = "result.json";
pub const TIMINGS_FILE: &str = "timings.json";
pub const RESOLVED_CONFIG_FILE: &str = "config.toml";

type BoxError = Box<dyn std::error::Error + Send + Sync>;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: BoxError,
    },
    #[error("no results to report")]
    EmptyResults,
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
}

fn stage_err<E: Into<BoxError>>(stage: &'static str) -> impl FnOnce(E) -> PipelineError {
    move |e| PipelineError::Stage { stage, source: e.into() }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |e| PipelineError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    /// Hash of the configuration with output paths removed.
    pub config_hash: String,
    pub classifier: Classifier,
    pub mode: refine::RefinementMode,
    pub k: usize,
    pub noise_rate: f64,
    /// Test accuracy of the classifier, one entry per repeat.
    pub summary: Summary,
    /// Same splits and seeds on the unrefined graph.
    pub unrefined: Option<Summary>,
    /// Refinement accounting for the structure of the first repeat.
    pub refinement: Option<RefinementReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
    pub cache_hit: bool,
}

/// Wall-clock record of a run. Kept apart from [`ExperimentResult`] so the
/// result file stays reproducible byte for byte.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub stages: Vec<StageTiming>,
    pub total_seconds: f64,
}

impl Timings {
    fn record(&mut self, stage: &str, elapsed: Duration, cache_hit: bool) {
        self.stages.push(StageTiming {
            stage: stage.to_string(),
            seconds: elapsed.as_secs_f64(),
            cache_hit,
        });
    }

    pub fn cache_hits(&self) -> usize {
        self.stages.iter().filter(|s| s.cache_hit).count()
    }

    pub fn computed(&self, stage: &str) -> usize {
        self.stages.iter().filter(|s| s.stage == stage && !s.cache_hit).count()
    }
}

/// Loads or generates the graph and applies noise injection.
pub fn load_data(cfg: &ExperimentConfig) -> Result<TextGraph, PipelineError> {
    let g = match &cfg.data {
        DataSource::Synthetic(spec) => dataset::generate_synthetic(spec).map_err(stage_err("data"))?,
        DataSource::Manifest { path } => {
            let manifest = DatasetManifest::from_file(path).map_err(stage_err("data"))?;
            dataset::load_dataset(&manifest).map_err(stage_err("data"))?
        }
    };
    if cfg.noise_rate > 0.0 {
        inject_noise(&g, cfg.noise_rate, cfg.seed).map_err(stage_err("data"))
    } else {
        Ok(g)
    }
}

/// Content hash of a graph: node records, categories and edges.
pub fn graph_hash(g: &TextGraph) -> String {
    content_hash(&(g.nodes(), g.category_names(), g.edge_list()))
}

pub fn make_embedding_provider(cfg: &EmbeddingConfig) -> Result<Box<dyn EmbeddingProvider>, PipelineError> {
    match cfg {
        EmbeddingConfig::HashedBow { dim, seed } => Ok(Box::new(HashedBowProvider::new(*dim, *seed).map_err(stage_err("embed"))?)),
        EmbeddingConfig::Http {
            batch_size,
            retries,
            parallelism,
            timeout_secs,
        } => {
            let url = std::env::var(EMBEDDING_URL_ENV)
                .map_err(|_| PipelineError::Config(format!("{EMBEDDING_URL_ENV} is not set")))?;
            let token = std::env::var(EMBEDDING_TOKEN_ENV).ok();
            let provider = HttpEmbeddingProvider::new(
                url,
                token,
                *batch_size,
                *retries,
                *parallelism,
                Duration::from_secs(*timeout_secs),
            )
            .map_err(|e| stage_err("embed")(e))?;
            Ok(Box::new(provider))
        }
    }
}

pub fn make_backend(cfg: &BackendConfig, g: &TextGraph) -> Result<Box<dyn VerdictBackend>, PipelineError> {
    match cfg {
        BackendConfig::Oracle(o) => Ok(Box::new(OracleBackend::new(g, o.clone()).map_err(PipelineError::Config)?)),
        BackendConfig::Http { max_tokens, timeout_secs } => {
            let url = std::env::var(BACKEND_URL_ENV).map_err(|_| PipelineError::Config(format!("{BACKEND_URL_ENV} is not set")))?;
            let token = std::env::var(BACKEND_TOKEN_ENV).ok();
            let backend =
                HttpBackend::new(url, token, *max_tokens, Duration::from_secs(*timeout_secs)).map_err(stage_err("refine"))?;
            Ok(Box::new(backend))
        }
    }
}

/// Shared state of one run: the graph, its hash and the stage cache.
struct Context<'a> {
    cfg: &'a ExperimentConfig,
    g: TextGraph,
    data_key: String,
    cache_dir: PathBuf,
    timings: Timings,
}

struct Structure {
    refined: RefinedGraph,
    graph: TextGraph,
}

impl Context<'_> {
    fn cached<T, L, C, S>(&mut self, stage: &'static str, file: &str, load: L, compute: C, store: S) -> Result<T, PipelineError>
    where
        L: FnOnce(&Path) -> Option<T>,
        C: FnOnce(&mut Self) -> Result<T, PipelineError>,
        S: FnOnce(&T, &Path) -> Result<(), BoxError>,
    {
        let start = Instant::now();
        let path = self.cache_dir.join(file);
        if path.exists() {
            if let Some(v) = load(&path) {
                self.timings.record(stage, start.elapsed(), true);
                return Ok(v);
            }
        }
        let v = compute(self)?;
        fs::create_dir_all(&self.cache_dir).map_err(io_err(&self.cache_dir))?;
        store(&v, &path).map_err(stage_err(stage))?;
        self.timings.record(stage, start.elapsed(), false);
        Ok(v)
    }

    fn embeddings(&mut self) -> Result<(EmbeddingMatrix, String), PipelineError> {
        let key = content_hash(&("embed", &self.data_key, &self.cfg.embedding));
        let emb = self.cached(
            "embed",
            &format!("embed-{key}.json"),
            |p| serde_json::from_slice(&fs::read(p).ok()?).ok(),
            |ctx| {
                let provider = make_embedding_provider(&ctx.cfg.embedding)?;
                embed_nodes(&ctx.g, provider.as_ref()).map_err(stage_err("embed"))
            },
            |emb, p| Ok(fs::write(p, serde_json::to_vec(emb)?)?),
        )?;
        Ok((emb, key))
    }

    fn predictor(&mut self, emb: &EmbeddingMatrix, emb_key: &str, seed: u64) -> Result<(EdgePredictorModel, String), PipelineError> {
        let cfg = self.cfg;
        let mut pcfg = cfg.predictor.clone();
        pcfg.seed = pcfg.seed.wrapping_add(seed);
        let key = content_hash(&("predictor", emb_key, cfg.split_ratios, seed, cfg.pair_count, &pcfg));
        let model = self.cached(
            "predictor",
            &format!("predictor-{key}.json"),
            |p| EdgePredictorModel::load(p).ok(),
            |ctx| {
                let split = split_nodes(ctx.g.num_nodes(), cfg.split_ratios, seed).map_err(stage_err("predictor"))?;
                let pairs = sample_pairs(&split.train, cfg.pair_count, seed).map_err(stage_err("predictor"))?;
                let samples = label_pairs(&pairs, &ctx.g.labels()).map_err(stage_err("predictor"))?;
                let (model, _) = train_edge_predictor(emb, &samples, &pcfg).map_err(stage_err("predictor"))?;
                Ok(model)
            },
            |m, p| Ok(m.save(p)?),
        )?;
        Ok((model, key))
    }

    fn candidates(&mut self, model: &EdgePredictorModel, emb: &EmbeddingMatrix, model_key: &str) -> Result<(CandidateSet, String), PipelineError> {
        let k = self.cfg.k;
        let n = self.g.num_nodes();
        let key = content_hash(&("candidates", model_key, k));
        let cands = self.cached(
            "candidates",
            &format!("candidates-{key}.tsv"),
            |p| CandidateSet::from_tsv(&fs::read_to_string(p).ok()?, n, k).ok(),
            |_| top_k_candidates(model, emb, k, None).map_err(stage_err("candidates")),
            |c, p| Ok(fs::write(p, c.to_tsv())?),
        )?;
        Ok((cands, key))
    }

    fn refined(&mut self, cands: &CandidateSet, cands_key: &str) -> Result<RefinedGraph, PipelineError> {
        let cfg = self.cfg;
        let key = content_hash(&("refine", cands_key, cfg.mode, &cfg.backend, cfg.template));
        let verdict_key = content_hash(&("verdicts", &self.data_key, &cfg.backend, cfg.template));
        self.cached(
            "refine",
            &format!("refine-{key}"),
            |p| refine::load_refined(p).ok(),
            |ctx| {
                let pool = assemble_candidate_pool(&ctx.g, cands, cfg.mode).map_err(stage_err("refine"))?;
                let backend = make_backend(&cfg.backend, &ctx.g)?;
                let path = ctx.cache_dir.join(format!("verdicts-{verdict_key}.jsonl"));
                let mut cache = VerdictCache::open(&path).map_err(stage_err("refine"))?;
                let opts = QueryOptions {
                    parallelism: cfg.parallelism,
                    retries: cfg.retries,
                    template: cfg.template,
                };
                refine::refine(&ctx.g, &pool, backend.as_ref(), opts, Some(&mut cache)).map_err(stage_err("refine"))
            },
            |r, p| Ok(refine::save_refined(r, p)?),
        )
    }

    fn structure(&mut self, emb: &EmbeddingMatrix, emb_key: &str, seed: u64) -> Result<Structure, PipelineError> {
        let (model, model_key) = self.predictor(emb, emb_key, seed)?;
        let (cands, cands_key) = self.candidates(&model, emb, &model_key)?;
        let refined = self.refined(&cands, &cands_key)?;
        let graph = refined.apply(&self.g).map_err(stage_err("refine"))?;
        Ok(Structure { refined, graph })
    }
}

fn feature_matrix(cfg: &ExperimentConfig, g: &TextGraph, emb: Option<&EmbeddingMatrix>) -> Result<Array2<f64>, PipelineError> {
    let dataset_features = g.feature_matrix();
    match (cfg.features, dataset_features) {
        (FeatureSource::Dataset, None) => Err(PipelineError::Config("features = \"dataset\" but the dataset has no node features".into())),
        (FeatureSource::Dataset | FeatureSource::Auto, Some(x)) => Ok(x),
        _ => Ok(emb.expect("embeddings are computed when features need them").vectors().clone()),
    }
}

fn repeat_gcn_config(cfg: &ExperimentConfig, repeat: usize) -> GcnConfig {
    let mut g = cfg.gcn.clone();
    g.seed = g.seed.wrapping_add(cfg.seed).wrapping_add(repeat as u64);
    g
}

fn train_accuracy(
    g: &TextGraph,
    structure: Option<&TextGraph>,
    x: &Array2<f64>,
    split: &crate::graph::NodeSplit,
    gcfg: &GcnConfig,
) -> Result<f64, PipelineError> {
    let adj = structure.map(normalize_adjacency);
    let (_, report) =
        train_with_classes(adj.as_ref(), x, &g.labels(), g.num_classes(), split, gcfg).map_err(stage_err("classify"))?;
    Ok(report.test_accuracy)
}

fn llm_direct_accuracy(cfg: &ExperimentConfig, g: &TextGraph, test: &[usize]) -> Result<f64, PipelineError> {
    if test.is_empty() {
        return Ok(0.0);
    }
    let backend = make_backend(&cfg.backend, g)?;
    let answers = bounded_map(test, cfg.parallelism, |_, &i| classify_node_direct(g, i, backend.as_ref(), cfg.retries))
        .into_result()
        .map_err(|(_, e)| stage_err("classify")(e))?;
    let correct = test.iter().zip(&answers).filter(|(&i, a)| **a == Some(g.label(i))).count();
    Ok(correct as f64 / test.len() as f64)
}

/// Runs the experiment, writes its artifacts under `out_dir` and returns the
/// result together with stage timings.
pub fn run_all_timed(cfg: &ExperimentConfig) -> Result<(ExperimentResult, Timings), PipelineError> {
    cfg.validate()?;
    let start = Instant::now();
    let t = Instant::now();
    let g = load_data(cfg)?;
    let mut ctx = Context {
        cfg,
        data_key: graph_hash(&g),
        g,
        cache_dir: cfg.cache_dir(),
        timings: Timings::default(),
    };
    ctx.timings.record("data", t.elapsed(), false);

    let needs_embeddings = cfg.classifier == Classifier::Gcn
        || cfg.features == FeatureSource::Embedding
        || (cfg.features == FeatureSource::Auto && ctx.g.feature_matrix().is_none() && cfg.classifier != Classifier::LlmDirect);
    let emb = if needs_embeddings { Some(ctx.embeddings()?) } else { None };
    let x = match cfg.classifier {
        Classifier::LlmDirect => None,
        _ => Some(feature_matrix(cfg, &ctx.g, emb.as_ref().map(|(e, _)| e))?),
    };

    let shared = match (&emb, cfg.classifier, cfg.refine_per_repeat) {
        (Some((e, key)), Classifier::Gcn, false) => Some(ctx.structure(e, key, cfg.seed)?),
        _ => None,
    };

    let mut accuracies = Vec::with_capacity(cfg.repeats);
    let mut unrefined = Vec::new();
    let mut first_report = shared.as_ref().map(|s| refinement_report(&s.refined, &ctx.g));
    for i in 0..cfg.repeats {
        let seed = cfg.seed.wrapping_add(i as u64);
        let split = split_nodes(ctx.g.num_nodes(), cfg.split_ratios, seed).map_err(stage_err("split"))?;
        let t = Instant::now();
        match cfg.classifier {
            Classifier::Gcn => {
                let own;
                let structure = match &shared {
                    Some(s) => s,
                    None => {
                        let (e, key) = emb.as_ref().expect("gcn runs embed");
                        own = ctx.structure(e, key, seed)?;
                        first_report.get_or_insert_with(|| refinement_report(&own.refined, &ctx.g));
                        &own
                    }
                };
                let x = x.as_ref().expect("gcn has features");
                let gcfg = repeat_gcn_config(cfg, i);
                accuracies.push(train_accuracy(&ctx.g, Some(&structure.graph), x, &split, &gcfg)?);
                if cfg.compare_unrefined {
                    unrefined.push(train_accuracy(&ctx.g, Some(&ctx.g), x, &split, &gcfg)?);
                }
            }
            Classifier::Mlp => {
                let x = x.as_ref().expect("mlp has features");
                accuracies.push(train_accuracy(&ctx.g, None, x, &split, &repeat_gcn_config(cfg, i))?);
            }
            Classifier::LlmDirect => accuracies.push(llm_direct_accuracy(cfg, &ctx.g, &split.test)?),
        }
        ctx.timings.record("classify", t.elapsed(), false);
    }

    let mut hashed = cfg.clone();
    hashed.out_dir = PathBuf::new();
    hashed.cache_dir = None;
    let result = ExperimentResult {
        config_hash: content_hash(&hashed),
        classifier: cfg.classifier,
        mode: cfg.mode,
        k: cfg.k,
        noise_rate: cfg.noise_rate,
        summary: Summary::from_accuracies(accuracies)?,
        unrefined: if unrefined.is_empty() {
            None
        } else {
            Some(Summary::from_accuracies(unrefined)?)
        },
        refinement: first_report,
    };
    ctx.timings.total_seconds = start.elapsed().as_secs_f64();

    let out = &cfg.out_dir;
    fs::create_dir_all(out).map_err(io_err(out))?;
    let write = |name: &str, bytes: Vec<u8>| {
        let path = out.join(name);
        fs::write(&path, bytes).map_err(io_err(&path))
    };
    write(RESULT_FILE, result_json(&result).into_bytes())?;
    write(TIMINGS_FILE, serde_json::to_vec_pretty(&ctx.timings).expect("timings serialize"))?;
    write(RESOLVED_CONFIG_FILE, cfg.to_toml().into_bytes())?;
    if let Some(s) = &shared {
        refine::save_refined(&s.refined, &out.join("refined")).map_err(stage_err("refine"))?;
    }
    Ok((result, ctx.timings))
}

pub fn run_all(cfg: &ExperimentConfig) -> Result<ExperimentResult, PipelineError> {
    run_all_timed(cfg).map(|(r, _)| r)
}

pub fn result_json(r: &ExperimentResult) -> String {
    serde_json::to_string_pretty(r).expect("results serialize") + "\n"
}

pub fn parse_result(text: &str) -> Result<ExperimentResult, PipelineError> {
    serde_json::from_str(text).map_err(|e| PipelineError::Config(format!("bad result JSON: {e}")))
}

fn sub_config(cfg: &ExperimentConfig, dir: String) -> ExperimentConfig {
    let mut c = cfg.clone();
    c.cache_dir = Some(cfg.cache_dir());
    c.out_dir = cfg.out_dir.join(dir);
    c
}

/// One `run_all` per `k`; writes `sweep_k.csv` into `out_dir`.
pub fn sweep_k(cfg: &ExperimentConfig, ks: &[usize]) -> Result<Vec<SweepRow>, PipelineError> {
    let mut rows = Vec::with_capacity(ks.len());
    for &k in ks {
        let mut c = sub_config(cfg, format!("k-{k}"));
        c.k = k;
        let r = run_all(&c)?;
        rows.push(SweepRow::new(k as f64, &r));
    }
    write_sweep_csv(&cfg.out_dir.join("sweep_k.csv"), "k", &rows)?;
    Ok(rows)
}

/// Refined and unrefined runs per noise rate; writes `sweep_noise.csv`.
pub fn sweep_noise(cfg: &ExperimentConfig, rates: &[f64]) -> Result<Vec<SweepRow>, PipelineError> {
    let mut rows = Vec::with_capacity(rates.len());
    for &rate in rates {
        let mut c = sub_config(cfg, format!("noise-{rate}"));
        c.noise_rate = rate;
        c.compare_unrefined = true;
        let r = run_all(&c)?;
        rows.push(SweepRow::new(rate, &r));
    }
    write_sweep_csv(&cfg.out_dir.join("sweep_noise.csv"), "rate", &rows)?;
    Ok(rows)
}
