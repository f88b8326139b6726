use std::collections::BTreeSet;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use graphedit::dataset::{self, DatasetManifest};
use graphedit::embed::{embed_nodes, EmbeddingMatrix};
use graphedit::gcn::train_with_classes;
use graphedit::graph::{normalize_adjacency, split_nodes, to_dot, NodeSplit, TextGraph};
use graphedit::llm::{export_instruction_dataset, PromptTemplate, QueryOptions};
use graphedit::pipeline::{
    self, load_data, make_backend, make_embedding_provider, render_table, BackendConfig, DataSource, ExperimentConfig,
    ExperimentResult,
};
use graphedit::predictor::{label_pairs, sample_pairs, top_k_candidates, train_edge_predictor, CandidateSet, EdgePredictorModel, PairSample};
use graphedit::refine::{self, assemble_candidate_pool, refinement_report, RefinementMode, VerdictCache};

type CliResult<T = ()> = Result<T, Box<dyn std::error::Error>>;

#[derive(Parser)]
#[command(name = "graphedit", version, about = "Graph structure refinement with LLM edge screening")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Experiment configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    backend: Option<BackendKind>,
    #[arg(long, global = true)]
    mode: Option<RefinementMode>,
    #[arg(long, global = true)]
    k: Option<usize>,
    #[arg(long, global = true)]
    repeats: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendKind {
    Oracle,
    Http,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the configured synthetic graph and save it.
    Synth,
    /// Load a dataset manifest, print its statistics and save it.
    Load { manifest: PathBuf },
    /// Write a train/valid/test split.
    Split(GraphArg),
    /// Sample labeled training pairs.
    SamplePairs {
        #[command(flatten)]
        graph: GraphArg,
        #[arg(long)]
        split: Option<PathBuf>,
        /// Number of pairs (defaults to the configured pair count).
        #[arg(long)]
        m: Option<usize>,
    },
    /// Write the instruction-tuning JSONL for sampled pairs.
    ExportInstructions {
        #[command(flatten)]
        graph: GraphArg,
        #[arg(long)]
        pairs: Option<PathBuf>,
        #[arg(long)]
        without_category: bool,
    },
    /// Embed node text.
    Embed(GraphArg),
    TrainEdgePredictor {
        #[arg(long)]
        embeddings: Option<PathBuf>,
        #[arg(long)]
        pairs: Option<PathBuf>,
    },
    /// Top-k candidate edges per node.
    Candidates {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        embeddings: Option<PathBuf>,
    },
    /// Screen edges and write the refined graph.
    Refine {
        #[command(flatten)]
        graph: GraphArg,
        #[arg(long)]
        candidates: Option<PathBuf>,
    },
    TrainGcn(ClassifierArgs),
    TrainMlp(ClassifierArgs),
    /// The whole pipeline with repeats.
    RunAll,
    SweepK {
        #[arg(long, value_delimiter = ',', default_values_t = [1, 2, 3, 4, 5])]
        values: Vec<usize>,
    },
    SweepNoise {
        #[arg(long, value_delimiter = ',', default_values_t = [0.05, 0.1, 0.15, 0.2, 0.25])]
        rates: Vec<f64>,
    },
    /// Print result files as a table.
    Report {
        #[arg(required = true)]
        results: Vec<PathBuf>,
        /// Print the parsed results as JSON instead.
        #[arg(long)]
        json: bool,
    },
    /// Graphviz rendering of a node subset.
    ToDot {
        #[command(flatten)]
        graph: GraphArg,
        #[arg(long, value_delimiter = ',', required = true)]
        nodes: Vec<usize>,
        #[arg(long)]
        refined: Option<PathBuf>,
    },
}

#[derive(Args)]
struct GraphArg {
    /// Saved graph directory; defaults to the configured data source.
    #[arg(long)]
    graph: Option<PathBuf>,
}

#[derive(Args)]
struct ClassifierArgs {
    #[command(flatten)]
    graph: GraphArg,
    /// Refined graph directory whose edges replace the original ones.
    #[arg(long)]
    refined: Option<PathBuf>,
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long)]
    split: Option<PathBuf>,
}

fn resolve_config(g: &Global) -> CliResult<ExperimentConfig> {
    let mut cfg = match &g.config {
        Some(path) => ExperimentConfig::from_file(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = g.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &g.out {
        cfg.out_dir = out.clone();
    }
    match g.backend {
        Some(BackendKind::Oracle) if !matches!(cfg.backend, BackendConfig::Oracle(_)) => cfg.backend = BackendConfig::default(),
        Some(BackendKind::Http) if !matches!(cfg.backend, BackendConfig::Http { .. }) => {
            cfg.backend = BackendConfig::Http {
                max_tokens: 32,
                timeout_secs: 60,
            }
        }
        _ => {}
    }
    if let Some(mode) = g.mode {
        cfg.mode = mode;
    }
    if let Some(k) = g.k {
        cfg.k = k;
    }
    if let Some(r) = g.repeats {
        cfg.repeats = r;
    }
    cfg.validate()?;
    Ok(cfg)
}

struct Paths<'a>(&'a Path);

impl Paths<'_> {
    fn file(&self, given: &Option<PathBuf>, default: &str) -> PathBuf {
        given.clone().unwrap_or_else(|| self.0.join(default))
    }
}

fn graph(arg: &GraphArg, cfg: &ExperimentConfig) -> CliResult<TextGraph> {
    match &arg.graph {
        Some(dir) => Ok(dataset::load_graph(dir)?),
        None => Ok(load_data(cfg)?),
    }
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> CliResult {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, serde_json::to_string_pretty(value)? + "\n").map_err(|e| format!("{}: {e}", path.display()).into())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?)
}

fn read_pairs(path: &Path) -> CliResult<Vec<PairSample>> {
    let file = fs::File::open(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line).map_err(|e| format!("{}:{}: {e}", path.display(), i + 1))?);
        }
    }
    Ok(out)
}

fn load_split(path: &Path, n: usize, cfg: &ExperimentConfig) -> CliResult<NodeSplit> {
    if path.exists() {
        read_json(path)
    } else {
        Ok(split_nodes(n, cfg.split_ratios, cfg.seed)?)
    }
}

fn run(cli: Cli) -> CliResult {
    let cfg = resolve_config(&cli.global)?;
    let out = cfg.out_dir.clone();
    let paths = Paths(&out);
    match cli.command {
        Command::Synth => {
            let DataSource::Synthetic(spec) = &cfg.data else {
                return Err("synth needs a synthetic data source in the config".into());
            };
            let g = dataset::generate_synthetic(spec)?;
            dataset::save_graph(&g, &out.join("graph"))?;
            println!("{}", serde_json::to_string_pretty(&g.stats())?);
        }
        Command::Load { manifest } => {
            let g = dataset::load_dataset(&DatasetManifest::from_file(&manifest)?)?;
            dataset::save_graph(&g, &out.join("graph"))?;
            println!("{}", serde_json::to_string_pretty(&g.stats())?);
        }
        Command::Split(arg) => {
            let g = graph(&arg, &cfg)?;
            let split = split_nodes(g.num_nodes(), cfg.split_ratios, cfg.seed)?;
            write_json(&out.join("split.json"), &split)?;
            let (a, b, c) = split.sizes();
            println!("train {a}, valid {b}, test {c}");
        }
        Command::SamplePairs { graph: arg, split, m } => {
            let g = graph(&arg, &cfg)?;
            let split = load_split(&paths.file(&split, "split.json"), g.num_nodes(), &cfg)?;
            let pairs = sample_pairs(&split.train, m.unwrap_or(cfg.pair_count), cfg.seed)?;
            let samples = label_pairs(&pairs, &g.labels())?;
            fs::create_dir_all(&out)?;
            let path = out.join("pairs.jsonl");
            let mut w = BufWriter::new(fs::File::create(&path)?);
            for s in &samples {
                writeln!(w, "{}", serde_json::to_string(s)?)?;
            }
            w.flush()?;
            let pos = samples.iter().filter(|s| s.y == 1).count();
            println!("{} pairs ({pos} positive) -> {}", samples.len(), path.display());
        }
        Command::ExportInstructions {
            graph: arg,
            pairs,
            without_category,
        } => {
            let g = graph(&arg, &cfg)?;
            let pairs = read_pairs(&paths.file(&pairs, "pairs.jsonl"))?;
            let template = if without_category {
                PromptTemplate::WithoutCategory
            } else {
                cfg.template
            };
            let path = out.join("instructions.jsonl");
            let n = export_instruction_dataset(&g, &pairs, &path, template)?;
            println!("{n} records -> {}", path.display());
        }
        Command::Embed(arg) => {
            let g = graph(&arg, &cfg)?;
            let provider = make_embedding_provider(&cfg.embedding)?;
            let emb = embed_nodes(&g, provider.as_ref())?;
            write_json(&out.join("embeddings.json"), &emb)?;
            println!("{} x {} ({})", emb.num_rows(), emb.dim(), emb.provider_id());
        }
        Command::TrainEdgePredictor { embeddings, pairs } => {
            let emb: EmbeddingMatrix = read_json(&paths.file(&embeddings, "embeddings.json"))?;
            let samples = read_pairs(&paths.file(&pairs, "pairs.jsonl"))?;
            let mut pcfg = cfg.predictor.clone();
            pcfg.seed = pcfg.seed.wrapping_add(cfg.seed);
            let (model, report) = train_edge_predictor(&emb, &samples, &pcfg)?;
            fs::create_dir_all(&out)?;
            model.save(&out.join("model.json"))?;
            write_json(&out.join("predictor_report.json"), &report)?;
            println!("final loss {:.4}, train accuracy {:.4}", report.final_loss, report.train_accuracy);
        }
        Command::Candidates { model, embeddings } => {
            let model = EdgePredictorModel::load(&paths.file(&model, "model.json"))?;
            let emb: EmbeddingMatrix = read_json(&paths.file(&embeddings, "embeddings.json"))?;
            let cands = top_k_candidates(&model, &emb, cfg.k, None)?;
            fs::create_dir_all(&out)?;
            fs::write(out.join("candidates.tsv"), cands.to_tsv())?;
            println!("{} candidate edges (k = {})", cands.edges().len(), cfg.k);
        }
        Command::Refine { graph: arg, candidates } => {
            let g = graph(&arg, &cfg)?;
            let text = fs::read_to_string(paths.file(&candidates, "candidates.tsv"))?;
            let cands = CandidateSet::from_tsv(&text, g.num_nodes(), cfg.k)?;
            let pool = assemble_candidate_pool(&g, &cands, cfg.mode)?;
            let backend = make_backend(&cfg.backend, &g)?;
            let mut cache = VerdictCache::open(&out.join("verdicts.jsonl"))?;
            let opts = QueryOptions {
                parallelism: cfg.parallelism,
                retries: cfg.retries,
                template: cfg.template,
            };
            let refined = refine::refine(&g, &pool, backend.as_ref(), opts, Some(&mut cache))?;
            refine::save_refined(&refined, &out.join("refined"))?;
            println!("{}", serde_json::to_string_pretty(&refinement_report(&refined, &g))?);
        }
        Command::TrainGcn(args) => train_classifier(&cfg, &paths, args, true)?,
        Command::TrainMlp(args) => train_classifier(&cfg, &paths, args, false)?,
        Command::RunAll => {
            let result = pipeline::run_all(&cfg)?;
            print!("{}", render_table(std::slice::from_ref(&result))?);
        }
        Command::SweepK { values } => {
            let rows = pipeline::sweep_k(&cfg, &values)?;
            print!("{}", pipeline::report::sweep_csv("k", &rows));
        }
        Command::SweepNoise { rates } => {
            let rows = pipeline::sweep_noise(&cfg, &rates)?;
            print!("{}", pipeline::report::sweep_csv("rate", &rows));
        }
        Command::Report { results, json } => {
            let parsed = results
                .iter()
                .map(|p| -> CliResult<ExperimentResult> {
                    let text = fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?;
                    Ok(pipeline::parse_result(&text)?)
                })
                .collect::<CliResult<Vec<_>>>()?;
            if json {
                println!("{}", serde_json::to_string_pretty(&parsed)?);
            } else {
                print!("{}", render_table(&parsed)?);
            }
        }
        Command::ToDot {
            graph: arg,
            nodes,
            refined,
        } => {
            let g = graph(&arg, &cfg)?;
            let refined = refined.map(|dir| refine::load_refined(&dir)).transpose()?;
            let subset: BTreeSet<usize> = nodes.into_iter().collect();
            print!("{}", to_dot(&g, &subset, refined.as_ref())?);
        }
    }
    Ok(())
}

fn train_classifier(cfg: &ExperimentConfig, paths: &Paths<'_>, args: ClassifierArgs, gcn: bool) -> CliResult {
    let mut g = graph(&args.graph, cfg)?;
    if let Some(dir) = &args.refined {
        g = refine::load_refined(dir)?.apply(&g)?;
    }
    let x = match (g.feature_matrix(), &args.embeddings) {
        (Some(x), None) => x,
        (_, given) => {
            let path = paths.file(given, "embeddings.json");
            let emb: EmbeddingMatrix = if path.exists() {
                read_json(&path)?
            } else {
                embed_nodes(&g, make_embedding_provider(&cfg.embedding)?.as_ref())?
            };
            emb.vectors().clone()
        }
    };
    let split = load_split(&paths.file(&args.split, "split.json"), g.num_nodes(), cfg)?;
    let adj = gcn.then(|| normalize_adjacency(&g));
    let mut gcfg = cfg.gcn.clone();
    gcfg.seed = gcfg.seed.wrapping_add(cfg.seed);
    let (_, report) = train_with_classes(adj.as_ref(), &x, &g.labels(), g.num_classes(), &split, &gcfg)?;
    let name = if gcn { "gcn" } else { "mlp" };
    write_json(&paths.0.join(format!("{name}_report.json")), &report)?;
    fs::write(paths.0.join(format!("{name}_loss.csv")), report.loss_curve_csv())?;
    println!(
        "best valid {:.4} at epoch {}, test {:.4}",
        report.best_valid_accuracy, report.best_epoch, report.test_accuracy
    );
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = e.source();
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::FAILURE
        }
    }
}
