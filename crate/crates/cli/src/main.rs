//! `mmrag`: build indexes, run two-stage retrieval, refine visual tokens,
//! build noise-injected training data and score retrieval runs.
//!
//! Exit codes: 0 success, 1 completed with warnings, 2 usage or validation
//! error, 3 I/O, corruption or (with `--strict`) backend failure.

mod config;

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use anyhow::anyhow;
use clap::{Args, Parser, Subcommand};

use mmrag_core::embedding::{Embedding, EmbeddingFile};
use mmrag_core::eval::{self, EvalOptions};
use mmrag_core::pipeline::{
    KnowledgeBase, LocalLexicalBackend, RemoteConfig, RemoteSearchBackend, RetrievalConfig,
    Retriever, TextBackend,
};
use mmrag_core::refine::{self, DEFAULT_M};
use mmrag_core::training::{self, NoisePlacement};
use mmrag_core::{EntityStore, Error, HnswIndex, HnswParams};

use config::{BackendKind, CliConfig};

#[derive(Parser)]
#[command(
    name = "mmrag",
    version,
    about = "Two-stage multimodal retrieval toolkit"
)]
struct Cli {
    /// TOML configuration file; flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build or query an image index.
    #[command(subcommand)]
    Index(IndexCommand),
    /// Run both retrieval stages for one query and print the snippets.
    Retrieve(RetrieveArgs),
    /// Select the query-relevant visual tokens.
    Refine(RefineArgs),
    /// Build a noise-injected training dataset.
    BuildTraining(BuildTrainingArgs),
    /// Score eval records.
    Eval(EvalArgs),
}

#[derive(Subcommand)]
enum IndexCommand {
    Build(IndexBuildArgs),
    Query(IndexQueryArgs),
}

#[derive(Args)]
struct IndexBuildArgs {
    /// RVE1 file; row i belongs to the i-th store record.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long)]
    store: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    max_degree: Option<usize>,
    #[arg(long)]
    ef_construction: Option<usize>,
    #[arg(long)]
    ef_search: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct IndexQueryArgs {
    #[arg(long)]
    index: Option<PathBuf>,
    /// Adds entity names to the output.
    #[arg(long)]
    store: Option<PathBuf>,
    #[arg(long)]
    query_embedding: PathBuf,
    /// Row of the query file to use.
    #[arg(long, default_value_t = 0)]
    row: usize,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    ef_search: Option<usize>,
}

#[derive(Args)]
struct BackendArgs {
    #[arg(long, value_enum)]
    backend: Option<BackendKind>,
    /// Passage corpus for the local backend (JSON lines with `text`).
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Search endpoint for the remote backend.
    #[arg(long)]
    endpoint: Option<String>,
}

#[derive(Args)]
struct RetrievalArgs {
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    l: Option<usize>,
    #[arg(long)]
    truncation_limit: Option<usize>,
}

#[derive(Args)]
struct KbArgs {
    #[arg(long)]
    index: Option<PathBuf>,
    #[arg(long)]
    store: Option<PathBuf>,
}

#[derive(Args)]
struct RetrieveArgs {
    #[command(flatten)]
    kb: KbArgs,
    #[command(flatten)]
    backend: BackendArgs,
    #[command(flatten)]
    retrieval: RetrievalArgs,
    /// RVE1 file holding the query image embedding.
    #[arg(long)]
    query_embedding: PathBuf,
    #[arg(long, default_value_t = 0)]
    row: usize,
    #[arg(long)]
    text: String,
    /// Write snippets here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Fail instead of degrading when the text backend errors.
    #[arg(long)]
    strict: bool,
}

#[derive(Args)]
struct RefineArgs {
    /// RVE1 file of query-image patch embeddings.
    #[arg(long)]
    patches: PathBuf,
    /// RVE1 file whose first row is the text embedding.
    #[arg(long)]
    text_embedding: PathBuf,
    #[arg(long, default_value_t = DEFAULT_M)]
    m: usize,
    /// Patch embeddings of a retrieved image to refine against the selection.
    #[arg(long)]
    retrieved: Option<PathBuf>,
    /// Patch grid width; emits a PBM mask of the selected query patches.
    #[arg(long)]
    grid_width: Option<usize>,
    /// Write the mask here instead of stdout.
    #[arg(long, requires = "grid_width")]
    mask: Option<PathBuf>,
}

#[derive(Args)]
struct BuildTrainingArgs {
    /// Annotated queries, one JSON object per line.
    #[arg(long)]
    queries: PathBuf,
    #[command(flatten)]
    kb: KbArgs,
    #[command(flatten)]
    backend: BackendArgs,
    #[command(flatten)]
    retrieval: RetrievalArgs,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    noise_placement: Option<Placement>,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum Placement {
    Last,
    Shuffled,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    records: PathBuf,
    /// Relative tolerance for numeric answers.
    #[arg(long)]
    tolerance: Option<f64>,
    #[arg(long)]
    bucket_width: Option<usize>,
    /// Write the full report as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
    /// Write the mention-position histogram as CSV.
    #[arg(long)]
    histogram_csv: Option<PathBuf>,
    /// Treat malformed records as an error.
    #[arg(long)]
    strict: bool,
}

enum Status {
    Clean,
    Warnings,
}

struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl Failure {
    fn usage(error: impl Into<anyhow::Error>) -> Self {
        Self {
            code: 2,
            error: error.into(),
        }
    }

    fn io(error: impl Into<anyhow::Error>) -> Self {
        Self {
            code: 3,
            error: error.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Io(_) | Error::CorruptFile(_) | Error::Format(_) | Error::Backend(_) => 3,
            _ => 2,
        };
        Self {
            code,
            error: e.into(),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Self::io(e)
    }
}

type CmdResult = Result<Status, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match &cli.config {
        Some(path) => match CliConfig::load(path) {
            Ok(cfg) => cfg,
            Err(e) => {
                eprintln!("error: {e:#}");
                return ExitCode::from(2);
            }
        },
        None => CliConfig::default(),
    };
    let result = match cli.command {
        Command::Index(IndexCommand::Build(a)) => index_build(&cfg, a),
        Command::Index(IndexCommand::Query(a)) => index_query(&cfg, a),
        Command::Retrieve(a) => retrieve(&cfg, a),
        Command::Refine(a) => refine_cmd(a),
        Command::BuildTraining(a) => build_training(&cfg, a),
        Command::Eval(a) => eval_cmd(&cfg, a),
    };
    match result {
        Ok(Status::Clean) => ExitCode::SUCCESS,
        Ok(Status::Warnings) => ExitCode::from(1),
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn resolve(
    flag: Option<PathBuf>,
    from_config: &Option<PathBuf>,
    name: &str,
) -> Result<PathBuf, Failure> {
    flag.or_else(|| from_config.clone())
        .ok_or_else(|| Failure::usage(anyhow!("missing --{name} (or paths.{name} in the config)")))
}

fn require_file(path: &Path) -> Result<(), Failure> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Failure::usage(anyhow!(
            "input file {} does not exist",
            path.display()
        )))
    }
}

fn context(what: String) -> impl FnOnce(Error) -> Failure {
    move |e| {
        let mut f = Failure::from(e);
        f.error = f.error.context(what);
        f
    }
}

fn load_embeddings(path: &Path) -> Result<EmbeddingFile, Failure> {
    require_file(path)?;
    EmbeddingFile::load(path).map_err(context(format!("reading {}", path.display())))
}

fn embedding_row(path: &Path, row: usize) -> Result<Embedding, Failure> {
    let file = load_embeddings(path)?;
    let count = file.vectors.len();
    file.vectors.into_iter().nth(row).ok_or_else(|| {
        Failure::usage(anyhow!(
            "{} has {count} rows, row {row} requested",
            path.display()
        ))
    })
}

fn load_store(path: &Path) -> Result<EntityStore, Failure> {
    require_file(path)?;
    EntityStore::load(path).map_err(context(format!("reading store {}", path.display())))
}

fn load_index(path: &Path) -> Result<HnswIndex, Failure> {
    require_file(path)?;
    HnswIndex::load(path).map_err(context(format!("reading index {}", path.display())))
}

fn hnsw_params(cfg: &CliConfig, a: &IndexBuildArgs) -> HnswParams {
    let max_degree = a.max_degree.or(cfg.hnsw.max_degree).unwrap_or(16);
    let mut p = HnswParams::with_max_degree(max_degree);
    if let Some(v) = a.ef_construction.or(cfg.hnsw.ef_construction) {
        p.ef_construction = v;
    }
    if let Some(v) = a.ef_search.or(cfg.hnsw.ef_search) {
        p.ef_search = v;
    }
    if let Some(v) = a.seed.or(cfg.hnsw.seed) {
        p.rng_seed = v;
    }
    p
}

fn index_build(cfg: &CliConfig, a: IndexBuildArgs) -> CmdResult {
    let emb_path = resolve(a.embeddings.clone(), &cfg.paths.embeddings, "embeddings")?;
    let store_path = resolve(a.store.clone(), &cfg.paths.store, "store")?;
    let out = resolve(a.out.clone(), &cfg.paths.index, "index")?;
    let params = hnsw_params(cfg, &a);
    let embeddings = load_embeddings(&emb_path)?;
    let store = load_store(&store_path)?;
    if embeddings.vectors.len() != store.len() {
        return Err(Failure::usage(anyhow!(
            "embedding file has {} vectors but store has {} records",
            embeddings.vectors.len(),
            store.len()
        )));
    }
    let started = Instant::now();
    let items = store.records().iter().map(|r| r.id).zip(embeddings.vectors);
    let index = HnswIndex::build(embeddings.dim, params, items)?;
    let elapsed = started.elapsed();
    index
        .save(&out)
        .map_err(context(format!("writing {}", out.display())))?;
    println!(
        "indexed {} vectors (dim {}) in {:.3}s -> {}",
        index.len(),
        index.dim(),
        elapsed.as_secs_f64(),
        out.display()
    );
    Ok(Status::Clean)
}

fn index_query(cfg: &CliConfig, a: IndexQueryArgs) -> CmdResult {
    let index = load_index(&resolve(a.index, &cfg.paths.index, "index")?)?;
    let store = match a.store.or_else(|| cfg.paths.store.clone()) {
        Some(p) => Some(load_store(&p)?),
        None => None,
    };
    let query = embedding_row(&a.query_embedding, a.row)?;
    let k = a.k.or(cfg.retrieval.k).unwrap_or(10);
    let ef = a
        .ef_search
        .or(cfg.hnsw.ef_search)
        .unwrap_or(index.params().ef_search);
    let hits = index.search_with_ef(&query, k, ef)?;
    let mut out = io::stdout().lock();
    for (rank, hit) in hits.iter().enumerate() {
        let name = store
            .as_ref()
            .and_then(|s| s.get(hit.id).ok())
            .map_or("", |r| r.entity_name.as_str());
        writeln!(out, "{}\t{}\t{:.6}\t{}", rank + 1, hit.id, hit.score, name)?;
    }
    Ok(Status::Clean)
}

fn retrieval_config(cfg: &CliConfig, a: &RetrievalArgs) -> Result<RetrievalConfig, Failure> {
    let defaults = RetrievalConfig::default();
    let rc = RetrievalConfig {
        k: a.k.or(cfg.retrieval.k).unwrap_or(defaults.k),
        l: a.l.or(cfg.retrieval.l).unwrap_or(defaults.l),
        truncation_limit: a
            .truncation_limit
            .or(cfg.retrieval.truncation_limit)
            .unwrap_or(defaults.truncation_limit),
        max_in_flight: cfg
            .retrieval
            .max_in_flight
            .unwrap_or(defaults.max_in_flight),
    };
    rc.validate()?;
    Ok(rc)
}

fn backend(cfg: &CliConfig, a: &BackendArgs) -> Result<Box<dyn TextBackend>, Failure> {
    let kind = a.backend.or(cfg.backend.kind).unwrap_or_default();
    match kind {
        BackendKind::Local => {
            let corpus = resolve(a.corpus.clone(), &cfg.paths.corpus, "corpus")?;
            require_file(&corpus)?;
            let backend = LocalLexicalBackend::load(&corpus)
                .map_err(context(format!("reading corpus {}", corpus.display())))?;
            Ok(Box::new(backend))
        }
        BackendKind::Remote => {
            let endpoint = a
                .endpoint
                .clone()
                .or_else(|| cfg.backend.endpoint.clone())
                .ok_or_else(|| Failure::usage(anyhow!("remote backend needs --endpoint")))?;
            let mut rc = RemoteConfig::new(endpoint).with_env_key();
            if let Some(s) = cfg.backend.timeout_secs {
                rc.timeout = Duration::from_secs(s);
            }
            if let Some(r) = cfg.backend.max_retries {
                rc.max_retries = r;
            }
            if let Some(ms) = cfg.backend.backoff_ms {
                rc.backoff_base = Duration::from_millis(ms);
            }
            Ok(Box::new(RemoteSearchBackend::new(rc)?))
        }
    }
}

fn knowledge_base(cfg: &CliConfig, a: &KbArgs) -> Result<KnowledgeBase, Failure> {
    let index = load_index(&resolve(a.index.clone(), &cfg.paths.index, "index")?)?;
    let store = load_store(&resolve(a.store.clone(), &cfg.paths.store, "store")?)?;
    Ok(KnowledgeBase::bind(index, store)?)
}

fn output(path: &Option<PathBuf>) -> Result<Box<dyn Write>, Failure> {
    Ok(match path {
        Some(p) => {
            Box::new(BufWriter::new(File::create(p).map_err(|e| {
                Failure::io(anyhow!("creating {}: {e}", p.display()))
            })?))
        }
        None => Box::new(BufWriter::new(io::stdout())),
    })
}

fn retrieve(cfg: &CliConfig, a: RetrieveArgs) -> CmdResult {
    let rc = retrieval_config(cfg, &a.retrieval)?;
    let kb = knowledge_base(cfg, &a.kb)?;
    let backend = backend(cfg, &a.backend)?;
    let query = embedding_row(&a.query_embedding, a.row)?;
    let retriever = Retriever::new(&kb, backend, rc)?;
    let result = retriever.retrieve(&query, &a.text)?;
    if a.strict && result.is_degraded() {
        let first = &result.failures[0];
        return Err(Failure::io(anyhow!(
            "stage-2 retrieval failed for entity {} (rank {}): {}",
            first.entity_id,
            first.rank,
            first.message
        )));
    }
    let mut out = output(&a.out)?;
    result.write_jsonl(&mut out)?;
    out.flush()?;
    for f in &result.failures {
        eprintln!(
            "warning: no passages for entity {} (rank {}): {}",
            f.entity_id, f.rank, f.message
        );
    }
    Ok(if result.is_degraded() {
        Status::Warnings
    } else {
        Status::Clean
    })
}

fn refine_cmd(a: RefineArgs) -> CmdResult {
    let patches = load_embeddings(&a.patches)?;
    let text = embedding_row(&a.text_embedding, 0)?;
    let selection = refine::refine_query_tokens(&patches.vectors, &text, a.m)?;
    let mut out = io::stdout().lock();
    writeln!(out, "{}", join(&selection.indices))?;
    if let Some(path) = &a.retrieved {
        let retrieved = load_embeddings(path)?;
        let sel = refine::refine_retrieved_tokens(&retrieved.vectors, &selection, a.m)?;
        writeln!(out, "{}", join(&sel.indices))?;
    }
    if let Some(width) = a.grid_width {
        let pbm = refine::selection_mask_pbm(&selection.indices, patches.vectors.len(), width)?;
        match &a.mask {
            Some(path) => std::fs::write(path, pbm)
                .map_err(|e| Failure::io(anyhow!("writing {}: {e}", path.display())))?,
            None => write!(out, "{pbm}")?,
        }
    }
    Ok(Status::Clean)
}

fn join(indices: &[usize]) -> String {
    indices
        .iter()
        .map(usize::to_string)
        .collect::<Vec<_>>()
        .join(" ")
}

fn build_training(cfg: &CliConfig, a: BuildTrainingArgs) -> CmdResult {
    let rc = retrieval_config(cfg, &a.retrieval)?;
    let kb = knowledge_base(cfg, &a.kb)?;
    let backend = backend(cfg, &a.backend)?;
    require_file(&a.queries)?;
    let queries = training::read_annotated_queries(BufReader::new(File::open(&a.queries)?))
        .map_err(context(format!("reading {}", a.queries.display())))?;
    let placement = match a.noise_placement {
        Some(Placement::Last) => NoisePlacement::Last,
        Some(Placement::Shuffled) => NoisePlacement::Shuffled,
        None => cfg.training.noise_placement.unwrap_or_default(),
    };
    let seed = a.seed.or(cfg.training.seed).unwrap_or(0);
    let retriever = Retriever::new(&kb, backend, rc)?;
    let file = File::create(&a.out)
        .map_err(|e| Failure::io(anyhow!("creating {}: {e}", a.out.display())))?;
    let summary =
        training::build_dataset(&retriever, &queries, placement, seed, BufWriter::new(file))?;
    for s in &summary.skipped_queries {
        eprintln!(
            "warning: skipped query at line position {}: {}",
            s.position + 1,
            s.reason
        );
    }
    println!(
        "{}",
        serde_json::to_string_pretty(&summary).map_err(Failure::io)?
    );
    Ok(if summary.skipped > 0 || summary.degraded > 0 {
        Status::Warnings
    } else {
        Status::Clean
    })
}

fn eval_cmd(cfg: &CliConfig, a: EvalArgs) -> CmdResult {
    require_file(&a.records)?;
    let (records, bad) = eval::read_eval_records(BufReader::new(File::open(&a.records)?))?;
    for b in &bad {
        eprintln!("warning: skipping line {}: {}", b.line, b.message);
    }
    if a.strict && !bad.is_empty() {
        return Err(Failure::usage(anyhow!("{} malformed record(s)", bad.len())));
    }
    let options = EvalOptions {
        relaxed_tolerance: a
            .tolerance
            .or(cfg.eval.tolerance)
            .unwrap_or(eval::DEFAULT_RELAXED_TOLERANCE),
        bucket_width: a
            .bucket_width
            .or(cfg.eval.bucket_width)
            .unwrap_or(eval::DEFAULT_BUCKET_WIDTH),
    };
    if !(options.relaxed_tolerance.is_finite() && options.relaxed_tolerance >= 0.0)
        || options.bucket_width == 0
    {
        return Err(Failure::usage(anyhow!(
            "tolerance must be >= 0 and bucket width >= 1"
        )));
    }
    let report = eval::evaluate(&records, &options);
    if !report.evaluated_any() {
        return Err(Failure::usage(anyhow!("no evaluable records")));
    }
    println!("{report}");
    if let Some(path) = &a.json {
        let json = serde_json::to_string_pretty(&report).map_err(Failure::io)?;
        std::fs::write(path, json)
            .map_err(|e| Failure::io(anyhow!("writing {}: {e}", path.display())))?;
    }
    if let Some(path) = &a.histogram_csv {
        let mut w = BufWriter::new(File::create(path)?);
        report.position_histogram.write_csv(&mut w)?;
        w.flush()?;
    }
    Ok(if bad.is_empty() {
        Status::Clean
    } else {
        Status::Warnings
    })
}
