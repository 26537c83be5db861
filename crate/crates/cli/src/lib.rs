//! `semrag` command-line surface: indexing, querying, statistics, cost
//! benchmarks and graph export over on-disk bundles.
//!
//! Exit codes: 0 ok, 1 user error, 2 internal error, 3 upstream service.

use std::fmt::Write as _;
use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use semrag_core::cost::{scaling_csv, scaling_curve};
use semrag_core::doc_model::{load_document, validate_corpus, SourceDocument};
use semrag_core::llm::{
    ClientConfig, Embedder, Generator, HttpClient, LlmError, OfflineSummarizer, Phase, RemoteEmbedder,
    RemoteGenerator, RemoteSummarizer, ServiceEnv, Summarizer, TemplateGenerator, TokenLedger,
};
use semrag_core::pipeline::{build_bundle, Bundle, IndexOptions, PipelineError, Services};
use semrag_core::query::{QueryError, Route};
use semrag_core::synth::{corpus, planted_graph};
use semrag_core::vector::HashEmbedder;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USER: i32 = 1;
pub const EXIT_INTERNAL: i32 = 2;
pub const EXIT_UPSTREAM: i32 = 3;

pub const DEFAULT_REMOTE_EMBED_DIM: usize = 3072;

#[derive(Debug, Parser)]
#[command(name = "semrag", version, about = "Structure-preserving graph index and routed retrieval")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compile a corpus of intermediate-JSON documents into a bundle.
    Index(IndexArgs),
    /// Answer a question against a bundle.
    Query(QueryArgs),
    /// Entropy and community statistics of a bundle.
    Stats {
        bundle: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Indexing-cost scaling curve on synthetic graphs, as CSV.
    BenchIndexing {
        /// Comma-separated node counts.
        #[arg(long, value_delimiter = ',', default_value = "1000,5000,10000")]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = 5)]
        k: usize,
        #[arg(long, default_value_t = 500)]
        ts: usize,
        #[arg(long, default_value_t = 500)]
        t_prompt: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Dump a bundle's graph as nodes.jsonl and edges.jsonl.
    ExportGraph { bundle: PathBuf, out: PathBuf },
    /// Write a synthetic fixture corpus with planted table and formula answers.
    GenCorpus {
        out: PathBuf,
        #[arg(long, default_value_t = 50)]
        docs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Debug, Args)]
pub struct IndexArgs {
    pub corpus_dir: PathBuf,
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    #[arg(long, default_value_t = 500)]
    pub ts: usize,
    #[arg(long, default_value_t = 3)]
    pub khop: u32,
    #[arg(long)]
    pub offline: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, overrides_with = "no_align")]
    pub align: bool,
    #[arg(long = "no-align", overrides_with = "align")]
    pub no_align: bool,
    #[command(flatten)]
    pub models: ModelArgs,
    /// Write the token ledger as CSV.
    #[arg(long)]
    pub ledger_csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct QueryArgs {
    pub bundle: PathBuf,
    pub question: String,
    #[arg(long, value_parser = parse_route)]
    pub route: Option<Route>,
    #[arg(long)]
    pub json: bool,
    #[arg(long)]
    pub offline: bool,
    #[command(flatten)]
    pub models: ModelArgs,
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    #[arg(long, default_value = "text-embedding-3-large")]
    pub embed_model: String,
    #[arg(long, default_value_t = DEFAULT_REMOTE_EMBED_DIM)]
    pub embed_dim: usize,
    #[arg(long, default_value = "gpt-4o-mini")]
    pub llm_model: String,
}

fn parse_route(s: &str) -> Result<Route, String> {
    s.parse::<Route>().map_err(|e| e.to_string())
}

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn user(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_USER,
            message: message.into(),
        }
    }

    fn internal(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_INTERNAL,
            message: message.into(),
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        let code = match &e {
            PipelineError::NoDocuments | PipelineError::Bundle(_) | PipelineError::Graph(_) => EXIT_USER,
            PipelineError::Llm(_) | PipelineError::Query(QueryError::Generator(_)) => EXIT_UPSTREAM,
            PipelineError::Query(QueryError::NoMacroNodes) => EXIT_USER,
            _ => EXIT_INTERNAL,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::internal(format!("io: {e}"))
    }
}

pub type CliResult = Result<(), CliError>;

/// Run one command, writing normal output to `out`.
pub fn run(cli: Cli, out: &mut dyn std::io::Write) -> CliResult {
    match cli.command {
        Command::Index(a) => cmd_index(&a, out),
        Command::Query(a) => cmd_query(&a, out),
        Command::Stats { bundle, json } => cmd_stats(&bundle, json, out),
        Command::BenchIndexing {
            sizes,
            k,
            ts,
            t_prompt,
            seed,
            out: path,
        } => cmd_bench_indexing(&sizes, k, ts, t_prompt, seed, path.as_deref(), out),
        Command::ExportGraph { bundle, out: dir } => cmd_export_graph(&bundle, &dir, out),
        Command::GenCorpus { out: dir, docs, seed } => cmd_gen_corpus(&dir, docs, seed, out),
    }
}

/// Parse argv and run; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USER } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    match run(cli, &mut lock) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

// ---------------------------------------------------------------------------
// index

pub fn load_corpus(dir: &Path) -> Result<Vec<SourceDocument>, CliError> {
    let entries = fs::read_dir(dir).map_err(|e| CliError::user(format!("{}: {e}", dir.display())))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(CliError::user(PipelineError::NoDocuments.to_string()));
    }
    let mut docs = Vec::with_capacity(paths.len());
    let mut failures = String::new();
    for p in &paths {
        match fs::read(p).map_err(|e| e.to_string()).and_then(|b| load_document(&b).map_err(|e| e.to_string())) {
            Ok(d) => docs.push(d),
            Err(e) => {
                let _ = writeln!(failures, "  {}: {e}", p.display());
            }
        }
    }
    if !failures.is_empty() {
        return Err(CliError::user(format!("schema errors in corpus:\n{}", failures.trim_end())));
    }
    let report = validate_corpus(&docs);
    if !report.is_empty() {
        let mut msg = String::from("corpus validation failed:");
        for id in &report.duplicate_ids {
            let _ = write!(msg, "\n  duplicate document id {id}");
        }
        for m in &report.dangling_markers {
            let _ = write!(msg, "\n  {} {}: footnote marker {} has no footnote", m.doc_id, m.block_id, m.marker);
        }
        for (d, b) in &report.empty_clauses {
            let _ = write!(msg, "\n  {d} {b}: empty clause id");
        }
        return Err(CliError::user(msg));
    }
    Ok(docs)
}

/// Holds `<out>.lock` for the lifetime of an index run.
struct OutputLock {
    path: PathBuf,
}

impl OutputLock {
    fn acquire(out: &Path) -> Result<Self, CliError> {
        let path = sibling(out, "lock");
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent)?;
        }
        let mut f = OpenOptions::new().write(true).create_new(true).open(&path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::AlreadyExists {
                CliError::user(format!("{} is locked by another run ({})", out.display(), path.display()))
            } else {
                CliError::from(e)
            }
        })?;
        let _ = writeln!(f, "{}", std::process::id());
        Ok(OutputLock { path })
    }
}

impl Drop for OutputLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

fn sibling(p: &Path, suffix: &str) -> PathBuf {
    let mut name = p.file_name().map(|n| n.to_os_string()).unwrap_or_else(|| "bundle".into());
    name.push(format!(".{suffix}"));
    p.with_file_name(name)
}

struct IndexServices {
    summarizer: Box<dyn Summarizer>,
    embedder: Box<dyn Embedder>,
    kind: String,
}

fn remote_client(endpoint: &str, model: &str, budget: usize) -> Result<HttpClient, CliError> {
    let mut cfg = ClientConfig::new(endpoint, model);
    cfg.token_budget = budget;
    HttpClient::new(cfg).map_err(|e| CliError::user(e.to_string()))
}

fn index_services(offline: bool, models: &ModelArgs, ts: usize, ledger: &TokenLedger) -> Result<IndexServices, CliError> {
    let env = if offline { ServiceEnv::default() } else { ServiceEnv::from_env() };
    let summarizer: Box<dyn Summarizer> = match &env.llm_endpoint {
        Some(ep) => Box::new(RemoteSummarizer {
            http: remote_client(ep, &models.llm_model, ts)?,
            ledger: ledger.clone(),
        }),
        None => Box::new(OfflineSummarizer::new(ts, ledger.clone())),
    };
    let (embedder, kind): (Box<dyn Embedder>, String) = match &env.embed_endpoint {
        Some(ep) => (
            Box::new(RemoteEmbedder {
                http: remote_client(ep, &models.embed_model, ts)?,
                ledger: ledger.clone(),
                phase: Phase::Indexing,
                dim: models.embed_dim,
            }),
            format!("remote:{}", models.embed_model),
        ),
        None => (Box::new(HashEmbedder::default()), "hash".to_string()),
    };
    Ok(IndexServices {
        summarizer,
        embedder,
        kind,
    })
}

pub fn cmd_index(a: &IndexArgs, out: &mut dyn std::io::Write) -> CliResult {
    let docs = load_corpus(&a.corpus_dir)?;
    if a.k == 0 || a.ts == 0 {
        return Err(CliError::user("--k and --ts must be positive"));
    }
    let _lock = OutputLock::acquire(&a.out_dir)?;
    let ledger = TokenLedger::new();
    let mut svc = index_services(a.offline, &a.models, a.ts, &ledger)?;
    let opts = IndexOptions {
        k: a.k,
        ts: a.ts,
        khop: a.khop.clamp(1, 3),
        seed: a.seed,
        align: !a.no_align,
        ..IndexOptions::default()
    };
    let mut services = Services {
        summarizer: svc.summarizer.as_mut(),
        embedder: svc.embedder.as_mut(),
        embedder_kind: svc.kind.clone(),
    };
    let (bundle, report) = build_bundle(&docs, &opts, &mut services)?;

    let staging = sibling(&a.out_dir, "partial");
    if staging.exists() {
        fs::remove_dir_all(&staging)?;
    }
    if let Err(e) = bundle.save(&staging) {
        let _ = fs::remove_dir_all(&staging);
        return Err(e.into());
    }
    if a.out_dir.exists() {
        fs::remove_dir_all(&a.out_dir)?;
    }
    fs::rename(&staging, &a.out_dir).inspect_err(|_| {
        let _ = fs::remove_dir_all(&staging);
    })?;
    if let Some(p) = &a.ledger_csv {
        fs::write(p, ledger.to_csv())?;
    }

    let (prompt, completion) = ledger.totals(None);
    writeln!(out, "documents:   {}", report.documents)?;
    writeln!(out, "nodes:       {}", report.nodes)?;
    writeln!(out, "edges:       {}", report.edges)?;
    writeln!(out, "communities: {}", report.communities)?;
    writeln!(out, "macro-nodes: {}", report.macro_nodes)?;
    writeln!(out, "indexed:     {}", report.indexed)?;
    writeln!(out, "router acc:  {:.3}", report.router_accuracy)?;
    writeln!(out, "tokens:      prompt {prompt}, completion {completion}, calls {}", ledger.entries().len())?;
    writeln!(out, "diagnostics: {}", report.diagnostics.len())?;
    for d in &report.diagnostics {
        log::info!("{} {}: {}", d.doc_id, d.block_id, d.message);
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// query

fn load_bundle(dir: &Path) -> Result<Bundle, CliError> {
    Bundle::load(dir).map_err(|e| CliError::user(format!("cannot open bundle {}: {e}", dir.display())))
}

fn query_embedder(bundle: &Bundle, offline: bool, models: &ModelArgs, ledger: &TokenLedger) -> Result<Box<dyn Embedder>, CliError> {
    let kind = bundle.embedder_kind();
    if kind == "hash" {
        return Ok(Box::new(HashEmbedder {
            dim: bundle.embedder_dim().max(1),
        }));
    }
    let env = if offline { ServiceEnv::default() } else { ServiceEnv::from_env() };
    let Some(ep) = env.embed_endpoint else {
        return Err(CliError::user(format!(
            "bundle was embedded with {kind}; set the embedding endpoint to query it"
        )));
    };
    let model = kind.strip_prefix("remote:").unwrap_or(&models.embed_model);
    Ok(Box::new(RemoteEmbedder {
        http: remote_client(&ep, model, 500)?,
        ledger: ledger.clone(),
        phase: Phase::Query,
        dim: bundle.embedder_dim(),
    }))
}

pub fn cmd_query(a: &QueryArgs, out: &mut dyn std::io::Write) -> CliResult {
    if a.question.trim().is_empty() {
        return Err(CliError::user("question is empty"));
    }
    let bundle = load_bundle(&a.bundle)?;
    let ledger = TokenLedger::new();
    let mut embedder = query_embedder(&bundle, a.offline, &a.models, &ledger)?;
    let env = if a.offline { ServiceEnv::default() } else { ServiceEnv::from_env() };
    let mut generator: Box<dyn Generator> = match &env.llm_endpoint {
        Some(ep) => Box::new(RemoteGenerator {
            http: remote_client(ep, &a.models.llm_model, 500)?,
            ledger: ledger.clone(),
        }),
        None => Box::new(TemplateGenerator),
    };
    let outcome = semrag_core::pipeline::run_query(&bundle, &a.question, a.route, embedder.as_mut(), generator.as_mut())
        .map_err(|e| match e {
            PipelineError::Llm(LlmError::DimensionMismatch { .. }) => CliError::user(e.to_string()),
            e => CliError::from(e),
        })?;
    if a.json {
        writeln!(out, "{}", serde_json::to_string_pretty(&outcome.to_json(&a.question)).map_err(|e| CliError::internal(e.to_string()))?)?;
        return Ok(());
    }
    writeln!(out, "route: {}", outcome.route)?;
    if outcome.route != outcome.rule_route {
        writeln!(out, "rule route: {}", outcome.rule_route)?;
    }
    writeln!(out, "answer: {}", outcome.answer)?;
    writeln!(out, "evidence:")?;
    if outcome.records.is_empty() {
        writeln!(out, "  (none)")?;
    }
    for (i, r) in outcome.records.iter().enumerate() {
        writeln!(out, "  {}", r.render(i + 1))?;
    }
    let t = &outcome.timings;
    writeln!(
        out,
        "latency: alignment {:.2} ms, retrieval {:.2} ms, generation {:.2} ms",
        t.alignment_ms, t.retrieval_ms, t.generation_ms
    )?;
    Ok(())
}

// ---------------------------------------------------------------------------
// stats, bench, export

pub fn stats_value(bundle: &Bundle) -> Result<Value, CliError> {
    let (h1, h2) = bundle.entropies().map_err(|e| CliError::user(e.to_string()))?;
    let d = &bundle.dendrogram;
    let mut histogram: std::collections::BTreeMap<usize, usize> = std::collections::BTreeMap::new();
    for members in d.final_partition.communities().values() {
        *histogram.entry(members.len()).or_default() += 1;
    }
    let communities = d.final_partition.communities().len();
    Ok(json!({
        "h1": h1,
        "h2": h2,
        "nodes": d.n,
        "communities": communities,
        "macro_nodes": bundle.manifest["counts"]["macro_nodes"],
        "size_histogram": histogram.iter().map(|(s, c)| json!({"size": s, "count": c})).collect::<Vec<_>>(),
        "delta_trace": d.merge_events.iter().map(|e| e.delta).collect::<Vec<_>>(),
        "levels": d.levels.iter().map(|l| json!({"merges": l.merges, "communities": l.communities})).collect::<Vec<_>>(),
    }))
}

pub fn cmd_stats(dir: &Path, as_json: bool, out: &mut dyn std::io::Write) -> CliResult {
    let bundle = load_bundle(dir)?;
    let v = stats_value(&bundle)?;
    if as_json {
        writeln!(out, "{}", serde_json::to_string_pretty(&v).map_err(|e| CliError::internal(e.to_string()))?)?;
        return Ok(());
    }
    writeln!(out, "H1: {:.6}", v["h1"].as_f64().unwrap_or_default())?;
    writeln!(out, "H2: {:.6}", v["h2"].as_f64().unwrap_or_default())?;
    writeln!(out, "nodes: {}  communities: {}  macro-nodes: {}", v["nodes"], v["communities"], v["macro_nodes"])?;
    writeln!(out, "community sizes:")?;
    for row in v["size_histogram"].as_array().into_iter().flatten() {
        writeln!(out, "  {:>6}  x{}", row["size"].as_u64().unwrap_or_default(), row["count"])?;
    }
    let trace = v["delta_trace"].as_array().cloned().unwrap_or_default();
    writeln!(out, "merges: {}", trace.len())?;
    for (i, d) in trace.iter().enumerate() {
        writeln!(out, "  {:>6}  {:+.6}", i + 1, d.as_f64().unwrap_or_default())?;
    }
    Ok(())
}

pub fn cmd_bench_indexing(
    sizes: &[usize],
    k: usize,
    ts: usize,
    t_prompt: u64,
    seed: u64,
    path: Option<&Path>,
    out: &mut dyn std::io::Write,
) -> CliResult {
    if sizes.is_empty() || sizes.contains(&0) {
        return Err(CliError::user("--sizes must list positive node counts"));
    }
    let rows = scaling_curve(sizes, &mut |n| planted_graph(n, seed), k, ts, t_prompt)
        .map_err(|e| CliError::internal(e.to_string()))?;
    let csv = scaling_csv(&rows);
    match path {
        Some(p) => fs::write(p, &csv)?,
        None => out.write_all(csv.as_bytes())?,
    }
    Ok(())
}

pub fn cmd_export_graph(dir: &Path, dest: &Path, out: &mut dyn std::io::Write) -> CliResult {
    let bundle = load_bundle(dir)?;
    fs::create_dir_all(dest)?;
    let (nodes, edges) = bundle.graph.to_jsonl();
    fs::write(dest.join("nodes.jsonl"), nodes)?;
    fs::write(dest.join("edges.jsonl"), edges)?;
    writeln!(
        out,
        "exported {} nodes, {} edges to {}",
        bundle.graph.node_count(),
        bundle.graph.edge_count(),
        dest.display()
    )?;
    Ok(())
}

pub fn cmd_gen_corpus(dir: &Path, n_docs: usize, seed: u64, out: &mut dyn std::io::Write) -> CliResult {
    if n_docs == 0 {
        return Err(CliError::user("--docs must be positive"));
    }
    let c = corpus(n_docs, seed);
    fs::create_dir_all(dir)?;
    for (i, d) in c.docs.iter().enumerate() {
        fs::write(dir.join(format!("doc{i:04}.json")), d.to_canonical_json())?;
    }
    writeln!(out, "wrote {} documents to {}", c.docs.len(), dir.display())?;
    Ok(())
}
