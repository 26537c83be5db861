//! End-to-end offline indexing and online querying over an on-disk bundle.

use std::fs;
use std::path::Path;
use std::time::Instant;

use serde_json::{json, Value};
use thiserror::Error;

use crate::canonical::{sha256_hex, to_canonical_string};
use crate::doc_model::SourceDocument;
use crate::graph::{GraphError, GraphUnit, Node, NodeType, TypedGraph};
use crate::layout::{compile_document, Diagnostic};
use crate::llm::{Embedder, Generator, LlmError, Summarizer};
use crate::query::{
    answer, extract_features, route_with_audit, retrieve, train_router, verbalize, EvidenceRecord, Gazetteer,
    QueryError, QueryFeatures, RetrievalContext, Route, RouterConfig, RouterModel, EVIDENCE_BUDGET,
};
use crate::sem::{h1_typed, h2_typed, materialize_macronodes, sem_minimize_typed, Dendrogram, SemError};
use crate::synth::route_set;
use crate::vector::{topo_features, train_alignment, AlignConfig, AlignmentModel, VectorError, VectorIndex, TOPO_DIM};

pub const BUNDLE_FORMAT_VERSION: u64 = 1;
pub const EMBED_BATCH: usize = 64;
pub const BUNDLE_FILES: &[&str] = &[
    "graph/nodes.jsonl",
    "graph/edges.jsonl",
    "graph/manifest.json",
    "dendrogram.json",
    "index.json",
    "alignment.json",
    "router.json",
];

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("no documents found")]
    NoDocuments,
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Sem(#[from] SemError),
    #[error(transparent)]
    Vector(#[from] VectorError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Query(#[from] QueryError),
    #[error("bundle: {0}")]
    Bundle(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexOptions {
    pub k: usize,
    pub ts: usize,
    pub khop: u32,
    pub seed: u64,
    pub align: bool,
    pub align_cfg: AlignConfig,
    pub router_cfg: RouterConfig,
}

impl Default for IndexOptions {
    fn default() -> Self {
        IndexOptions {
            k: 5,
            ts: 500,
            khop: 3,
            seed: 0,
            align: true,
            align_cfg: AlignConfig::default(),
            router_cfg: RouterConfig::default(),
        }
    }
}

impl IndexOptions {
    fn snapshot(&self) -> Value {
        json!({
            "k": self.k,
            "ts": self.ts,
            "khop": self.khop,
            "seed": self.seed,
            "align": self.align,
            "align_m": self.align_cfg.m,
            "align_tau": self.align_cfg.tau,
            "align_margin": self.align_cfg.margin,
            "align_lr": self.align_cfg.lr,
            "align_epochs": self.align_cfg.epochs,
            "router_epochs": self.router_cfg.epochs,
            "router_lr": self.router_cfg.lr,
        })
    }
}

/// Text a node is embedded by.
pub fn embed_text_for(n: &Node) -> String {
    let path = |k: &str| {
        n.attrs
            .get(k)
            .and_then(Value::as_array)
            .map(|a| a.iter().filter_map(Value::as_str).collect::<Vec<_>>().join(" "))
            .unwrap_or_default()
    };
    match n.node_type {
        NodeType::Cell => format!("{} {} {}", path("row_path"), path("col_path"), n.text),
        NodeType::RowHeader | NodeType::ColHeader => path("path"),
        NodeType::Term => match n.attr_str("long_form") {
            Some(l) => format!("{} {l}", n.text),
            None => n.text.clone(),
        },
        NodeType::Operator => n.attr_str("expr").unwrap_or(&n.text).to_string(),
        NodeType::MacroNode => format!("{} {}", n.text, n.attr_str("summary").unwrap_or_default()),
        _ => n.text.clone(),
    }
}

#[derive(Debug, Clone)]
pub struct Bundle {
    pub graph: TypedGraph,
    pub dendrogram: Dendrogram,
    pub dendrogram_ids: Vec<String>,
    pub index: VectorIndex,
    pub model: AlignmentModel,
    pub router: RouterModel,
    pub manifest: Value,
    pub gazetteer: Gazetteer,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PhaseTimings {
    pub compile_ms: u64,
    pub partition_ms: u64,
    pub summarize_ms: u64,
    pub embed_ms: u64,
    pub align_ms: u64,
    pub router_ms: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BuildReport {
    pub documents: usize,
    pub nodes: usize,
    pub edges: usize,
    pub communities: usize,
    pub macro_nodes: usize,
    pub indexed: usize,
    pub router_accuracy: f64,
    pub diagnostics: Vec<Diagnostic>,
    pub timings: PhaseTimings,
}

/// Where the partition, summary and embedding calls go.
pub struct Services<'a> {
    pub summarizer: &'a mut dyn Summarizer,
    pub embedder: &'a mut dyn Embedder,
    /// Recorded in the manifest so queries use the same embedder.
    pub embedder_kind: String,
}

fn ms(start: Instant) -> u64 {
    start.elapsed().as_millis() as u64
}

pub fn compile_corpus(docs: &[SourceDocument]) -> Result<(TypedGraph, Vec<Diagnostic>), PipelineError> {
    if docs.is_empty() {
        return Err(PipelineError::NoDocuments);
    }
    let mut units: Vec<GraphUnit> = Vec::with_capacity(docs.len());
    let mut diags = Vec::new();
    for d in docs {
        let c = compile_document(d);
        diags.extend(c.diagnostics);
        units.push(c.unit);
    }
    Ok((TypedGraph::merge_units(units)?, diags))
}

pub fn build_bundle(
    docs: &[SourceDocument],
    opts: &IndexOptions,
    services: &mut Services,
) -> Result<(Bundle, BuildReport), PipelineError> {
    let start = Instant::now();
    let (g, diagnostics) = compile_corpus(docs)?;
    let compile_ms = ms(start);
    let (bundle, mut report) = build_bundle_from_graph(g, opts, services)?;
    report.documents = docs.len();
    report.diagnostics = diagnostics;
    report.timings.compile_ms = compile_ms;
    Ok((bundle, report))
}

/// Partition, summarise, embed, align and train the router over an already
/// compiled graph.
pub fn build_bundle_from_graph(
    mut g: TypedGraph,
    opts: &IndexOptions,
    services: &mut Services,
) -> Result<(Bundle, BuildReport), PipelineError> {
    let mut timings = PhaseTimings::default();

    let t = Instant::now();
    let dendrogram = sem_minimize_typed(&g)?;
    let dendrogram_ids: Vec<String> = g.nodes().iter().map(|n| n.id.clone()).collect();
    timings.partition_ms = ms(t);

    let t = Instant::now();
    let macros = materialize_macronodes(&dendrogram, &mut g, opts.k, services.summarizer, opts.ts)?;
    timings.summarize_ms = ms(t);

    let t = Instant::now();
    let mut ids: Vec<usize> = Vec::new();
    let mut texts: Vec<String> = Vec::new();
    for (i, n) in g.nodes().iter().enumerate() {
        let text = embed_text_for(n);
        if !text.trim().is_empty() {
            ids.push(i);
            texts.push(text);
        }
    }
    let mut text_vecs: Vec<Vec<f64>> = Vec::with_capacity(texts.len());
    for batch in texts.chunks(EMBED_BATCH) {
        text_vecs.extend(services.embedder.embed(batch)?);
    }
    // hashed texts can cancel to a zero vector; such nodes are not indexed
    let keep: Vec<bool> = text_vecs.iter().map(|v| v.iter().any(|x| *x != 0.0)).collect();
    timings.embed_ms = ms(t);

    let t = Instant::now();
    let topo = topo_features(&g);
    let align_cfg = AlignConfig {
        seed: opts.seed,
        ..opts.align_cfg.clone()
    };
    let mut model = AlignmentModel::init(TOPO_DIM, services.embedder.dim(), &align_cfg);
    if opts.align {
        let pairs: Vec<(Vec<f64>, Vec<f64>)> = ids
            .iter()
            .zip(&text_vecs)
            .zip(&keep)
            .filter(|(_, k)| **k)
            .map(|((&i, t), _)| (topo[i].clone(), t.clone()))
            .collect();
        if !pairs.is_empty() {
            model = train_alignment(model, &pairs, &align_cfg)?;
        }
    }
    let mut index = VectorIndex::new(2 * model.m);
    for ((&i, tv), k) in ids.iter().zip(&text_vecs).zip(&keep) {
        if *k {
            index.upsert(&g.node(i).id, &model.fused(&topo[i], tv))?;
        }
    }
    timings.align_ms = ms(t);

    let t = Instant::now();
    let empty = Gazetteer::default();
    let set = route_set(opts.seed);
    let queries: Vec<String> = set.iter().map(|(q, _)| q.clone()).collect();
    let mut qvecs: Vec<Vec<f64>> = Vec::with_capacity(queries.len());
    for batch in queries.chunks(EMBED_BATCH) {
        qvecs.extend(services.embedder.embed(batch)?);
    }
    let labeled: Vec<(QueryFeatures, Route)> = set
        .iter()
        .zip(&qvecs)
        .map(|((q, r), qt)| (extract_features(q, qt, &empty, &index, &model), *r))
        .collect();
    let router = train_router(
        &labeled,
        &RouterConfig {
            seed: opts.seed,
            ..opts.router_cfg.clone()
        },
    )?;
    timings.router_ms = ms(t);

    let report = BuildReport {
        documents: 0,
        nodes: g.node_count(),
        edges: g.edge_count(),
        communities: dendrogram.final_partition.communities().len(),
        macro_nodes: macros.len(),
        indexed: index.len(),
        router_accuracy: router.train_accuracy,
        diagnostics: Vec::new(),
        timings,
    };
    let manifest = json!({
        "format_version": BUNDLE_FORMAT_VERSION,
        "tool_version": env!("CARGO_PKG_VERSION"),
        "config": opts.snapshot(),
        "embedder": {"kind": services.embedder_kind, "dim": services.embedder.dim()},
        "counts": {
            "nodes": report.nodes,
            "edges": report.edges,
            "communities": report.communities,
            "macro_nodes": report.macro_nodes,
            "indexed": report.indexed,
        },
    });
    let gazetteer = Gazetteer::from_graph(&g);
    Ok((
        Bundle {
            graph: g,
            dendrogram,
            dendrogram_ids,
            index,
            model,
            router,
            manifest,
            gazetteer,
        },
        report,
    ))
}

fn write_file(dir: &Path, name: &str, body: &str) -> Result<(), PipelineError> {
    let path = dir.join(name);
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, body)?;
    Ok(())
}

impl Bundle {
    pub fn embedder_kind(&self) -> &str {
        self.manifest["embedder"]["kind"].as_str().unwrap_or("hash")
    }

    pub fn embedder_dim(&self) -> usize {
        self.manifest["embedder"]["dim"].as_u64().unwrap_or(0) as usize
    }

    pub fn khop(&self) -> u32 {
        self.manifest["config"]["khop"].as_u64().unwrap_or(3) as u32
    }

    /// Write every artefact, then the manifest with their checksums.
    pub fn save(&self, dir: &Path) -> Result<(), PipelineError> {
        fs::create_dir_all(dir)?;
        self.graph.save(&dir.join("graph"))?;
        write_file(dir, "dendrogram.json", &to_canonical_string(&self.dendrogram.to_json(&self.dendrogram_ids)))?;
        write_file(dir, "index.json", &to_canonical_string(&self.index.to_json()))?;
        write_file(dir, "alignment.json", &to_canonical_string(&self.model.to_json()))?;
        write_file(dir, "router.json", &to_canonical_string(&self.router.to_json()))?;
        let mut files = serde_json::Map::new();
        for name in BUNDLE_FILES {
            files.insert(name.to_string(), json!(sha256_hex(&fs::read(dir.join(name))?)));
        }
        let mut manifest = self.manifest.clone();
        manifest["files"] = Value::Object(files);
        write_file(dir, "manifest.json", &(to_canonical_string(&manifest) + "\n"))?;
        Ok(())
    }

    /// Load and verify a bundle; any checksum or format mismatch is an error.
    pub fn load(dir: &Path) -> Result<Bundle, PipelineError> {
        let bad = |m: String| PipelineError::Bundle(m);
        let raw = fs::read(dir.join("manifest.json")).map_err(|e| bad(format!("manifest.json: {e}")))?;
        let manifest: Value = serde_json::from_slice(&raw).map_err(|e| bad(format!("manifest.json: {e}")))?;
        if manifest["format_version"].as_u64() != Some(BUNDLE_FORMAT_VERSION) {
            return Err(bad("unsupported bundle format version".into()));
        }
        let mut contents: std::collections::HashMap<&str, Vec<u8>> = std::collections::HashMap::new();
        for name in BUNDLE_FILES {
            let bytes = fs::read(dir.join(name)).map_err(|e| bad(format!("{name}: {e}")))?;
            let expected = manifest["files"][*name].as_str().unwrap_or_default();
            if sha256_hex(&bytes) != expected {
                return Err(bad(format!("checksum mismatch for {name}")));
            }
            contents.insert(name, bytes);
        }
        let parse = |name: &str| -> Result<Value, PipelineError> {
            serde_json::from_slice(&contents[name]).map_err(|e| bad(format!("{name}: {e}")))
        };
        let graph = TypedGraph::load(&dir.join("graph"))?;
        let (dendrogram, dendrogram_ids) = Dendrogram::from_json(&parse("dendrogram.json")?)?;
        let index = VectorIndex::from_json(&parse("index.json")?)?;
        let model = AlignmentModel::from_json(&parse("alignment.json")?)?;
        let router = RouterModel::from_json(&parse("router.json")?)?;
        if index.dim() != 2 * model.m {
            return Err(bad("index and alignment model disagree on dimension".into()));
        }
        let gazetteer = Gazetteer::from_graph(&graph);
        Ok(Bundle {
            graph,
            dendrogram,
            dendrogram_ids,
            index,
            model,
            router,
            manifest,
            gazetteer,
        })
    }

    pub fn context(&self) -> RetrievalContext<'_> {
        RetrievalContext {
            graph: &self.graph,
            index: &self.index,
            model: &self.model,
            gazetteer: &self.gazetteer,
            khop: self.khop(),
        }
    }

    /// H¹ and H² of the final partition over the compiled graph (macro-nodes
    /// and their edges excluded).
    pub fn entropies(&self) -> Result<(f64, f64), SemError> {
        let h1 = h1_typed(&self.graph)?;
        let h2 = h2_typed(&self.graph, &self.dendrogram.final_partition)?;
        Ok((h1, h2))
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct QueryTimings {
    pub alignment_ms: f64,
    pub retrieval_ms: f64,
    pub generation_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryOutcome {
    pub features: QueryFeatures,
    pub route: Route,
    pub rule_route: Route,
    pub misroute_delta: usize,
    pub records: Vec<EvidenceRecord>,
    pub answer: String,
    pub timings: QueryTimings,
}

fn elapsed_ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1000.0
}

/// Embed, route, retrieve and verbalise, without generation.
pub fn retrieve_records(
    bundle: &Bundle,
    q: &str,
    forced: Option<Route>,
    embedder: &mut dyn Embedder,
) -> Result<(QueryFeatures, Route, Route, usize, Vec<EvidenceRecord>, QueryTimings), PipelineError> {
    let t = Instant::now();
    if embedder.dim() != bundle.embedder_dim() {
        return Err(PipelineError::Bundle(format!(
            "query embedder has dimension {} but the bundle was built with {}",
            embedder.dim(),
            bundle.embedder_dim()
        )));
    }
    let qt = embedder
        .embed(&[q.to_string()])?
        .pop()
        .ok_or_else(|| LlmError::Protocol("no query embedding".into()))?;
    let alignment_ms = elapsed_ms(t);

    let t = Instant::now();
    let ctx = bundle.context();
    let features = extract_features(q, &qt, &bundle.gazetteer, &bundle.index, &bundle.model);
    let (chosen, rule, delta) = route_with_audit(&bundle.router, &features);
    let route = forced.unwrap_or(chosen);
    let cand = retrieve(&ctx, q, &qt, route, EVIDENCE_BUDGET)?;
    let records = verbalize(&cand, &bundle.graph)?;
    let retrieval_ms = elapsed_ms(t);
    Ok((
        features,
        route,
        rule,
        delta,
        records,
        QueryTimings {
            alignment_ms,
            retrieval_ms,
            generation_ms: 0.0,
        },
    ))
}

pub fn run_query(
    bundle: &Bundle,
    q: &str,
    forced: Option<Route>,
    embedder: &mut dyn Embedder,
    generator: &mut dyn Generator,
) -> Result<QueryOutcome, PipelineError> {
    let (features, route, rule_route, misroute_delta, records, mut timings) =
        retrieve_records(bundle, q, forced, embedder)?;
    let t = Instant::now();
    let answer = answer(q, &records, generator)?;
    timings.generation_ms = elapsed_ms(t);
    Ok(QueryOutcome {
        features,
        route,
        rule_route,
        misroute_delta,
        records,
        answer,
        timings,
    })
}

impl QueryOutcome {
    pub fn to_json(&self, question: &str) -> Value {
        json!({
            "question": question,
            "route": self.route.as_str(),
            "rule_route": self.rule_route.as_str(),
            "misroute_delta": self.misroute_delta,
            "features": self.features.to_value(),
            "records": self.records.iter().map(EvidenceRecord::to_value).collect::<Vec<_>>(),
            "answer": self.answer,
            "latency_ms": {
                "alignment": self.timings.alignment_ms,
                "retrieval": self.timings.retrieval_ms,
                "generation": self.timings.generation_ms,
            },
        })
    }
}
