//! Online stage: query features, the three-way router, routed retrieval,
//! verbalisation into evidence records and answer generation.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde_json::{json, Value};
use thiserror::Error;

use crate::doc_model::Provenance;
use crate::formula::{subexpression_at, MathAst};
use crate::graph::{GraphError, NodeType, RelationType, TypedGraph, DEFAULT_EXPANSION_BUDGET, MAX_HOPS};
use crate::llm::{GenerationRequest, Generator, LlmError};
use crate::vector::{dot, softmax, AlignmentModel, VectorIndex};
use crate::text::{whitespace_tokens, word_tokens};

pub const EVIDENCE_BUDGET: usize = 5;
pub const MAX_MACRO_RESULTS: usize = 5;
pub const MAX_ANCHORS: usize = 4;
pub const VECTOR_ANCHORS: usize = 3;
pub const HIT_WINDOW: usize = 10;

pub const MED_RELATIONS: &[RelationType] = &[
    RelationType::RowBind,
    RelationType::ColBind,
    RelationType::Activates,
    RelationType::OperandOf,
    RelationType::Defines,
    RelationType::RefersTo,
    RelationType::Contains,
];

#[derive(Debug, Error)]
pub enum QueryError {
    #[error("the vector index is empty")]
    EmptyIndex,
    #[error("no macro-nodes in the bundle; the high route needs a completed index")]
    NoMacroNodes,
    #[error("node {0:?} cannot be verbalised")]
    DanglingNode(String),
    #[error("generator failed: {0}")]
    Generator(LlmError),
    #[error("route training data lacks class {0}")]
    ClassMissing(Route),
    #[error("bad route probabilities: {0}")]
    BadProbabilities(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Vector(#[from] crate::vector::VectorError),
    #[error("router model format: {0}")]
    Format(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Route {
    Low,
    Med,
    High,
}

impl Route {
    pub const ALL: [Route; 3] = [Route::Low, Route::Med, Route::High];

    pub fn as_str(self) -> &'static str {
        match self {
            Route::Low => "low",
            Route::Med => "med",
            Route::High => "high",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Route {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Route {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "low" => Ok(Route::Low),
            "med" | "medium" => Ok(Route::Med),
            "high" => Ok(Route::High),
            other => Err(format!("unknown route {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvidenceRecord {
    pub clause: String,
    pub subject: String,
    pub relation: String,
    pub object: String,
    pub condition: Option<String>,
    pub provenance: Provenance,
}

impl EvidenceRecord {
    pub fn to_value(&self) -> Value {
        json!({
            "clause": self.clause,
            "subject": self.subject,
            "relation": self.relation,
            "object": self.object,
            "condition": self.condition,
            "provenance": self.provenance.to_value(),
        })
    }

    /// One prompt line, numbered from 1.
    pub fn render(&self, rank: usize) -> String {
        let mut line = format!(
            "[{rank}] ({}) {} | {} | {}",
            self.clause, self.subject, self.relation, self.object
        );
        if let Some(c) = &self.condition {
            line.push_str(&format!(" | condition: {c}"));
        }
        line.push_str(&format!(" <{}>", self.provenance.citation()));
        line
    }
}

// ---------------------------------------------------------------------------
// features

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QueryFeatures {
    pub entity_count: usize,
    pub has_symbolic_tokens: bool,
    pub query_length: usize,
    pub hit_entropy: f64,
}

impl QueryFeatures {
    pub fn to_value(&self) -> Value {
        json!({
            "entity_count": self.entity_count,
            "has_symbolic_tokens": self.has_symbolic_tokens,
            "query_length": self.query_length,
            "hit_entropy": self.hit_entropy,
        })
    }

    fn input(&self) -> [f64; 4] {
        [
            self.entity_count.min(4) as f64 / 2.0,
            if self.has_symbolic_tokens { 1.0 } else { 0.0 },
            self.query_length as f64 / 12.0,
            self.hit_entropy / (HIT_WINDOW as f64).log2(),
        ]
    }
}

fn symbolic_pattern() -> &'static Regex {
    static R: OnceLock<Regex> = OnceLock::new();
    R.get_or_init(|| Regex::new(r"[=^_\\/]|\b(log2?|sum|frac)\b|\d+\s*(dB|dBm|GHz|MHz|ms)\b").unwrap())
}

/// Term surfaces (and long forms) as lowercase token phrases.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Gazetteer {
    phrases: BTreeMap<Vec<String>, Vec<usize>>,
}

impl Gazetteer {
    pub fn from_graph(g: &TypedGraph) -> Self {
        let mut phrases: BTreeMap<Vec<String>, Vec<usize>> = BTreeMap::new();
        for (i, n) in g.nodes().iter().enumerate() {
            if n.node_type != NodeType::Term {
                continue;
            }
            let mut surfaces = vec![n.text.clone()];
            if let Some(l) = n.attr_str("long_form") {
                surfaces.push(l.to_string());
            }
            for s in surfaces {
                let toks = word_tokens(&s);
                if !toks.is_empty() {
                    phrases.entry(toks).or_default().push(i);
                }
            }
        }
        Gazetteer { phrases }
    }

    pub fn len(&self) -> usize {
        self.phrases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phrases.is_empty()
    }

    /// Term node indices whose phrase occurs as a contiguous token run of `q`.
    pub fn matches(&self, q: &str) -> Vec<(Vec<String>, Vec<usize>)> {
        let toks = word_tokens(q);
        self.phrases
            .iter()
            .filter(|(p, _)| toks.windows(p.len()).any(|w| w == p.as_slice()))
            .map(|(p, n)| (p.clone(), n.clone()))
            .collect()
    }
}

fn all_caps_tokens(q: &str) -> Vec<String> {
    q.split_whitespace()
        .map(|t| t.trim_matches(|c: char| !c.is_alphanumeric()))
        .filter(|t| {
            t.chars().count() >= 2
                && t.chars().any(|c| c.is_ascii_uppercase())
                && t.chars().all(|c| c.is_ascii_uppercase() || c.is_ascii_digit())
        })
        .map(str::to_lowercase)
        .collect()
}

pub fn hit_entropy(scores: &[f64]) -> f64 {
    if scores.is_empty() {
        return (HIT_WINDOW as f64).log2();
    }
    let p = softmax(scores);
    -p.iter().filter(|x| **x > 0.0).map(|x| x * x.log2()).sum::<f64>()
}

/// Features of `q` (with text embedding `qt`) against an index of fused node
/// vectors.
pub fn extract_features(q: &str, qt: &[f64], gaz: &Gazetteer, index: &VectorIndex, model: &AlignmentModel) -> QueryFeatures {
    let matched = gaz.matches(q);
    let mut entities: BTreeSet<String> = matched.iter().map(|(p, _)| p.join(" ")).collect();
    let covered: HashSet<String> = matched.iter().flat_map(|(p, _)| p.iter().cloned()).collect();
    for t in all_caps_tokens(q) {
        if !covered.contains(&t) {
            entities.insert(t);
        }
    }
    let scores: Vec<f64> = if index.is_empty() {
        Vec::new()
    } else {
        let qv = model.query_vector(qt);
        index
            .search(&qv, HIT_WINDOW)
            .map(|h| h.into_iter().map(|(_, s)| s).collect())
            .unwrap_or_default()
    };
    QueryFeatures {
        entity_count: entities.len(),
        has_symbolic_tokens: symbolic_pattern().is_match(q),
        query_length: whitespace_tokens(q),
        hit_entropy: hit_entropy(&scores),
    }
}

// ---------------------------------------------------------------------------
// router

pub const ROUTER_HIDDEN: usize = 16;

/// The decision table used when no trained router is available.
pub fn fallback_route(f: &QueryFeatures) -> Route {
    if f.has_symbolic_tokens || f.entity_count >= 2 {
        Route::Med
    } else if f.entity_count == 0 && f.query_length >= 12 && f.hit_entropy >= 2.5 {
        Route::High
    } else {
        Route::Low
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RouterModel {
    pub hidden: usize,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    pub trained: bool,
    pub train_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RouterConfig {
    pub seed: u64,
    pub epochs: usize,
    pub lr: f64,
}

impl Default for RouterConfig {
    fn default() -> Self {
        RouterConfig {
            seed: 0,
            epochs: 400,
            lr: 0.5,
        }
    }
}

impl RouterModel {
    pub fn untrained() -> Self {
        RouterModel {
            hidden: ROUTER_HIDDEN,
            w1: vec![0.0; ROUTER_HIDDEN * 4],
            b1: vec![0.0; ROUTER_HIDDEN],
            w2: vec![0.0; 3 * ROUTER_HIDDEN],
            b2: vec![0.0; 3],
            trained: false,
            train_accuracy: 0.0,
        }
    }

    fn forward(&self, x: &[f64; 4]) -> (Vec<f64>, Vec<f64>) {
        let h: Vec<f64> = (0..self.hidden)
            .map(|j| (self.b1[j] + (0..4).map(|i| self.w1[j * 4 + i] * x[i]).sum::<f64>()).tanh())
            .collect();
        let logits: Vec<f64> = (0..3)
            .map(|c| self.b2[c] + (0..self.hidden).map(|j| self.w2[c * self.hidden + j] * h[j]).sum::<f64>())
            .collect();
        (h, softmax(&logits))
    }

    pub fn probabilities(&self, f: &QueryFeatures) -> [f64; 3] {
        let (_, p) = self.forward(&f.input());
        [p[0], p[1], p[2]]
    }

    pub fn to_json(&self) -> Value {
        json!({
            "format_version": 1,
            "hidden": self.hidden,
            "w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2,
            "trained": self.trained,
            "train_accuracy": self.train_accuracy,
        })
    }

    pub fn from_json(v: &Value) -> Result<Self, QueryError> {
        let bad = |m: &str| QueryError::Format(m.to_string());
        let floats = |k: &str| -> Result<Vec<f64>, QueryError> {
            v[k].as_array()
                .ok_or_else(|| bad(k))?
                .iter()
                .map(|x| x.as_f64().ok_or_else(|| bad(k)))
                .collect()
        };
        let hidden = v["hidden"].as_u64().ok_or_else(|| bad("hidden"))? as usize;
        let m = RouterModel {
            hidden,
            w1: floats("w1")?,
            b1: floats("b1")?,
            w2: floats("w2")?,
            b2: floats("b2")?,
            trained: v["trained"].as_bool().ok_or_else(|| bad("trained"))?,
            train_accuracy: v["train_accuracy"].as_f64().ok_or_else(|| bad("train_accuracy"))?,
        };
        if m.w1.len() != hidden * 4 || m.b1.len() != hidden || m.w2.len() != 3 * hidden || m.b2.len() != 3 {
            return Err(bad("weight shape"));
        }
        Ok(m)
    }
}

/// Argmax of the router, or the fallback table for an untrained model.
pub fn route(model: &RouterModel, f: &QueryFeatures) -> Route {
    if !model.trained {
        return fallback_route(f);
    }
    let p = model.probabilities(f);
    let mut best = 0;
    for c in 1..3 {
        if p[c] > p[best] {
            best = c;
        }
    }
    Route::ALL[best]
}

/// The routed decision, the rule decision and their distance on the
/// Low < Med < High scale.
pub fn route_with_audit(model: &RouterModel, f: &QueryFeatures) -> (Route, Route, usize) {
    let chosen = route(model, f);
    let rule = fallback_route(f);
    let delta = chosen.index().abs_diff(rule.index());
    if delta > 0 {
        log::info!("misroute: model {chosen}, rules {rule}, delta {delta}");
    }
    (chosen, rule, delta)
}

/// Full-batch cross-entropy gradient descent from a seeded initialisation.
pub fn train_router(labeled: &[(QueryFeatures, Route)], cfg: &RouterConfig) -> Result<RouterModel, QueryError> {
    for r in Route::ALL {
        if !labeled.iter().any(|(_, l)| *l == r) {
            return Err(QueryError::ClassMissing(r));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let h = ROUTER_HIDDEN;
    let mut m = RouterModel::untrained();
    m.w1 = (0..h * 4).map(|_| rng.random_range(-0.5..0.5)).collect();
    m.w2 = (0..3 * h).map(|_| rng.random_range(-0.5..0.5)).collect();
    let xs: Vec<[f64; 4]> = labeled.iter().map(|(f, _)| f.input()).collect();
    let n = labeled.len() as f64;
    for _ in 0..cfg.epochs {
        let mut gw1 = vec![0.0; h * 4];
        let mut gb1 = vec![0.0; h];
        let mut gw2 = vec![0.0; 3 * h];
        let mut gb2 = vec![0.0; 3];
        for (x, (_, label)) in xs.iter().zip(labeled) {
            let (hid, p) = m.forward(x);
            let dlogit: Vec<f64> = (0..3)
                .map(|c| p[c] - if c == label.index() { 1.0 } else { 0.0 })
                .collect();
            for c in 0..3 {
                gb2[c] += dlogit[c];
                for j in 0..h {
                    gw2[c * h + j] += dlogit[c] * hid[j];
                }
            }
            for j in 0..h {
                let dh: f64 = (0..3).map(|c| dlogit[c] * m.w2[c * h + j]).sum::<f64>() * (1.0 - hid[j] * hid[j]);
                gb1[j] += dh;
                for i in 0..4 {
                    gw1[j * 4 + i] += dh * x[i];
                }
            }
        }
        let s = cfg.lr / n;
        m.w1.iter_mut().zip(&gw1).for_each(|(w, g)| *w -= s * g);
        m.b1.iter_mut().zip(&gb1).for_each(|(w, g)| *w -= s * g);
        m.w2.iter_mut().zip(&gw2).for_each(|(w, g)| *w -= s * g);
        m.b2.iter_mut().zip(&gb2).for_each(|(w, g)| *w -= s * g);
    }
    m.trained = true;
    let correct = labeled.iter().filter(|(f, l)| route(&m, f) == *l).count();
    m.train_accuracy = correct as f64 / n;
    Ok(m)
}

// ---------------------------------------------------------------------------
// retrieval

/// Read-only view over everything a query needs.
pub struct RetrievalContext<'a> {
    pub graph: &'a TypedGraph,
    pub index: &'a VectorIndex,
    pub model: &'a AlignmentModel,
    pub gazetteer: &'a Gazetteer,
    pub khop: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedNode {
    pub node: usize,
    pub score: f64,
    pub hop: Option<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSubgraph {
    pub route: Route,
    pub anchors: Vec<usize>,
    pub nodes: Vec<RankedNode>,
}

fn type_filter<'a>(g: &'a TypedGraph, types: &'a [NodeType]) -> impl Fn(&str) -> bool + 'a {
    move |id: &str| g.node_by_id(id).is_some_and(|n| types.contains(&n.node_type))
}

/// `qt` is the text embedding of `q` from the embedder the index was built
/// with.
pub fn retrieve(
    ctx: &RetrievalContext,
    q: &str,
    qt: &[f64],
    route: Route,
    budget: usize,
) -> Result<CandidateSubgraph, QueryError> {
    if ctx.index.is_empty() {
        return Err(QueryError::EmptyIndex);
    }
    let g = ctx.graph;
    let qv = ctx.model.query_vector(qt);
    let to_ranked = |hits: Vec<(String, f64)>| -> Vec<RankedNode> {
        hits.into_iter()
            .filter_map(|(id, score)| g.index_of(&id).map(|node| RankedNode { node, score, hop: None }))
            .collect()
    };
    match route {
        Route::Low => {
            let hits = ctx
                .index
                .search_filtered(&qv, budget, type_filter(g, &[NodeType::Paragraph, NodeType::Cell]))?;
            Ok(CandidateSubgraph {
                route,
                anchors: Vec::new(),
                nodes: to_ranked(hits),
            })
        }
        Route::Med => {
            let mut anchors: Vec<usize> = Vec::new();
            for (_, nodes) in ctx.gazetteer.matches(q) {
                for n in nodes {
                    if !anchors.contains(&n) && anchors.len() < MAX_ANCHORS {
                        anchors.push(n);
                    }
                }
            }
            let non_macro = |id: &str| g.node_by_id(id).is_some_and(|n| n.node_type != NodeType::MacroNode);
            for (id, _) in ctx.index.search_filtered(&qv, VECTOR_ANCHORS, non_macro)? {
                if let Some(n) = g.index_of(&id) {
                    if !anchors.contains(&n) && anchors.len() < MAX_ANCHORS {
                        anchors.push(n);
                    }
                }
            }
            let k = ctx.khop.clamp(1, MAX_HOPS);
            let sub = g.khop_expand(&anchors, k, MED_RELATIONS, DEFAULT_EXPANSION_BUDGET)?;
            let mut ranked: Vec<RankedNode> = sub
                .nodes
                .iter()
                .filter(|(n, _)| {
                    matches!(
                        g.node(*n).node_type,
                        NodeType::Cell | NodeType::Paragraph | NodeType::Operator
                    )
                })
                .filter_map(|&(n, hop)| {
                    ctx.index.vector(&g.node(n).id).map(|v| RankedNode {
                        node: n,
                        score: dot(v, &qv),
                        hop: Some(hop),
                    })
                })
                .collect();
            ranked.sort_by(|a, b| {
                b.score
                    .total_cmp(&a.score)
                    .then(a.hop.cmp(&b.hop))
                    .then_with(|| g.node(a.node).id.cmp(&g.node(b.node).id))
            });
            ranked.truncate(budget);
            Ok(CandidateSubgraph {
                route,
                anchors,
                nodes: ranked,
            })
        }
        Route::High => {
            if !g.nodes().iter().any(|n| n.node_type == NodeType::MacroNode) {
                return Err(QueryError::NoMacroNodes);
            }
            let hits =
                ctx.index
                    .search_filtered(&qv, budget.min(MAX_MACRO_RESULTS), type_filter(g, &[NodeType::MacroNode]))?;
            Ok(CandidateSubgraph {
                route,
                anchors: Vec::new(),
                nodes: to_ranked(hits),
            })
        }
    }
}

fn path_text(v: Option<&Value>) -> String {
    v.and_then(Value::as_array)
        .map(|a| a.iter().filter_map(Value::as_str).collect::<Vec<_>>().join(" / "))
        .unwrap_or_default()
}

fn non_empty(s: String, fallback: &str) -> String {
    if s.trim().is_empty() {
        fallback.to_string()
    } else {
        s
    }
}

/// One evidence record per candidate node, in rank order.
pub fn verbalize(cand: &CandidateSubgraph, g: &TypedGraph) -> Result<Vec<EvidenceRecord>, QueryError> {
    cand.nodes
        .iter()
        .take(EVIDENCE_BUDGET)
        .map(|r| verbalize_node(g, r.node))
        .collect()
}

pub fn verbalize_node(g: &TypedGraph, idx: usize) -> Result<EvidenceRecord, QueryError> {
    let node = g.node(idx);
    let dangling = || QueryError::DanglingNode(node.id.clone());
    let prov = node.provenance().ok_or_else(dangling)?;
    let clause = prov.clause_id.clone();
    let (subject, relation, object, condition) = match node.node_type {
        NodeType::Cell => {
            let row = path_text(node.attrs.get("row_path"));
            let col = path_text(node.attrs.get("col_path"));
            let subject = if row.is_empty() {
                node.attr_str("caption").unwrap_or_default().to_string()
            } else {
                row
            };
            let object = if col.is_empty() {
                node.text.clone()
            } else {
                format!("{col} = {}", node.text)
            };
            let mut preds: Vec<usize> = g
                .in_edges(idx)
                .filter(|e| e.rel == RelationType::Activates)
                .map(|e| e.src)
                .collect();
            preds.sort_by(|a, b| g.node(*a).id.cmp(&g.node(*b).id));
            preds.dedup();
            let condition = if preds.is_empty() {
                None
            } else {
                Some(preds.iter().map(|p| g.node(*p).text.clone()).collect::<Vec<_>>().join("; "))
            };
            (subject, "has value under", object, condition)
        }
        NodeType::Paragraph => {
            let title = g
                .in_edges(idx)
                .filter(|e| e.rel == RelationType::Contains && g.node(e.src).node_type == NodeType::Section)
                .map(|e| g.node(e.src).text.clone())
                .next()
                .unwrap_or_else(|| clause.clone());
            (title, "states", node.text.clone(), None)
        }
        NodeType::Operator => {
            let ast = subexpression_at(g, &node.id).map_err(|_| dangling())?;
            let label = node.attr_str("label").map(|l| format!("equation ({})", l.trim_matches(['(', ')'])));
            match ast {
                MathAst::Binary(crate::formula::BinOp::Eq, lhs, rhs) => {
                    (lhs.to_string(), "is computed as", rhs.to_string(), None)
                }
                other => (
                    label.unwrap_or_else(|| "expression".to_string()),
                    "is computed as",
                    other.to_string(),
                    None,
                ),
            }
        }
        NodeType::MacroNode => {
            let summary = node.attr_str("summary").unwrap_or_default().to_string();
            return Ok(EvidenceRecord {
                clause: non_empty(node.text.clone(), &node.id),
                subject: non_empty(node.text.clone(), &node.id),
                relation: "summarizes".into(),
                object: non_empty(summary, &node.text),
                condition: None,
                provenance: prov,
            });
        }
        NodeType::Section => (node.text.clone(), "is titled", node.text.clone(), None),
        _ => (node.text.clone(), "mentions", node.text.clone(), None),
    };
    Ok(EvidenceRecord {
        clause: non_empty(clause, &prov.doc_id),
        subject: non_empty(subject, &node.id),
        relation: relation.to_string(),
        object: non_empty(object, &node.id),
        condition,
        provenance: prov,
    })
}

pub const PROMPT_HEADER: &str = "Question: ";
pub const PROMPT_EVIDENCE: &str = "Evidence:";
pub const PROMPT_FOOTER: &str = "Answer using only the evidence above and cite the clause of each record you use.";

pub fn build_prompt(q: &str, records: &[EvidenceRecord]) -> String {
    let mut out = format!("{PROMPT_HEADER}{}\n\n{PROMPT_EVIDENCE}\n", q.trim());
    if records.is_empty() {
        out.push_str("(none)\n");
    }
    for (i, r) in records.iter().enumerate() {
        out.push_str(&r.render(i + 1));
        out.push('\n');
    }
    out.push('\n');
    out.push_str(PROMPT_FOOTER);
    out
}

pub fn answer(q: &str, records: &[EvidenceRecord], generator: &mut dyn Generator) -> Result<String, QueryError> {
    let req = GenerationRequest {
        question: q.to_string(),
        prompt: build_prompt(q, records),
        records: records.to_vec(),
    };
    generator.generate(&req).map_err(QueryError::Generator)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostParams {
    pub p_low: f64,
    pub p_med: f64,
    pub p_high: f64,
    pub n_nodes: f64,
    pub anchors: f64,
    pub d_eff: f64,
    pub k_max: u32,
    pub m: f64,
}

/// `p_low·log2 n + p_med·|A|·d^K + p_high·m`, unit constants.
pub fn expected_retrieval_cost(c: &CostParams) -> Result<f64, QueryError> {
    let ps = [c.p_low, c.p_med, c.p_high];
    if ps.iter().any(|p| !(0.0..=1.0).contains(p)) || (ps.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(QueryError::BadProbabilities(format!("{ps:?}")));
    }
    Ok(c.p_low * c.n_nodes.log2() + c.p_med * c.anchors * c.d_eff.powi(c.k_max as i32) + c.p_high * c.m)
}
