//! External model services: embedding, community summarisation and answer
//! generation over OpenAI-compatible HTTP, with deterministic offline
//! fallbacks and a token ledger.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde_json::{json, Value};
use thiserror::Error;

use crate::graph::NodeType;
use crate::query::EvidenceRecord;
use crate::text::{first_sentence, truncate_tokens, whitespace_tokens};

pub const ENV_EMBED_ENDPOINT: &str = "SEMRAG_EMBED_ENDPOINT";
pub const ENV_LLM_ENDPOINT: &str = "SEMRAG_LLM_ENDPOINT";
pub const ENV_API_KEY_VAR: &str = "SEMRAG_API_KEY_VAR";
pub const ENV_OFFLINE: &str = "SEMRAG_OFFLINE";

pub const NO_EVIDENCE_ANSWER: &str = "no supporting evidence found";

static NETWORK_CALLS: AtomicUsize = AtomicUsize::new(0);

/// Outbound HTTP requests made by this process so far.
pub fn network_calls() -> usize {
    NETWORK_CALLS.load(Ordering::SeqCst)
}

/// True when `SEMRAG_OFFLINE=1` forces the offline fallbacks.
pub fn offline_forced() -> bool {
    std::env::var(ENV_OFFLINE).is_ok_and(|v| v == "1")
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LlmError {
    #[error("HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("request timed out: {0}")]
    Timeout(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("token budget {requested} outside 1..={limit}")]
    BudgetExceeded { requested: usize, limit: usize },
    #[error("embedding dimension {found}, expected {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("unexpected response: {0}")]
    Protocol(String),
    #[error("invalid client config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientConfig {
    pub endpoint: String,
    pub model: String,
    /// Name of the environment variable holding a bearer token.
    pub api_key_var: Option<String>,
    pub timeout_ms: u64,
    pub max_retries: u32,
    /// Per-call token budget (T_s for summaries).
    pub token_budget: usize,
}

impl ClientConfig {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        ClientConfig {
            endpoint: endpoint.into(),
            model: model.into(),
            api_key_var: std::env::var(ENV_API_KEY_VAR).ok(),
            timeout_ms: 30_000,
            max_retries: 2,
            token_budget: 500,
        }
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        if self.timeout_ms == 0 {
            return Err(LlmError::Config("timeout must be positive".into()));
        }
        if self.token_budget == 0 {
            return Err(LlmError::Config("token budget must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Indexing,
    Query,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CallKind {
    Summarize,
    Generate,
    Embed,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Indexing => "indexing",
            Phase::Query => "query",
        }
    }
}

impl CallKind {
    pub fn as_str(self) -> &'static str {
        match self {
            CallKind::Summarize => "summarize",
            CallKind::Generate => "generate",
            CallKind::Embed => "embed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LedgerEntry {
    pub phase: Phase,
    pub kind: CallKind,
    pub prompt_tokens: usize,
    pub completion_tokens: usize,
    pub wall_ms: u64,
    pub attempts: u32,
}

/// Append-only token accounting shared by all clients of a run.
#[derive(Debug, Clone, Default)]
pub struct TokenLedger {
    entries: Arc<Mutex<Vec<LedgerEntry>>>,
}

impl TokenLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&self, entry: LedgerEntry) {
        self.entries.lock().expect("ledger lock").push(entry);
    }

    pub fn entries(&self) -> Vec<LedgerEntry> {
        self.entries.lock().expect("ledger lock").clone()
    }

    /// `(prompt, completion)` totals, optionally restricted to one phase.
    pub fn totals(&self, phase: Option<Phase>) -> (usize, usize) {
        self.entries()
            .iter()
            .filter(|e| phase.is_none_or(|p| e.phase == p))
            .fold((0, 0), |(p, c), e| (p + e.prompt_tokens, c + e.completion_tokens))
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("phase,kind,prompt_tokens,completion_tokens,wall_ms,attempts\n");
        for e in self.entries() {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                e.phase.as_str(),
                e.kind.as_str(),
                e.prompt_tokens,
                e.completion_tokens,
                e.wall_ms,
                e.attempts
            ));
        }
        out
    }
}

/// Minimal JSON-over-HTTP client with retries on 5xx, 429 and transport
/// failures.
#[derive(Debug, Clone)]
pub struct HttpClient {
    pub config: ClientConfig,
}

impl HttpClient {
    pub fn new(config: ClientConfig) -> Result<Self, LlmError> {
        config.validate()?;
        Ok(HttpClient { config })
    }

    /// POST `body` to `path`; returns the response and the number of attempts.
    pub fn post_json(&self, path: &str, body: &Value) -> Result<(Value, u32), LlmError> {
        let url = format!("{}{}", self.config.endpoint.trim_end_matches('/'), path);
        let key = self
            .config
            .api_key_var
            .as_deref()
            .and_then(|var| std::env::var(var).ok());
        let timeout = Duration::from_millis(self.config.timeout_ms);
        let mut last = LlmError::Transport("no attempt made".into());
        for attempt in 1..=self.config.max_retries + 1 {
            NETWORK_CALLS.fetch_add(1, Ordering::SeqCst);
            let mut req = ureq::post(&url).timeout(timeout).set("Content-Type", "application/json");
            if let Some(k) = &key {
                req = req.set("Authorization", &format!("Bearer {k}"));
            }
            match req.send_json(body.clone()) {
                Ok(resp) => {
                    let v: Value = resp
                        .into_json()
                        .map_err(|e| LlmError::Protocol(format!("invalid JSON body: {e}")))?;
                    log::debug!("POST {url} ok after {attempt} attempt(s)");
                    return Ok((v, attempt));
                }
                Err(ureq::Error::Status(status, resp)) => {
                    let text = resp.into_string().unwrap_or_default();
                    let excerpt: String = text.chars().take(200).collect();
                    last = LlmError::Http { status, body: excerpt };
                    if status < 500 && status != 429 {
                        return Err(last);
                    }
                }
                Err(ureq::Error::Transport(t)) => {
                    let msg = t.to_string();
                    last = if msg.contains("timed out") || msg.contains("Timeout") {
                        LlmError::Timeout(msg)
                    } else {
                        LlmError::Transport(msg)
                    };
                }
            }
            log::warn!("POST {url} attempt {attempt} failed: {last}");
        }
        Err(last)
    }
}

fn usage(v: &Value, key: &str) -> Option<usize> {
    v["usage"][key].as_u64().map(|n| n as usize)
}

fn chat_body(model: &str, system: &str, user: &str, max_tokens: Option<usize>) -> Value {
    let mut body = json!({
        "model": model,
        "temperature": 0,
        "messages": [
            {"role": "system", "content": system},
            {"role": "user", "content": user},
        ],
    });
    if let Some(m) = max_tokens {
        body["max_tokens"] = json!(m);
    }
    body
}

fn chat_content(v: &Value) -> Result<String, LlmError> {
    v["choices"][0]["message"]["content"]
        .as_str()
        .map(str::to_string)
        .ok_or_else(|| LlmError::Protocol("missing choices[0].message.content".into()))
}

// ---------------------------------------------------------------------------
// summarisation

#[derive(Debug, Clone, PartialEq)]
pub struct DigestMember {
    pub node_id: String,
    pub node_type: NodeType,
    pub text: String,
    pub degree: u64,
}

/// What a summarizer sees of a community: members by descending degree.
#[derive(Debug, Clone, PartialEq)]
pub struct CommunityDigest {
    pub community_id: usize,
    pub total_members: usize,
    pub members: Vec<DigestMember>,
}

impl CommunityDigest {
    pub fn render(&self) -> String {
        let mut out = format!("community {} ({} members)\n", self.community_id, self.total_members);
        for m in &self.members {
            out.push_str(&format!("- [{}] {}\n", m.node_type, m.text));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub label: String,
    pub summary: String,
    pub tokens_used: usize,
}

pub trait Summarizer {
    fn summarize(&mut self, digest: &CommunityDigest, budget: usize) -> Result<Summary, LlmError>;
}

fn check_budget(budget: usize, limit: usize) -> Result<(), LlmError> {
    if budget == 0 || budget > limit {
        return Err(LlmError::BudgetExceeded {
            requested: budget,
            limit,
        });
    }
    Ok(())
}

/// Extractive summariser. The label is the text of the highest-degree Term or
/// Section member (else the highest-degree member); the summary is the first
/// sentences of the remaining members in degree order, cut so that label and
/// summary together fit the budget.
#[derive(Debug, Clone)]
pub struct OfflineSummarizer {
    pub max_budget: usize,
    pub ledger: TokenLedger,
}

impl OfflineSummarizer {
    pub fn new(max_budget: usize, ledger: TokenLedger) -> Self {
        OfflineSummarizer { max_budget, ledger }
    }
}

impl Summarizer for OfflineSummarizer {
    fn summarize(&mut self, digest: &CommunityDigest, budget: usize) -> Result<Summary, LlmError> {
        check_budget(budget, self.max_budget)?;
        let start = Instant::now();
        let label_pos = digest
            .members
            .iter()
            .position(|m| matches!(m.node_type, NodeType::Term | NodeType::Section))
            .unwrap_or(0);
        let label_raw = digest.members.get(label_pos).map(|m| m.text.as_str()).unwrap_or("");
        let label = truncate_tokens(label_raw, budget);
        let mut remaining = budget - whitespace_tokens(&label);
        let mut parts: Vec<String> = Vec::new();
        for (i, m) in digest.members.iter().enumerate() {
            if i == label_pos || remaining == 0 {
                continue;
            }
            let sentence = truncate_tokens(first_sentence(&m.text), remaining);
            if sentence.is_empty() || parts.contains(&sentence) {
                continue;
            }
            remaining -= whitespace_tokens(&sentence);
            parts.push(sentence);
        }
        let summary = parts.join(" ");
        let tokens_used = whitespace_tokens(&label) + whitespace_tokens(&summary);
        self.ledger.record(LedgerEntry {
            phase: Phase::Indexing,
            kind: CallKind::Summarize,
            prompt_tokens: 0,
            completion_tokens: tokens_used,
            wall_ms: start.elapsed().as_millis() as u64,
            attempts: 1,
        });
        Ok(Summary {
            label,
            summary,
            tokens_used,
        })
    }
}

pub const SUMMARY_SYSTEM_PROMPT: &str = "You label and summarise clusters of specification content. \
Answer with a short label on the first line and a factual summary on the following lines.";

#[derive(Debug, Clone)]
pub struct RemoteSummarizer {
    pub http: HttpClient,
    pub ledger: TokenLedger,
}

impl Summarizer for RemoteSummarizer {
    fn summarize(&mut self, digest: &CommunityDigest, budget: usize) -> Result<Summary, LlmError> {
        check_budget(budget, self.http.config.token_budget)?;
        let start = Instant::now();
        let body = chat_body(&self.http.config.model, SUMMARY_SYSTEM_PROMPT, &digest.render(), Some(budget));
        let (v, attempts) = self.http.post_json("/v1/chat/completions", &body)?;
        let content = chat_content(&v)?;
        let mut lines = content.lines().map(str::trim).filter(|l| !l.is_empty());
        let label = lines.next().unwrap_or("").trim_end_matches(':').to_string();
        let summary = lines.collect::<Vec<_>>().join(" ");
        let completion = usage(&v, "completion_tokens").unwrap_or_else(|| whitespace_tokens(&content));
        let prompt = usage(&v, "prompt_tokens").unwrap_or(0);
        self.ledger.record(LedgerEntry {
            phase: Phase::Indexing,
            kind: CallKind::Summarize,
            prompt_tokens: prompt,
            completion_tokens: completion,
            wall_ms: start.elapsed().as_millis() as u64,
            attempts,
        });
        if completion > budget {
            return Err(LlmError::BudgetExceeded {
                requested: completion,
                limit: budget,
            });
        }
        Ok(Summary {
            label,
            summary,
            tokens_used: completion,
        })
    }
}

// ---------------------------------------------------------------------------
// generation

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationRequest {
    pub question: String,
    pub prompt: String,
    pub records: Vec<EvidenceRecord>,
}

pub trait Generator {
    fn generate(&mut self, req: &GenerationRequest) -> Result<String, LlmError>;
}

/// Answers with the top record's object and its citation.
#[derive(Debug, Clone, Default)]
pub struct TemplateGenerator;

impl Generator for TemplateGenerator {
    fn generate(&mut self, req: &GenerationRequest) -> Result<String, LlmError> {
        let Some(top) = req.records.first() else {
            return Ok(NO_EVIDENCE_ANSWER.to_string());
        };
        Ok(match &top.condition {
            Some(c) => format!("{} (condition: {}) [{}]", top.object, c, top.provenance.citation()),
            None => format!("{} [{}]", top.object, top.provenance.citation()),
        })
    }
}

pub const ANSWER_SYSTEM_PROMPT: &str =
    "Answer strictly from the numbered evidence records. Cite the clause of every record you use.";

#[derive(Debug, Clone)]
pub struct RemoteGenerator {
    pub http: HttpClient,
    pub ledger: TokenLedger,
}

impl Generator for RemoteGenerator {
    fn generate(&mut self, req: &GenerationRequest) -> Result<String, LlmError> {
        let start = Instant::now();
        let body = chat_body(&self.http.config.model, ANSWER_SYSTEM_PROMPT, &req.prompt, None);
        let (v, attempts) = self.http.post_json("/v1/chat/completions", &body)?;
        let content = chat_content(&v)?;
        self.ledger.record(LedgerEntry {
            phase: Phase::Query,
            kind: CallKind::Generate,
            prompt_tokens: usage(&v, "prompt_tokens").unwrap_or_else(|| whitespace_tokens(&req.prompt)),
            completion_tokens: usage(&v, "completion_tokens").unwrap_or_else(|| whitespace_tokens(&content)),
            wall_ms: start.elapsed().as_millis() as u64,
            attempts,
        });
        Ok(content)
    }
}

// ---------------------------------------------------------------------------
// embeddings

pub trait Embedder {
    fn dim(&self) -> usize;
    /// One L2-normalised vector per input text.
    fn embed(&mut self, texts: &[String]) -> Result<Vec<Vec<f64>>, LlmError>;
}

#[derive(Debug, Clone)]
pub struct RemoteEmbedder {
    pub http: HttpClient,
    pub ledger: TokenLedger,
    pub phase: Phase,
    pub dim: usize,
}

impl Embedder for RemoteEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&mut self, texts: &[String]) -> Result<Vec<Vec<f64>>, LlmError> {
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        let start = Instant::now();
        let body = json!({"model": self.http.config.model, "input": texts});
        let (v, attempts) = self.http.post_json("/v1/embeddings", &body)?;
        let data = v["data"]
            .as_array()
            .ok_or_else(|| LlmError::Protocol("missing data array".into()))?;
        if data.len() != texts.len() {
            return Err(LlmError::Protocol(format!(
                "{} embeddings for {} inputs",
                data.len(),
                texts.len()
            )));
        }
        let mut rows: Vec<(usize, Vec<f64>)> = Vec::with_capacity(data.len());
        for (i, item) in data.iter().enumerate() {
            let index = item["index"].as_u64().map(|n| n as usize).unwrap_or(i);
            let vec: Vec<f64> = item["embedding"]
                .as_array()
                .ok_or_else(|| LlmError::Protocol("missing embedding".into()))?
                .iter()
                .map(|x| x.as_f64().ok_or_else(|| LlmError::Protocol("non-numeric embedding".into())))
                .collect::<Result<_, _>>()?;
            if vec.len() != self.dim {
                return Err(LlmError::DimensionMismatch {
                    expected: self.dim,
                    found: vec.len(),
                });
            }
            rows.push((index, crate::vector::normalized(vec)));
        }
        rows.sort_by_key(|(i, _)| *i);
        self.ledger.record(LedgerEntry {
            phase: self.phase,
            kind: CallKind::Embed,
            prompt_tokens: usage(&v, "prompt_tokens")
                .unwrap_or_else(|| texts.iter().map(|t| whitespace_tokens(t)).sum()),
            completion_tokens: 0,
            wall_ms: start.elapsed().as_millis() as u64,
            attempts,
        });
        Ok(rows.into_iter().map(|(_, v)| v).collect())
    }
}

/// Remote service endpoints from the environment, unless offline is forced.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ServiceEnv {
    pub embed_endpoint: Option<String>,
    pub llm_endpoint: Option<String>,
}

impl ServiceEnv {
    pub fn from_env() -> Self {
        if offline_forced() {
            return ServiceEnv::default();
        }
        let get = |k: &str| std::env::var(k).ok().filter(|v| !v.trim().is_empty());
        ServiceEnv {
            embed_endpoint: get(ENV_EMBED_ENDPOINT),
            llm_endpoint: get(ENV_LLM_ENDPOINT),
        }
    }
}
