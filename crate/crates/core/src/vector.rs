//! Embeddings, exact inner-product search and the two-view alignment layer.
//!
//! Text is embedded by signed feature hashing. Topology is a one-round
//! neighbour-type aggregate. Both views are projected into a shared space of
//! dimension `m`; the alignment objective is the Jensen-Shannon divergence
//! between the softmax distributions of the two projections, with a hinge on
//! sampled negatives.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use thiserror::Error;

use crate::canonical::{sha256_hex, to_canonical_string};
use crate::graph::{NodeType, RelationType, TypedGraph};
use crate::llm::{Embedder, LlmError};
use crate::text::word_tokens;

pub const TEXT_DIM: usize = 256;
pub const TOPO_DIM: usize = 1 + 2 * 11;
pub const INDEX_FORMAT_VERSION: u64 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VectorError {
    #[error("dimension mismatch: index {expected}, vector {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("zero vector for {0:?} is not indexable")]
    ZeroVector(String),
    #[error("not a probability distribution: {0}")]
    NotADistribution(String),
    #[error("alignment training diverged at epoch {0}")]
    Divergence(usize),
    #[error("alignment needs at least one pair")]
    NoPairs,
    #[error("index checksum mismatch")]
    Checksum,
    #[error("malformed index file: {0}")]
    Format(String),
    #[error("i/o error: {0}")]
    Io(String),
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `v / |v|`, or `v` unchanged when it is the zero vector.
pub fn normalized(mut v: Vec<f64>) -> Vec<f64> {
    let n = norm(&v);
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    v
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let d = norm(a) * norm(b);
    if d == 0.0 {
        0.0
    } else {
        dot(a, b) / d
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub vector: Vec<f64>,
    pub norm: f64,
}

impl Embedding {
    pub fn new(vector: Vec<f64>) -> Self {
        let norm = norm(&vector);
        Embedding { vector, norm }
    }

    pub fn indexable(&self) -> bool {
        self.norm > 0.0 && self.vector.iter().all(|x| x.is_finite())
    }
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Bucket and sign of a token under the hashing embedder.
pub fn token_bucket(token: &str, dim: usize) -> (usize, f64) {
    let h = fnv1a64(token.as_bytes());
    let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
    ((h % dim as u64) as usize, sign)
}

/// Deterministic local text embedding of dimension [`TEXT_DIM`].
pub fn embed_text(text: &str) -> Embedding {
    embed_text_dim(text, TEXT_DIM)
}

pub fn embed_text_dim(text: &str, dim: usize) -> Embedding {
    let mut v = vec![0.0; dim];
    for tok in word_tokens(text) {
        let (b, s) = token_bucket(&tok, dim);
        v[b] += s;
    }
    Embedding::new(normalized(v))
}

/// The local hashing embedder behind the [`Embedder`] interface. Not ledgered:
/// it makes no service calls.
#[derive(Debug, Clone, Copy)]
pub struct HashEmbedder {
    pub dim: usize,
}

impl Default for HashEmbedder {
    fn default() -> Self {
        HashEmbedder { dim: TEXT_DIM }
    }
}

impl Embedder for HashEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&mut self, texts: &[String]) -> Result<Vec<Vec<f64>>, LlmError> {
        Ok(texts.iter().map(|t| embed_text_dim(t, self.dim).vector).collect())
    }
}

/// Exact maximum-inner-product index over L2-normalised rows.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorIndex {
    dim: usize,
    ids: Vec<String>,
    rows: Vec<f64>,
    pos: HashMap<String, usize>,
}

impl VectorIndex {
    pub fn new(dim: usize) -> Self {
        VectorIndex {
            dim,
            ids: Vec::new(),
            rows: Vec::new(),
            pos: HashMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn vector(&self, id: &str) -> Option<&[f64]> {
        self.pos.get(id).map(|&i| &self.rows[i * self.dim..(i + 1) * self.dim])
    }

    pub fn upsert(&mut self, id: &str, v: &[f64]) -> Result<(), VectorError> {
        if v.len() != self.dim {
            return Err(VectorError::DimensionMismatch {
                expected: self.dim,
                found: v.len(),
            });
        }
        let n = norm(v);
        if n == 0.0 || !n.is_finite() {
            return Err(VectorError::ZeroVector(id.to_string()));
        }
        let row: Vec<f64> = v.iter().map(|x| x / n).collect();
        match self.pos.get(id) {
            Some(&i) => self.rows[i * self.dim..(i + 1) * self.dim].copy_from_slice(&row),
            None => {
                self.pos.insert(id.to_string(), self.ids.len());
                self.ids.push(id.to_string());
                self.rows.extend(row);
            }
        }
        Ok(())
    }

    pub fn search(&self, q: &[f64], top_k: usize) -> Result<Vec<(String, f64)>, VectorError> {
        self.search_filtered(q, top_k, |_| true)
    }

    /// Top `top_k` rows accepted by `keep`, by descending score, ties by
    /// ascending id.
    pub fn search_filtered(
        &self,
        q: &[f64],
        top_k: usize,
        keep: impl Fn(&str) -> bool,
    ) -> Result<Vec<(String, f64)>, VectorError> {
        if q.len() != self.dim {
            return Err(VectorError::DimensionMismatch {
                expected: self.dim,
                found: q.len(),
            });
        }
        let qn = normalized(q.to_vec());
        let mut scored: Vec<(f64, usize)> = (0..self.ids.len())
            .filter(|&i| keep(&self.ids[i]))
            .map(|i| (dot(&self.rows[i * self.dim..(i + 1) * self.dim], &qn), i))
            .collect();
        scored.sort_unstable_by(|a, b| b.0.total_cmp(&a.0).then_with(|| self.ids[a.1].cmp(&self.ids[b.1])));
        scored.truncate(top_k);
        Ok(scored.into_iter().map(|(s, i)| (self.ids[i].clone(), s)).collect())
    }

    fn body(&self) -> Value {
        json!({"dim": self.dim, "ids": self.ids, "vectors": self.rows})
    }

    pub fn to_json(&self) -> Value {
        let body = self.body();
        json!({
            "format_version": INDEX_FORMAT_VERSION,
            "dim": self.dim,
            "ids": self.ids,
            "vectors": self.rows,
            "checksum": sha256_hex(to_canonical_string(&body).as_bytes()),
        })
    }

    pub fn from_json(v: &Value) -> Result<Self, VectorError> {
        let bad = |m: &str| VectorError::Format(m.to_string());
        if v["format_version"].as_u64() != Some(INDEX_FORMAT_VERSION) {
            return Err(bad("format_version"));
        }
        let dim = v["dim"].as_u64().ok_or_else(|| bad("dim"))? as usize;
        let ids: Vec<String> = v["ids"]
            .as_array()
            .ok_or_else(|| bad("ids"))?
            .iter()
            .map(|x| x.as_str().map(str::to_string).ok_or_else(|| bad("id")))
            .collect::<Result<_, _>>()?;
        let rows: Vec<f64> = v["vectors"]
            .as_array()
            .ok_or_else(|| bad("vectors"))?
            .iter()
            .map(|x| x.as_f64().ok_or_else(|| bad("vector entry")))
            .collect::<Result<_, _>>()?;
        if rows.len() != ids.len() * dim {
            return Err(bad("vector count"));
        }
        let pos = ids.iter().enumerate().map(|(i, id)| (id.clone(), i)).collect();
        let idx = VectorIndex { dim, ids, rows, pos };
        let expected = v["checksum"].as_str().ok_or_else(|| bad("checksum"))?;
        if sha256_hex(to_canonical_string(&idx.body()).as_bytes()) != expected {
            return Err(VectorError::Checksum);
        }
        Ok(idx)
    }

    pub fn save(&self, path: &Path) -> Result<(), VectorError> {
        fs::write(path, to_canonical_string(&self.to_json())).map_err(|e| VectorError::Io(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, VectorError> {
        let bytes = fs::read(path).map_err(|e| VectorError::Io(e.to_string()))?;
        let v: Value = serde_json::from_slice(&bytes).map_err(|e| VectorError::Format(e.to_string()))?;
        Self::from_json(&v)
    }
}

fn check_distribution(p: &[f64], name: &str) -> Result<(), VectorError> {
    if p.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(VectorError::NotADistribution(format!("{name} has a negative or non-finite entry")));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > 1e-9 {
        return Err(VectorError::NotADistribution(format!("{name} sums to {s}")));
    }
    Ok(())
}

/// Jensen-Shannon divergence in bits.
pub fn jsd(p: &[f64], q: &[f64]) -> Result<f64, VectorError> {
    if p.len() != q.len() {
        return Err(VectorError::NotADistribution(format!("lengths {} and {}", p.len(), q.len())));
    }
    check_distribution(p, "p")?;
    check_distribution(q, "q")?;
    Ok(jsd_unchecked(p, q))
}

fn jsd_unchecked(p: &[f64], q: &[f64]) -> f64 {
    let mut total = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        let m = 0.5 * (a + b);
        let kl = |x: f64| if x > 0.0 { x * (x / m).log2() } else { 0.0 };
        total += 0.5 * (kl(a) + kl(b));
    }
    total.clamp(0.0, 1.0)
}

pub fn softmax(s: &[f64]) -> Vec<f64> {
    let max = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = s.iter().map(|x| (x - max).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignConfig {
    pub m: usize,
    pub tau: f64,
    pub margin: f64,
    pub lr: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Negatives drawn per positive pair.
    pub negatives: usize,
    /// Pairs sampled per epoch; all pairs when the set is smaller.
    pub batch: usize,
}

impl Default for AlignConfig {
    fn default() -> Self {
        AlignConfig {
            m: 128,
            tau: 1.0,
            margin: 0.5,
            lr: 0.05,
            epochs: 200,
            seed: 0,
            negatives: 1,
            batch: 256,
        }
    }
}

/// Linear projections `W_g` (topology) and `W_t` (text) into `m` dimensions,
/// stored row-major as `in_dim × m`.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentModel {
    pub topo_dim: usize,
    pub text_dim: usize,
    pub m: usize,
    pub tau: f64,
    pub wg: Vec<f64>,
    pub wt: Vec<f64>,
    pub loss_trace: Vec<f64>,
}

fn project(w: &[f64], x: &[f64], m: usize) -> Vec<f64> {
    let mut out = vec![0.0; m];
    for (a, &xa) in x.iter().enumerate() {
        if xa == 0.0 {
            continue;
        }
        let row = &w[a * m..(a + 1) * m];
        for j in 0..m {
            out[j] += xa * row[j];
        }
    }
    out
}

fn add_outer(grad: &mut [f64], x: &[f64], ds: &[f64], scale: f64) {
    let m = ds.len();
    for (a, &xa) in x.iter().enumerate() {
        if xa == 0.0 {
            continue;
        }
        let row = &mut grad[a * m..(a + 1) * m];
        for j in 0..m {
            row[j] += scale * xa * ds[j];
        }
    }
}

/// Gradient of the loss with respect to the pre-softmax scores, given the
/// gradient with respect to the softmax output.
fn softmax_backward(p: &[f64], g: &[f64]) -> Vec<f64> {
    let pg: f64 = p.iter().zip(g).map(|(a, b)| a * b).sum();
    p.iter().zip(g).map(|(pj, gj)| pj * (gj - pg)).collect()
}

/// ∂JSD(p,q)/∂p. Entries of `p` and `q` must be strictly positive.
fn jsd_grad(p: &[f64], q: &[f64]) -> Vec<f64> {
    p.iter().zip(q).map(|(a, b)| 0.5 * (a / (0.5 * (a + b))).log2()).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignGrad {
    pub wg: Vec<f64>,
    pub wt: Vec<f64>,
}

impl AlignmentModel {
    /// Seeded uniform initialisation in `±1/sqrt(in_dim)`.
    pub fn init(topo_dim: usize, text_dim: usize, cfg: &AlignConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut draw = |n: usize, fan_in: usize| -> Vec<f64> {
            let a = 1.0 / (fan_in as f64).sqrt();
            (0..n).map(|_| rng.random_range(-a..a)).collect()
        };
        let wg = draw(topo_dim * cfg.m, topo_dim);
        let wt = draw(text_dim * cfg.m, text_dim);
        AlignmentModel {
            topo_dim,
            text_dim,
            m: cfg.m,
            tau: cfg.tau,
            wg,
            wt,
            loss_trace: Vec::new(),
        }
    }

    pub fn project_topo(&self, z: &[f64]) -> Vec<f64> {
        project(&self.wg, z, self.m)
    }

    pub fn project_text(&self, t: &[f64]) -> Vec<f64> {
        project(&self.wt, t, self.m)
    }

    pub fn p_graph(&self, z: &[f64]) -> Vec<f64> {
        softmax(&self.project_topo(z).iter().map(|s| s / self.tau).collect::<Vec<_>>())
    }

    pub fn p_text(&self, t: &[f64]) -> Vec<f64> {
        softmax(&self.project_text(t).iter().map(|s| s / self.tau).collect::<Vec<_>>())
    }

    /// Fused node vector: normalised concatenation of the normalised views.
    pub fn fused(&self, z: &[f64], t: &[f64]) -> Vec<f64> {
        let mut v = normalized(self.project_topo(z));
        v.extend(normalized(self.project_text(t)));
        normalized(v)
    }

    /// Query vector: the text projection in both halves, so its score against
    /// a node mixes agreement with both of the node's views.
    pub fn query_vector(&self, t: &[f64]) -> Vec<f64> {
        let half = normalized(self.project_text(t));
        let mut v = half.clone();
        v.extend(half);
        normalized(v)
    }

    pub fn to_json(&self) -> Value {
        json!({
            "format_version": 1,
            "topo_dim": self.topo_dim,
            "text_dim": self.text_dim,
            "m": self.m,
            "tau": self.tau,
            "wg": self.wg,
            "wt": self.wt,
            "loss_trace": self.loss_trace,
        })
    }

    pub fn from_json(v: &Value) -> Result<Self, VectorError> {
        let bad = |m: &str| VectorError::Format(m.to_string());
        let u = |k: &str| v[k].as_u64().map(|x| x as usize).ok_or_else(|| bad(k));
        let floats = |k: &str| -> Result<Vec<f64>, VectorError> {
            v[k].as_array()
                .ok_or_else(|| bad(k))?
                .iter()
                .map(|x| x.as_f64().ok_or_else(|| bad(k)))
                .collect()
        };
        let model = AlignmentModel {
            topo_dim: u("topo_dim")?,
            text_dim: u("text_dim")?,
            m: u("m")?,
            tau: v["tau"].as_f64().ok_or_else(|| bad("tau"))?,
            wg: floats("wg")?,
            wt: floats("wt")?,
            loss_trace: floats("loss_trace")?,
        };
        if model.wg.len() != model.topo_dim * model.m || model.wt.len() != model.text_dim * model.m {
            return Err(bad("weight shape"));
        }
        Ok(model)
    }
}

/// Loss and analytic gradients for one positive pair `(z, t)` and negative
/// text views.
pub fn align_loss(model: &AlignmentModel, z: &[f64], t: &[f64], negatives: &[&[f64]], margin: f64) -> (f64, AlignGrad) {
    let m = model.m;
    let p = model.p_graph(z);
    let q = model.p_text(t);
    let mut loss = jsd_unchecked(&p, &q);
    let mut gp = jsd_grad(&p, &q);
    let mut grad = AlignGrad {
        wg: vec![0.0; model.wg.len()],
        wt: vec![0.0; model.wt.len()],
    };
    let gq = jsd_grad(&q, &p);
    add_outer(&mut grad.wt, t, &softmax_backward(&q, &gq), 1.0 / model.tau);
    for neg in negatives {
        let qn = model.p_text(neg);
        let d = jsd_unchecked(&p, &qn);
        if margin - d > 0.0 {
            loss += margin - d;
            for (g, x) in gp.iter_mut().zip(jsd_grad(&p, &qn)) {
                *g -= x;
            }
            let gqn: Vec<f64> = jsd_grad(&qn, &p).into_iter().map(|x| -x).collect();
            add_outer(&mut grad.wt, neg, &softmax_backward(&qn, &gqn), 1.0 / model.tau);
        }
    }
    add_outer(&mut grad.wg, z, &softmax_backward(&p, &gp), 1.0 / model.tau);
    debug_assert_eq!(grad.wg.len(), model.topo_dim * m);
    (loss, grad)
}

/// Plain full-batch gradient descent on sampled pairs. Every random choice
/// comes from `cfg.seed`.
pub fn train_alignment(
    mut model: AlignmentModel,
    pairs: &[(Vec<f64>, Vec<f64>)],
    cfg: &AlignConfig,
) -> Result<AlignmentModel, VectorError> {
    if pairs.is_empty() {
        return Err(VectorError::NoPairs);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let n = pairs.len();
    model.loss_trace.clear();
    for epoch in 0..cfg.epochs {
        let batch: Vec<usize> = if n <= cfg.batch {
            (0..n).collect()
        } else {
            (0..cfg.batch).map(|_| rng.random_range(0..n)).collect()
        };
        let mut gwg = vec![0.0; model.wg.len()];
        let mut gwt = vec![0.0; model.wt.len()];
        let mut total = 0.0;
        for &i in &batch {
            let negs: Vec<&[f64]> = if n > 1 {
                (0..cfg.negatives)
                    .map(|_| {
                        let mut j = rng.random_range(0..n - 1);
                        if j >= i {
                            j += 1;
                        }
                        pairs[j].1.as_slice()
                    })
                    .collect()
            } else {
                Vec::new()
            };
            let (l, g) = align_loss(&model, &pairs[i].0, &pairs[i].1, &negs, cfg.margin);
            total += l;
            gwg.iter_mut().zip(&g.wg).for_each(|(a, b)| *a += b);
            gwt.iter_mut().zip(&g.wt).for_each(|(a, b)| *a += b);
        }
        let scale = cfg.lr / batch.len() as f64;
        model.wg.iter_mut().zip(&gwg).for_each(|(w, g)| *w -= scale * g);
        model.wt.iter_mut().zip(&gwt).for_each(|(w, g)| *w -= scale * g);
        let mean = total / batch.len() as f64;
        if !mean.is_finite() || model.wg.iter().chain(&model.wt).any(|w| !w.is_finite()) {
            return Err(VectorError::Divergence(epoch));
        }
        model.loss_trace.push(mean);
    }
    Ok(model)
}

/// Mean positive-pair JSD, used to judge training progress.
pub fn mean_positive_jsd(model: &AlignmentModel, pairs: &[(Vec<f64>, Vec<f64>)]) -> f64 {
    pairs
        .iter()
        .map(|(z, t)| jsd_unchecked(&model.p_graph(z), &model.p_text(t)))
        .sum::<f64>()
        / pairs.len().max(1) as f64
}

/// One round of topology aggregation per node: `[degree / max degree,
/// one-hot type, mean neighbour type histogram]`. `member_of` edges are
/// ignored.
pub fn topo_features(g: &TypedGraph) -> Vec<Vec<f64>> {
    let n = g.node_count();
    let k = NodeType::ALL.len();
    let mut degree = vec![0usize; n];
    let mut hist = vec![vec![0.0; k]; n];
    for e in g.edges() {
        if e.rel == RelationType::MemberOf {
            continue;
        }
        degree[e.src] += 1;
        degree[e.dst] += 1;
        hist[e.src][g.node(e.dst).node_type.index()] += 1.0;
        hist[e.dst][g.node(e.src).node_type.index()] += 1.0;
    }
    let max_degree = degree.iter().copied().max().unwrap_or(0).max(1) as f64;
    (0..n)
        .map(|i| {
            let mut f = Vec::with_capacity(1 + 2 * k);
            f.push(degree[i] as f64 / max_degree);
            let mut onehot = vec![0.0; k];
            onehot[g.node(i).node_type.index()] = 1.0;
            f.extend(onehot);
            let d = degree[i].max(1) as f64;
            f.extend(hist[i].iter().map(|h| h / d));
            f
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_embedding_contract() {
        let a = embed_text("power control");
        assert!((cosine(&a.vector, &embed_text("power control").vector) - 1.0).abs() < 1e-12);
        assert!((cosine(&a.vector, &embed_text("power control ").vector) - 1.0).abs() < 1e-12);
        let (b1, _) = token_bucket("power", TEXT_DIM);
        let (b2, _) = token_bucket("control", TEXT_DIM);
        let (b3, _) = token_bucket("harq", TEXT_DIM);
        let (b4, _) = token_bucket("retransmission", TEXT_DIM);
        assert!(![b1, b2].contains(&b3) && ![b1, b2].contains(&b4));
        let c = embed_text("harq retransmission");
        assert_eq!(cosine(&a.vector, &c.vector), 0.0);
        assert!(!embed_text("").indexable());
    }

    #[test]
    fn index_basics() {
        let mut idx = VectorIndex::new(3);
        idx.upsert("a", &[1.0, 0.0, 0.0]).unwrap();
        idx.upsert("b", &[0.0, 1.0, 0.0]).unwrap();
        idx.upsert("c", &[0.0, 0.0, 2.0]).unwrap();
        let hits = idx.search(&[0.0, 0.0, 1.0], 10).unwrap();
        assert_eq!(hits.len(), 3);
        assert_eq!(hits[0], ("c".to_string(), 1.0));
        // ties on the two orthogonal rows resolve by id
        assert_eq!(hits[1].0, "a");
        assert!(matches!(idx.search(&[1.0], 1), Err(VectorError::DimensionMismatch { .. })));
        assert!(matches!(idx.upsert("z", &[0.0; 3]), Err(VectorError::ZeroVector(_))));
        let back = VectorIndex::from_json(&idx.to_json()).unwrap();
        assert_eq!(back, idx);
    }

    #[test]
    fn index_checksum_detects_edits() {
        let mut idx = VectorIndex::new(2);
        idx.upsert("a", &[1.0, 1.0]).unwrap();
        let mut v = idx.to_json();
        v["ids"][0] = json!("b");
        assert_eq!(VectorIndex::from_json(&v), Err(VectorError::Checksum));
    }

    #[test]
    fn jsd_examples() {
        assert_eq!(jsd(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        assert!((jsd(&[1.0, 0.0], &[0.0, 1.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!((jsd(&[1.0, 0.0], &[0.5, 0.5]).unwrap() - 0.31127812445913283).abs() < 1e-12);
        assert!(matches!(jsd(&[0.5, 0.6], &[0.5, 0.5]), Err(VectorError::NotADistribution(_))));
    }

    #[test]
    fn zero_loss_at_agreement() {
        let cfg = AlignConfig {
            m: 4,
            ..Default::default()
        };
        let mut model = AlignmentModel::init(2, 2, &cfg);
        model.wg = vec![0.0; 8];
        model.wt = vec![0.0; 8];
        let (loss, grad) = align_loss(&model, &[1.0, 0.0], &[0.0, 1.0], &[], 0.5);
        assert_eq!(loss, 0.0);
        assert!(grad.wg.iter().chain(&grad.wt).all(|g| *g == 0.0));
    }

    #[test]
    fn lr_zero_keeps_model() {
        let cfg = AlignConfig {
            m: 4,
            lr: 0.0,
            epochs: 3,
            ..Default::default()
        };
        let model = AlignmentModel::init(3, 5, &cfg);
        let pairs = vec![(vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0, 0.0, 1.0]); 2];
        let trained = train_alignment(model.clone(), &pairs, &cfg).unwrap();
        assert_eq!(trained.wg, model.wg);
        assert_eq!(trained.wt, model.wt);
    }

    #[test]
    fn fused_dimension() {
        let cfg = AlignConfig::default();
        let model = AlignmentModel::init(TOPO_DIM, TEXT_DIM, &cfg);
        let z = vec![0.5; TOPO_DIM];
        let t = embed_text("maximum output power").vector;
        let f = model.fused(&z, &t);
        assert_eq!(f.len(), 2 * cfg.m);
        assert!((cosine(&f, &f) - 1.0).abs() < 1e-12);
        let mut expect = normalized(model.project_topo(&z));
        expect.extend(normalized(model.project_text(&t)));
        let expect = normalized(expect);
        assert!(f.iter().zip(&expect).all(|(a, b)| (a - b).abs() < 1e-15));
    }
}
