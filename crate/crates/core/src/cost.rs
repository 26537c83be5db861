//! Flat-chunk baseline and indexing-cost accounting.
//!
//! [`chunk`] is the naive splitter used for comparison: it flattens every
//! block to text, so table bindings and operator structure are gone. The
//! cost side compares summariser tokens spent on the macro-node budget with a
//! simulated per-level summarisation of the whole dendrogram.

use std::time::Instant;

use crate::doc_model::{BlockBody, SourceDocument};
use crate::graph::TypedGraph;
use crate::llm::{OfflineSummarizer, Phase, TokenLedger};
use crate::sem::{materialize_macronodes, sem_minimize_typed, Dendrogram, Level, SemError};

pub const DEFAULT_CHUNK_SIZE: usize = 1024;
pub const DEFAULT_OVERLAP: usize = 128;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Chunk {
    pub text: String,
    pub doc_id: String,
    /// Character (not byte) range into the flattened document.
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChunkSet {
    pub spans: Vec<Chunk>,
    pub chunk_size: usize,
    pub overlap: usize,
}

impl ChunkSet {
    /// Concatenate the spans with overlaps removed.
    pub fn reassemble(&self) -> String {
        let mut out = String::new();
        let mut covered = 0usize;
        for s in &self.spans {
            out.extend(s.text.chars().skip(covered.saturating_sub(s.start)));
            covered = s.end;
        }
        out
    }
}

/// Tables row by row with ` | ` between cells, equations as raw source,
/// blocks separated by blank lines.
pub fn flatten(doc: &SourceDocument) -> String {
    let parts: Vec<String> = doc
        .ordered_blocks()
        .map(|b| match &b.body {
            BlockBody::Section { title, .. } => title.clone(),
            BlockBody::Paragraph { text, .. } => text.clone(),
            BlockBody::Table(t) => {
                let mut rows: Vec<String> = Vec::new();
                if !t.caption.is_empty() {
                    rows.push(t.caption.clone());
                }
                rows.extend(
                    t.rows
                        .iter()
                        .map(|r| r.iter().map(|c| c.text.as_str()).collect::<Vec<_>>().join(" | ")),
                );
                rows.extend(t.footnotes.iter().map(|f| format!("{} {}", f.marker, f.text)));
                rows.join("\n")
            }
            BlockBody::Equation { math_src, .. } => math_src.clone(),
        })
        .collect();
    parts.join("\n\n")
}

fn last_boundary(chars: &[char], lo: usize, hi: usize, pat: &[char]) -> Option<usize> {
    (lo..=hi.saturating_sub(pat.len()))
        .rev()
        .find(|&i| chars[i..i + pat.len()] == *pat)
        .map(|i| i + pat.len())
}

/// Split at the last paragraph break, else the last sentence end, else the
/// hard size limit, keeping `overlap` characters shared between neighbours.
///
/// Panics if `size <= overlap`.
pub fn chunk(doc: &SourceDocument, size: usize, overlap: usize) -> ChunkSet {
    assert!(size > overlap, "chunk size must exceed overlap");
    let chars: Vec<char> = flatten(doc).chars().collect();
    let mut spans = Vec::new();
    let mut start = 0;
    while start < chars.len() {
        let hard = (start + size).min(chars.len());
        let end = if hard == chars.len() {
            hard
        } else {
            let lo = start + overlap + 1;
            last_boundary(&chars, lo, hard, &['\n', '\n'])
                .or_else(|| last_boundary(&chars, lo, hard, &['.', ' ']))
                .unwrap_or(hard)
        };
        spans.push(Chunk {
            text: chars[start..end].iter().collect(),
            doc_id: doc.id.clone(),
            start,
            end,
        });
        if end == chars.len() {
            break;
        }
        start = end - overlap;
    }
    ChunkSet {
        spans,
        chunk_size: size,
        overlap,
    }
}

/// `T_prompt · Σ_l |C_l|`.
pub fn simulate_baseline_hierarchy(levels: &[Level], t_prompt: u64) -> u64 {
    t_prompt * levels.iter().map(|l| l.communities as u64).sum::<u64>()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostReport {
    pub sem_tokens: u64,
    pub baseline_tokens: u64,
    pub level_sizes: Vec<usize>,
    pub ratio: f64,
    pub summarize_ms: u64,
}

pub fn compare_costs(g: &TypedGraph, d: &Dendrogram, k: usize, ts: usize, t_prompt: u64) -> Result<CostReport, SemError> {
    compare_costs_with_levels(g, d, &d.levels, k, ts, t_prompt)
}

/// As [`compare_costs`] with an explicit level schedule for the baseline.
pub fn compare_costs_with_levels(
    g: &TypedGraph,
    d: &Dendrogram,
    levels: &[Level],
    k: usize,
    ts: usize,
    t_prompt: u64,
) -> Result<CostReport, SemError> {
    let ledger = TokenLedger::new();
    let mut summarizer = OfflineSummarizer::new(ts, ledger.clone());
    let mut scratch = g.clone();
    let start = Instant::now();
    materialize_macronodes(d, &mut scratch, k, &mut summarizer, ts)?;
    let summarize_ms = start.elapsed().as_millis() as u64;
    let (prompt, completion) = ledger.totals(Some(Phase::Indexing));
    let sem_tokens = (prompt + completion) as u64;
    let baseline_tokens = simulate_baseline_hierarchy(levels, t_prompt);
    Ok(CostReport {
        sem_tokens,
        baseline_tokens,
        level_sizes: levels.iter().map(|l| l.communities).collect(),
        ratio: baseline_tokens as f64 / sem_tokens.max(1) as f64,
        summarize_ms,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingRow {
    pub size: usize,
    pub sem_tokens: u64,
    pub baseline_tokens: u64,
    pub build_ms: u64,
}

/// Build, partition and cost one synthetic graph per size.
pub fn scaling_curve(
    sizes: &[usize],
    build: &mut dyn FnMut(usize) -> TypedGraph,
    k: usize,
    ts: usize,
    t_prompt: u64,
) -> Result<Vec<ScalingRow>, SemError> {
    sizes
        .iter()
        .map(|&size| {
            let start = Instant::now();
            let g = build(size);
            let d = sem_minimize_typed(&g)?;
            let report = compare_costs(&g, &d, k, ts, t_prompt)?;
            Ok(ScalingRow {
                size,
                sem_tokens: report.sem_tokens,
                baseline_tokens: report.baseline_tokens,
                build_ms: start.elapsed().as_millis() as u64,
            })
        })
        .collect()
}

pub const SCALING_CSV_HEADER: &str = "size,sem_tokens,baseline_tokens,build_ms";

pub fn scaling_csv(rows: &[ScalingRow]) -> String {
    let mut out = String::from(SCALING_CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!("{},{},{},{}\n", r.size, r.sem_tokens, r.baseline_tokens, r.build_ms));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::doc_model::{Block, Provenance};

    fn doc_of(text: &str) -> SourceDocument {
        SourceDocument {
            id: "D".into(),
            release_tag: None,
            blocks: vec![Block {
                id: "p1".into(),
                prov: Provenance {
                    doc_id: "D".into(),
                    clause_id: "1".into(),
                    page: 1,
                    bbox: [0.0; 4],
                    release_tag: None,
                },
                body: BlockBody::Paragraph {
                    text: text.into(),
                    parent_section: String::new(),
                },
            }],
            reading_order: vec![0],
        }
    }

    #[test]
    fn short_doc_is_one_chunk() {
        let c = chunk(&doc_of(&"x".repeat(100)), 1024, 128);
        assert_eq!(c.spans.len(), 1);
        assert_eq!(c.spans[0].text.len(), 100);
    }

    #[test]
    fn long_doc_overlaps_and_reassembles() {
        let text = "y".repeat(2000);
        let c = chunk(&doc_of(&text), 1024, 128);
        assert_eq!(c.spans.len(), 3);
        for w in c.spans.windows(2) {
            assert_eq!(w[0].end - w[1].start, 128);
        }
        assert_eq!(c.reassemble(), text);
    }

    #[test]
    fn baseline_examples() {
        let lv = |c| Level { merges: 0, communities: c };
        assert_eq!(simulate_baseline_hierarchy(&[lv(100), lv(20), lv(5)], 500), 62_500);
        assert_eq!(simulate_baseline_hierarchy(&[lv(1)], 500), 500);
        assert!(simulate_baseline_hierarchy(&[lv(100), lv(20), lv(5), lv(2)], 500) > 62_500);
    }

    #[test]
    fn csv_shape() {
        assert_eq!(scaling_csv(&[]), format!("{SCALING_CSV_HEADER}\n"));
    }
}
