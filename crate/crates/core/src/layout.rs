//! Layout-aware compilation of sections, paragraphs and tables into typed graph
//! primitives.
//!
//! Text blocks become section/paragraph/term nodes linked by `contains`,
//! `refers_to` and `defines`. Each table becomes a condition graph: one node
//! per distinct row-header path, per distinct column-header path, per
//! non-empty data cell and per referenced footnote predicate, connected by
//! `row_bind`, `col_bind` and `activates` edges, with a `src` edge from every
//! cell to the section node of its clause.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::OnceLock;

use regex::Regex;
use serde_json::{json, Value};
use thiserror::Error;

use crate::doc_model::{marker_key, Block, BlockBody, ExpandedGrid, Provenance, SourceDocument, TableBlock};
use crate::formula::{self, DefinitionContext, FormulaSubgraph};
use crate::graph::{EdgeSpec, GraphUnit, Node, NodeType, RelationType, TypedGraph};
use crate::text::{collapse_whitespace, is_numeric, term_key};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LayoutError {
    #[error("table {block_id}: cannot determine header rows or columns")]
    HeaderAmbiguity { block_id: String },
    #[error("table {block_id}: {message}")]
    Span { block_id: String, message: String },
    #[error("no cell matches the requested header paths")]
    NotFound,
}

/// A diagnostic recorded during compilation. These never abort a document.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub doc_id: String,
    pub block_id: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct HeaderPath {
    pub segments: Vec<String>,
}

impl HeaderPath {
    pub fn new<S: Into<String>>(segments: impl IntoIterator<Item = S>) -> Self {
        HeaderPath {
            segments: segments.into_iter().map(Into::into).collect(),
        }
    }

    /// Display form, segments joined by ` / `.
    pub fn text(&self) -> String {
        self.segments.join(" / ")
    }

    /// Unambiguous key: `/`-joined segments with `\` and `/` escaped.
    pub fn key(&self) -> String {
        self.segments
            .iter()
            .map(|s| s.replace('\\', "\\\\").replace('/', "\\/"))
            .collect::<Vec<_>>()
            .join("/")
    }

    fn to_value(&self) -> Value {
        json!(self.segments)
    }

    fn matches(&self, v: Option<&Value>) -> bool {
        v.and_then(Value::as_array).is_some_and(|a| {
            a.len() == self.segments.len() && a.iter().zip(&self.segments).all(|(x, s)| x.as_str() == Some(s))
        })
    }
}

/// Resolved header structure of one table.
#[derive(Debug, Clone, PartialEq)]
pub struct HeaderPaths {
    pub header_rows: usize,
    pub header_cols: usize,
    /// One path per data row; empty when the table has no row-header columns.
    pub rows: Vec<HeaderPath>,
    /// One path per data column; empty when the table has no header rows.
    pub cols: Vec<HeaderPath>,
}

/// Identifiers of the nodes and edges produced by [`compile_table`]. Edge
/// entries index into the returned [`GraphUnit::edges`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TableSubgraph {
    pub block_id: String,
    pub row_headers: Vec<String>,
    pub col_headers: Vec<String>,
    pub cells: Vec<String>,
    pub predicates: Vec<String>,
    pub edges: Vec<usize>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TextPrimitiveSet {
    pub section_nodes: Vec<String>,
    pub paragraph_nodes: Vec<String>,
    pub term_nodes: Vec<String>,
    /// Indices into the returned unit's edges.
    pub edges: Vec<usize>,
    /// Table and equation references left for [`compile_document`] to resolve.
    pub pending_refs: Vec<PendingRef>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RefTarget {
    Table(String),
    Equation(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PendingRef {
    pub from: String,
    pub block_id: String,
    pub target: RefTarget,
    pub surface: String,
}

pub fn node_id(doc_id: &str, local: &str) -> String {
    format!("{doc_id}#{local}")
}

fn grid_text(table: &TableBlock, grid: &ExpandedGrid, r: usize, c: usize) -> String {
    table.cell(grid.origin(r, c)).clean_text()
}

fn mostly_textual<'a>(texts: impl Iterator<Item = &'a str>) -> bool {
    let mut non_empty = 0usize;
    let mut textual = 0usize;
    for t in texts {
        if t.trim().is_empty() {
            continue;
        }
        non_empty += 1;
        if !is_numeric(t) {
            textual += 1;
        }
    }
    non_empty > 0 && textual * 5 >= non_empty * 4
}

fn header_counts(table: &TableBlock, grid: &ExpandedGrid, block_id: &str) -> Result<(usize, usize), LayoutError> {
    let ambiguous = || LayoutError::HeaderAmbiguity {
        block_id: block_id.to_string(),
    };
    let any_flag = table.rows.iter().flatten().any(|c| c.is_header);
    let (hr, hc) = if any_flag {
        let is_header = |r: usize, c: usize| table.cell(grid.origin(r, c)).is_header;
        let hr = (0..grid.n_rows)
            .take_while(|&r| (0..grid.n_cols).all(|c| is_header(r, c)))
            .count();
        let hc = (0..grid.n_cols)
            .take_while(|&c| (hr..grid.n_rows).all(|r| is_header(r, c)))
            .count();
        (hr, hc)
    } else {
        let texts: Vec<Vec<String>> = (0..grid.n_rows)
            .map(|r| (0..grid.n_cols).map(|c| grid_text(table, grid, r, c)).collect())
            .collect();
        let hr = (0..grid.n_rows)
            .position(|r| !mostly_textual(texts[r].iter().map(String::as_str)))
            .unwrap_or(0);
        let hc = (0..grid.n_cols)
            .position(|c| !mostly_textual((hr..grid.n_rows).map(|r| texts[r][c].as_str())))
            .unwrap_or(0);
        (hr, hc)
    };
    if (hr == 0 && hc == 0) || hr >= grid.n_rows || hc >= grid.n_cols {
        return Err(ambiguous());
    }
    Ok((hr, hc))
}

/// Segments for one line through the header region, skipping empty texts and
/// repeated visits to the same spanning cell.
fn path_segments(
    table: &TableBlock,
    grid: &ExpandedGrid,
    positions: impl Iterator<Item = (usize, usize)>,
) -> Vec<String> {
    let mut segments = Vec::new();
    let mut last = None;
    for (r, c) in positions {
        let origin = grid.origin(r, c);
        if last == Some(origin) {
            continue;
        }
        last = Some(origin);
        let text = table.cell(origin).clean_text();
        if !text.is_empty() {
            segments.push(text);
        }
    }
    segments
}

pub fn resolve_header_paths(table: &TableBlock, block_id: &str) -> Result<HeaderPaths, LayoutError> {
    let grid = table.expand(block_id).map_err(|e| LayoutError::Span {
        block_id: block_id.to_string(),
        message: e.to_string(),
    })?;
    resolve_with_grid(table, &grid, block_id)
}

fn resolve_with_grid(table: &TableBlock, grid: &ExpandedGrid, block_id: &str) -> Result<HeaderPaths, LayoutError> {
    let (hr, hc) = header_counts(table, grid, block_id)?;
    let rows = if hc == 0 {
        Vec::new()
    } else {
        (hr..grid.n_rows)
            .map(|r| {
                let segs = path_segments(table, grid, (0..hc).map(|c| (r, c)));
                if segs.is_empty() {
                    HeaderPath::new([format!("row {}", r + 1)])
                } else {
                    HeaderPath { segments: segs }
                }
            })
            .collect()
    };
    let cols = if hr == 0 {
        Vec::new()
    } else {
        (hc..grid.n_cols)
            .map(|c| {
                let segs = path_segments(table, grid, (0..hr).map(|r| (r, c)));
                if segs.is_empty() {
                    HeaderPath::new([format!("col {}", c + 1)])
                } else {
                    HeaderPath { segments: segs }
                }
            })
            .collect()
    };
    Ok(HeaderPaths {
        header_rows: hr,
        header_cols: hc,
        rows,
        cols,
    })
}

/// Where a table sits: its document and the node that stands for its clause.
#[derive(Debug, Clone)]
pub struct TableContext {
    pub doc_id: String,
    pub clause_anchor: String,
}

pub fn compile_table(block: &Block, ctx: &TableContext) -> Result<(TableSubgraph, GraphUnit), LayoutError> {
    let BlockBody::Table(table) = &block.body else {
        return Err(LayoutError::Span {
            block_id: block.id.clone(),
            message: "not a table block".into(),
        });
    };
    let grid = table.expand(&block.id).map_err(|e| LayoutError::Span {
        block_id: block.id.clone(),
        message: e.to_string(),
    })?;
    let paths = resolve_with_grid(table, &grid, &block.id)?;
    let (hr, hc) = (paths.header_rows, paths.header_cols);
    let base = node_id(&ctx.doc_id, &block.id);
    let prov = &block.prov;

    let mut unit = GraphUnit::default();
    let mut sub = TableSubgraph {
        block_id: block.id.clone(),
        ..Default::default()
    };

    // distinct header paths, numbered in first-appearance order
    let mut row_ids: BTreeMap<HeaderPath, String> = BTreeMap::new();
    for p in &paths.rows {
        if !row_ids.contains_key(p) {
            let id = format!("{base}/rh/{}", row_ids.len());
            unit.nodes.push(header_node(&id, NodeType::RowHeader, p, table, prov));
            sub.row_headers.push(id.clone());
            row_ids.insert(p.clone(), id);
        }
    }
    let mut col_ids: BTreeMap<HeaderPath, String> = BTreeMap::new();
    for p in &paths.cols {
        if !col_ids.contains_key(p) {
            let id = format!("{base}/ch/{}", col_ids.len());
            unit.nodes.push(header_node(&id, NodeType::ColHeader, p, table, prov));
            sub.col_headers.push(id.clone());
            col_ids.insert(p.clone(), id);
        }
    }

    // header-cell markers apply to every data cell beneath / beside them
    let mut row_markers: Vec<Vec<String>> = vec![Vec::new(); grid.n_rows];
    let mut col_markers: Vec<Vec<String>> = vec![Vec::new(); grid.n_cols];
    for r in 0..grid.n_rows {
        for c in 0..grid.n_cols {
            if r < hr {
                col_markers[c].extend(table.cell(grid.origin(r, c)).marker_keys());
            } else if c < hc {
                row_markers[r].extend(table.cell(grid.origin(r, c)).marker_keys());
            }
        }
    }

    struct DataCell {
        origin: (usize, usize),
        rows: BTreeSet<usize>,
        cols: BTreeSet<usize>,
    }
    let mut cells: Vec<DataCell> = Vec::new();
    let mut seen: HashMap<(usize, usize), usize> = HashMap::new();
    for r in hr..grid.n_rows {
        for c in hc..grid.n_cols {
            let origin = grid.origin(r, c);
            if origin.0 < hr || origin_col(&grid, origin) < hc {
                continue;
            }
            let slot = *seen.entry(origin).or_insert_with(|| {
                cells.push(DataCell {
                    origin,
                    rows: BTreeSet::new(),
                    cols: BTreeSet::new(),
                });
                cells.len() - 1
            });
            cells[slot].rows.insert(r);
            cells[slot].cols.insert(c);
        }
    }

    let mut predicate_ids: BTreeMap<String, String> = BTreeMap::new();
    let mut pending_activates: Vec<(String, String)> = Vec::new();
    for dc in &cells {
        let spec = table.cell(dc.origin);
        let value = spec.clean_text();
        if value.is_empty() {
            continue;
        }
        let top = *dc.rows.iter().next().unwrap();
        let left = *dc.cols.iter().next().unwrap();
        let id = format!("{base}/x/{top}.{left}");
        let row_paths: Vec<&HeaderPath> = if hc > 0 {
            dedup_paths(dc.rows.iter().map(|r| &paths.rows[r - hr]))
        } else {
            Vec::new()
        };
        let col_paths: Vec<&HeaderPath> = if hr > 0 {
            dedup_paths(dc.cols.iter().map(|c| &paths.cols[c - hc]))
        } else {
            Vec::new()
        };

        let mut node = Node::new(&id, NodeType::Cell, &value)
            .with_prov(prov)
            .with_attr("table", json!(block.id))
            .with_attr("caption", json!(table.caption))
            .with_attr("row_path", row_paths.first().map_or(json!([]), |p| p.to_value()))
            .with_attr("col_path", col_paths.first().map_or(json!([]), |p| p.to_value()));
        if let Some(unit_str) = &spec.unit {
            node = node.with_attr("unit", json!(unit_str));
        }
        unit.nodes.push(node);
        sub.cells.push(id.clone());

        for p in &row_paths {
            sub.edges.push(unit.edges.len());
            unit.edges.push(EdgeSpec::new(&row_ids[*p], &id, RelationType::RowBind));
        }
        for p in &col_paths {
            sub.edges.push(unit.edges.len());
            unit.edges.push(EdgeSpec::new(&col_ids[*p], &id, RelationType::ColBind));
        }

        let mut keys: Vec<String> = spec.marker_keys();
        for r in &dc.rows {
            keys.extend(row_markers[*r].iter().cloned());
        }
        for c in &dc.cols {
            keys.extend(col_markers[*c].iter().cloned());
        }
        let keys: BTreeSet<String> = keys.into_iter().collect();
        for key in keys {
            if let Some(note) = table.footnote(&key) {
                let pid = predicate_ids
                    .entry(key.clone())
                    .or_insert_with(|| format!("{base}/p/{key}"))
                    .clone();
                if !sub.predicates.contains(&pid) {
                    sub.predicates.push(pid.clone());
                    unit.nodes.push(
                        Node::new(&pid, NodeType::Predicate, note.clean_text())
                            .with_prov(prov)
                            .with_attr("marker", json!(key))
                            .with_attr("table", json!(block.id)),
                    );
                }
                pending_activates.push((pid, id.clone()));
            }
        }

        sub.edges.push(unit.edges.len());
        unit.edges.push(
            EdgeSpec::new(&id, &ctx.clause_anchor, RelationType::Src)
                .with_attr("page", json!(prov.page))
                .with_attr("bbox", json!(prov.bbox.to_vec())),
        );
    }
    for (pid, cid) in pending_activates {
        sub.edges.push(unit.edges.len());
        unit.edges.push(EdgeSpec::new(pid, cid, RelationType::Activates));
    }
    Ok((sub, unit))
}

fn origin_col(grid: &ExpandedGrid, origin: (usize, usize)) -> usize {
    (0..grid.n_cols)
        .find(|&c| grid.origin(origin.0, c) == origin)
        .unwrap_or(0)
}

fn dedup_paths<'a>(paths: impl Iterator<Item = &'a HeaderPath>) -> Vec<&'a HeaderPath> {
    let mut out: Vec<&HeaderPath> = Vec::new();
    for p in paths {
        if !out.contains(&p) {
            out.push(p);
        }
    }
    out
}

fn header_node(id: &str, node_type: NodeType, path: &HeaderPath, table: &TableBlock, prov: &Provenance) -> Node {
    Node::new(id, node_type, path.text())
        .with_prov(prov)
        .with_attr("path", path.to_value())
        .with_attr("caption", json!(table.caption))
}

/// One cell found by [`lookup_cell`].
#[derive(Debug, Clone, PartialEq)]
pub struct CellHit {
    pub node: usize,
    pub value: String,
    /// Texts of the activating predicates, joined with `; `.
    pub condition: Option<String>,
    /// True when every activating predicate's marker is in the caller's set.
    pub applicable: bool,
    pub prov: Provenance,
}

/// Constrained traversal: cells bound to both `row` and `col` header paths.
/// A `None` side is unconstrained but at least one side must be given.
pub fn lookup_cell(
    g: &TypedGraph,
    row: Option<&HeaderPath>,
    col: Option<&HeaderPath>,
    predicates: &BTreeSet<String>,
) -> Result<Vec<CellHit>, LayoutError> {
    let fan_out = |path: &HeaderPath, ty: NodeType, rel: RelationType| -> BTreeSet<usize> {
        let mut cells = BTreeSet::new();
        for (i, n) in g.nodes().iter().enumerate() {
            if n.node_type == ty && path.matches(n.attrs.get("path")) {
                cells.extend(g.out_edges(i).filter(|e| e.rel == rel).map(|e| e.dst));
            }
        }
        cells
    };
    let candidates = match (row, col) {
        (None, None) => return Err(LayoutError::NotFound),
        (Some(r), None) => fan_out(r, NodeType::RowHeader, RelationType::RowBind),
        (None, Some(c)) => fan_out(c, NodeType::ColHeader, RelationType::ColBind),
        (Some(r), Some(c)) => {
            let a = fan_out(r, NodeType::RowHeader, RelationType::RowBind);
            let b = fan_out(c, NodeType::ColHeader, RelationType::ColBind);
            a.intersection(&b).copied().collect()
        }
    };
    if candidates.is_empty() {
        return Err(LayoutError::NotFound);
    }
    let wanted: BTreeSet<String> = predicates.iter().map(|p| marker_key(p)).collect();
    let mut hits = Vec::new();
    for cell in candidates {
        let node = g.node(cell);
        let mut preds: Vec<usize> = g
            .in_edges(cell)
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
        let applicable = preds
            .iter()
            .all(|p| g.node(*p).attr_str("marker").is_some_and(|m| wanted.contains(m)));
        let Some(prov) = node.provenance() else {
            continue;
        };
        hits.push(CellHit {
            node: cell,
            value: node.text.clone(),
            condition,
            applicable,
            prov,
        });
    }
    hits.sort_by(|a, b| {
        (&a.prov.doc_id, a.prov.page)
            .cmp(&(&b.prov.doc_id, b.prov.page))
            .then(a.prov.bbox.partial_cmp(&b.prov.bbox).unwrap_or(std::cmp::Ordering::Equal))
            .then(g.node(a.node).id.cmp(&g.node(b.node).id))
    });
    Ok(hits)
}

struct RefPatterns {
    clause: Regex,
    section_sign: Regex,
    table: Regex,
    equation: Regex,
    is_def: Regex,
    colon_def: Regex,
    abbrev: Regex,
}

fn patterns() -> &'static RefPatterns {
    static P: OnceLock<RefPatterns> = OnceLock::new();
    P.get_or_init(|| RefPatterns {
        clause: Regex::new(r"(?i)\bclause\s+(\d+\.\d+(?:\.\d+)*)").unwrap(),
        section_sign: Regex::new(r"(?i)\bsee\s+§\s*(\d+(?:\.\d+)*)").unwrap(),
        table: Regex::new(r"\bTable\s+([0-9A-Z][\w.\-]*\w|[0-9A-Z])").unwrap(),
        equation: Regex::new(r"\bEq(?:uation)?\.?\s*\(\s*([\w.\-]+)\s*\)").unwrap(),
        is_def: Regex::new(r"^(?:(The|A|An)\s+)?([A-Z0-9][\w\-/]*(?:\s+[\w\-/]+){0,3}?)\s+(?:is|denotes|means)\s+\S")
            .unwrap(),
        colon_def: Regex::new(r"^([A-Z0-9][\w\-/]*(?:\s+[\w\-/]+){0,3}):\s+\S").unwrap(),
        abbrev: Regex::new(r"((?:[A-Za-z][\w\-]*\s+){0,7}[A-Za-z][\w\-]*)\s+\(([A-Z][A-Z0-9\-]*[A-Z0-9])\)").unwrap(),
    })
}

const DEF_STOPWORDS: &[&str] = &[
    "this", "that", "it", "there", "these", "those", "each", "every", "if", "when", "in", "for", "where", "the", "a",
    "an", "note", "table", "clause", "see",
];

/// Terms introduced by a paragraph: `(surface, long form)`.
pub fn definition_terms(text: &str) -> Vec<(String, Option<String>)> {
    let p = patterns();
    let text = text.trim();
    let mut out: Vec<(String, Option<String>)> = Vec::new();
    let first_word_ok = |t: &str| {
        t.split_whitespace()
            .next()
            .is_some_and(|w| !DEF_STOPWORDS.contains(&w.to_lowercase().as_str()))
    };
    if let Some(c) = p.is_def.captures(text) {
        let term = c[2].to_string();
        if first_word_ok(&term) {
            out.push((term, None));
        }
    } else if let Some(c) = p.colon_def.captures(text) {
        let term = c[1].to_string();
        if first_word_ok(&term) {
            out.push((term, None));
        }
    }
    for c in p.abbrev.captures_iter(text) {
        let abbr = c[2].to_string();
        let words: Vec<&str> = c[1].split_whitespace().collect();
        let letters = abbr.chars().filter(|ch| ch.is_ascii_alphabetic()).count().max(1);
        let long = words[words.len().saturating_sub(letters)..].join(" ");
        out.push((abbr, Some(long)));
    }
    let mut seen = BTreeSet::new();
    out.retain(|(t, _)| seen.insert(term_key(t)));
    out
}

/// Compile sections and paragraphs into text primitives.
///
/// Clause references (`clause X.Y`, `see §X`) are resolved against the
/// document's sections here; `Table N` and `Eq. (N)` references are returned as
/// [`PendingRef`]s because their targets come from the table and formula
/// compilers.
pub fn compile_text(doc: &SourceDocument) -> (TextPrimitiveSet, GraphUnit, Vec<Diagnostic>) {
    let p = patterns();
    let mut set = TextPrimitiveSet::default();
    let mut unit = GraphUnit::default();
    let mut diags = Vec::new();

    let clause_sections: HashMap<&str, String> = doc
        .ordered_blocks()
        .filter(|b| matches!(b.body, BlockBody::Section { .. }))
        .map(|b| (b.prov.clause_id.as_str(), node_id(&doc.id, &b.id)))
        .collect();

    let mut stack: Vec<(u32, String)> = Vec::new();
    let mut terms: BTreeMap<String, String> = BTreeMap::new();
    for block in doc.ordered_blocks() {
        let id = node_id(&doc.id, &block.id);
        match &block.body {
            BlockBody::Section { level, title } => {
                unit.nodes.push(
                    Node::new(&id, NodeType::Section, title.as_str())
                        .with_prov(&block.prov)
                        .with_attr("level", json!(level)),
                );
                set.section_nodes.push(id.clone());
                while stack.last().is_some_and(|(l, _)| l >= level) {
                    stack.pop();
                }
                if let Some((_, parent)) = stack.last() {
                    set.edges.push(unit.edges.len());
                    unit.edges.push(EdgeSpec::new(parent, &id, RelationType::Contains));
                }
                stack.push((*level, id));
            }
            BlockBody::Paragraph { text, parent_section } => {
                unit.nodes.push(Node::new(&id, NodeType::Paragraph, text.as_str()).with_prov(&block.prov));
                set.paragraph_nodes.push(id.clone());
                set.edges.push(unit.edges.len());
                unit.edges.push(EdgeSpec::new(node_id(&doc.id, parent_section), &id, RelationType::Contains));

                let mut clause_targets = BTreeSet::new();
                for cap in p.clause.captures_iter(text).chain(p.section_sign.captures_iter(text)) {
                    let clause = &cap[1];
                    match clause_sections.get(clause) {
                        Some(target) => {
                            clause_targets.insert(target.clone());
                        }
                        None => diags.push(Diagnostic {
                            doc_id: doc.id.clone(),
                            block_id: block.id.clone(),
                            message: format!("dangling reference {:?}", &cap[0]),
                        }),
                    }
                }
                for target in clause_targets {
                    set.edges.push(unit.edges.len());
                    unit.edges.push(EdgeSpec::new(&id, target, RelationType::RefersTo));
                }
                for cap in p.table.captures_iter(text) {
                    set.pending_refs.push(PendingRef {
                        from: id.clone(),
                        block_id: block.id.clone(),
                        target: RefTarget::Table(cap[1].to_string()),
                        surface: cap[0].to_string(),
                    });
                }
                for cap in p.equation.captures_iter(text) {
                    set.pending_refs.push(PendingRef {
                        from: id.clone(),
                        block_id: block.id.clone(),
                        target: RefTarget::Equation(cap[1].to_string()),
                        surface: cap[0].to_string(),
                    });
                }

                for (surface, long_form) in definition_terms(text) {
                    let key = term_key(&surface);
                    let term_id = terms
                        .entry(key.clone())
                        .or_insert_with(|| {
                            let tid = node_id(&doc.id, &format!("term/{key}"));
                            let mut node = Node::new(&tid, NodeType::Term, collapse_whitespace(&surface))
                                .with_prov(&block.prov)
                                .with_attr("key", json!(key));
                            if let Some(long) = &long_form {
                                node = node.with_attr("long_form", json!(long));
                            }
                            unit.nodes.push(node);
                            set.term_nodes.push(tid.clone());
                            tid
                        })
                        .clone();
                    set.edges.push(unit.edges.len());
                    unit.edges.push(EdgeSpec::new(term_id, &id, RelationType::Defines));
                }
            }
            _ => {}
        }
    }
    (set, unit, diags)
}

/// Everything compiled from one document.
#[derive(Debug, Clone, Default)]
pub struct DocumentCompilation {
    pub unit: GraphUnit,
    pub text: TextPrimitiveSet,
    pub tables: Vec<TableSubgraph>,
    pub formulas: Vec<FormulaSubgraph>,
    pub diagnostics: Vec<Diagnostic>,
}

fn strip_label(label: &str) -> &str {
    label.trim().trim_start_matches('(').trim_end_matches(')').trim()
}

/// Compile one document into text, table and formula primitives and resolve
/// cross-modal references. Tables whose headers cannot be resolved and
/// equations that fail to normalise or parse are skipped with a diagnostic.
pub fn compile_document(doc: &SourceDocument) -> DocumentCompilation {
    let (text, mut unit, mut diagnostics) = compile_text(doc);
    let mut out = DocumentCompilation::default();

    // clause anchor for each non-text block: the section with the same clause
    // id, else the nearest preceding section in reading order
    let mut anchors: HashMap<String, String> = HashMap::new();
    let mut by_clause: HashMap<&str, String> = HashMap::new();
    let mut last_section: Option<String> = None;
    let mut needs_synthetic = false;
    for b in doc.ordered_blocks() {
        match &b.body {
            BlockBody::Section { .. } => {
                let id = node_id(&doc.id, &b.id);
                by_clause.entry(b.prov.clause_id.as_str()).or_insert_with(|| id.clone());
                last_section = Some(id);
            }
            BlockBody::Table(_) | BlockBody::Equation { .. } => {
                let anchor = by_clause.get(b.prov.clause_id.as_str()).cloned().or(last_section.clone());
                match anchor {
                    Some(a) => {
                        anchors.insert(b.id.clone(), a);
                    }
                    None => needs_synthetic = true,
                }
            }
            _ => {}
        }
    }
    if needs_synthetic {
        // tables/equations before any section: a synthetic clause node keeps
        // every cell's src edge resolvable
        let first = doc.ordered_blocks().next().expect("non-empty document");
        let sid = node_id(&doc.id, "clause");
        unit.nodes.push(
            Node::new(&sid, NodeType::Section, first.prov.clause_id.as_str())
                .with_prov(&first.prov)
                .with_attr("level", json!(1))
                .with_attr("synthetic", json!(true)),
        );
        for b in doc.ordered_blocks() {
            if matches!(b.body, BlockBody::Table(_) | BlockBody::Equation { .. }) {
                anchors.entry(b.id.clone()).or_insert_with(|| sid.clone());
            }
        }
    }

    let mut table_targets: HashMap<String, Vec<String>> = HashMap::new();
    let mut eq_targets: HashMap<String, String> = HashMap::new();
    let ordered: Vec<&Block> = doc.ordered_blocks().collect();
    for (pos, b) in ordered.iter().enumerate() {
        match &b.body {
            BlockBody::Table(t) => {
                let ctx = TableContext {
                    doc_id: doc.id.clone(),
                    clause_anchor: anchors[&b.id].clone(),
                };
                match compile_table(b, &ctx) {
                    Ok((sub, tunit)) => {
                        if let Some(c) = patterns().table.captures(&t.caption) {
                            let targets = if sub.col_headers.is_empty() {
                                sub.row_headers.clone()
                            } else {
                                sub.col_headers.clone()
                            };
                            table_targets.insert(c[1].to_string(), targets);
                        }
                        let offset = unit.edges.len();
                        let mut sub = sub;
                        sub.edges.iter_mut().for_each(|e| *e += offset);
                        unit.extend(tunit);
                        out.tables.push(sub);
                    }
                    Err(e) => diagnostics.push(Diagnostic {
                        doc_id: doc.id.clone(),
                        block_id: b.id.clone(),
                        message: e.to_string(),
                    }),
                }
            }
            BlockBody::Equation { math_src, label } => {
                let ctx = DefinitionContext::for_equation(doc, &ordered, pos);
                match formula::compile_equation(&doc.id, b, math_src, label.as_deref(), &ctx) {
                    Ok((sub, funit, fdiags)) => {
                        if let Some(l) = label {
                            eq_targets.insert(strip_label(l).to_string(), sub.root.clone());
                        }
                        let offset = unit.edges.len();
                        let mut sub = sub;
                        sub.op_edges.iter_mut().chain(sub.def_edges.iter_mut()).for_each(|e| *e += offset);
                        unit.extend(funit);
                        out.formulas.push(sub);
                        diagnostics.extend(fdiags);
                    }
                    Err(e) => diagnostics.push(Diagnostic {
                        doc_id: doc.id.clone(),
                        block_id: b.id.clone(),
                        message: e.to_string(),
                    }),
                }
            }
            _ => {}
        }
    }

    for r in &text.pending_refs {
        let targets: Vec<String> = match &r.target {
            RefTarget::Table(n) => table_targets.get(n).cloned().unwrap_or_default(),
            RefTarget::Equation(n) => eq_targets.get(strip_label(n)).cloned().into_iter().collect(),
        };
        if targets.is_empty() {
            diagnostics.push(Diagnostic {
                doc_id: doc.id.clone(),
                block_id: r.block_id.clone(),
                message: format!("dangling reference {:?}", r.surface),
            });
        }
        for t in targets {
            unit.edges.push(EdgeSpec::new(&r.from, t, RelationType::RefersTo));
        }
    }

    out.unit = unit;
    out.text = text;
    out.diagnostics = diagnostics;
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::doc_model::{CellSpec, Footnote};

    fn prov() -> Provenance {
        Provenance {
            doc_id: "D".into(),
            clause_id: "6.2".into(),
            page: 4,
            bbox: [0.0, 0.0, 100.0, 50.0],
            release_tag: Some("Rel-17".into()),
        }
    }

    fn table_block(rows: Vec<Vec<CellSpec>>, footnotes: Vec<Footnote>) -> Block {
        Block {
            id: "t1".into(),
            prov: prov(),
            body: BlockBody::Table(TableBlock {
                rows,
                caption: "Table 6.2-1: Parameters".into(),
                footnotes,
            }),
        }
    }

    fn ctx() -> TableContext {
        TableContext {
            doc_id: "D".into(),
            clause_anchor: "D#s1".into(),
        }
    }

    fn as_table(b: &Block) -> &TableBlock {
        match &b.body {
            BlockBody::Table(t) => t,
            _ => unreachable!(),
        }
    }

    #[test]
    fn simple_column_paths() {
        let b = table_block(
            vec![vec![CellSpec::header("A"), CellSpec::header("B")], vec![CellSpec::new("1"), CellSpec::new("2")]],
            vec![],
        );
        let p = resolve_header_paths(as_table(&b), "t1").unwrap();
        assert_eq!(p.cols, vec![HeaderPath::new(["A"]), HeaderPath::new(["B"])]);
        assert!(p.rows.is_empty());
    }

    #[test]
    fn spanning_header_paths() {
        let b = table_block(
            vec![
                vec![CellSpec::header("Band").spans(2, 1), CellSpec::header("Power class").spans(1, 2)],
                vec![CellSpec::header("Min"), CellSpec::header("Max")],
                vec![CellSpec::header("n1"), CellSpec::new("-40"), CellSpec::new("23")],
            ],
            vec![],
        );
        let p = resolve_header_paths(as_table(&b), "t1").unwrap();
        assert_eq!(
            p.cols,
            vec![HeaderPath::new(["Power class", "Min"]), HeaderPath::new(["Power class", "Max"])]
        );
        assert_eq!(p.rows, vec![HeaderPath::new(["n1"])]);
    }

    #[test]
    fn numeric_table_without_flags_is_ambiguous() {
        let b = table_block(
            vec![vec![CellSpec::new("1"), CellSpec::new("2")], vec![CellSpec::new("3"), CellSpec::new("4")]],
            vec![],
        );
        assert!(matches!(
            resolve_header_paths(as_table(&b), "t1"),
            Err(LayoutError::HeaderAmbiguity { .. })
        ));
    }

    #[test]
    fn heuristic_detects_header_row_and_column() {
        let b = table_block(
            vec![
                vec![CellSpec::new("Param"), CellSpec::new("Min"), CellSpec::new("Max")],
                vec![CellSpec::new("power"), CellSpec::new("1"), CellSpec::new("2")],
                vec![CellSpec::new("gain"), CellSpec::new("3"), CellSpec::new("4")],
            ],
            vec![],
        );
        let p = resolve_header_paths(as_table(&b), "t1").unwrap();
        assert_eq!((p.header_rows, p.header_cols), (1, 1));
        assert_eq!(p.rows, vec![HeaderPath::new(["power"]), HeaderPath::new(["gain"])]);
    }

    #[test]
    fn param_value_table_counts() {
        let b = table_block(
            vec![
                vec![CellSpec::header("Param"), CellSpec::header("Value")],
                vec![CellSpec::new("maxRetx"), CellSpec::new("4")],
            ],
            vec![],
        );
        let (sub, unit) = compile_table(&b, &ctx()).unwrap();
        assert_eq!(sub.row_headers.len(), 0);
        assert_eq!(sub.col_headers.len(), 2);
        assert_eq!(sub.cells.len(), 2);
        assert_eq!(unit.nodes.len(), 4);
        let count = |rel| unit.edges.iter().filter(|e| e.rel == rel).count();
        assert_eq!(count(RelationType::ColBind), 2);
        assert_eq!(count(RelationType::Src), 2);
        assert_eq!(count(RelationType::RowBind), 0);
    }

    #[test]
    fn footnote_becomes_predicate() {
        let b = table_block(
            vec![
                vec![CellSpec::header("Band"), CellSpec::header("Modulation")],
                vec![CellSpec::header("FR2"), CellSpec::new("16QAM¹")],
                vec![CellSpec::header("FR1"), CellSpec::new("")],
            ],
            vec![Footnote {
                marker: "NOTE 1".into(),
                text: "NOTE 1: applies only above 6 GHz".into(),
            }],
        );
        let (sub, unit) = compile_table(&b, &ctx()).unwrap();
        assert_eq!(sub.predicates.len(), 1);
        let pred = unit.nodes.iter().find(|n| n.node_type == NodeType::Predicate).unwrap();
        assert_eq!(pred.text, "applies only above 6 GHz");
        assert_eq!(unit.edges.iter().filter(|e| e.rel == RelationType::Activates).count(), 1);
        // the empty cell produced nothing
        assert_eq!(sub.cells.len(), 1);
        let cell = unit.nodes.iter().find(|n| n.node_type == NodeType::Cell).unwrap();
        assert_eq!(cell.text, "16QAM");
        assert_eq!(cell.attr_str("release_tag"), Some("Rel-17"));
    }

    #[test]
    fn lookup_with_guarded_cell() {
        let b = table_block(
            vec![
                vec![CellSpec::header("Band"), CellSpec::header("Modulation")],
                vec![CellSpec::header("FR2"), CellSpec::new("16QAM¹")],
            ],
            vec![Footnote {
                marker: "NOTE 1".into(),
                text: "applies only above 6 GHz".into(),
            }],
        );
        let (_, mut unit) = compile_table(&b, &ctx()).unwrap();
        unit.nodes.push(Node::new("D#s1", NodeType::Section, "General"));
        let g = TypedGraph::merge_units(vec![unit]).unwrap();
        let hits = lookup_cell(
            &g,
            Some(&HeaderPath::new(["FR2"])),
            Some(&HeaderPath::new(["Modulation"])),
            &BTreeSet::new(),
        )
        .unwrap();
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].value, "16QAM");
        assert_eq!(hits[0].condition.as_deref(), Some("applies only above 6 GHz"));
        assert!(!hits[0].applicable);
        let with = lookup_cell(
            &g,
            Some(&HeaderPath::new(["FR2"])),
            Some(&HeaderPath::new(["Modulation"])),
            &BTreeSet::from(["NOTE 1".to_string()]),
        )
        .unwrap();
        assert!(with[0].applicable);
        assert_eq!(
            lookup_cell(&g, Some(&HeaderPath::new(["FR9"])), None, &BTreeSet::new()),
            Err(LayoutError::NotFound)
        );
    }

    #[test]
    fn definition_patterns() {
        assert_eq!(definition_terms("The SSB is the synchronization signal block."), vec![("SSB".to_string(), None)]);
        assert_eq!(definition_terms("HARQ: hybrid repeat request."), vec![("HARQ".to_string(), None)]);
        let t = definition_terms("The UE uses the Synchronization Signal Block (SSB) for timing.");
        assert_eq!(t, vec![("SSB".to_string(), Some("Synchronization Signal Block".to_string()))]);
        assert!(definition_terms("This parameter is optional.").is_empty());
        assert!(definition_terms("where B denotes the bandwidth").is_empty());
    }
}
