//! Intermediate document representation.
//!
//! Upstream PDF conversion produces one JSON file per standards document. This
//! module loads and validates that JSON into a [`SourceDocument`] of ordered
//! section, paragraph, table and equation blocks, each carrying its
//! [`Provenance`]. Structural invariants (span geometry, reading order, unique
//! ids, bounding boxes) are enforced at load time. Content-level issues that a
//! single file cannot rule out (duplicate document ids across a corpus,
//! dangling footnote markers, empty clause ids) are reported by
//! [`validate_corpus`] instead.

use std::collections::{BTreeSet, HashSet};
use std::sync::OnceLock;

use regex::Regex;
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::canonical::to_canonical_string;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DocError {
    #[error("schema error at {pointer}: {message}")]
    Schema { pointer: String, message: String },
    #[error("span error in table {block_id} at row {row}, col {col}: {message}")]
    Span {
        block_id: String,
        row: usize,
        col: usize,
        message: String,
    },
    #[error("reading order error: {0}")]
    Order(String),
}

impl DocError {
    fn schema(pointer: impl Into<String>, message: impl Into<String>) -> Self {
        DocError::Schema {
            pointer: pointer.into(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Provenance {
    pub doc_id: String,
    pub clause_id: String,
    pub page: u32,
    /// `[x0, y0, x1, y1]` in page units.
    pub bbox: [f64; 4],
    pub release_tag: Option<String>,
}

/// Integral coordinates as JSON integers, so loaded and canonical forms agree.
fn number(x: f64) -> Value {
    if x.fract() == 0.0 && x.abs() < 9_007_199_254_740_992.0 {
        json!(x as i64)
    } else {
        json!(x)
    }
}

impl Provenance {
    pub fn to_value(&self) -> Value {
        let mut m = Map::new();
        m.insert("doc_id".into(), json!(self.doc_id));
        m.insert("clause_id".into(), json!(self.clause_id));
        m.insert("page".into(), json!(self.page));
        m.insert("bbox".into(), Value::Array(self.bbox.iter().map(|&x| number(x)).collect()));
        if let Some(tag) = &self.release_tag {
            m.insert("release_tag".into(), json!(tag));
        }
        Value::Object(m)
    }

    pub fn from_value(value: &Value, pointer: &str) -> Result<Self, DocError> {
        let mut obj = Obj::new(value, pointer)?;
        let doc_id = obj.req_str("doc_id")?;
        let clause_id = obj.req_str("clause_id")?;
        let page = obj.req_u64("page")? as u32;
        let bbox_ptr = obj.child("bbox");
        let raw = obj.req_array("bbox")?;
        if raw.len() != 4 {
            return Err(DocError::schema(bbox_ptr, "bbox must have four numbers"));
        }
        let mut bbox = [0.0; 4];
        for (i, v) in raw.iter().enumerate() {
            let x = v
                .as_f64()
                .ok_or_else(|| DocError::schema(format!("{bbox_ptr}/{i}"), "expected number"))?;
            if !(x.is_finite() && x >= 0.0) {
                return Err(DocError::schema(
                    format!("{bbox_ptr}/{i}"),
                    "bbox coordinates must be finite and nonnegative",
                ));
            }
            bbox[i] = x;
        }
        if bbox[0] > bbox[2] || bbox[1] > bbox[3] {
            return Err(DocError::schema(bbox_ptr, "bbox requires x0 <= x1 and y0 <= y1"));
        }
        let release_tag = obj.opt_str("release_tag")?;
        obj.finish()?;
        Ok(Provenance {
            doc_id,
            clause_id,
            page,
            bbox,
            release_tag,
        })
    }

    /// Human-readable citation, e.g. `TS38.331 §5.2 p.12`.
    pub fn citation(&self) -> String {
        format!("{} §{} p.{}", self.doc_id, self.clause_id, self.page)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellSpec {
    pub text: String,
    pub row_span: usize,
    pub col_span: usize,
    pub is_header: bool,
    pub footnote_markers: Vec<String>,
    pub unit: Option<String>,
}

impl CellSpec {
    pub fn new(text: impl Into<String>) -> Self {
        CellSpec {
            text: text.into(),
            row_span: 1,
            col_span: 1,
            is_header: false,
            footnote_markers: Vec::new(),
            unit: None,
        }
    }

    pub fn header(text: impl Into<String>) -> Self {
        CellSpec {
            is_header: true,
            ..CellSpec::new(text)
        }
    }

    pub fn spans(mut self, row_span: usize, col_span: usize) -> Self {
        self.row_span = row_span;
        self.col_span = col_span;
        self
    }

    /// Marker keys bound to this cell: the explicit `footnotes` list plus any
    /// superscript or `NOTE n` markers found in the text.
    pub fn marker_keys(&self) -> Vec<String> {
        let mut keys: Vec<String> = self.footnote_markers.iter().map(|m| marker_key(m)).collect();
        keys.extend(split_markers(&self.text).1);
        let mut seen = HashSet::new();
        keys.retain(|k| seen.insert(k.clone()));
        keys
    }

    /// Cell text with inline markers stripped.
    pub fn clean_text(&self) -> String {
        split_markers(&self.text).0
    }

    fn to_value(&self) -> Value {
        let mut m = Map::new();
        m.insert("text".into(), json!(self.text));
        m.insert("row_span".into(), json!(self.row_span));
        m.insert("col_span".into(), json!(self.col_span));
        m.insert("is_header".into(), json!(self.is_header));
        m.insert("footnotes".into(), json!(self.footnote_markers));
        if let Some(u) = &self.unit {
            m.insert("unit".into(), json!(u));
        }
        Value::Object(m)
    }

    fn from_value(value: &Value, pointer: &str) -> Result<Self, DocError> {
        let mut obj = Obj::new(value, pointer)?;
        let text = obj.req_str("text")?;
        let row_span = obj.req_u64("row_span")? as usize;
        let col_span = obj.req_u64("col_span")? as usize;
        if row_span == 0 || col_span == 0 {
            return Err(DocError::schema(pointer, "spans must be >= 1"));
        }
        let is_header = obj.req_bool("is_header")?;
        let fptr = obj.child("footnotes");
        let footnote_markers = obj
            .req_array("footnotes")?
            .iter()
            .enumerate()
            .map(|(i, v)| {
                v.as_str()
                    .map(str::to_string)
                    .ok_or_else(|| DocError::schema(format!("{fptr}/{i}"), "expected string"))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let unit = obj.opt_str("unit")?;
        obj.finish()?;
        Ok(CellSpec {
            text,
            row_span,
            col_span,
            is_header,
            footnote_markers,
            unit,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Footnote {
    pub marker: String,
    pub text: String,
}

impl Footnote {
    /// Footnote body with a leading `NOTE n:` style prefix removed.
    pub fn clean_text(&self) -> String {
        static PREFIX: OnceLock<Regex> = OnceLock::new();
        let re = PREFIX.get_or_init(|| Regex::new(r"^(?i:note)?\s*\d+\s*[:.)]\s*").unwrap());
        re.replace(self.text.trim(), "").trim().to_string()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TableBlock {
    /// Rows of cells in HTML table order: each row lists only the cells that
    /// start in it; row-spanning cells from earlier rows occupy their slots.
    pub rows: Vec<Vec<CellSpec>>,
    pub caption: String,
    pub footnotes: Vec<Footnote>,
}

/// Span-expanded table: every grid position points at the cell that covers
/// it, as `(row index, index within that row)` into [`TableBlock::rows`].
#[derive(Debug, Clone, PartialEq)]
pub struct ExpandedGrid {
    pub n_rows: usize,
    pub n_cols: usize,
    origin: Vec<(usize, usize)>,
}

impl ExpandedGrid {
    pub fn origin(&self, row: usize, col: usize) -> (usize, usize) {
        self.origin[row * self.n_cols + col]
    }
}

impl TableBlock {
    pub fn cell(&self, origin: (usize, usize)) -> &CellSpec {
        &self.rows[origin.0][origin.1]
    }

    /// Expand row/column spans into a rectangular grid.
    pub fn expand(&self, block_id: &str) -> Result<ExpandedGrid, DocError> {
        let span_err = |row, col, message: &str| DocError::Span {
            block_id: block_id.to_string(),
            row,
            col,
            message: message.to_string(),
        };
        let n_rows = self.rows.len();
        if n_rows == 0 {
            return Err(span_err(0, 0, "table has no rows"));
        }
        let n_cols: usize = self.rows[0].iter().map(|c| c.col_span).sum();
        if n_cols == 0 {
            return Err(span_err(0, 0, "first row has no cells"));
        }
        let mut origin: Vec<Option<(usize, usize)>> = vec![None; n_rows * n_cols];
        for (r, row) in self.rows.iter().enumerate() {
            let mut c = 0;
            for (k, cell) in row.iter().enumerate() {
                while c < n_cols && origin[r * n_cols + c].is_some() {
                    c += 1;
                }
                if c + cell.col_span > n_cols {
                    return Err(span_err(r, c, "cell extends past the right edge of the grid"));
                }
                if r + cell.row_span > n_rows {
                    return Err(span_err(r, c, "cell extends past the bottom of the grid"));
                }
                for rr in r..r + cell.row_span {
                    for cc in c..c + cell.col_span {
                        let slot = &mut origin[rr * n_cols + cc];
                        if slot.is_some() {
                            return Err(span_err(rr, cc, "overlapping spans"));
                        }
                        *slot = Some((r, k));
                    }
                }
                c += cell.col_span;
            }
        }
        let mut filled = Vec::with_capacity(origin.len());
        for (i, o) in origin.into_iter().enumerate() {
            match o {
                Some(o) => filled.push(o),
                None => {
                    return Err(span_err(i / n_cols, i % n_cols, "grid is not rectangular"));
                }
            }
        }
        Ok(ExpandedGrid {
            n_rows,
            n_cols,
            origin: filled,
        })
    }

    /// Footnote whose marker key equals `key`.
    pub fn footnote(&self, key: &str) -> Option<&Footnote> {
        self.footnotes.iter().find(|f| marker_key(&f.marker) == key)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum BlockBody {
    Section { level: u32, title: String },
    Paragraph { text: String, parent_section: String },
    Table(TableBlock),
    Equation { math_src: String, label: Option<String> },
}

impl BlockBody {
    pub fn kind(&self) -> &'static str {
        match self {
            BlockBody::Section { .. } => "section",
            BlockBody::Paragraph { .. } => "paragraph",
            BlockBody::Table(_) => "table",
            BlockBody::Equation { .. } => "equation",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub id: String,
    pub prov: Provenance,
    pub body: BlockBody,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SourceDocument {
    pub id: String,
    /// Document-level release tag. Blocks may carry their own in `prov`.
    pub release_tag: Option<String>,
    pub blocks: Vec<Block>,
    pub reading_order: Vec<usize>,
}

impl SourceDocument {
    /// Blocks in reading order.
    pub fn ordered_blocks(&self) -> impl Iterator<Item = &Block> {
        self.reading_order.iter().map(move |&i| &self.blocks[i])
    }

    pub fn block(&self, id: &str) -> Option<&Block> {
        self.blocks.iter().find(|b| b.id == id)
    }

    pub fn to_value(&self) -> Value {
        let blocks: Vec<Value> = self.blocks.iter().map(block_to_value).collect();
        let mut m = Map::new();
        m.insert("id".into(), json!(self.id));
        m.insert("blocks".into(), Value::Array(blocks));
        m.insert("reading_order".into(), json!(self.reading_order));
        if let Some(tag) = &self.release_tag {
            m.insert("release_tag".into(), json!(tag));
        }
        Value::Object(m)
    }

    pub fn to_canonical_json(&self) -> String {
        to_canonical_string(&self.to_value())
    }
}

fn block_to_value(b: &Block) -> Value {
    let mut m = Map::new();
    m.insert("kind".into(), json!(b.body.kind()));
    m.insert("id".into(), json!(b.id));
    m.insert("prov".into(), b.prov.to_value());
    match &b.body {
        BlockBody::Section { level, title } => {
            m.insert("level".into(), json!(level));
            m.insert("title".into(), json!(title));
        }
        BlockBody::Paragraph {
            text,
            parent_section,
        } => {
            m.insert("text".into(), json!(text));
            m.insert("parent_section".into(), json!(parent_section));
        }
        BlockBody::Table(t) => {
            let rows: Vec<Value> = t
                .rows
                .iter()
                .map(|r| Value::Array(r.iter().map(CellSpec::to_value).collect()))
                .collect();
            m.insert("rows".into(), Value::Array(rows));
            m.insert("caption".into(), json!(t.caption));
            let notes: Vec<Value> = t
                .footnotes
                .iter()
                .map(|f| json!({"marker": f.marker, "text": f.text}))
                .collect();
            m.insert("footnotes".into(), Value::Array(notes));
        }
        BlockBody::Equation { math_src, label } => {
            m.insert("math_src".into(), json!(math_src));
            if let Some(l) = label {
                m.insert("label".into(), json!(l));
            }
        }
    }
    Value::Object(m)
}

/// Parse and validate one intermediate-JSON document.
pub fn load_document(bytes: &[u8]) -> Result<SourceDocument, DocError> {
    let text = std::str::from_utf8(bytes).map_err(|e| DocError::schema("", format!("input is not UTF-8: {e}")))?;
    let value: Value = serde_json::from_str(text).map_err(|e| DocError::schema("", format!("invalid JSON: {e}")))?;
    document_from_value(&value)
}

pub fn document_from_value(value: &Value) -> Result<SourceDocument, DocError> {
    let mut obj = Obj::new(value, "")?;
    let id = obj.req_str("id")?;
    let release_tag = obj.opt_str("release_tag")?;
    let blocks_ptr = obj.child("blocks");
    let raw_blocks = obj.req_array("blocks")?;
    let mut blocks = Vec::with_capacity(raw_blocks.len());
    for (i, raw) in raw_blocks.iter().enumerate() {
        blocks.push(block_from_value(raw, &format!("{blocks_ptr}/{i}"))?);
    }
    let order_ptr = obj.child("reading_order");
    let raw_order = obj.req_array("reading_order")?;
    let mut reading_order = Vec::with_capacity(raw_order.len());
    for (i, v) in raw_order.iter().enumerate() {
        let idx = v
            .as_u64()
            .ok_or_else(|| DocError::schema(format!("{order_ptr}/{i}"), "expected nonnegative integer"))?;
        reading_order.push(idx as usize);
    }
    obj.finish()?;

    check_permutation(&reading_order, blocks.len())?;

    let mut ids = HashSet::new();
    for (i, b) in blocks.iter().enumerate() {
        if !ids.insert(b.id.as_str()) {
            return Err(DocError::schema(format!("/blocks/{i}/id"), format!("duplicate block id {:?}", b.id)));
        }
    }
    for (i, b) in blocks.iter().enumerate() {
        match &b.body {
            BlockBody::Paragraph { parent_section, .. } => {
                let parent_ok = blocks
                    .iter()
                    .any(|p| &p.id == parent_section && matches!(p.body, BlockBody::Section { .. }));
                if !parent_ok {
                    return Err(DocError::schema(
                        format!("/blocks/{i}/parent_section"),
                        format!("{parent_section:?} is not a section block"),
                    ));
                }
            }
            BlockBody::Table(t) => {
                t.expand(&b.id)?;
            }
            _ => {}
        }
    }

    Ok(SourceDocument {
        id,
        release_tag,
        blocks,
        reading_order,
    })
}

fn check_permutation(order: &[usize], n: usize) -> Result<(), DocError> {
    if order.len() != n {
        return Err(DocError::Order(format!(
            "reading_order has {} entries for {} blocks",
            order.len(),
            n
        )));
    }
    let mut seen = vec![false; n];
    for &i in order {
        if i >= n {
            return Err(DocError::Order(format!("index {i} out of range for {n} blocks")));
        }
        if seen[i] {
            return Err(DocError::Order(format!("index {i} appears more than once")));
        }
        seen[i] = true;
    }
    Ok(())
}

fn block_from_value(value: &Value, pointer: &str) -> Result<Block, DocError> {
    let mut obj = Obj::new(value, pointer)?;
    let kind = obj.req_str("kind")?;
    let id = obj.req_str("id")?;
    let prov_ptr = obj.child("prov");
    let prov = Provenance::from_value(obj.req("prov")?, &prov_ptr)?;
    let body = match kind.as_str() {
        "section" => {
            let level = obj.req_u64("level")?;
            if level == 0 {
                return Err(DocError::schema(obj.child("level"), "level must be positive"));
            }
            BlockBody::Section {
                level: level as u32,
                title: obj.req_str("title")?,
            }
        }
        "paragraph" => BlockBody::Paragraph {
            text: obj.req_str("text")?,
            parent_section: obj.req_str("parent_section")?,
        },
        "table" => {
            let rows_ptr = obj.child("rows");
            let raw_rows = obj.req_array("rows")?;
            let mut rows = Vec::with_capacity(raw_rows.len());
            for (r, raw_row) in raw_rows.iter().enumerate() {
                let cells = raw_row
                    .as_array()
                    .ok_or_else(|| DocError::schema(format!("{rows_ptr}/{r}"), "expected array of cells"))?;
                rows.push(
                    cells
                        .iter()
                        .enumerate()
                        .map(|(c, cell)| CellSpec::from_value(cell, &format!("{rows_ptr}/{r}/{c}")))
                        .collect::<Result<Vec<_>, _>>()?,
                );
            }
            let caption = obj.req_str("caption")?;
            let notes_ptr = obj.child("footnotes");
            let mut footnotes = Vec::new();
            for (i, raw) in obj.req_array("footnotes")?.iter().enumerate() {
                let mut f = Obj::new(raw, &format!("{notes_ptr}/{i}"))?;
                footnotes.push(Footnote {
                    marker: f.req_str("marker")?,
                    text: f.req_str("text")?,
                });
                f.finish()?;
            }
            BlockBody::Table(TableBlock {
                rows,
                caption,
                footnotes,
            })
        }
        "equation" => BlockBody::Equation {
            math_src: obj.req_str("math_src")?,
            label: obj.opt_str("label")?,
        },
        other => {
            return Err(DocError::schema(
                obj.child("kind"),
                format!("unknown block kind {other:?}"),
            ))
        }
    };
    obj.finish()?;
    Ok(Block { id, prov, body })
}

/// Object reader that tracks consumed keys so unknown fields can be rejected
/// with their JSON pointer.
struct Obj<'a> {
    map: &'a Map<String, Value>,
    pointer: String,
    used: BTreeSet<&'static str>,
}

impl<'a> Obj<'a> {
    fn new(value: &'a Value, pointer: &str) -> Result<Self, DocError> {
        let map = value
            .as_object()
            .ok_or_else(|| DocError::schema(pointer, "expected object"))?;
        Ok(Obj {
            map,
            pointer: pointer.to_string(),
            used: BTreeSet::new(),
        })
    }

    fn child(&self, key: &str) -> String {
        format!("{}/{}", self.pointer, key.replace('~', "~0").replace('/', "~1"))
    }

    fn req(&mut self, key: &'static str) -> Result<&'a Value, DocError> {
        self.used.insert(key);
        self.map
            .get(key)
            .ok_or_else(|| DocError::schema(self.child(key), "missing required field"))
    }

    fn req_str(&mut self, key: &'static str) -> Result<String, DocError> {
        let v = self.req(key)?;
        v.as_str()
            .map(str::to_string)
            .ok_or_else(|| DocError::schema(self.child(key), "expected string"))
    }

    fn opt_str(&mut self, key: &'static str) -> Result<Option<String>, DocError> {
        self.used.insert(key);
        match self.map.get(key) {
            None | Some(Value::Null) => Ok(None),
            Some(Value::String(s)) => Ok(Some(s.clone())),
            Some(_) => Err(DocError::schema(self.child(key), "expected string or null")),
        }
    }

    fn req_u64(&mut self, key: &'static str) -> Result<u64, DocError> {
        let v = self.req(key)?;
        v.as_u64()
            .ok_or_else(|| DocError::schema(self.child(key), "expected nonnegative integer"))
    }

    fn req_bool(&mut self, key: &'static str) -> Result<bool, DocError> {
        let v = self.req(key)?;
        v.as_bool()
            .ok_or_else(|| DocError::schema(self.child(key), "expected boolean"))
    }

    fn req_array(&mut self, key: &'static str) -> Result<&'a Vec<Value>, DocError> {
        let v = self.req(key)?;
        v.as_array()
            .ok_or_else(|| DocError::schema(self.child(key), "expected array"))
    }

    fn finish(self) -> Result<(), DocError> {
        for key in self.map.keys() {
            if !self.used.contains(key.as_str()) {
                return Err(DocError::schema(self.child(key), "unknown field"));
            }
        }
        Ok(())
    }
}

const SUPERSCRIPTS: [(char, char); 10] = [
    ('⁰', '0'),
    ('¹', '1'),
    ('²', '2'),
    ('³', '3'),
    ('⁴', '4'),
    ('⁵', '5'),
    ('⁶', '6'),
    ('⁷', '7'),
    ('⁸', '8'),
    ('⁹', '9'),
];

fn superscript_digit(c: char) -> Option<char> {
    SUPERSCRIPTS.iter().find(|(s, _)| *s == c).map(|(_, d)| *d)
}

/// Canonical key for a footnote marker: `NOTE 2`, `2` and `²` all map to `2`.
pub fn marker_key(marker: &str) -> String {
    let t = marker.trim();
    let stripped = if t.len() >= 4 && t[..4].eq_ignore_ascii_case("note") {
        t[4..].trim()
    } else {
        t
    };
    let key: String = stripped
        .chars()
        .map(|c| superscript_digit(c).unwrap_or(c))
        .collect();
    if key.is_empty() {
        t.to_string()
    } else {
        key
    }
}

/// Split inline markers out of a cell text: superscript digit runs and
/// `NOTE n` / `(NOTE n)` references. Returns the stripped text and the marker
/// keys in order of appearance.
pub fn split_markers(text: &str) -> (String, Vec<String>) {
    static NOTE: OnceLock<Regex> = OnceLock::new();
    let note = NOTE.get_or_init(|| Regex::new(r"\(?\b(?i:note)\s*(\d+)\)?").unwrap());
    let mut keys = Vec::new();
    for cap in note.captures_iter(text) {
        keys.push(cap[1].to_string());
    }
    let without_notes = note.replace_all(text, "");
    let mut clean = String::with_capacity(without_notes.len());
    let mut run = String::new();
    for c in without_notes.chars() {
        if let Some(d) = superscript_digit(c) {
            run.push(d);
        } else {
            if !run.is_empty() {
                keys.push(std::mem::take(&mut run));
            }
            clean.push(c);
        }
    }
    if !run.is_empty() {
        keys.push(run);
    }
    (crate::text::collapse_whitespace(&clean), keys)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DanglingMarker {
    pub doc_id: String,
    pub block_id: String,
    pub marker: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CorpusReport {
    pub duplicate_ids: Vec<String>,
    pub dangling_markers: Vec<DanglingMarker>,
    /// `(doc_id, block_id)` of blocks whose clause id is empty.
    pub empty_clauses: Vec<(String, String)>,
}

impl CorpusReport {
    pub fn is_empty(&self) -> bool {
        self.duplicate_ids.is_empty() && self.dangling_markers.is_empty() && self.empty_clauses.is_empty()
    }
}

pub fn validate_corpus(docs: &[SourceDocument]) -> CorpusReport {
    let mut report = CorpusReport::default();
    let mut seen = HashSet::new();
    let mut dup = BTreeSet::new();
    for d in docs {
        if !seen.insert(d.id.as_str()) {
            dup.insert(d.id.clone());
        }
    }
    report.duplicate_ids = dup.into_iter().collect();

    for d in docs {
        for b in &d.blocks {
            if b.prov.clause_id.trim().is_empty() {
                report.empty_clauses.push((d.id.clone(), b.id.clone()));
            }
            if let BlockBody::Table(t) = &b.body {
                let mut reported = HashSet::new();
                for cell in t.rows.iter().flatten() {
                    for key in cell.marker_keys() {
                        if t.footnote(&key).is_none() && reported.insert(key.clone()) {
                            report.dangling_markers.push(DanglingMarker {
                                doc_id: d.id.clone(),
                                block_id: b.id.clone(),
                                marker: key,
                            });
                        }
                    }
                }
            }
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    fn prov() -> Value {
        json!({"doc_id": "D", "clause_id": "5.1", "page": 3, "bbox": [0.0, 0.0, 10.0, 5.0]})
    }

    fn minimal() -> Value {
        json!({
            "id": "D",
            "blocks": [
                {"kind": "section", "id": "s1", "prov": prov(), "level": 1, "title": "General"},
                {"kind": "paragraph", "id": "p1", "prov": prov(), "text": "Hello.", "parent_section": "s1"}
            ],
            "reading_order": [0, 1]
        })
    }

    fn load(v: &Value) -> Result<SourceDocument, DocError> {
        load_document(v.to_string().as_bytes())
    }

    #[test]
    fn minimal_document_loads() {
        let d = load(&minimal()).unwrap();
        assert_eq!(d.blocks.len(), 2);
        assert_eq!(d.id, "D");
        assert_eq!(d.to_canonical_json(), to_canonical_string(&minimal()));
    }

    #[test]
    fn duplicate_reading_order_index_is_rejected() {
        let mut v = minimal();
        v["blocks"].as_array_mut().unwrap().push(
            json!({"kind": "paragraph", "id": "p2", "prov": prov(), "text": "x", "parent_section": "s1"}),
        );
        v["reading_order"] = json!([0, 0, 1]);
        assert!(matches!(load(&v), Err(DocError::Order(_))));
    }

    #[test]
    fn missing_field_reports_pointer() {
        let mut v = minimal();
        v["blocks"][1]["prov"].as_object_mut().unwrap().remove("clause_id");
        match load(&v) {
            Err(DocError::Schema { pointer, .. }) => assert_eq!(pointer, "/blocks/1/prov/clause_id"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn extra_field_reports_pointer() {
        let mut v = minimal();
        v["blocks"][0]["colour"] = json!("red");
        match load(&v) {
            Err(DocError::Schema { pointer, message }) => {
                assert_eq!(pointer, "/blocks/0/colour");
                assert_eq!(message, "unknown field");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn inverted_bbox_is_rejected() {
        let mut v = minimal();
        v["blocks"][0]["prov"]["bbox"] = json!([5.0, 0.0, 1.0, 1.0]);
        assert!(matches!(load(&v), Err(DocError::Schema { .. })));
    }

    #[test]
    fn dangling_parent_section_is_rejected() {
        let mut v = minimal();
        v["blocks"][1]["parent_section"] = json!("nope");
        assert!(matches!(load(&v), Err(DocError::Schema { .. })));
    }

    fn cell(text: &str, rs: usize, cs: usize) -> Value {
        json!({"text": text, "row_span": rs, "col_span": cs, "is_header": false, "footnotes": []})
    }

    #[test]
    fn spanning_cell_outside_grid_is_span_error() {
        let mut v = minimal();
        v["blocks"].as_array_mut().unwrap().push(json!({
            "kind": "table", "id": "t1", "prov": prov(), "caption": "T", "footnotes": [],
            "rows": [[cell("a", 1, 1), cell("b", 1, 1)], [cell("c", 2, 1), cell("d", 1, 1)]]
        }));
        v["reading_order"] = json!([0, 1, 2]);
        assert!(matches!(load(&v), Err(DocError::Span { .. })));
    }

    #[test]
    fn ragged_table_is_span_error() {
        let mut v = minimal();
        v["blocks"].as_array_mut().unwrap().push(json!({
            "kind": "table", "id": "t1", "prov": prov(), "caption": "T", "footnotes": [],
            "rows": [[cell("a", 1, 1), cell("b", 1, 1)], [cell("c", 1, 1)]]
        }));
        v["reading_order"] = json!([0, 1, 2]);
        assert!(matches!(load(&v), Err(DocError::Span { .. })));
    }

    #[test]
    fn marker_keys_unify_forms() {
        assert_eq!(marker_key("NOTE 2"), "2");
        assert_eq!(marker_key("²"), "2");
        assert_eq!(marker_key("Note 12"), "12");
        assert_eq!(marker_key("a"), "a");
        let (clean, keys) = split_markers("16QAM¹");
        assert_eq!(clean, "16QAM");
        assert_eq!(keys, vec!["1"]);
        let (clean, keys) = split_markers("23 (NOTE 3)");
        assert_eq!(clean, "23");
        assert_eq!(keys, vec!["3"]);
    }

    #[test]
    fn corpus_report_flags_duplicates() {
        let a = load(&minimal()).unwrap();
        let mut b = a.clone();
        b.id = "E".into();
        assert!(validate_corpus(&[a.clone(), b]).is_empty());
        let mut c = a.clone();
        c.id = "TS38.331".into();
        let mut d = a.clone();
        d.id = "TS38.331".into();
        let report = validate_corpus(&[c, d]);
        assert_eq!(report.duplicate_ids, vec!["TS38.331".to_string()]);
    }

    #[test]
    fn corpus_report_flags_empty_clause() {
        let mut v = minimal();
        v["blocks"][1]["prov"]["clause_id"] = json!("");
        let d = load(&v).unwrap();
        assert_eq!(validate_corpus(&[d]).empty_clauses, vec![("D".to_string(), "p1".to_string())]);
    }
}
