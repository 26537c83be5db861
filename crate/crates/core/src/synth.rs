//! Seeded synthetic inputs: planted-community graphs, standards-like corpora
//! with known table and formula answers, random tables with an independent
//! expected-lookup list, and the labelled route set for router training.
//!
//! All vocabulary is made of generated pseudo-words, so header paths and
//! abbreviations are unique per document and never collide with template
//! words.

use std::collections::{BTreeMap, HashMap, HashSet};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::doc_model::{Block, BlockBody, CellSpec, Footnote, Provenance, SourceDocument, TableBlock};
use crate::graph::{EdgeSpec, GraphUnit, Node, NodeType, TypedGraph};
use crate::query::Route;

const ONSETS: &[&str] = &[
    "b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "dr", "kr", "pl", "st", "tr",
];
const VOWELS: &[&str] = &["a", "e", "i", "o", "u"];
const CODAS: &[&str] = &["", "", "", "n", "r", "l", "s", "k"];

/// Unique pseudo-words from a seeded stream.
pub struct WordGen {
    rng: ChaCha8Rng,
    used: HashSet<String>,
}

impl WordGen {
    pub fn new(seed: u64) -> Self {
        WordGen {
            rng: ChaCha8Rng::seed_from_u64(seed),
            used: HashSet::new(),
        }
    }

    pub fn word(&mut self) -> String {
        loop {
            let syllables = self.rng.random_range(2..=3);
            let mut w = String::new();
            for _ in 0..syllables {
                w.push_str(ONSETS.choose(&mut self.rng).unwrap());
                w.push_str(VOWELS.choose(&mut self.rng).unwrap());
            }
            w.push_str(CODAS.choose(&mut self.rng).unwrap());
            if self.used.insert(w.clone()) {
                return w;
            }
        }
    }

    /// An all-caps abbreviation ending in digits, never reused.
    pub fn abbreviation(&mut self) -> String {
        loop {
            let letters: String = (0..3).map(|_| self.rng.random_range(b'A'..=b'Z') as char).collect();
            let a = format!("{letters}{}", self.rng.random_range(1..100));
            if self.used.insert(a.clone()) {
                return a;
            }
        }
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }
}

fn capitalise(w: &str) -> String {
    let mut c = w.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

// ---------------------------------------------------------------------------
// planted-community graphs

pub const PLANTED_COMMUNITY_SIZE: usize = 20;

/// `n` paragraph-like nodes in communities of about 20: a ring plus two random
/// chords per node inside each community, and a sparse ring of bridges
/// between communities.
pub fn planted_graph(n: usize, seed: u64) -> TypedGraph {
    let mut words = WordGen::new(seed);
    let n_comm = n.div_ceil(PLANTED_COMMUNITY_SIZE).max(1);
    let topics: Vec<String> = (0..n_comm).map(|_| words.word()).collect();
    let comm_of = |i: usize| i * n_comm / n.max(1);
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); n_comm];
    for i in 0..n {
        members[comm_of(i)].push(i);
    }
    let mut unit = GraphUnit::default();
    for i in 0..n {
        let c = comm_of(i);
        let ty = if i % 10 == 0 { NodeType::Term } else { NodeType::Paragraph };
        let text = format!("{} item {i} describes the {} procedure.", topics[c], words.word());
        let prov = Provenance {
            doc_id: "SYN".into(),
            clause_id: format!("{}.{}", c + 1, i + 1),
            page: (c + 1) as u32,
            bbox: [0.0, 0.0, 100.0, 20.0],
            release_tag: None,
        };
        unit.nodes.push(Node::new(format!("syn/{i}"), ty, text).with_prov(&prov));
    }
    let mut seen: HashSet<(usize, usize)> = HashSet::new();
    let mut add = |unit: &mut GraphUnit, a: usize, b: usize| {
        let key = (a.min(b), a.max(b));
        if a != b && seen.insert(key) {
            unit.edges.push(EdgeSpec::new(
                format!("syn/{}", key.0),
                format!("syn/{}", key.1),
                crate::graph::RelationType::RefersTo,
            ));
        }
    };
    for m in &members {
        if m.len() < 2 {
            continue;
        }
        for (k, &i) in m.iter().enumerate() {
            add(&mut unit, i, m[(k + 1) % m.len()]);
            for _ in 0..2 {
                let j = *m.choose(words.rng()).unwrap();
                add(&mut unit, i, j);
            }
        }
    }
    if n_comm > 1 {
        for c in 0..n_comm {
            let a = *members[c].choose(words.rng()).unwrap();
            let b = *members[(c + 1) % n_comm].choose(words.rng()).unwrap();
            add(&mut unit, a, b);
        }
    }
    TypedGraph::merge_units(vec![unit]).expect("planted graph ids are unique")
}

// ---------------------------------------------------------------------------
// corpus

#[derive(Debug, Clone, PartialEq)]
pub struct PlantedCell {
    pub doc_id: String,
    pub block_id: String,
    pub clause: String,
    pub row_path: Vec<String>,
    pub col_path: Vec<String>,
    pub value: String,
    pub condition: Option<String>,
}

impl PlantedCell {
    /// The factoid form of the question: the header path text itself.
    pub fn factoid_query(&self) -> String {
        format!("{} {}", self.row_path.join(" "), self.col_path.join(" "))
    }

    pub fn relational_query(&self) -> String {
        format!(
            "Which {} value is listed for {}?",
            self.col_path.join(" "),
            self.row_path.join(" ")
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantedFormula {
    pub doc_id: String,
    pub block_id: String,
    pub label: String,
    pub lhs: String,
    pub env: BTreeMap<String, f64>,
    pub expected: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub docs: Vec<SourceDocument>,
    pub cells: Vec<PlantedCell>,
    pub formulas: Vec<PlantedFormula>,
    pub abbreviations: Vec<String>,
}

fn prov(doc: &str, clause: &str, page: u32, slot: usize) -> Provenance {
    let y = 40.0 + 60.0 * slot as f64;
    Provenance {
        doc_id: doc.to_string(),
        clause_id: clause.to_string(),
        page,
        bbox: [50.0, y, 550.0, y + 50.0],
        release_tag: Some("Rel-18".into()),
    }
}

pub const DATA_ROWS: usize = 4;
pub const DATA_COLS: usize = 3;

/// `n_docs` documents, each with a definitions clause, one guarded table and
/// one labelled equation.
pub fn corpus(n_docs: usize, seed: u64) -> SyntheticCorpus {
    let mut words = WordGen::new(seed);
    let mut out = SyntheticCorpus {
        docs: Vec::new(),
        cells: Vec::new(),
        formulas: Vec::new(),
        abbreviations: Vec::new(),
    };
    for d in 0..n_docs {
        let doc_id = format!("TS 99.{:03}", 100 + d);
        let topic = words.word();
        let abbr = words.abbreviation();
        out.abbreviations.push(abbr.clone());
        let mut blocks: Vec<Block> = Vec::new();
        let push = |blocks: &mut Vec<Block>, id: &str, clause: &str, page: u32, body: BlockBody| {
            let slot = blocks.len();
            blocks.push(Block {
                id: id.to_string(),
                prov: prov(&doc_id, clause, page, slot % 10),
                body,
            });
        };
        push(&mut blocks, "s1", "1", 1, BlockBody::Section {
            level: 1,
            title: format!("{} overview", capitalise(&topic)),
        });
        push(&mut blocks, "p1", "1", 1, BlockBody::Paragraph {
            text: format!("The present document specifies the {topic} {} procedure.", words.word()),
            parent_section: "s1".into(),
        });
        push(&mut blocks, "s3", "3", 1, BlockBody::Section {
            level: 1,
            title: "Definitions".into(),
        });
        let long: Vec<String> = (0..3).map(|_| words.word()).collect();
        push(&mut blocks, "p3", "3", 1, BlockBody::Paragraph {
            text: format!("{abbr}: {} {} {} function of the {topic} layer.", long[0], long[1], long[2]),
            parent_section: "s3".into(),
        });
        let syms = ["G", "B", "S", "N"];
        let sym_words: Vec<String> = syms.iter().map(|_| words.word()).collect();
        for (k, s) in syms.iter().enumerate() {
            push(&mut blocks, &format!("p3{k}"), "3", 1, BlockBody::Paragraph {
                text: format!("{s} denotes the {} quantity.", sym_words[k]),
                parent_section: "s3".into(),
            });
        }
        push(&mut blocks, "s5", "5", 2, BlockBody::Section {
            level: 1,
            title: format!("{} requirements", capitalise(&topic)),
        });
        let tname = format!("5.1-{}", d + 1);
        let grp = words.word();
        push(&mut blocks, "s51", "5.1", 2, BlockBody::Section {
            level: 2,
            title: format!("{} {grp} limits", capitalise(&topic)),
        });
        push(&mut blocks, "p51", "5.1", 2, BlockBody::Paragraph {
            text: format!("The {grp} limits are given in Table {tname}."),
            parent_section: "s51".into(),
        });

        let cols: Vec<String> = (0..DATA_COLS).map(|_| words.word()).collect();
        let rows: Vec<String> = (0..DATA_ROWS).map(|_| words.word()).collect();
        let guarded = (words.rng().random_range(0..DATA_ROWS), words.rng().random_range(0..DATA_COLS));
        let condition = format!("applies only above {} GHz", words.rng().random_range(2..40));
        let mut trows = vec![
            vec![CellSpec::header("Parameter").spans(2, 1), CellSpec::header(&grp).spans(1, DATA_COLS)],
            cols.iter().map(CellSpec::header).collect(),
        ];
        for (r, rname) in rows.iter().enumerate() {
            let mut row = vec![CellSpec::header(rname)];
            for (c, cname) in cols.iter().enumerate() {
                let value = format!("{}.{}", words.rng().random_range(1..500), words.rng().random_range(0..10));
                let mut cell = CellSpec::new(&value);
                let cond = if (r, c) == guarded {
                    cell.footnote_markers.push("1".into());
                    Some(condition.clone())
                } else {
                    None
                };
                row.push(cell);
                out.cells.push(PlantedCell {
                    doc_id: doc_id.clone(),
                    block_id: "t51".into(),
                    clause: "5.1".into(),
                    row_path: vec![rname.clone()],
                    col_path: vec![grp.clone(), cname.clone()],
                    value,
                    condition: cond,
                });
            }
            trows.push(row);
        }
        push(&mut blocks, "t51", "5.1", 2, BlockBody::Table(TableBlock {
            rows: trows,
            caption: format!("Table {tname}: {} {grp} limits", capitalise(&topic)),
            footnotes: vec![Footnote {
                marker: "1".into(),
                text: format!("NOTE 1: {condition}"),
            }],
        }));

        push(&mut blocks, "s52", "5.2", 3, BlockBody::Section {
            level: 2,
            title: format!("{} rate computation", capitalise(&topic)),
        });
        let label = format!("{}.1", d + 1);
        push(&mut blocks, "p52", "5.2", 3, BlockBody::Paragraph {
            text: format!("The achievable rate follows Eq. ({label})."),
            parent_section: "s52".into(),
        });
        let env: BTreeMap<String, f64> = [
            ("G".to_string(), words.rng().random_range(1..5) as f64),
            ("B".to_string(), words.rng().random_range(1..20) as f64),
            ("S".to_string(), words.rng().random_range(1..16) as f64),
            ("N".to_string(), words.rng().random_range(1..4) as f64),
        ]
        .into_iter()
        .collect();
        let (math, expected) = match d % 3 {
            0 => (
                r"R = G \cdot B \cdot \log_2\left(1 + \frac{S}{N}\right)",
                env["G"] * env["B"] * (1.0 + env["S"] / env["N"]).log2(),
            ),
            1 => (r"R = \frac{G \cdot S}{N} + B", env["G"] * env["S"] / env["N"] + env["B"]),
            _ => (r"R = B^{2} - G \cdot (S - N)", env["B"].powi(2) - env["G"] * (env["S"] - env["N"])),
        };
        push(&mut blocks, "e52", "5.2", 3, BlockBody::Equation {
            math_src: math.into(),
            label: Some(format!("({label})")),
        });
        out.formulas.push(PlantedFormula {
            doc_id: doc_id.clone(),
            block_id: "e52".into(),
            label,
            lhs: "R".into(),
            env,
            expected,
        });

        let n = blocks.len();
        out.docs.push(SourceDocument {
            id: doc_id.clone(),
            release_tag: Some("Rel-18".into()),
            blocks,
            reading_order: (0..n).collect(),
        });
    }
    out
}

/// Index of the compiled cell node for a planted cell.
pub fn locate_cell(g: &TypedGraph, cell: &PlantedCell) -> Option<usize> {
    let path = |v: Option<&serde_json::Value>| -> Vec<String> {
        v.and_then(|v| v.as_array())
            .map(|a| a.iter().filter_map(|s| s.as_str().map(str::to_string)).collect())
            .unwrap_or_default()
    };
    let prefix = format!("{}#{}/", cell.doc_id, cell.block_id);
    g.nodes().iter().position(|n| {
        n.node_type == NodeType::Cell
            && n.id.starts_with(&prefix)
            && n.text == cell.value
            && path(n.attrs.get("row_path")) == cell.row_path
            && path(n.attrs.get("col_path")) == cell.col_path
    })
}

// ---------------------------------------------------------------------------
// random tables

#[derive(Debug, Clone, PartialEq)]
pub struct ExpectedCell {
    pub row_path: Vec<String>,
    pub col_path: Vec<String>,
    pub value: String,
    pub condition: Option<String>,
}

/// A table with one or two header rows and columns, spanning group headers,
/// occasional spanning or empty data cells and footnoted cells. The expected
/// list names each non-empty data cell by the header labels the generator
/// placed above and beside it.
pub fn random_table(rng: &mut ChaCha8Rng, words: &mut WordGen) -> (TableBlock, Vec<ExpectedCell>) {
    let hr = rng.random_range(1..=2);
    let hc = rng.random_range(1..=2);
    let n_data_rows = rng.random_range(1..=5);
    let n_data_cols = rng.random_range(1..=5);
    let n_rows = hr + n_data_rows;
    let n_cols = hc + n_data_cols;

    // owner[r][c] = index into `cells`
    let mut owner = vec![vec![usize::MAX; n_cols]; n_rows];
    let mut cells: Vec<((usize, usize), CellSpec)> = Vec::new();
    let place = |owner: &mut Vec<Vec<usize>>, cells: &mut Vec<((usize, usize), CellSpec)>, r, c, rs, cs, spec: CellSpec| {
        let id = cells.len();
        for row in owner.iter_mut().skip(r).take(rs) {
            for slot in row.iter_mut().skip(c).take(cs) {
                *slot = id;
            }
        }
        cells.push(((r, c), spec.spans(rs, cs)));
    };

    place(&mut owner, &mut cells, 0, 0, hr, hc, CellSpec::header(if rng.random_bool(0.5) { "Item" } else { "" }));

    // column headers: optional spanning groups on the first of two rows
    let mut col_paths: Vec<Vec<String>> = vec![Vec::new(); n_data_cols];
    let mut c = 0;
    while c < n_data_cols {
        if hr == 2 {
            let width = rng.random_range(1..=(n_data_cols - c).min(3));
            let group = words.word();
            place(&mut owner, &mut cells, 0, hc + c, 1, width, CellSpec::header(&group));
            for k in c..c + width {
                let leaf = words.word();
                place(&mut owner, &mut cells, 1, hc + k, 1, 1, CellSpec::header(&leaf));
                col_paths[k] = vec![group.clone(), leaf];
            }
            c += width;
        } else {
            let leaf = words.word();
            place(&mut owner, &mut cells, 0, hc + c, 1, 1, CellSpec::header(&leaf));
            col_paths[c] = vec![leaf];
            c += 1;
        }
    }
    let mut row_paths: Vec<Vec<String>> = vec![Vec::new(); n_data_rows];
    let mut r = 0;
    while r < n_data_rows {
        if hc == 2 {
            let height = rng.random_range(1..=(n_data_rows - r).min(3));
            let group = words.word();
            place(&mut owner, &mut cells, hr + r, 0, height, 1, CellSpec::header(&group));
            for k in r..r + height {
                let leaf = words.word();
                place(&mut owner, &mut cells, hr + k, 1, 1, 1, CellSpec::header(&leaf));
                row_paths[k] = vec![group.clone(), leaf];
            }
            r += height;
        } else {
            let leaf = words.word();
            place(&mut owner, &mut cells, hr + r, 0, 1, 1, CellSpec::header(&leaf));
            row_paths[r] = vec![leaf];
            r += 1;
        }
    }

    let mut footnotes: Vec<Footnote> = Vec::new();
    let mut conditions: HashMap<usize, String> = HashMap::new();
    let mut expected: Vec<ExpectedCell> = Vec::new();
    for dr in 0..n_data_rows {
        for dc in 0..n_data_cols {
            let (r, c) = (hr + dr, hc + dc);
            if owner[r][c] != usize::MAX {
                continue;
            }
            let rs = if dr + 1 < n_data_rows && owner[r + 1][c] == usize::MAX && rng.random_bool(0.1) { 2 } else { 1 };
            let cs = if dc + 1 < n_data_cols && (0..rs).all(|k| owner[r + k][c + 1] == usize::MAX) && rng.random_bool(0.1) {
                2
            } else {
                1
            };
            let empty = rng.random_bool(0.1);
            let value = if empty {
                String::new()
            } else if rng.random_bool(0.5) {
                format!("{}", rng.random_range(-100..1000))
            } else {
                words.word()
            };
            let mut spec = CellSpec::new(&value);
            let mut condition = None;
            if !empty && rng.random_bool(0.2) {
                let marker = format!("{}", footnotes.len() + 1);
                let text = format!("valid when {} is {}", words.word(), words.word());
                let style = rng.random_range(0..3);
                match style {
                    0 => spec.footnote_markers.push(marker.clone()),
                    1 => spec.text = format!("{value} (NOTE {marker})"),
                    _ => {
                        spec.text = format!(
                            "{value}{}",
                            marker.chars().map(superscript).collect::<String>()
                        )
                    }
                }
                footnotes.push(Footnote {
                    marker: if style == 1 { format!("NOTE {marker}") } else { marker },
                    text: text.clone(),
                });
                condition = Some(text);
            }
            let id = cells.len();
            place(&mut owner, &mut cells, r, c, rs, cs, spec);
            if let Some(cnd) = &condition {
                conditions.insert(id, cnd.clone());
            }
            if !empty {
                for k in 0..rs {
                    for j in 0..cs {
                        expected.push(ExpectedCell {
                            row_path: row_paths[dr + k].clone(),
                            col_path: col_paths[dc + j].clone(),
                            value: value.clone(),
                            condition: condition.clone(),
                        });
                    }
                }
            }
        }
    }

    let mut rows: Vec<Vec<CellSpec>> = vec![Vec::new(); n_rows];
    let mut starts: Vec<((usize, usize), CellSpec)> = cells;
    starts.sort_by_key(|((r, c), _)| (*r, *c));
    for ((r, _), spec) in starts {
        rows[r].push(spec);
    }
    footnotes.shuffle(rng);
    (
        TableBlock {
            rows,
            caption: format!("Table {}: {}", rng.random_range(1..99), words.word()),
            footnotes,
        },
        expected,
    )
}

fn superscript(d: char) -> char {
    match d {
        '0' => '⁰',
        '1' => '¹',
        '2' => '²',
        '3' => '³',
        '4' => '⁴',
        '5' => '⁵',
        '6' => '⁶',
        '7' => '⁷',
        '8' => '⁸',
        _ => '⁹',
    }
}

// ---------------------------------------------------------------------------
// route set

pub const ROUTE_SET_SIZE: usize = 300;

const LOW_TEMPLATES: &[&str] = &["What is {E}?", "Define {E}.", "What does {E} stand for?", "Explain {E} briefly."];
const MED_TEMPLATES: &[&str] = &[
    "How does {E} interact with {F}?",
    "Compare {E} and {F} limits.",
    "Evaluate R = B log2(1 + S/N) for {E}",
    "What is the limit when the offset is {n} dB?",
];
const HIGH_TEMPLATES: &[&str] = &[
    "give an overview of how the {w} family handles scheduling mobility and power saving across all releases",
    "summarise the main design themes behind the {w} procedures and how they evolved over successive versions",
    "what are the broad trends in how the {w} specifications organise their requirements and their testing",
];

/// 100 queries per route. Entities are all-caps pseudo-abbreviations, so the
/// set can be featurised against any index with an empty gazetteer.
pub fn route_set(seed: u64) -> Vec<(String, Route)> {
    let mut words = WordGen::new(seed ^ 0x5eed);
    let per = ROUTE_SET_SIZE / 3;
    let mut out = Vec::with_capacity(ROUTE_SET_SIZE);
    for (route, templates) in [(Route::Low, LOW_TEMPLATES), (Route::Med, MED_TEMPLATES), (Route::High, HIGH_TEMPLATES)] {
        for i in 0..per {
            let t = templates[i % templates.len()];
            let e = words.abbreviation();
            let f = words.abbreviation();
            let w = words.word();
            let n = words.rng().random_range(1..30).to_string();
            let q = t.replace("{E}", &e).replace("{F}", &f).replace("{w}", &w).replace("{n}", &n);
            out.push((q, route));
        }
    }
    out
}

/// Attrs and ids used by the fixture helpers below, kept public so tests can
/// build the same shapes by hand.
pub fn two_triangle_graph() -> TypedGraph {
    let mut unit = GraphUnit::default();
    for i in 0..6 {
        unit.nodes.push(
            Node::new(format!("tri/{i}"), NodeType::Paragraph, format!("node {i}"))
                .with_attr("group", json!(i / 3))
                .with_prov(&prov("TRI", "1", 1, i)),
        );
    }
    for (a, b) in [(0, 1), (1, 2), (0, 2), (3, 4), (4, 5), (3, 5), (2, 3)] {
        unit.edges.push(EdgeSpec::new(
            format!("tri/{a}"),
            format!("tri/{b}"),
            crate::graph::RelationType::RefersTo,
        ));
    }
    TypedGraph::merge_units(vec![unit]).expect("fixed ids")
}
