//! The base multimodal graph: typed nodes, typed directed edges and an open
//! attribute store, plus merge, traversal and JSONL persistence.
//!
//! Edges are stored directed, but degree, volume and k-hop traversal use the
//! undirected projection.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde_json::{json, Value};
use thiserror::Error;

use crate::canonical::{sha256_hex, to_canonical_string};
use crate::doc_model::Provenance;
use crate::text::term_key;

pub const FORMAT_VERSION: u64 = 1;
/// Largest hop count accepted by [`TypedGraph::khop_expand`].
pub const MAX_HOPS: u32 = 3;
pub const DEFAULT_EXPANSION_BUDGET: usize = 512;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("node id {0:?} is used by two different payloads")]
    IdCollision(String),
    #[error("unknown node {0:?}")]
    UnknownNode(String),
    #[error("k-hop expansion needs at least one anchor")]
    EmptyAnchors,
    #[error("hop count {k} outside 1..={max}")]
    HopLimit { k: u32, max: u32 },
    #[error("unsupported graph format version {0}")]
    FormatVersion(u64),
    #[error("checksum mismatch: manifest {expected}, content {found}")]
    Checksum { expected: String, found: String },
    #[error("malformed graph file: {0}")]
    Format(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for GraphError {
    fn from(e: std::io::Error) -> Self {
        GraphError::Io(e.to_string())
    }
}

macro_rules! string_enum {
    ($name:ident { $($variant:ident => $s:literal),+ $(,)? }) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub enum $name { $($variant),+ }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self { $($name::$variant => $s),+ }
            }

            pub fn index(self) -> usize {
                self as usize
            }
        }

        impl FromStr for $name {
            type Err = GraphError;
            fn from_str(s: &str) -> Result<Self, Self::Err> {
                match s {
                    $($s => Ok($name::$variant),)+
                    other => Err(GraphError::Format(format!(concat!("unknown ", stringify!($name), " {:?}"), other))),
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }
    };
}

string_enum!(NodeType {
    Section => "section",
    Paragraph => "paragraph",
    Term => "term",
    RowHeader => "row_header",
    ColHeader => "col_header",
    Cell => "cell",
    Predicate => "predicate",
    Operator => "operator",
    Variable => "variable",
    Constant => "constant",
    MacroNode => "macro_node",
});

string_enum!(RelationType {
    Contains => "contains",
    RefersTo => "refers_to",
    Defines => "defines",
    RowBind => "row_bind",
    ColBind => "col_bind",
    Activates => "activates",
    OperandOf => "operand_of",
    Precedes => "precedes",
    Src => "src",
    MemberOf => "member_of",
});

pub type Attrs = BTreeMap<String, Value>;

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub id: String,
    pub node_type: NodeType,
    pub text: String,
    pub attrs: Attrs,
}

impl Node {
    pub fn new(id: impl Into<String>, node_type: NodeType, text: impl Into<String>) -> Self {
        Node {
            id: id.into(),
            node_type,
            text: text.into(),
            attrs: Attrs::new(),
        }
    }

    pub fn with_attr(mut self, key: &str, value: Value) -> Self {
        self.attrs.insert(key.to_string(), value);
        self
    }

    /// Attach provenance: the full record under `prov`, plus the clause id and
    /// release tag as top-level attributes.
    pub fn with_prov(mut self, prov: &Provenance) -> Self {
        self.attrs.insert("prov".into(), prov.to_value());
        self.attrs.insert("clause_id".into(), json!(prov.clause_id));
        if let Some(tag) = &prov.release_tag {
            self.attrs.insert("release_tag".into(), json!(tag));
        }
        self
    }

    pub fn provenance(&self) -> Option<Provenance> {
        self.attrs
            .get("prov")
            .and_then(|v| Provenance::from_value(v, "/attrs/prov").ok())
    }

    pub fn attr_str(&self, key: &str) -> Option<&str> {
        self.attrs.get(key).and_then(Value::as_str)
    }

    fn to_line(&self) -> String {
        to_canonical_string(&json!({
            "id": self.id,
            "type": self.node_type.as_str(),
            "text": self.text,
            "attrs": Value::Object(self.attrs.clone().into_iter().collect()),
        }))
    }
}

/// An edge as emitted by a compiler, referencing nodes by id.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeSpec {
    pub src: String,
    pub dst: String,
    pub rel: RelationType,
    pub attrs: Attrs,
}

impl EdgeSpec {
    pub fn new(src: impl Into<String>, dst: impl Into<String>, rel: RelationType) -> Self {
        EdgeSpec {
            src: src.into(),
            dst: dst.into(),
            rel,
            attrs: Attrs::new(),
        }
    }

    pub fn with_attr(mut self, key: &str, value: Value) -> Self {
        self.attrs.insert(key.to_string(), value);
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub id: String,
    pub src: usize,
    pub dst: usize,
    pub rel: RelationType,
    pub attrs: Attrs,
}

/// Nodes and edges produced by compiling one document (or a fragment).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GraphUnit {
    pub nodes: Vec<Node>,
    pub edges: Vec<EdgeSpec>,
}

impl GraphUnit {
    pub fn extend(&mut self, other: GraphUnit) {
        self.nodes.extend(other.nodes);
        self.edges.extend(other.edges);
    }
}

#[derive(Debug, Clone, Default)]
pub struct TypedGraph {
    nodes: Vec<Node>,
    index: HashMap<String, usize>,
    edges: Vec<Edge>,
    out_adj: Vec<Vec<usize>>,
    in_adj: Vec<Vec<usize>>,
}

impl PartialEq for TypedGraph {
    fn eq(&self, other: &Self) -> bool {
        self.nodes == other.nodes && self.edges == other.edges
    }
}

/// Result of a bounded typed expansion.
#[derive(Debug, Clone, PartialEq)]
pub struct Subgraph {
    /// `(node index, hop distance)` in discovery order.
    pub nodes: Vec<(usize, u32)>,
    /// Indices of traversable edges with both endpoints in `nodes`.
    pub edges: Vec<usize>,
}

impl Subgraph {
    pub fn hop_of(&self, node: usize) -> Option<u32> {
        self.nodes.iter().find(|(n, _)| *n == node).map(|(_, h)| *h)
    }
}

impl TypedGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn node(&self, idx: usize) -> &Node {
        &self.nodes[idx]
    }

    pub fn edge(&self, idx: usize) -> &Edge {
        &self.edges[idx]
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn node_by_id(&self, id: &str) -> Option<&Node> {
        self.index_of(id).map(|i| &self.nodes[i])
    }

    pub fn out_edges(&self, idx: usize) -> impl Iterator<Item = &Edge> {
        self.out_adj[idx].iter().map(move |&e| &self.edges[e])
    }

    pub fn in_edges(&self, idx: usize) -> impl Iterator<Item = &Edge> {
        self.in_adj[idx].iter().map(move |&e| &self.edges[e])
    }

    /// Edge indices incident to `idx` in either direction. Self-loops appear twice.
    pub fn incident_edges(&self, idx: usize) -> impl Iterator<Item = usize> + '_ {
        self.out_adj[idx].iter().chain(self.in_adj[idx].iter()).copied()
    }

    /// Add a node. Re-adding an identical node is a no-op.
    pub fn add_node(&mut self, node: Node) -> Result<usize, GraphError> {
        if let Some(&i) = self.index.get(&node.id) {
            if self.nodes[i] == node {
                return Ok(i);
            }
            return Err(GraphError::IdCollision(node.id));
        }
        let i = self.nodes.len();
        self.index.insert(node.id.clone(), i);
        self.nodes.push(node);
        self.out_adj.push(Vec::new());
        self.in_adj.push(Vec::new());
        Ok(i)
    }

    pub fn add_edge(&mut self, spec: EdgeSpec) -> Result<usize, GraphError> {
        let src = self
            .index_of(&spec.src)
            .ok_or_else(|| GraphError::UnknownNode(spec.src.clone()))?;
        let dst = self
            .index_of(&spec.dst)
            .ok_or_else(|| GraphError::UnknownNode(spec.dst.clone()))?;
        let e = self.edges.len();
        self.push_edge(Edge {
            id: format!("e{e:07}"),
            src,
            dst,
            rel: spec.rel,
            attrs: spec.attrs,
        });
        Ok(e)
    }

    fn push_edge(&mut self, edge: Edge) {
        let e = self.edges.len();
        self.out_adj[edge.src].push(e);
        self.in_adj[edge.dst].push(e);
        self.edges.push(edge);
    }

    /// Undirected degree of every node: parallel edges counted, self-loops count 2.
    pub fn degree_vector(&self) -> Vec<(usize, usize)> {
        (0..self.nodes.len())
            .map(|i| (i, self.out_adj[i].len() + self.in_adj[i].len()))
            .collect()
    }

    pub fn degree(&self, idx: usize) -> usize {
        self.out_adj[idx].len() + self.in_adj[idx].len()
    }

    /// Graph volume `V_G = Σ d_i = 2|E|`.
    pub fn volume(&self) -> usize {
        self.degree_vector().iter().map(|(_, d)| d).sum()
    }

    /// Merge compiler outputs into one graph.
    ///
    /// Term nodes sharing a unification key are collapsed into a single node
    /// `term/<key>` and their edges redirected. The result is independent of
    /// the order of `units`: nodes are sorted by id and edges by
    /// `(src, dst, relation, attributes)` before edge ids are assigned.
    pub fn merge_units(units: Vec<GraphUnit>) -> Result<TypedGraph, GraphError> {
        let mut nodes: BTreeMap<String, Node> = BTreeMap::new();
        let mut rename: HashMap<String, String> = HashMap::new();
        let mut terms: BTreeMap<String, Vec<Node>> = BTreeMap::new();
        let mut edges = Vec::new();

        for unit in units {
            for node in unit.nodes {
                if node.node_type == NodeType::Term {
                    let key = node
                        .attr_str("key")
                        .map(str::to_string)
                        .unwrap_or_else(|| term_key(&node.text));
                    rename.insert(node.id.clone(), format!("term/{key}"));
                    terms.entry(key).or_default().push(node);
                    continue;
                }
                match nodes.get(&node.id) {
                    Some(existing) if *existing != node => return Err(GraphError::IdCollision(node.id)),
                    Some(_) => {}
                    None => {
                        nodes.insert(node.id.clone(), node);
                    }
                }
            }
            edges.extend(unit.edges);
        }

        for (key, mut group) in terms {
            group.sort_by(|a, b| a.id.cmp(&b.id));
            group.dedup_by(|a, b| a.id == b.id);
            let mut sources: Vec<String> = group.iter().map(|n| n.id.clone()).collect();
            sources.sort();
            let first = group.swap_remove(0);
            let id = format!("term/{key}");
            let mut attrs = first.attrs;
            attrs.insert("key".into(), json!(key));
            attrs.insert("sources".into(), json!(sources));
            if nodes.contains_key(&id) {
                return Err(GraphError::IdCollision(id));
            }
            nodes.insert(
                id.clone(),
                Node {
                    id,
                    node_type: NodeType::Term,
                    text: first.text,
                    attrs,
                },
            );
        }

        let mut g = TypedGraph::new();
        for (_, node) in nodes {
            g.add_node(node)?;
        }
        let mut resolved = Vec::with_capacity(edges.len());
        for mut spec in edges {
            if let Some(r) = rename.get(&spec.src) {
                spec.src = r.clone();
            }
            if let Some(r) = rename.get(&spec.dst) {
                spec.dst = r.clone();
            }
            let src = g.index_of(&spec.src).ok_or_else(|| GraphError::UnknownNode(spec.src.clone()))?;
            let dst = g.index_of(&spec.dst).ok_or_else(|| GraphError::UnknownNode(spec.dst.clone()))?;
            let attr_key = to_canonical_string(&Value::Object(spec.attrs.clone().into_iter().collect()));
            resolved.push((src, dst, spec.rel, attr_key, spec.attrs));
        }
        // nodes are inserted in id order, so index order is id order here
        resolved.sort_by(|a, b| (a.0, a.1, a.2, &a.3).cmp(&(b.0, b.1, b.2, &b.3)));
        for (i, (src, dst, rel, _, attrs)) in resolved.into_iter().enumerate() {
            g.push_edge(Edge {
                id: format!("e{i:07}"),
                src,
                dst,
                rel,
                attrs,
            });
        }
        Ok(g)
    }

    /// Breadth-first expansion from `anchors` over edges whose relation is in
    /// `allowed`, in both directions, up to `k` hops or `budget` nodes.
    ///
    /// Each BFS layer is visited in ascending node-id order, and neighbours are
    /// admitted in ascending node-id order, so budget truncation is
    /// deterministic.
    pub fn khop_expand(
        &self,
        anchors: &[usize],
        k: u32,
        allowed: &[RelationType],
        budget: usize,
    ) -> Result<Subgraph, GraphError> {
        if anchors.is_empty() {
            return Err(GraphError::EmptyAnchors);
        }
        if k == 0 || k > MAX_HOPS {
            return Err(GraphError::HopLimit { k, max: MAX_HOPS });
        }
        for &a in anchors {
            if a >= self.nodes.len() {
                return Err(GraphError::UnknownNode(format!("#{a}")));
            }
        }
        let by_id = |a: &usize, b: &usize| self.nodes[*a].id.cmp(&self.nodes[*b].id);
        let mut hop: HashMap<usize, u32> = HashMap::new();
        let mut order = Vec::new();
        let mut frontier: Vec<usize> = anchors.to_vec();
        frontier.sort_by(by_id);
        frontier.dedup();
        for &a in &frontier {
            if order.len() >= budget {
                break;
            }
            hop.insert(a, 0);
            order.push((a, 0));
        }
        frontier.retain(|a| hop.contains_key(a));

        let mut depth = 0;
        let mut queue: VecDeque<usize> = frontier.into();
        'outer: while depth < k && !queue.is_empty() {
            depth += 1;
            let mut layer: Vec<usize> = queue.drain(..).collect();
            layer.sort_by(by_id);
            let mut next = Vec::new();
            for u in layer {
                let mut nbrs: Vec<usize> = self
                    .incident_edges(u)
                    .filter(|&e| allowed.contains(&self.edges[e].rel))
                    .map(|e| {
                        let edge = &self.edges[e];
                        if edge.src == u {
                            edge.dst
                        } else {
                            edge.src
                        }
                    })
                    .collect();
                nbrs.sort_by(by_id);
                nbrs.dedup();
                for v in nbrs {
                    if hop.contains_key(&v) {
                        continue;
                    }
                    if order.len() >= budget {
                        break 'outer;
                    }
                    hop.insert(v, depth);
                    order.push((v, depth));
                    next.push(v);
                }
            }
            queue = next.into();
        }

        let mut edges: Vec<usize> = Vec::new();
        for &(u, _) in &order {
            for &e in &self.out_adj[u] {
                let edge = &self.edges[e];
                if allowed.contains(&edge.rel) && hop.contains_key(&edge.dst) {
                    edges.push(e);
                }
            }
        }
        edges.sort_unstable();
        Ok(Subgraph { nodes: order, edges })
    }

    fn edge_line(&self, e: &Edge) -> String {
        to_canonical_string(&json!({
            "id": e.id,
            "src": self.nodes[e.src].id,
            "dst": self.nodes[e.dst].id,
            "rel": e.rel.as_str(),
            "attrs": Value::Object(e.attrs.clone().into_iter().collect()),
        }))
    }

    /// JSONL bodies of the node and edge streams.
    pub fn to_jsonl(&self) -> (String, String) {
        let mut nodes = String::new();
        for n in &self.nodes {
            nodes.push_str(&n.to_line());
            nodes.push('\n');
        }
        let mut edges = String::new();
        for e in &self.edges {
            edges.push_str(&self.edge_line(e));
            edges.push('\n');
        }
        (nodes, edges)
    }

    /// Write `nodes.jsonl`, `edges.jsonl` and `manifest.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<(), GraphError> {
        fs::create_dir_all(dir)?;
        let (nodes, edges) = self.to_jsonl();
        let manifest = json!({
            "format_version": FORMAT_VERSION,
            "nodes": self.nodes.len(),
            "edges": self.edges.len(),
            "checksum": content_checksum(&nodes, &edges),
        });
        fs::write(dir.join("nodes.jsonl"), nodes)?;
        fs::write(dir.join("edges.jsonl"), edges)?;
        fs::write(dir.join("manifest.json"), to_canonical_string(&manifest) + "\n")?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<TypedGraph, GraphError> {
        let manifest: Value = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)
            .map_err(|e| GraphError::Format(format!("manifest: {e}")))?;
        let version = manifest["format_version"]
            .as_u64()
            .ok_or_else(|| GraphError::Format("manifest lacks format_version".into()))?;
        if version != FORMAT_VERSION {
            return Err(GraphError::FormatVersion(version));
        }
        let nodes = fs::read_to_string(dir.join("nodes.jsonl"))?;
        let edges = fs::read_to_string(dir.join("edges.jsonl"))?;
        let expected = manifest["checksum"].as_str().unwrap_or_default().to_string();
        let found = content_checksum(&nodes, &edges);
        if expected != found {
            return Err(GraphError::Checksum { expected, found });
        }
        Self::from_jsonl(&nodes, &edges)
    }

    pub fn from_jsonl(nodes: &str, edges: &str) -> Result<TypedGraph, GraphError> {
        let mut g = TypedGraph::new();
        for (i, line) in nodes.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let v: Value =
                serde_json::from_str(line).map_err(|e| GraphError::Format(format!("nodes line {}: {e}", i + 1)))?;
            let node = Node {
                id: json_str(&v, "id")?,
                node_type: json_str(&v, "type")?.parse()?,
                text: json_str(&v, "text")?,
                attrs: json_attrs(&v)?,
            };
            g.add_node(node)?;
        }
        for (i, line) in edges.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let v: Value =
                serde_json::from_str(line).map_err(|e| GraphError::Format(format!("edges line {}: {e}", i + 1)))?;
            let src = json_str(&v, "src")?;
            let dst = json_str(&v, "dst")?;
            let edge = Edge {
                id: json_str(&v, "id")?,
                src: g.index_of(&src).ok_or(GraphError::UnknownNode(src))?,
                dst: g.index_of(&dst).ok_or(GraphError::UnknownNode(dst))?,
                rel: json_str(&v, "rel")?.parse()?,
                attrs: json_attrs(&v)?,
            };
            g.push_edge(edge);
        }
        Ok(g)
    }
}

fn content_checksum(nodes: &str, edges: &str) -> String {
    let mut bytes = Vec::with_capacity(nodes.len() + edges.len() + 1);
    bytes.extend_from_slice(nodes.as_bytes());
    bytes.push(0);
    bytes.extend_from_slice(edges.as_bytes());
    sha256_hex(&bytes)
}

fn json_str(v: &Value, key: &str) -> Result<String, GraphError> {
    v.get(key)
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| GraphError::Format(format!("missing string field {key:?}")))
}

fn json_attrs(v: &Value) -> Result<Attrs, GraphError> {
    match v.get("attrs") {
        None => Ok(Attrs::new()),
        Some(Value::Object(m)) => Ok(m.clone().into_iter().collect()),
        Some(_) => Err(GraphError::Format("attrs must be an object".into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path_graph(ids: &[&str]) -> TypedGraph {
        let mut g = TypedGraph::new();
        for id in ids {
            g.add_node(Node::new(*id, NodeType::Paragraph, *id)).unwrap();
        }
        for w in ids.windows(2) {
            g.add_edge(EdgeSpec::new(w[0], w[1], RelationType::Contains)).unwrap();
        }
        g
    }

    #[test]
    fn khop_on_path() {
        let g = path_graph(&["a", "b", "c"]);
        let a = g.index_of("a").unwrap();
        let ids = |s: &Subgraph| s.nodes.iter().map(|(n, _)| g.node(*n).id.clone()).collect::<Vec<_>>();
        let rels = [RelationType::Contains];
        assert_eq!(ids(&g.khop_expand(&[a], 1, &rels, 512).unwrap()), vec!["a", "b"]);
        assert_eq!(ids(&g.khop_expand(&[a], 2, &rels, 512).unwrap()), vec!["a", "b", "c"]);
        // relation filter
        assert_eq!(ids(&g.khop_expand(&[a], 2, &[RelationType::Src], 512).unwrap()), vec!["a"]);
        // budget
        assert_eq!(ids(&g.khop_expand(&[a], 2, &rels, 2).unwrap()), vec!["a", "b"]);
    }

    #[test]
    fn khop_errors() {
        let g = path_graph(&["a", "b"]);
        assert_eq!(g.khop_expand(&[], 1, &[], 10), Err(GraphError::EmptyAnchors));
        assert!(matches!(g.khop_expand(&[0], 4, &[], 10), Err(GraphError::HopLimit { .. })));
    }

    #[test]
    fn degree_and_volume() {
        let g = path_graph(&["a", "b"]);
        assert_eq!(g.degree_vector(), vec![(0, 1), (1, 1)]);
        assert_eq!(g.volume(), 2);
        let mut t = path_graph(&["a", "b", "c"]);
        t.add_edge(EdgeSpec::new("c", "a", RelationType::Contains)).unwrap();
        assert_eq!(t.degree_vector().iter().map(|d| d.1).collect::<Vec<_>>(), vec![2, 2, 2]);
        assert_eq!(t.volume(), 6);
        t.add_edge(EdgeSpec::new("a", "a", RelationType::Precedes)).unwrap();
        assert_eq!(t.degree(0), 4);
    }

    #[test]
    fn id_collision_detected() {
        let u1 = GraphUnit {
            nodes: vec![Node::new("x", NodeType::Paragraph, "one")],
            edges: vec![],
        };
        let u2 = GraphUnit {
            nodes: vec![Node::new("x", NodeType::Paragraph, "two")],
            edges: vec![],
        };
        assert_eq!(
            TypedGraph::merge_units(vec![u1.clone(), u2]),
            Err(GraphError::IdCollision("x".into()))
        );
        // identical payloads are fine
        assert!(TypedGraph::merge_units(vec![u1.clone(), u1]).is_ok());
    }

    #[test]
    fn terms_unify_across_documents() {
        let unit = |doc: &str| GraphUnit {
            nodes: vec![
                Node::new(format!("{doc}#p"), NodeType::Paragraph, "SSB text"),
                Node::new(format!("{doc}#term/ssb"), NodeType::Term, "SSB").with_attr("key", json!("ssb")),
            ],
            edges: vec![EdgeSpec::new(format!("{doc}#term/ssb"), format!("{doc}#p"), RelationType::Defines)],
        };
        let g = TypedGraph::merge_units(vec![unit("A"), unit("B")]).unwrap();
        let terms: Vec<_> = g.nodes().iter().filter(|n| n.node_type == NodeType::Term).collect();
        assert_eq!(terms.len(), 1);
        let t = g.index_of("term/ssb").unwrap();
        assert_eq!(g.out_edges(t).count(), 2);
    }

    #[test]
    fn save_load_round_trip_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let mut g = path_graph(&["a", "b", "c"]);
        g.nodes[0].attrs.insert("future_key".into(), json!({"nested": [1, 2]}));
        g.save(dir.path()).unwrap();
        let back = TypedGraph::load(dir.path()).unwrap();
        assert_eq!(back, g);
        assert_eq!(back.node(0).attrs["future_key"], json!({"nested": [1, 2]}));

        let nodes = fs::read_to_string(dir.path().join("nodes.jsonl")).unwrap();
        fs::write(dir.path().join("nodes.jsonl"), &nodes[..nodes.len() / 2]).unwrap();
        assert!(matches!(TypedGraph::load(dir.path()), Err(GraphError::Checksum { .. })));
    }

    #[test]
    fn wrong_version_rejected() {
        let dir = tempfile::tempdir().unwrap();
        path_graph(&["a"]).save(dir.path()).unwrap();
        let m = fs::read_to_string(dir.path().join("manifest.json")).unwrap();
        fs::write(dir.path().join("manifest.json"), m.replace("\"format_version\":1", "\"format_version\":9")).unwrap();
        assert_eq!(TypedGraph::load(dir.path()), Err(GraphError::FormatVersion(9)));
    }
}
