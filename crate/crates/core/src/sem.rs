//! Structural entropy over the undirected projection of the typed graph, the
//! greedy entropy-minimising community merge, and macro-node materialisation.
//!
//! Degrees count parallel edges, self-loops count twice. Nodes of degree zero
//! are left out of every entropy sum and stay singleton communities.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, HashMap};

use serde_json::{json, Value};
use thiserror::Error;

use crate::graph::{EdgeSpec, Node, NodeType, RelationType, TypedGraph};
use crate::llm::{CommunityDigest, DigestMember, LlmError, Summarizer};

/// Merges stop once the best available decrease is smaller than this.
pub const EPSILON: f64 = 1e-12;
/// Dendrogram snapshots are taken at each further 10% drop in community count.
pub const LEVEL_STEP: f64 = 0.1;
/// Members listed in a community digest handed to a summarizer.
pub const DIGEST_MEMBERS: usize = 40;

#[derive(Debug, Error)]
pub enum SemError {
    #[error("graph has zero volume")]
    EmptyGraph,
    #[error("invalid partition: {0}")]
    InvalidPartition(String),
    #[error("communities {0} and {1} are not adjacent")]
    NotAdjacent(usize, usize),
    #[error("summarizer failed for community {community}: {source}")]
    Summarizer { community: usize, source: LlmError },
    #[error("dendrogram format: {0}")]
    Format(String),
    #[error(transparent)]
    Graph(#[from] crate::graph::GraphError),
}

/// Undirected multigraph view used for entropy. Node `i` here is node `i` of
/// the source graph.
#[derive(Debug, Clone)]
pub struct EntropyGraph {
    pub degree: Vec<u64>,
    /// Non-loop edges as index pairs, parallel edges repeated.
    pub edges: Vec<(usize, usize)>,
    pub volume: u64,
}

impl EntropyGraph {
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Self {
        let mut degree = vec![0u64; n];
        let mut plain = Vec::with_capacity(edges.len());
        for &(a, b) in edges {
            degree[a] += 1;
            degree[b] += 1;
            if a != b {
                plain.push((a, b));
            }
        }
        let volume = degree.iter().sum();
        EntropyGraph {
            degree,
            edges: plain,
            volume,
        }
    }

    /// Projection of a typed graph without macro-nodes and `member_of` edges.
    pub fn from_typed(g: &TypedGraph) -> Self {
        let edges: Vec<(usize, usize)> = g
            .edges()
            .iter()
            .filter(|e| {
                e.rel != RelationType::MemberOf
                    && g.node(e.src).node_type != NodeType::MacroNode
                    && g.node(e.dst).node_type != NodeType::MacroNode
            })
            .map(|e| (e.src, e.dst))
            .collect();
        Self::from_edges(g.node_count(), &edges)
    }

    pub fn n(&self) -> usize {
        self.degree.len()
    }
}

fn xlog2x(x: f64) -> f64 {
    if x > 0.0 {
        x * x.log2()
    } else {
        0.0
    }
}

/// One-dimensional structural entropy in bits.
pub fn h1(g: &EntropyGraph) -> Result<f64, SemError> {
    if g.volume == 0 {
        return Err(SemError::EmptyGraph);
    }
    let v = g.volume as f64;
    Ok(-g
        .degree
        .iter()
        .filter(|&&d| d > 0)
        .map(|&d| {
            let p = d as f64 / v;
            p * p.log2()
        })
        .sum::<f64>())
}

/// Flat partition: `assignment[i]` is the community id of node `i`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    pub assignment: Vec<usize>,
}

impl Partition {
    pub fn singletons(n: usize) -> Self {
        Partition {
            assignment: (0..n).collect(),
        }
    }

    pub fn one_community(n: usize) -> Self {
        Partition { assignment: vec![0; n] }
    }

    /// Community id to ascending member list.
    pub fn communities(&self) -> BTreeMap<usize, Vec<usize>> {
        let mut out: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, &c) in self.assignment.iter().enumerate() {
            out.entry(c).or_default().push(i);
        }
        out
    }

    /// Membership sets in a canonical order, independent of community ids.
    pub fn canonical_blocks(&self) -> Vec<Vec<usize>> {
        let mut blocks: Vec<Vec<usize>> = self.communities().into_values().collect();
        blocks.sort();
        blocks
    }
}

/// Per-community volume `V_C`, cut `g_C`.
pub fn community_stats(g: &EntropyGraph, p: &Partition) -> Result<BTreeMap<usize, (u64, u64)>, SemError> {
    if p.assignment.len() != g.n() {
        return Err(SemError::InvalidPartition(format!(
            "{} assignments for {} nodes",
            p.assignment.len(),
            g.n()
        )));
    }
    let mut stats: BTreeMap<usize, (u64, u64)> = BTreeMap::new();
    for (i, &c) in p.assignment.iter().enumerate() {
        stats.entry(c).or_default().0 += g.degree[i];
    }
    for &(a, b) in &g.edges {
        let (ca, cb) = (p.assignment[a], p.assignment[b]);
        if ca != cb {
            stats.get_mut(&ca).unwrap().1 += 1;
            stats.get_mut(&cb).unwrap().1 += 1;
        }
    }
    Ok(stats)
}

/// Two-dimensional structural entropy of partition `p`, in bits.
pub fn h2(g: &EntropyGraph, p: &Partition) -> Result<f64, SemError> {
    if g.volume == 0 {
        return Err(SemError::EmptyGraph);
    }
    let stats = community_stats(g, p)?;
    let v = g.volume as f64;
    let mut total = 0.0;
    for (cid, &(vc, gc)) in &stats {
        if vc == 0 {
            continue;
        }
        let vc = vc as f64;
        let mut inner = 0.0;
        for (i, &c) in p.assignment.iter().enumerate() {
            if c == *cid && g.degree[i] > 0 {
                let q = g.degree[i] as f64 / vc;
                inner -= q * q.log2();
            }
        }
        total += vc / v * inner;
        total -= gc as f64 / v * (vc / v).log2();
    }
    Ok(total)
}

pub fn h1_typed(g: &TypedGraph) -> Result<f64, SemError> {
    h1(&EntropyGraph::from_typed(g))
}

/// H² of `p` over the projection of `g`. Macro-nodes appended after the
/// partition was computed are isolated in the projection and may be left out
/// of `p`.
pub fn h2_typed(g: &TypedGraph, p: &Partition) -> Result<f64, SemError> {
    let n = p.assignment.len();
    if n < g.node_count() && g.nodes()[n..].iter().all(|x| x.node_type == NodeType::MacroNode) {
        let mut padded = p.clone();
        let next = p.assignment.iter().copied().max().map_or(0, |m| m + 1);
        padded.assignment.extend(next..next + g.node_count() - n);
        return h2(&EntropyGraph::from_typed(g), &padded);
    }
    h2(&EntropyGraph::from_typed(g), p)
}

#[derive(Debug, Clone)]
struct Community {
    volume: f64,
    /// Σ d·log2 d over members.
    s: f64,
    cut: u64,
    members: Vec<usize>,
    neighbours: HashMap<usize, u64>,
}

/// Live community statistics during greedy merging.
#[derive(Debug, Clone)]
pub struct MergeState {
    total_volume: f64,
    communities: Vec<Option<Community>>,
    n: usize,
}

impl MergeState {
    pub fn singletons(g: &EntropyGraph) -> Result<Self, SemError> {
        if g.volume == 0 {
            return Err(SemError::EmptyGraph);
        }
        let mut communities: Vec<Option<Community>> = (0..g.n())
            .map(|i| {
                let d = g.degree[i] as f64;
                Some(Community {
                    volume: d,
                    s: xlog2x(d),
                    cut: 0,
                    members: vec![i],
                    neighbours: HashMap::new(),
                })
            })
            .collect();
        for &(a, b) in &g.edges {
            for (x, y) in [(a, b), (b, a)] {
                let c = communities[x].as_mut().unwrap();
                c.cut += 1;
                *c.neighbours.entry(y).or_default() += 1;
            }
        }
        Ok(MergeState {
            total_volume: g.volume as f64,
            communities,
            n: g.n(),
        })
    }

    fn contribution(&self, volume: f64, s: f64, cut: u64) -> f64 {
        if volume == 0.0 {
            return 0.0;
        }
        let v = self.total_volume;
        (xlog2x(volume) - s - cut as f64 * (volume / v).log2()) / v
    }

    fn live(&self, id: usize) -> Option<&Community> {
        self.communities.get(id).and_then(Option::as_ref)
    }

    /// Current H² of the state's partition.
    pub fn entropy(&self) -> f64 {
        self.communities
            .iter()
            .flatten()
            .map(|c| self.contribution(c.volume, c.s, c.cut))
            .sum()
    }

    /// Change in H² if communities `a` and `b` were merged.
    pub fn delta_h2_merge(&self, a: usize, b: usize) -> Result<f64, SemError> {
        let (Some(ca), Some(cb)) = (self.live(a), self.live(b)) else {
            return Err(SemError::NotAdjacent(a, b));
        };
        let w = match ca.neighbours.get(&b) {
            Some(&w) if a != b => w,
            _ => return Err(SemError::NotAdjacent(a, b)),
        };
        let merged = self.contribution(ca.volume + cb.volume, ca.s + cb.s, ca.cut + cb.cut - 2 * w);
        Ok(merged - self.contribution(ca.volume, ca.s, ca.cut) - self.contribution(cb.volume, cb.s, cb.cut))
    }

    /// Merge `a` and `b` into a new community; returns its id.
    pub fn merge(&mut self, a: usize, b: usize) -> Result<usize, SemError> {
        if a == b || self.live(a).is_none() || self.live(b).is_none() {
            return Err(SemError::NotAdjacent(a, b));
        }
        let new_id = self.communities.len();
        let mut ca = self.communities[a].take().unwrap();
        let mut cb = self.communities[b].take().unwrap();
        let w = ca.neighbours.remove(&b).unwrap_or(0);
        cb.neighbours.remove(&a);
        if ca.members.len() < cb.members.len() {
            std::mem::swap(&mut ca, &mut cb);
        }
        let mut neighbours = ca.neighbours;
        for (k, v) in cb.neighbours {
            *neighbours.entry(k).or_default() += v;
        }
        for (&k, &v) in &neighbours {
            let c = self.communities[k].as_mut().unwrap();
            c.neighbours.remove(&a);
            c.neighbours.remove(&b);
            c.neighbours.insert(new_id, v);
        }
        ca.members.extend(cb.members);
        self.communities.push(Some(Community {
            volume: ca.volume + cb.volume,
            s: ca.s + cb.s,
            cut: ca.cut + cb.cut - 2 * w,
            members: ca.members,
            neighbours,
        }));
        Ok(new_id)
    }

    pub fn partition(&self) -> Partition {
        let mut assignment = vec![0; self.n];
        for (id, c) in self.communities.iter().enumerate() {
            if let Some(c) = c {
                for &m in &c.members {
                    assignment[m] = id;
                }
            }
        }
        Partition { assignment }
    }

    /// Adjacent pairs `(a, b)` with `a < b`.
    pub fn candidate_pairs(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (id, c) in self.communities.iter().enumerate() {
            if let Some(c) = c {
                for &k in c.neighbours.keys() {
                    if id < k {
                        out.push((id, k));
                    }
                }
            }
        }
        out.sort();
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Candidate {
    delta: f64,
    a: usize,
    b: usize,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        // the heap pops the greatest: most negative delta, then smallest pair
        other
            .delta
            .total_cmp(&self.delta)
            .then_with(|| (other.a, other.b).cmp(&(self.a, self.b)))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MergeEvent {
    pub a: usize,
    pub b: usize,
    pub new_id: usize,
    pub delta: f64,
}

/// A dendrogram cut point: the partition after `merges` merges.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Level {
    pub merges: usize,
    pub communities: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dendrogram {
    pub n: usize,
    pub merge_events: Vec<MergeEvent>,
    pub levels: Vec<Level>,
    pub final_partition: Partition,
}

impl Dendrogram {
    /// Replay the first `merges` merges from singletons.
    pub fn partition_at(&self, merges: usize) -> Partition {
        let mut assignment: Vec<usize> = (0..self.n).collect();
        let mut members: HashMap<usize, Vec<usize>> = (0..self.n).map(|i| (i, vec![i])).collect();
        for ev in &self.merge_events[..merges.min(self.merge_events.len())] {
            let mut m = members.remove(&ev.a).unwrap_or_default();
            m.extend(members.remove(&ev.b).unwrap_or_default());
            for &i in &m {
                assignment[i] = ev.new_id;
            }
            members.insert(ev.new_id, m);
        }
        Partition { assignment }
    }

    /// Levels recomputed for another step fraction, e.g. `0.05` for a deeper
    /// schedule. The final partition is always the last level.
    pub fn levels_with_step(&self, step: f64) -> Vec<Level> {
        compute_levels(self.n, self.merge_events.len(), step)
    }

    pub fn to_json(&self, node_ids: &[String]) -> Value {
        let communities: Vec<Value> = self
            .final_partition
            .communities()
            .into_iter()
            .map(|(id, m)| json!({"id": id, "members": m.iter().map(|&i| node_ids[i].clone()).collect::<Vec<_>>()}))
            .collect();
        json!({
            "format_version": 1,
            "nodes": node_ids,
            "merge_events": self.merge_events.iter().map(|e| json!({"a": e.a, "b": e.b, "new": e.new_id, "delta_h2": e.delta})).collect::<Vec<_>>(),
            "levels": self.levels.iter().map(|l| json!({"merges": l.merges, "communities": l.communities})).collect::<Vec<_>>(),
            "final_partition": communities,
        })
    }

    /// Returns the dendrogram and its node id list.
    pub fn from_json(v: &Value) -> Result<(Dendrogram, Vec<String>), SemError> {
        let bad = |m: &str| SemError::Format(m.to_string());
        let nodes: Vec<String> = v["nodes"]
            .as_array()
            .ok_or_else(|| bad("nodes"))?
            .iter()
            .map(|x| x.as_str().map(str::to_string).ok_or_else(|| bad("node id")))
            .collect::<Result<_, _>>()?;
        let u = |x: &Value, k: &str| x[k].as_u64().map(|n| n as usize).ok_or_else(|| bad(k));
        let merge_events = v["merge_events"]
            .as_array()
            .ok_or_else(|| bad("merge_events"))?
            .iter()
            .map(|e| {
                Ok(MergeEvent {
                    a: u(e, "a")?,
                    b: u(e, "b")?,
                    new_id: u(e, "new")?,
                    delta: e["delta_h2"].as_f64().ok_or_else(|| bad("delta_h2"))?,
                })
            })
            .collect::<Result<Vec<_>, SemError>>()?;
        let levels = v["levels"]
            .as_array()
            .ok_or_else(|| bad("levels"))?
            .iter()
            .map(|l| {
                Ok(Level {
                    merges: u(l, "merges")?,
                    communities: u(l, "communities")?,
                })
            })
            .collect::<Result<Vec<_>, SemError>>()?;
        let mut d = Dendrogram {
            n: nodes.len(),
            merge_events,
            levels,
            final_partition: Partition::singletons(0),
        };
        d.final_partition = d.partition_at(d.merge_events.len());
        Ok((d, nodes))
    }
}

fn compute_levels(n: usize, total_merges: usize, step: f64) -> Vec<Level> {
    let mut levels = Vec::new();
    let mut j = 1usize;
    for merges in 1..=total_merges {
        let count = n - merges;
        let mut crossed = false;
        while (j as f64) * step < 1.0 && count as f64 <= (1.0 - j as f64 * step) * n as f64 + 1e-9 {
            crossed = true;
            j += 1;
        }
        if crossed {
            levels.push(Level { merges, communities: count });
        }
    }
    if levels.last().map(|l| l.merges) != Some(total_merges) {
        levels.push(Level {
            merges: total_merges,
            communities: n - total_merges,
        });
    }
    levels
}

fn greedy_merge(
    state: &mut MergeState,
    allowed: &dyn Fn(&MergeState, usize, usize) -> bool,
    events: &mut Vec<MergeEvent>,
) -> Result<(), SemError> {
    let mut heap = BinaryHeap::new();
    for (a, b) in state.candidate_pairs() {
        if allowed(state, a, b) {
            heap.push(Candidate {
                delta: state.delta_h2_merge(a, b)?,
                a,
                b,
            });
        }
    }
    while let Some(c) = heap.pop() {
        if state.live(c.a).is_none() || state.live(c.b).is_none() {
            continue;
        }
        let current = state.delta_h2_merge(c.a, c.b)?;
        if current != c.delta {
            heap.push(Candidate { delta: current, ..c });
            continue;
        }
        if !(c.delta < -EPSILON) {
            break;
        }
        let new_id = state.merge(c.a, c.b)?;
        events.push(MergeEvent {
            a: c.a,
            b: c.b,
            new_id,
            delta: c.delta,
        });
        let mut neighbours: Vec<usize> = state.live(new_id).unwrap().neighbours.keys().copied().collect();
        neighbours.sort_unstable();
        for k in neighbours {
            if allowed(state, k, new_id) {
                heap.push(Candidate {
                    delta: state.delta_h2_merge(k, new_id)?,
                    a: k,
                    b: new_id,
                });
            }
        }
    }
    Ok(())
}

pub const MAX_REFINE_SWEEPS: usize = 50;

#[derive(Clone)]
struct Refiner<'g> {
    g: &'g EntropyGraph,
    adj: &'g [Vec<usize>],
    comm: Vec<usize>,
    vol: Vec<f64>,
    s: Vec<f64>,
    cut: Vec<f64>,
}

impl<'g> Refiner<'g> {
    fn new(g: &'g EntropyGraph, adj: &'g [Vec<usize>], p: &Partition) -> Self {
        let comm = p.assignment.clone();
        let labels = comm.iter().copied().max().map_or(0, |m| m + 1);
        let mut r = Refiner {
            g,
            adj,
            comm,
            vol: vec![0.0; labels],
            s: vec![0.0; labels],
            cut: vec![0.0; labels],
        };
        for i in 0..g.n() {
            let d = g.degree[i] as f64;
            r.vol[r.comm[i]] += d;
            r.s[r.comm[i]] += xlog2x(d);
        }
        for &(a, b) in &g.edges {
            if r.comm[a] != r.comm[b] {
                r.cut[r.comm[a]] += 1.0;
                r.cut[r.comm[b]] += 1.0;
            }
        }
        r
    }

    fn f(&self, vol: f64, s: f64, cut: f64) -> f64 {
        let v = self.g.volume as f64;
        if vol <= 0.0 {
            0.0
        } else {
            (xlog2x(vol) - s - cut * (vol / v).log2()) / v
        }
    }

    fn entropy(&self) -> f64 {
        (0..self.vol.len()).map(|c| self.f(self.vol[c], self.s[c], self.cut[c])).sum()
    }

    fn links(&self, i: usize) -> BTreeMap<usize, f64> {
        let mut w: BTreeMap<usize, f64> = BTreeMap::new();
        for &j in &self.adj[i] {
            *w.entry(self.comm[j]).or_default() += 1.0;
        }
        w
    }

    fn relocate(&mut self, i: usize, b: usize, w: &BTreeMap<usize, f64>) {
        let a = self.comm[i];
        let d = self.g.degree[i] as f64;
        let dl = xlog2x(d);
        let links = self.adj[i].len() as f64;
        let wa = w.get(&a).copied().unwrap_or(0.0);
        let wb = w.get(&b).copied().unwrap_or(0.0);
        self.vol[a] -= d;
        self.s[a] -= dl;
        self.cut[a] += 2.0 * wa - links;
        self.vol[b] += d;
        self.s[b] += dl;
        self.cut[b] += links - 2.0 * wb;
        self.comm[i] = b;
    }

    /// Best strictly improving move of node `i` to an adjacent community.
    fn best_move(&self, i: usize) -> Option<(usize, BTreeMap<usize, f64>)> {
        if self.g.degree[i] == 0 {
            return None;
        }
        let a = self.comm[i];
        let d = self.g.degree[i] as f64;
        let dl = xlog2x(d);
        let links = self.adj[i].len() as f64;
        let w = self.links(i);
        let wa = w.get(&a).copied().unwrap_or(0.0);
        let removed = self.f(self.vol[a] - d, self.s[a] - dl, self.cut[a] - (links - wa) + wa)
            - self.f(self.vol[a], self.s[a], self.cut[a]);
        let mut best: Option<(f64, usize)> = None;
        for (&b, &wb) in &w {
            if b == a {
                continue;
            }
            let delta = removed + self.f(self.vol[b] + d, self.s[b] + dl, self.cut[b] + (links - wb) - wb)
                - self.f(self.vol[b], self.s[b], self.cut[b]);
            if best.is_none_or(|(bd, _)| delta < bd) {
                best = Some((delta, b));
            }
        }
        match best {
            Some((delta, b)) if delta < -EPSILON => Some((b, w)),
            _ => None,
        }
    }

    fn sweep(&mut self, nodes: &[usize]) -> bool {
        let mut any = false;
        for _ in 0..MAX_REFINE_SWEEPS {
            let mut moved = false;
            for &i in nodes {
                if let Some((b, w)) = self.best_move(i) {
                    self.relocate(i, b, &w);
                    moved = true;
                }
            }
            any |= moved;
            if !moved {
                break;
            }
        }
        any
    }

    fn adjacent_pairs(&self) -> Vec<(usize, usize)> {
        let mut pairs: Vec<(usize, usize)> = self
            .g
            .edges
            .iter()
            .filter_map(|&(a, b)| {
                let (ca, cb) = (self.comm[a], self.comm[b]);
                (ca != cb).then(|| (ca.min(cb), ca.max(cb)))
            })
            .collect();
        pairs.sort_unstable();
        pairs.dedup();
        pairs
    }
}

/// Local search over the partition. Single nodes move to the adjacent
/// community that lowers H² the most; when that stalls, each adjacent pair
/// of communities is tentatively fused and its nodes re-swept, keeping the
/// result only if H² drops by more than [`EPSILON`].
pub fn refine_moves(g: &EntropyGraph, p: &Partition) -> Partition {
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); g.n()];
    for &(a, b) in &g.edges {
        adj[a].push(b);
        adj[b].push(a);
    }
    let all: Vec<usize> = (0..g.n()).collect();
    let mut r = Refiner::new(g, &adj, p);
    r.sweep(&all);
    for _ in 0..MAX_REFINE_SWEEPS {
        let mut improved = false;
        for (a, b) in r.adjacent_pairs() {
            if r.vol[a] <= 0.0 || r.vol[b] <= 0.0 {
                continue;
            }
            let before = r.entropy();
            let mut trial = r.clone();
            let members: Vec<usize> = (0..g.n()).filter(|&i| trial.comm[i] == a || trial.comm[i] == b).collect();
            for &i in &members {
                if trial.comm[i] == b {
                    let w = trial.links(i);
                    trial.relocate(i, a, &w);
                }
            }
            trial.sweep(&members);
            if trial.entropy() < before - EPSILON {
                trial.sweep(&all);
                r = trial;
                improved = true;
            }
        }
        if !improved {
            break;
        }
    }
    Partition { assignment: r.comm }
}

/// Greedy agglomeration from singletons: repeatedly merge the adjacent pair
/// with the most negative ΔH² until no merge decreases H² by more than
/// [`EPSILON`].
///
/// Plain pair merging can stall where a node is first absorbed by the wrong
/// neighbour (a bridge endpoint, say). The merge result is therefore refined
/// by single-node moves, and the merge sequence is replayed within the
/// refined blocks followed by unconstrained merging. That second sequence is
/// kept when it ends strictly lower; every recorded merge still has ΔH² < 0
/// and replaying the events reproduces the final partition.
pub fn sem_minimize(g: &EntropyGraph) -> Result<Dendrogram, SemError> {
    let unconstrained = |_: &MergeState, _: usize, _: usize| true;
    let mut state = MergeState::singletons(g)?;
    let mut events = Vec::new();
    greedy_merge(&mut state, &unconstrained, &mut events)?;
    let greedy_partition = state.partition();
    let refined = refine_moves(g, &greedy_partition);
    if refined.canonical_blocks() != greedy_partition.canonical_blocks() {
        let block = &refined.assignment;
        let same_block = |s: &MergeState, a: usize, b: usize| match (s.live(a), s.live(b)) {
            (Some(ca), Some(cb)) => block[ca.members[0]] == block[cb.members[0]],
            _ => false,
        };
        let mut second = MergeState::singletons(g)?;
        let mut second_events = Vec::new();
        greedy_merge(&mut second, &same_block, &mut second_events)?;
        greedy_merge(&mut second, &unconstrained, &mut second_events)?;
        if second.entropy() < state.entropy() - EPSILON {
            state = second;
            events = second_events;
        }
    }
    let final_partition = state.partition();
    let levels = compute_levels(g.n(), events.len(), LEVEL_STEP);
    Ok(Dendrogram {
        n: g.n(),
        merge_events: events,
        levels,
        final_partition,
    })
}

pub fn sem_minimize_typed(g: &TypedGraph) -> Result<Dendrogram, SemError> {
    sem_minimize(&EntropyGraph::from_typed(g))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MacroNode {
    pub community_id: usize,
    pub node_id: String,
    pub members: Vec<String>,
    pub label: String,
    pub summary: String,
    pub summary_tokens: usize,
}

/// The `min(k, #communities)` top-level communities of largest volume,
/// ties broken by ascending community id.
pub fn top_communities(d: &Dendrogram, eg: &EntropyGraph, k: usize) -> Vec<(usize, Vec<usize>)> {
    let mut comms: Vec<(usize, Vec<usize>)> = d.final_partition.communities().into_iter().collect();
    let vol = |m: &[usize]| m.iter().map(|&i| eg.degree[i]).sum::<u64>();
    comms.sort_by(|a, b| vol(&b.1).cmp(&vol(&a.1)).then(a.0.cmp(&b.0)));
    comms.truncate(k);
    comms
}

/// Summarise the top `k` communities and attach one macro-node per community
/// to `g`, linked from every member by a `member_of` edge.
pub fn materialize_macronodes(
    d: &Dendrogram,
    g: &mut TypedGraph,
    k: usize,
    summarizer: &mut dyn Summarizer,
    budget: usize,
) -> Result<Vec<MacroNode>, SemError> {
    let eg = EntropyGraph::from_typed(g);
    let selected = top_communities(d, &eg, k);
    let mut out = Vec::new();
    for (cid, members) in selected {
        let mut ranked: Vec<usize> = members.clone();
        ranked.sort_by(|&a, &b| eg.degree[b].cmp(&eg.degree[a]).then(g.node(a).id.cmp(&g.node(b).id)));
        let digest = CommunityDigest {
            community_id: cid,
            total_members: members.len(),
            members: ranked
                .iter()
                .take(DIGEST_MEMBERS)
                .map(|&i| {
                    let n = g.node(i);
                    DigestMember {
                        node_id: n.id.clone(),
                        node_type: n.node_type,
                        text: n.text.clone(),
                        degree: eg.degree[i],
                    }
                })
                .collect(),
        };
        let summary = summarizer
            .summarize(&digest, budget)
            .map_err(|source| SemError::Summarizer { community: cid, source })?;
        let node_id = format!("macro/{cid}");
        let rep = ranked
            .iter()
            .find_map(|&i| g.node(i).provenance())
            .map(|p| p.to_value())
            .unwrap_or(Value::Null);
        g.add_node(
            Node::new(&node_id, NodeType::MacroNode, summary.label.as_str())
                .with_attr("summary", json!(summary.summary))
                .with_attr("summary_tokens", json!(summary.tokens_used))
                .with_attr("community", json!(cid))
                .with_attr("members", json!(members.len()))
                .with_attr("prov", rep),
        )?;
        let mut member_ids: Vec<String> = members.iter().map(|&i| g.node(i).id.clone()).collect();
        member_ids.sort();
        for m in &member_ids {
            g.add_edge(EdgeSpec::new(m, &node_id, RelationType::MemberOf))?;
        }
        out.push(MacroNode {
            community_id: cid,
            node_id,
            members: member_ids,
            label: summary.label,
            summary: summary.summary,
            summary_tokens: summary.tokens_used,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_triangles() -> EntropyGraph {
        EntropyGraph::from_edges(6, &[(0, 1), (1, 2), (0, 2), (3, 4), (4, 5), (3, 5), (2, 3)])
    }

    #[test]
    fn h1_examples() {
        assert!((h1(&EntropyGraph::from_edges(2, &[(0, 1)])).unwrap() - 1.0).abs() < 1e-12);
        let c4 = EntropyGraph::from_edges(4, &[(0, 1), (1, 2), (2, 3), (3, 0)]);
        assert!((h1(&c4).unwrap() - 2.0).abs() < 1e-12);
        assert!((h1(&two_triangles()).unwrap() - 2.556656707462823).abs() < 1e-12);
        assert!(matches!(h1(&EntropyGraph::from_edges(3, &[])), Err(SemError::EmptyGraph)));
    }

    #[test]
    fn h2_examples() {
        let g = two_triangles();
        let base = h1(&g).unwrap();
        assert!((h2(&g, &Partition::singletons(6)).unwrap() - base).abs() < 1e-12);
        assert!((h2(&g, &Partition::one_community(6)).unwrap() - base).abs() < 1e-12);
        let planted = Partition {
            assignment: vec![0, 0, 0, 1, 1, 1],
        };
        assert!((h2(&g, &planted).unwrap() - 1.6995138503199656).abs() < 1e-12);
        assert!(matches!(
            h2(&g, &Partition::singletons(5)),
            Err(SemError::InvalidPartition(_))
        ));
    }

    #[test]
    fn k2_merge_delta_is_zero() {
        let g = EntropyGraph::from_edges(2, &[(0, 1)]);
        let s = MergeState::singletons(&g).unwrap();
        assert!(s.delta_h2_merge(0, 1).unwrap().abs() < 1e-12);
        let d = sem_minimize(&g).unwrap();
        assert!(d.merge_events.is_empty());
    }

    #[test]
    fn not_adjacent() {
        let g = EntropyGraph::from_edges(4, &[(0, 1), (2, 3)]);
        let s = MergeState::singletons(&g).unwrap();
        assert!(matches!(s.delta_h2_merge(0, 2), Err(SemError::NotAdjacent(0, 2))));
    }

    #[test]
    fn greedy_recovers_triangles() {
        let g = two_triangles();
        let d = sem_minimize(&g).unwrap();
        assert_eq!(d.final_partition.canonical_blocks(), vec![vec![0, 1, 2], vec![3, 4, 5]]);
        assert!(d.merge_events.iter().all(|e| e.delta < 0.0));
        let total: f64 = d.merge_events.iter().map(|e| e.delta).sum();
        let fin = h2(&g, &d.final_partition).unwrap();
        assert!((fin - h1(&g).unwrap() - total).abs() < 1e-9);
        assert_eq!(d.partition_at(d.merge_events.len()), d.final_partition);
        assert_eq!(d.levels.last().unwrap().merges, d.merge_events.len());
    }

    #[test]
    fn isolated_nodes_stay_singletons() {
        let mut edges = vec![(0, 1), (1, 2), (0, 2)];
        edges.push((3, 4));
        let g = EntropyGraph::from_edges(6, &edges);
        let d = sem_minimize(&g).unwrap();
        let blocks = d.final_partition.canonical_blocks();
        assert!(blocks.contains(&vec![5]));
    }

    #[test]
    fn json_round_trip() {
        let g = two_triangles();
        let d = sem_minimize(&g).unwrap();
        let ids: Vec<String> = (0..6).map(|i| format!("n{i}")).collect();
        let (back, back_ids) = Dendrogram::from_json(&d.to_json(&ids)).unwrap();
        assert_eq!(back, d);
        assert_eq!(back_ids, ids);
    }

    #[test]
    fn level_schedule() {
        let levels = compute_levels(100, 95, 0.1);
        let counts: Vec<usize> = levels.iter().map(|l| l.communities).collect();
        assert_eq!(counts, vec![90, 80, 70, 60, 50, 40, 30, 20, 10, 5]);
        assert_eq!(compute_levels(100, 95, 0.05).len(), 19);
    }
}
