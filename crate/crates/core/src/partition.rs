//! Signed graph partitioning: connected components of the attractive
//! subgraph, the mutex watershed, and the dense pixel-level baseline.

use std::cmp::Ordering;
use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;

use crate::bundle::{Mask, PredictionBundle};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub a: usize,
    pub b: usize,
    pub weight: f64,
}

/// Undirected graph with real edge weights; positive attracts, negative
/// repels, zero is ignored.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SignedGraph {
    pub nodes: usize,
    pub edges: Vec<Edge>,
}

impl SignedGraph {
    /// Normalises endpoints to `a < b` and sorts edges by endpoint pair.
    pub fn new(nodes: usize, edges: Vec<Edge>) -> Self {
        let mut edges: Vec<Edge> = edges
            .into_iter()
            .map(|e| Edge {
                a: e.a.min(e.b),
                b: e.a.max(e.b),
                weight: e.weight,
            })
            .collect();
        edges.sort_by_key(|e| (e.a, e.b));
        Self { nodes, edges }
    }

    pub fn adjacency(&self) -> Vec<Vec<(usize, f64)>> {
        let mut adj = vec![Vec::new(); self.nodes];
        for e in &self.edges {
            adj[e.a].push((e.b, e.weight));
            adj[e.b].push((e.a, e.weight));
        }
        adj
    }

    /// Edge-list text: a `# nodes N` header, then one `a b weight` line per
    /// edge with the weight printed to 9 significant digits.
    pub fn to_edge_list(&self) -> String {
        let mut s = format!("# nodes {}\n", self.nodes);
        for e in &self.edges {
            let _ = writeln!(s, "{} {} {}", e.a, e.b, format_sig9(e.weight));
        }
        s
    }

    pub fn from_edge_list(text: &str) -> Result<Self> {
        let mut nodes: Option<usize> = None;
        let mut edges = Vec::new();
        let mut max_node = None;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                let mut parts = rest.split_whitespace();
                if parts.next() == Some("nodes") {
                    let n = parts
                        .next()
                        .and_then(|v| v.parse().ok())
                        .ok_or_else(|| Error::Config(format!("line {}: bad node header", lineno + 1)))?;
                    nodes = Some(n);
                }
                continue;
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            let bad = || Error::Config(format!("line {}: expected `a b weight`", lineno + 1));
            if parts.len() != 3 {
                return Err(bad());
            }
            let a: usize = parts[0].parse().map_err(|_| bad())?;
            let b: usize = parts[1].parse().map_err(|_| bad())?;
            let weight: f64 = parts[2].parse().map_err(|_| bad())?;
            if !weight.is_finite() {
                return Err(bad());
            }
            max_node = Some(max_node.unwrap_or(0).max(a).max(b));
            edges.push(Edge { a, b, weight });
        }
        let implied = max_node.map_or(0, |m| m + 1);
        let nodes = nodes.unwrap_or(implied);
        if nodes < implied {
            return Err(Error::Config(format!(
                "edge references node {} but header declares {} nodes",
                implied - 1,
                nodes
            )));
        }
        Ok(Self::new(nodes, edges))
    }
}

/// Formats `v` in plain decimal notation with 9 significant digits.
pub fn format_sig9(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{:.8}", v);
    }
    let exponent = v.abs().log10().floor() as i32;
    let decimals = (8 - exponent).max(0) as usize;
    format!("{:.*}", decimals, v)
}

/// Disjoint-set forest with path compression and union by rank. Counts
/// parent-pointer rewrites done by path compression.
#[derive(Debug, Clone)]
pub struct UnionFind {
    parent: Vec<usize>,
    rank: Vec<u8>,
    finds: usize,
    rewrites: usize,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            rank: vec![0; n],
            finds: 0,
            rewrites: 0,
        }
    }

    pub fn find(&mut self, x: usize) -> usize {
        self.finds += 1;
        let mut root = x;
        while self.parent[root] != root {
            root = self.parent[root];
        }
        let mut cur = x;
        while self.parent[cur] != root {
            let next = self.parent[cur];
            self.parent[cur] = root;
            self.rewrites += 1;
            cur = next;
        }
        root
    }

    /// Links two roots; returns the surviving root.
    pub fn link(&mut self, ra: usize, rb: usize) -> usize {
        debug_assert!(self.parent[ra] == ra && self.parent[rb] == rb);
        if ra == rb {
            return ra;
        }
        match self.rank[ra].cmp(&self.rank[rb]) {
            Ordering::Less => {
                self.parent[ra] = rb;
                rb
            }
            Ordering::Greater => {
                self.parent[rb] = ra;
                ra
            }
            Ordering::Equal => {
                self.parent[rb] = ra;
                self.rank[ra] += 1;
                ra
            }
        }
    }

    pub fn union(&mut self, a: usize, b: usize) -> usize {
        let ra = self.find(a);
        let rb = self.find(b);
        self.link(ra, rb)
    }

    pub fn finds(&self) -> usize {
        self.finds
    }

    pub fn rewrites(&self) -> usize {
        self.rewrites
    }

    /// Dense labels `0..k`, numbered by first occurrence in node order.
    pub fn labels(&mut self) -> Partition {
        let n = self.parent.len();
        let mut ids = HashMap::new();
        let mut labels = Vec::with_capacity(n);
        for x in 0..n {
            let r = self.find(x);
            let next = ids.len();
            labels.push(*ids.entry(r).or_insert(next));
        }
        Partition { labels }
    }
}

/// Component label per node, dense from 0 in order of first appearance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    pub labels: Vec<usize>,
}

impl Partition {
    pub fn component_count(&self) -> usize {
        self.labels.iter().max().map_or(0, |m| m + 1)
    }

    /// Nodes of each component.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.component_count()];
        for (node, &l) in self.labels.iter().enumerate() {
            out[l].push(node);
        }
        out
    }
}

/// Connected components using only edges with positive weight.
pub fn cc_positive(graph: &SignedGraph) -> Partition {
    let mut uf = UnionFind::new(graph.nodes);
    for e in &graph.edges {
        if e.weight > 0.0 {
            uf.union(e.a, e.b);
        }
    }
    uf.labels()
}

/// Edge processing order of the mutex watershed: decreasing absolute
/// weight, then attractive before repulsive, then endpoint pair.
fn mws_order(x: &Edge, y: &Edge) -> Ordering {
    y.weight
        .abs()
        .total_cmp(&x.weight.abs())
        .then(y.weight.total_cmp(&x.weight))
        .then((x.a, x.b).cmp(&(y.a, y.b)))
}

/// Union-find forest with per-root mutex (cannot-link) sets.
#[derive(Debug, Clone)]
pub struct MutexForest {
    uf: UnionFind,
    mutex: HashMap<usize, HashSet<usize>>,
}

impl MutexForest {
    pub fn new(n: usize) -> Self {
        Self {
            uf: UnionFind::new(n),
            mutex: HashMap::new(),
        }
    }

    pub fn find(&mut self, x: usize) -> usize {
        self.uf.find(x)
    }

    pub fn is_mutex(&self, ra: usize, rb: usize) -> bool {
        self.mutex.get(&ra).is_some_and(|s| s.contains(&rb))
    }

    /// Merges the sets of `a` and `b` unless they are mutually exclusive.
    /// Returns whether a merge happened.
    pub fn try_merge(&mut self, a: usize, b: usize) -> bool {
        let ra = self.uf.find(a);
        let rb = self.uf.find(b);
        if ra == rb || self.is_mutex(ra, rb) {
            return false;
        }
        let root = self.uf.link(ra, rb);
        let loser = if root == ra { rb } else { ra };
        if let Some(lost) = self.mutex.remove(&loser) {
            for m in &lost {
                let set = self.mutex.get_mut(m).expect("mutex relation is symmetric");
                set.remove(&loser);
                set.insert(root);
            }
            self.mutex.entry(root).or_default().extend(lost);
        }
        true
    }

    /// Forbids merging the sets of `a` and `b` unless already merged.
    /// Returns whether a constraint was added.
    pub fn add_mutex(&mut self, a: usize, b: usize) -> bool {
        let ra = self.uf.find(a);
        let rb = self.uf.find(b);
        if ra == rb {
            return false;
        }
        self.mutex.entry(ra).or_default().insert(rb);
        self.mutex.entry(rb).or_default().insert(ra);
        true
    }

    pub fn labels(&mut self) -> Partition {
        self.uf.labels()
    }

    pub fn union_find(&self) -> &UnionFind {
        &self.uf
    }
}

/// Mutex watershed: process edges by decreasing magnitude; attractive
/// edges merge unless constrained, repulsive edges add constraints between
/// not-yet-merged sets.
pub fn mutex_watershed(graph: &SignedGraph) -> Partition {
    mutex_watershed_traced(graph).0
}

/// [`mutex_watershed`] also returning the constraints it enacted (node
/// pairs of every repulsive edge that added a mutex).
pub fn mutex_watershed_traced(graph: &SignedGraph) -> (Partition, Vec<(usize, usize)>) {
    let mut edges: Vec<&Edge> = graph.edges.iter().filter(|e| e.weight != 0.0).collect();
    edges.sort_by(|x, y| mws_order(x, y));
    let mut forest = MutexForest::new(graph.nodes);
    let mut enacted = Vec::new();
    for e in edges {
        if e.weight > 0.0 {
            forest.try_merge(e.a, e.b);
        } else if forest.add_mutex(e.a, e.b) {
            enacted.push((e.a, e.b));
        }
    }
    (forest.labels(), enacted)
}

/// Probability-to-weight map for the dense baseline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DenseWeightMap {
    /// `2p - 1`.
    Centered,
}

impl DenseWeightMap {
    pub fn apply(self, p: f32) -> f64 {
        match self {
            DenseWeightMap::Centered => 2.0 * p as f64 - 1.0,
        }
    }
}

/// Pixel-level graph for the dense baseline: nodes are foreground pixels
/// (in index order), edges join `x` and `x + dx` for every nonzero patch
/// offset, weighted by the mapped prediction and averaged over both
/// directions.
pub fn dense_pixel_graph(bundle: &PredictionBundle, fg: &Mask, map: DenseWeightMap) -> (Vec<usize>, SignedGraph) {
    let pixels: Vec<usize> = fg.pixels().collect();
    let mut node_of = vec![usize::MAX; bundle.grid().len()];
    for (i, &p) in pixels.iter().enumerate() {
        node_of[p] = i;
    }
    let center = bundle.geometry().center_channel();
    let mut acc: HashMap<(usize, usize), (f64, u32)> = HashMap::new();
    for (i, &x) in pixels.iter().enumerate() {
        for e in bundle.patch_entries(x, Some(fg)) {
            if e.channel == center {
                continue;
            }
            let j = node_of[e.pixel];
            let key = (i.min(j), i.max(j));
            let slot = acc.entry(key).or_insert((0.0, 0));
            slot.0 += map.apply(e.prob);
            slot.1 += 1;
        }
    }
    let edges = acc
        .into_iter()
        .map(|((a, b), (s, c))| Edge {
            a,
            b,
            weight: s / c as f64,
        })
        .collect();
    let n = pixels.len();
    (pixels, SignedGraph::new(n, edges))
}

/// Mutex watershed run directly on the patch predictions read as dense
/// affinities. Returns the foreground pixels and their partition.
pub fn mws_dense(bundle: &PredictionBundle, fg: &Mask) -> (Vec<usize>, Partition) {
    let (pixels, graph) = dense_pixel_graph(bundle, fg, DenseWeightMap::Centered);
    (pixels, mutex_watershed(&graph))
}
