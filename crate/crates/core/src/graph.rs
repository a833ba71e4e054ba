//! Discrete attributed graphs, probabilistic fully-connected graphs, and
//! point-estimate extraction.
//!
//! A [`DiscreteGraph`] stores node classes and (symmetric) edge classes
//! directly; the one-hot tensors `A`, `E`, `F` are produced on demand. The
//! adjacency diagonal is 1 for every existing node.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("node {0} out of range")]
    NodeIndex(usize),
    #[error("self loop on node {0}")]
    SelfLoop(usize),
    #[error("class {class} out of range for {what} vocabulary of size {size}")]
    Class {
        what: &'static str,
        class: usize,
        size: usize,
    },
    #[error("invalid graph: {0}")]
    Invalid(String),
}

/// One-hot attributed graph on `n` nodes.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct DiscreteGraph {
    d_n: usize,
    d_e: usize,
    nodes: Vec<usize>,
    // n×n, symmetric, None on the diagonal
    edges: Vec<Option<usize>>,
}

impl DiscreteGraph {
    pub fn new(d_n: usize, d_e: usize) -> Self {
        Self {
            d_n,
            d_e,
            nodes: Vec::new(),
            edges: Vec::new(),
        }
    }

    /// Builds a graph from node classes and `(i, j, class)` edges.
    pub fn from_parts(
        d_n: usize,
        d_e: usize,
        nodes: &[usize],
        edges: &[(usize, usize, usize)],
    ) -> Result<Self, GraphError> {
        let mut g = Self::new(d_n, d_e);
        for &c in nodes {
            g.add_node(c)?;
        }
        for &(i, j, c) in edges {
            g.add_edge(i, j, c)?;
        }
        Ok(g)
    }

    pub fn n(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn d_n(&self) -> usize {
        self.d_n
    }

    pub fn d_e(&self) -> usize {
        self.d_e
    }

    pub fn add_node(&mut self, class: usize) -> Result<usize, GraphError> {
        if class >= self.d_n {
            return Err(GraphError::Class {
                what: "node",
                class,
                size: self.d_n,
            });
        }
        let n = self.n();
        let mut edges = vec![None; (n + 1) * (n + 1)];
        for i in 0..n {
            for j in 0..n {
                edges[i * (n + 1) + j] = self.edges[i * n + j];
            }
        }
        self.edges = edges;
        self.nodes.push(class);
        Ok(n)
    }

    /// Inserts or overwrites the undirected edge `{i, j}`.
    pub fn add_edge(&mut self, i: usize, j: usize, class: usize) -> Result<(), GraphError> {
        let n = self.n();
        if i >= n {
            return Err(GraphError::NodeIndex(i));
        }
        if j >= n {
            return Err(GraphError::NodeIndex(j));
        }
        if i == j {
            return Err(GraphError::SelfLoop(i));
        }
        if class >= self.d_e {
            return Err(GraphError::Class {
                what: "edge",
                class,
                size: self.d_e,
            });
        }
        self.edges[i * n + j] = Some(class);
        self.edges[j * n + i] = Some(class);
        Ok(())
    }

    pub fn node_class(&self, i: usize) -> usize {
        self.nodes[i]
    }

    pub fn node_classes(&self) -> &[usize] {
        &self.nodes
    }

    pub fn edge_class(&self, i: usize, j: usize) -> Option<usize> {
        self.edges[i * self.n() + j]
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.edge_class(i, j).is_some()
    }

    /// Adjacency entry including the unit diagonal.
    pub fn adjacency(&self, i: usize, j: usize) -> f64 {
        if i == j || self.has_edge(i, j) {
            1.0
        } else {
            0.0
        }
    }

    /// Undirected edges as `(i, j, class)` with `i < j`, in row-major order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        let n = self.n();
        (0..n).flat_map(move |i| {
            ((i + 1)..n).filter_map(move |j| self.edge_class(i, j).map(|c| (i, j, c)))
        })
    }

    pub fn edge_count(&self) -> usize {
        self.edges.iter().filter(|e| e.is_some()).count() / 2
    }

    /// `‖A‖₁ − n`: the number of directed edge slots.
    pub fn directed_edge_slots(&self) -> usize {
        2 * self.edge_count()
    }

    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
        let n = self.n();
        (0..n).filter_map(move |j| self.edges[i * n + j].map(|c| (j, c)))
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbors(i).count()
    }

    /// Relabels nodes so that old node `i` becomes node `perm[i]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Self, GraphError> {
        let n = self.n();
        let mut seen = vec![false; n];
        if perm.len() != n {
            return Err(GraphError::Invalid("permutation length".into()));
        }
        for &p in perm {
            if p >= n || std::mem::replace(&mut seen[p], true) {
                return Err(GraphError::Invalid("not a permutation".into()));
            }
        }
        let mut nodes = vec![0; n];
        let mut edges = vec![None; n * n];
        for i in 0..n {
            nodes[perm[i]] = self.nodes[i];
            for j in 0..n {
                edges[perm[i] * n + perm[j]] = self.edges[i * n + j];
            }
        }
        Ok(Self {
            d_n: self.d_n,
            d_e: self.d_e,
            nodes,
            edges,
        })
    }

    /// Subgraph induced by `keep`, renumbered in the given order.
    pub fn induced(&self, keep: &[usize]) -> Self {
        let mut g = Self::new(self.d_n, self.d_e);
        g.nodes = keep.iter().map(|&i| self.nodes[i]).collect();
        let m = keep.len();
        g.edges = vec![None; m * m];
        for (a, &i) in keep.iter().enumerate() {
            for (b, &j) in keep.iter().enumerate() {
                g.edges[a * m + b] = self.edge_class(i, j);
            }
        }
        g
    }

    pub fn is_connected(&self) -> bool {
        let n = self.n();
        if n == 0 {
            return false;
        }
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(i) = stack.pop() {
            for (j, _) in self.neighbors(i) {
                if !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    pub fn label(&self) -> GraphLabel {
        let mut y = vec![0; self.d_n];
        for &c in &self.nodes {
            y[c] += 1;
        }
        GraphLabel(y)
    }

    /// Degenerate probabilistic graph on `k ≥ n` nodes whose probabilities
    /// are exactly the 0/1 entries of this graph. Padding nodes and absent
    /// edges get uniform attribute distributions.
    pub fn to_probabilistic(&self, k: usize) -> Result<ProbabilisticGraph, GraphError> {
        let n = self.n();
        if n > k {
            return Err(GraphError::Invalid(format!("{} nodes exceed k = {}", n, k)));
        }
        let mut pg = ProbabilisticGraph::uniform(k, self.d_e, self.d_n, 0.0);
        for i in 0..n {
            pg.adj[i * k + i] = 1.0;
            pg.node_attr[i * self.d_n..(i + 1) * self.d_n].fill(0.0);
            pg.node_attr[i * self.d_n + self.nodes[i]] = 1.0;
            for j in 0..n {
                if let Some(c) = self.edge_class(i, j) {
                    pg.adj[i * k + j] = 1.0;
                    let base = (i * k + j) * self.d_e;
                    pg.edge_attr[base..base + self.d_e].fill(0.0);
                    pg.edge_attr[base + c] = 1.0;
                }
            }
        }
        Ok(pg)
    }

    pub fn to_dense(&self) -> DenseGraph {
        let n = self.n();
        let adjacency = (0..n)
            .map(|i| (0..n).map(|j| self.adjacency(i, j) as u8).collect())
            .collect();
        let edge_attr = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| {
                        let mut v = vec![0u8; self.d_e];
                        if let Some(c) = self.edge_class(i, j) {
                            v[c] = 1;
                        }
                        v
                    })
                    .collect()
            })
            .collect();
        let node_attr = self
            .nodes
            .iter()
            .map(|&c| {
                let mut v = vec![0u8; self.d_n];
                v[c] = 1;
                v
            })
            .collect();
        DenseGraph {
            n,
            d_e: self.d_e,
            d_n: self.d_n,
            adjacency,
            edge_attr,
            node_attr,
        }
    }

    pub fn from_dense(d: &DenseGraph) -> Result<Self, GraphError> {
        let n = d.n;
        let bad = |m: &str| GraphError::Invalid(m.to_string());
        if d.adjacency.len() != n || d.edge_attr.len() != n || d.node_attr.len() != n {
            return Err(bad("tensor sizes disagree with n"));
        }
        let one_hot = |v: &[u8], len: usize| -> Result<Option<usize>, GraphError> {
            if v.len() != len || v.iter().any(|&x| x > 1) {
                return Err(bad("attribute vector malformed"));
            }
            match v.iter().filter(|&&x| x == 1).count() {
                0 => Ok(None),
                1 => Ok(v.iter().position(|&x| x == 1)),
                _ => Err(bad("attribute vector has several hot entries")),
            }
        };
        let mut g = Self::new(d.d_n, d.d_e);
        for row in &d.node_attr {
            let c = one_hot(row, d.d_n)?.ok_or_else(|| bad("node attribute not one-hot"))?;
            g.add_node(c)?;
        }
        for i in 0..n {
            if d.adjacency[i].len() != n || d.edge_attr[i].len() != n {
                return Err(bad("ragged tensors"));
            }
            if d.adjacency[i][i] != 1 {
                return Err(bad("adjacency diagonal must be 1"));
            }
            for j in 0..n {
                if i == j {
                    if one_hot(&d.edge_attr[i][j], d.d_e)?.is_some() {
                        return Err(bad("edge attribute on diagonal"));
                    }
                    continue;
                }
                let a = d.adjacency[i][j];
                if a != d.adjacency[j][i] || d.edge_attr[i][j] != d.edge_attr[j][i] {
                    return Err(bad("tensors not symmetric"));
                }
                match (a, one_hot(&d.edge_attr[i][j], d.d_e)?) {
                    (1, Some(c)) => {
                        if i < j {
                            g.add_edge(i, j, c)?;
                        }
                    }
                    (0, None) => {}
                    _ => return Err(bad("edge attribute disagrees with adjacency")),
                }
            }
        }
        Ok(g)
    }
}

/// Canonical JSON layout of a [`DiscreteGraph`]: dense 0/1 tensors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseGraph {
    pub n: usize,
    pub d_e: usize,
    pub d_n: usize,
    #[serde(rename = "A")]
    pub adjacency: Vec<Vec<u8>>,
    #[serde(rename = "E")]
    pub edge_attr: Vec<Vec<Vec<u8>>>,
    #[serde(rename = "F")]
    pub node_attr: Vec<Vec<u8>>,
}

impl Serialize for DiscreteGraph {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_dense().serialize(s)
    }
}

impl<'de> Deserialize<'de> for DiscreteGraph {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let dense = DenseGraph::deserialize(d)?;
        Self::from_dense(&dense).map_err(serde::de::Error::custom)
    }
}

/// Histogram of node classes.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GraphLabel(pub Vec<u32>);

impl GraphLabel {
    pub fn total(&self) -> u32 {
        self.0.iter().sum()
    }

    pub fn as_f64(&self) -> Vec<f64> {
        self.0.iter().map(|&c| c as f64).collect()
    }
}

impl std::fmt::Display for GraphLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self.0.iter().map(u32::to_string).collect();
        write!(f, "{}", parts.join("-"))
    }
}

/// Parses the `Display` form, e.g. `3-1-0-0`.
impl std::str::FromStr for GraphLabel {
    type Err = std::num::ParseIntError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.split('-').map(str::parse).collect::<Result<_, _>>().map(GraphLabel)
    }
}

/// Probabilistic fully-connected graph on `k` nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbabilisticGraph {
    k: usize,
    d_e: usize,
    d_n: usize,
    adj: Vec<f64>,
    edge_attr: Vec<f64>,
    node_attr: Vec<f64>,
}

impl ProbabilisticGraph {
    /// Every adjacency entry set to `p`, attributes uniform.
    pub fn uniform(k: usize, d_e: usize, d_n: usize, p: f64) -> Self {
        Self {
            k,
            d_e,
            d_n,
            adj: vec![p; k * k],
            edge_attr: vec![1.0 / d_e as f64; k * k * d_e],
            node_attr: vec![1.0 / d_n as f64; k * d_n],
        }
    }

    /// Builds and validates from flat row-major buffers.
    pub fn from_parts(
        k: usize,
        d_e: usize,
        d_n: usize,
        adj: Vec<f64>,
        edge_attr: Vec<f64>,
        node_attr: Vec<f64>,
    ) -> Result<Self, GraphError> {
        let pg = Self {
            k,
            d_e,
            d_n,
            adj,
            edge_attr,
            node_attr,
        };
        pg.validate(1e-9)?;
        Ok(pg)
    }

    pub fn validate(&self, tol: f64) -> Result<(), GraphError> {
        let (k, d_e, d_n) = (self.k, self.d_e, self.d_n);
        let bad = |m: String| Err(GraphError::Invalid(m));
        if self.adj.len() != k * k || self.edge_attr.len() != k * k * d_e || self.node_attr.len() != k * d_n {
            return bad("buffer sizes".into());
        }
        for a in 0..k {
            for b in 0..k {
                let p = self.adj(a, b);
                if !(0.0..=1.0).contains(&p) {
                    return bad(format!("adjacency entry ({a},{b}) = {p} outside [0,1]"));
                }
                if (p - self.adj(b, a)).abs() > tol {
                    return bad(format!("adjacency not symmetric at ({a},{b})"));
                }
                let e = self.edge_probs(a, b);
                if (e.iter().sum::<f64>() - 1.0).abs() > tol || e.iter().any(|&x| x < 0.0) {
                    return bad(format!("edge distribution ({a},{b}) not normalized"));
                }
                if e.iter().zip(self.edge_probs(b, a)).any(|(x, y)| (x - y).abs() > tol) {
                    return bad(format!("edge attributes not symmetric at ({a},{b})"));
                }
            }
            let f = self.node_probs(a);
            if (f.iter().sum::<f64>() - 1.0).abs() > tol || f.iter().any(|&x| x < 0.0) {
                return bad(format!("node distribution {a} not normalized"));
            }
        }
        Ok(())
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn d_e(&self) -> usize {
        self.d_e
    }

    pub fn d_n(&self) -> usize {
        self.d_n
    }

    pub fn adj(&self, a: usize, b: usize) -> f64 {
        self.adj[a * self.k + b]
    }

    pub fn edge_probs(&self, a: usize, b: usize) -> &[f64] {
        let base = (a * self.k + b) * self.d_e;
        &self.edge_attr[base..base + self.d_e]
    }

    pub fn node_probs(&self, a: usize) -> &[f64] {
        &self.node_attr[a * self.d_n..(a + 1) * self.d_n]
    }

    pub fn adj_data(&self) -> &[f64] {
        &self.adj
    }

    pub fn edge_data(&self) -> &[f64] {
        &self.edge_attr
    }

    pub fn node_data(&self) -> &[f64] {
        &self.node_attr
    }

    pub(crate) fn adj_mut(&mut self) -> &mut [f64] {
        &mut self.adj
    }

    pub(crate) fn edge_mut(&mut self) -> &mut [f64] {
        &mut self.edge_attr
    }

    pub(crate) fn node_mut(&mut self) -> &mut [f64] {
        &mut self.node_attr
    }
}

/// Settings for [`point_estimate`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointEstimate {
    /// Add maximum-spanning-tree edges over kept nodes.
    pub connect: bool,
    /// Existence threshold for nodes and edges.
    pub threshold: f64,
}

impl Default for PointEstimate {
    fn default() -> Self {
        Self {
            connect: true,
            threshold: 0.5,
        }
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Discrete graph read off a probabilistic one by thresholding existence and
/// taking attribute argmaxes. Kept nodes are renumbered in increasing order.
pub fn point_estimate(pg: &ProbabilisticGraph, opts: PointEstimate) -> DiscreteGraph {
    let keep: Vec<usize> = (0..pg.k).filter(|&a| pg.adj(a, a) >= opts.threshold).collect();
    let mut g = DiscreteGraph::new(pg.d_n, pg.d_e);
    for &a in &keep {
        g.nodes.push(argmax(pg.node_probs(a)));
    }
    let m = keep.len();
    g.edges = vec![None; m * m];
    let set_edge = |g: &mut DiscreteGraph, x: usize, y: usize| {
        let c = argmax(pg.edge_probs(keep[x], keep[y]));
        g.edges[x * m + y] = Some(c);
        g.edges[y * m + x] = Some(c);
    };
    for x in 0..m {
        for y in (x + 1)..m {
            if pg.adj(keep[x], keep[y]) >= opts.threshold {
                set_edge(&mut g, x, y);
            }
        }
    }
    if opts.connect {
        for (x, y) in maximum_spanning_tree(m, |x, y| pg.adj(keep[x], keep[y])) {
            set_edge(&mut g, x, y);
        }
    }
    g
}

/// Kruskal over the complete graph on `m` vertices. Equal weights are taken
/// in lexicographic `(x, y)` order.
pub fn maximum_spanning_tree(m: usize, weight: impl Fn(usize, usize) -> f64) -> Vec<(usize, usize)> {
    let mut cand: Vec<(f64, usize, usize)> = (0..m)
        .flat_map(|x| ((x + 1)..m).map(move |y| (x, y)))
        .map(|(x, y)| (weight(x, y), x, y))
        .collect();
    cand.sort_by(|a, b| b.0.total_cmp(&a.0).then((a.1, a.2).cmp(&(b.1, b.2))));
    let mut parent: Vec<usize> = (0..m).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    let mut tree = Vec::with_capacity(m.saturating_sub(1));
    for (_, x, y) in cand {
        let (rx, ry) = (find(&mut parent, x), find(&mut parent, y));
        if rx != ry {
            parent[rx] = ry;
            tree.push((x, y));
            if tree.len() + 1 == m {
                break;
            }
        }
    }
    tree
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pg_with_adj(adj: &[&[f64]], d_e: usize, d_n: usize) -> ProbabilisticGraph {
        let k = adj.len();
        let mut pg = ProbabilisticGraph::uniform(k, d_e, d_n, 0.0);
        for a in 0..k {
            for b in 0..k {
                pg.adj_mut()[a * k + b] = adj[a][b];
            }
        }
        pg.validate(1e-12).unwrap();
        pg
    }

    #[test]
    fn low_edge_probability_drops_edge() {
        let pg = pg_with_adj(&[&[0.9, 0.2], &[0.2, 0.8]], 4, 4);
        let g = point_estimate(&pg, PointEstimate { connect: false, threshold: 0.5 });
        assert_eq!((g.n(), g.edge_count()), (2, 0));
    }

    #[test]
    fn spanning_tree_forces_edge() {
        let pg = pg_with_adj(&[&[0.9, 0.2], &[0.2, 0.8]], 4, 4);
        let g = point_estimate(&pg, PointEstimate::default());
        assert_eq!((g.n(), g.edge_count()), (2, 1));
        assert!(g.is_connected());
    }

    #[test]
    fn unlikely_node_is_dropped_with_its_edges() {
        let pg = pg_with_adj(&[&[0.4, 0.9, 0.9], &[0.9, 0.6, 0.9], &[0.9, 0.9, 0.7]], 4, 4);
        let g = point_estimate(&pg, PointEstimate { connect: false, threshold: 0.5 });
        assert_eq!(g.n(), 2);
        assert_eq!(g.edges().map(|(i, j, _)| (i, j)).collect::<Vec<_>>(), vec![(0, 1)]);
    }

    #[test]
    fn empty_node_set_gives_empty_graph() {
        let pg = ProbabilisticGraph::uniform(3, 4, 4, 0.1);
        assert!(point_estimate(&pg, PointEstimate::default()).is_empty());
    }

    #[test]
    fn labels_count_classes() {
        let g = DiscreteGraph::from_parts(4, 4, &[2], &[]).unwrap();
        assert_eq!(g.label(), GraphLabel(vec![0, 0, 1, 0]));
        assert_eq!(DiscreteGraph::new(4, 4).label(), GraphLabel(vec![0; 4]));
        // propylene oxide heavy atoms: C-C(-O-)C ring with methyl, vocabulary (C, N, O, F)
        let po = DiscreteGraph::from_parts(4, 4, &[0, 0, 0, 2], &[(0, 1, 0), (1, 2, 0), (1, 3, 0), (2, 3, 0)])
            .unwrap();
        assert_eq!(po.label(), GraphLabel(vec![3, 0, 1, 0]));
    }

    #[test]
    fn degenerate_round_trip() {
        let g = DiscreteGraph::from_parts(4, 4, &[0, 1, 2], &[(0, 1, 1), (1, 2, 3)]).unwrap();
        let pg = g.to_probabilistic(5).unwrap();
        pg.validate(0.0).unwrap();
        assert_eq!(point_estimate(&pg, PointEstimate { connect: false, threshold: 0.5 }), g);
        assert_eq!(point_estimate(&pg, PointEstimate::default()), g);
    }

    #[test]
    fn json_rejects_asymmetric_adjacency() {
        let mut d = DiscreteGraph::from_parts(2, 1, &[0, 1], &[(0, 1, 0)]).unwrap().to_dense();
        d.adjacency[0][1] = 0;
        assert!(DiscreteGraph::from_dense(&d).is_err());
    }

    #[test]
    fn json_round_trip() {
        let g = DiscreteGraph::from_parts(4, 4, &[0, 3, 2], &[(0, 2, 1)]).unwrap();
        let s = serde_json::to_string(&g).unwrap();
        assert!(s.contains("\"A\":[[1,0,1],[0,1,0],[1,0,1]]"));
        let back: DiscreteGraph = serde_json::from_str(&s).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn mst_ties_are_lexicographic() {
        let t = maximum_spanning_tree(3, |_, _| 0.5);
        assert_eq!(t, vec![(0, 1), (0, 2)]);
    }

    #[test]
    fn permute_moves_classes() {
        let g = DiscreteGraph::from_parts(3, 2, &[0, 1, 2], &[(0, 1, 1)]).unwrap();
        let p = g.permute(&[2, 0, 1]).unwrap();
        assert_eq!(p.node_classes(), &[1, 2, 0]);
        assert_eq!(p.edge_class(2, 0), Some(1));
        assert!(g.permute(&[0, 0, 1]).is_err());
    }
}
