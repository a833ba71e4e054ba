//! Second-order matching between an input graph and a predicted
//! probabilistic graph.
//!
//! The affinity between node pairs `(i, j)` of the input and `(a, b)` of the
//! prediction combines attribute compatibility with existence
//! probabilities:
//!
//! ```text
//! S((i,j),(a,b)) = <E_ij, Ẽ_ab> A_ij Ã_ab Ã_aa Ã_bb   for i ≠ j, a ≠ b
//! S((i,i),(a,a)) = <F_i, F̃_a> Ã_aa
//! ```
//!
//! Correspondences are relaxed to a continuous matrix with max-pooling
//! matching (a power iteration in which every neighbor contributes only its
//! best candidate) and then discretized with the Hungarian algorithm.

pub mod hungarian;

use rayon::prelude::*;
use thiserror::Error;

use crate::graph::{DiscreteGraph, ProbabilisticGraph};
use crate::tensor::Tensor;

/// Default number of max-pooling iterations.
pub const DEFAULT_ITERATIONS: usize = 75;

const NORM_UNDERFLOW: f64 = 1e-30;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MatchingError {
    #[error("{what} dimension mismatch: input {input}, prediction {predicted}")]
    Dimension {
        what: &'static str,
        input: usize,
        predicted: usize,
    },
    #[error("input graph has {n} nodes but prediction only {k}")]
    TooLarge { n: usize, k: usize },
    #[error("batch is heterogeneous: {0}")]
    Heterogeneous(String),
    #[error("assignment invalid: {0}")]
    Assignment(String),
}

/// Dense `k²×k²` similarity matrix. Row/column `i*k + a` addresses the
/// candidate "input node `i` ↔ predicted node `a`"; input indices `i ≥ n`
/// are zero padding.
#[derive(Debug, Clone, PartialEq)]
pub struct Affinity {
    k: usize,
    n: usize,
    data: Vec<f64>,
    // input nodes j with possibly nonzero S(i·, j·): i itself and its neighbors
    support: Vec<Vec<usize>>,
}

impl Affinity {
    pub fn build(g: &DiscreteGraph, pg: &ProbabilisticGraph) -> Result<Self, MatchingError> {
        if g.d_e() != pg.d_e() {
            return Err(MatchingError::Dimension {
                what: "edge attribute",
                input: g.d_e(),
                predicted: pg.d_e(),
            });
        }
        if g.d_n() != pg.d_n() {
            return Err(MatchingError::Dimension {
                what: "node attribute",
                input: g.d_n(),
                predicted: pg.d_n(),
            });
        }
        let (n, k) = (g.n(), pg.k());
        if n > k {
            return Err(MatchingError::TooLarge { n, k });
        }
        let kk = k * k;
        let mut data = vec![0.0; kk * kk];
        let mut support = vec![Vec::new(); k];
        for i in 0..n {
            let fi = g.node_class(i);
            let row_base = i * k;
            for a in 0..k {
                let ia = row_base + a;
                data[ia * kk + ia] = pg.node_probs(a)[fi] * pg.adj(a, a);
            }
            support[i].push(i);
            for (j, class) in g.neighbors(i) {
                support[i].push(j);
                for a in 0..k {
                    let ia = i * k + a;
                    let paa = pg.adj(a, a);
                    for b in 0..k {
                        if a == b {
                            continue;
                        }
                        let s = pg.edge_probs(a, b)[class] * pg.adj(a, b) * paa * pg.adj(b, b);
                        data[ia * kk + j * k + b] = s;
                    }
                }
            }
            support[i].sort_unstable();
        }
        Ok(Self { k, n, data, support })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// `S((i,j),(a,b))`.
    pub fn get(&self, i: usize, j: usize, a: usize, b: usize) -> f64 {
        let kk = self.k * self.k;
        self.data[(i * self.k + a) * kk + j * self.k + b]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// `xᵀ S x` for the indicator vector of an assignment (`assign[i]` is the
    /// predicted node of input node `i`).
    pub fn score(&self, assign: &[usize]) -> f64 {
        let mut total = 0.0;
        for (i, &a) in assign.iter().enumerate() {
            for (j, &b) in assign.iter().enumerate() {
                total += self.get(i, j, a, b);
            }
        }
        total
    }

    /// `k²×k²` tensor for debug dumps.
    pub fn to_tensor(&self) -> Tensor {
        let kk = self.k * self.k;
        Tensor::new(vec![kk, kk], self.data.clone()).expect("affinity buffer is k²×k²")
    }
}

/// Continuous correspondence matrix `X*` of shape `k×n`.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftAssignment {
    k: usize,
    n: usize,
    data: Vec<f64>,
}

impl SoftAssignment {
    pub fn from_rows(k: usize, n: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), k * n);
        Self { k, n, data }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Entry for predicted node `a`, input node `i`.
    pub fn get(&self, a: usize, i: usize) -> f64 {
        self.data[a * self.n + i]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![self.k, self.n], self.data.clone()).expect("k×n buffer")
    }
}

/// Max-pooling matching. Starts from a uniform vector and applies
/// `x_ia ← Σ_j max_b x_jb S(ia; jb)` followed by L2 normalization, a fixed
/// number of times. The `j = i` term reduces to `x_ia S(ia; ia)` because the
/// affinity vanishes for `i = j, a ≠ b`.
pub fn max_pool_match(s: &Affinity, iterations: usize) -> SoftAssignment {
    let k = s.k;
    let kk = k * k;
    let uniform = 1.0 / k.max(1) as f64;
    let mut x = vec![uniform; kk];
    let mut next = vec![0.0; kk];
    for _ in 0..iterations.max(1) {
        for i in 0..k {
            for a in 0..k {
                let ia = i * k + a;
                let row = &s.data[ia * kk..(ia + 1) * kk];
                let mut acc = 0.0;
                for &j in &s.support[i] {
                    let xs = &x[j * k..(j + 1) * k];
                    let ss = &row[j * k..(j + 1) * k];
                    let mut best = 0.0f64;
                    for (xv, sv) in xs.iter().zip(ss) {
                        best = best.max(xv * sv);
                    }
                    acc += best;
                }
                next[ia] = acc;
            }
        }
        let norm = next.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < NORM_UNDERFLOW {
            log::warn!("max-pooling matching: iterate norm underflow, falling back to uniform");
            x.fill(uniform);
            break;
        }
        for (xv, nv) in x.iter_mut().zip(&next) {
            *xv = nv / norm;
        }
    }
    let n = s.n;
    let mut data = vec![0.0; k * n];
    for a in 0..k {
        for i in 0..n {
            data[a * n + i] = x[i * k + a];
        }
    }
    SoftAssignment { k, n, data }
}

/// Binary one-to-one assignment of the `n` input nodes to distinct
/// predicted nodes among `k`. Predicted nodes left out are unassigned.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Assignment {
    k: usize,
    // predicted node per input node
    target: Vec<usize>,
}

impl Assignment {
    pub fn new(k: usize, target: Vec<usize>) -> Result<Self, MatchingError> {
        if target.len() > k {
            return Err(MatchingError::Assignment(format!(
                "{} input nodes for {} predicted",
                target.len(),
                k
            )));
        }
        let mut used = vec![false; k];
        for &a in &target {
            if a >= k {
                return Err(MatchingError::Assignment(format!("predicted node {a} >= k")));
            }
            if std::mem::replace(&mut used[a], true) {
                return Err(MatchingError::Assignment(format!("predicted node {a} used twice")));
            }
        }
        Ok(Self { k, target })
    }

    /// Identity alignment of `n` input nodes onto the first `n` predicted.
    pub fn identity(k: usize, n: usize) -> Self {
        Self::new(k, (0..n).collect()).expect("n <= k")
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n(&self) -> usize {
        self.target.len()
    }

    /// Predicted node matched to input node `i`.
    pub fn target(&self, i: usize) -> usize {
        self.target[i]
    }

    pub fn targets(&self) -> &[usize] {
        &self.target
    }

    /// Input node matched to each predicted node, if any.
    pub fn inverse(&self) -> Vec<Option<usize>> {
        let mut inv = vec![None; self.k];
        for (i, &a) in self.target.iter().enumerate() {
            inv[a] = Some(i);
        }
        inv
    }

    /// Dense binary `X` of shape `k×n`.
    pub fn to_matrix(&self) -> Vec<Vec<u8>> {
        let n = self.n();
        let mut x = vec![vec![0u8; n]; self.k];
        for (i, &a) in self.target.iter().enumerate() {
            x[a][i] = 1;
        }
        x
    }
}

/// Hungarian discretization maximizing `Σ X*_{a,i} X_{a,i}`.
pub fn discretize(xs: &SoftAssignment) -> Assignment {
    let (k, n) = (xs.k, xs.n);
    // rows = input nodes, cols = predicted nodes
    let mut profit = vec![0.0; n * k];
    for i in 0..n {
        for a in 0..k {
            profit[i * k + a] = xs.get(a, i);
        }
    }
    let target = hungarian::solve_max(&profit, n, k);
    Assignment { k, target }
}

/// Full pipeline for one pair: affinity, max-pooling matching, Hungarian.
pub fn match_graphs(
    g: &DiscreteGraph,
    pg: &ProbabilisticGraph,
    iterations: usize,
) -> Result<Assignment, MatchingError> {
    let s = Affinity::build(g, pg)?;
    Ok(discretize(&max_pool_match(&s, iterations)))
}

/// Matches every pair independently. Pairs run in parallel; output order
/// follows input order and each result equals the sequential one.
pub fn match_batch(
    pairs: &[(&DiscreteGraph, &ProbabilisticGraph)],
    iterations: usize,
) -> Result<Vec<Assignment>, MatchingError> {
    if let Some((g0, p0)) = pairs.first() {
        let (k, d_e, d_n) = (p0.k(), p0.d_e(), p0.d_n());
        for (idx, (g, pg)) in pairs.iter().enumerate() {
            if pg.k() != k || pg.d_e() != d_e || pg.d_n() != d_n || g.d_e() != g0.d_e() || g.d_n() != g0.d_n() {
                return Err(MatchingError::Heterogeneous(format!("pair {idx} differs from pair 0")));
            }
        }
    }
    pairs
        .par_iter()
        .map(|(g, pg)| match_graphs(g, pg, iterations))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::DiscreteGraph;

    #[test]
    fn node_term_is_dot_product_times_existence() {
        let g = DiscreteGraph::from_parts(4, 4, &[2], &[]).unwrap();
        let mut pg = ProbabilisticGraph::uniform(1, 4, 4, 1.0);
        pg.validate(0.0).unwrap();
        let s = Affinity::build(&g, &pg).unwrap();
        assert_eq!(s.get(0, 0, 0, 0), 0.25);
        pg.adj_mut()[0] = 0.5;
        assert_eq!(Affinity::build(&g, &pg).unwrap().get(0, 0, 0, 0), 0.125);
    }

    #[test]
    fn absent_input_edge_has_zero_affinity() {
        let g = DiscreteGraph::from_parts(4, 4, &[0, 0, 0], &[(0, 1, 0)]).unwrap();
        let pg = ProbabilisticGraph::uniform(3, 4, 4, 0.7);
        let s = Affinity::build(&g, &pg).unwrap();
        for a in 0..3 {
            for b in 0..3 {
                assert_eq!(s.get(0, 2, a, b), 0.0);
                assert_eq!(s.get(1, 2, a, b), 0.0);
            }
        }
        assert!(s.get(0, 1, 0, 1) > 0.0);
    }

    #[test]
    fn self_affinity_is_one_on_graph_entries() {
        let g = DiscreteGraph::from_parts(4, 4, &[0, 1, 2], &[(0, 1, 0), (1, 2, 3)]).unwrap();
        let pg = g.to_probabilistic(4).unwrap();
        let s = Affinity::build(&g, &pg).unwrap();
        for i in 0..3 {
            assert_eq!(s.get(i, i, i, i), 1.0);
            for j in 0..3 {
                if g.has_edge(i, j) {
                    assert_eq!(s.get(i, j, i, j), 1.0);
                }
            }
        }
        // padded input rows are zero
        assert!(s.data()[3 * 4 * 16..4 * 4 * 16].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mismatched_vocabularies_are_rejected() {
        let g = DiscreteGraph::from_parts(4, 3, &[0], &[]).unwrap();
        let pg = ProbabilisticGraph::uniform(2, 4, 4, 0.5);
        assert!(matches!(Affinity::build(&g, &pg), Err(MatchingError::Dimension { .. })));
        let big = DiscreteGraph::from_parts(4, 4, &[0, 0, 0], &[]).unwrap();
        assert!(matches!(Affinity::build(&big, &pg), Err(MatchingError::TooLarge { .. })));
    }

    #[test]
    fn single_node_match_is_one() {
        let g = DiscreteGraph::from_parts(4, 4, &[1], &[]).unwrap();
        let pg = ProbabilisticGraph::uniform(1, 4, 4, 0.9);
        let xs = max_pool_match(&Affinity::build(&g, &pg).unwrap(), 5);
        assert_eq!(xs.data(), &[1.0]);
    }

    #[test]
    fn zero_affinity_yields_uniform() {
        let g = DiscreteGraph::from_parts(4, 4, &[1, 1], &[]).unwrap();
        let pg = ProbabilisticGraph::uniform(3, 4, 4, 0.0);
        let xs = max_pool_match(&Affinity::build(&g, &pg).unwrap(), 10);
        assert!(xs.data().iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
        assert_eq!(discretize(&xs).n(), 2);
    }

    #[test]
    fn equivalent_nodes_get_symmetric_scores() {
        // two isolated carbons: S is block diagonal with equal blocks
        let g = DiscreteGraph::from_parts(4, 4, &[0, 0], &[]).unwrap();
        let pg = g.to_probabilistic(2).unwrap();
        let xs = max_pool_match(&Affinity::build(&g, &pg).unwrap(), 20);
        assert_eq!(xs.get(0, 0), xs.get(1, 1));
        assert_eq!(xs.get(0, 1), xs.get(1, 0));
    }

    #[test]
    fn discretize_small_cases() {
        let id = SoftAssignment::from_rows(2, 2, vec![0.9, 0.1, 0.1, 0.9]);
        assert_eq!(discretize(&id).targets(), &[0, 1]);
        let anti = SoftAssignment::from_rows(2, 2, vec![0.1, 0.9, 0.9, 0.1]);
        assert_eq!(discretize(&anti).targets(), &[1, 0]);
        assert_eq!(discretize(&anti).to_matrix(), vec![vec![0, 1], vec![1, 0]]);
    }

    #[test]
    fn assignment_rejects_duplicates() {
        assert!(Assignment::new(3, vec![0, 0]).is_err());
        assert!(Assignment::new(3, vec![0, 3]).is_err());
        assert!(Assignment::new(1, vec![0, 1]).is_err());
        assert_eq!(Assignment::new(3, vec![2, 0]).unwrap().inverse(), vec![Some(1), None, Some(0)]);
    }

    #[test]
    fn heterogeneous_batch_is_rejected() {
        let g = DiscreteGraph::from_parts(4, 4, &[0], &[]).unwrap();
        let p1 = ProbabilisticGraph::uniform(2, 4, 4, 0.5);
        let p2 = ProbabilisticGraph::uniform(3, 4, 4, 0.5);
        assert!(matches!(
            match_batch(&[(&g, &p1), (&g, &p2)], 5),
            Err(MatchingError::Heterogeneous(_))
        ));
        assert!(match_batch(&[], 5).unwrap().is_empty());
    }
}
