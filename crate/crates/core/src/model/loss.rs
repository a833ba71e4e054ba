//! Reconstruction loss of a discrete graph under a probabilistic one.

use serde::{Deserialize, Serialize};

use super::{DecodedVars, ModelError};
use crate::graph::{DiscreteGraph, ProbabilisticGraph};
use crate::matching::{Assignment, MatchingError};
use crate::tensor::{Tape, TensorError, Var};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    #[serde(rename = "lambda_A")]
    pub lambda_a: f64,
    #[serde(rename = "lambda_E")]
    pub lambda_e: f64,
    #[serde(rename = "lambda_F")]
    pub lambda_f: f64,
    pub kl_weight: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_a: 1.0,
            lambda_e: 1.0,
            lambda_f: 1.0,
            kl_weight: 1.0,
        }
    }
}

/// Negative log-likelihood terms; `total` is their weighted sum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReconLoss {
    pub adj: f64,
    pub node: f64,
    pub edge: f64,
    pub total: f64,
}

fn check_dims(g: &DiscreteGraph, pg: &ProbabilisticGraph, x: &Assignment) -> Result<(), MatchingError> {
    if x.k() != pg.k() {
        return Err(MatchingError::Assignment(format!("assignment has {} rows, prediction {} nodes", x.k(), pg.k())));
    }
    if x.n() != g.n() {
        return Err(MatchingError::Assignment(format!("assignment has {} columns, input {} nodes", x.n(), g.n())));
    }
    for (what, input, predicted) in [("edge attribute", g.d_e(), pg.d_e()), ("node attribute", g.d_n(), pg.d_n())] {
        if input != predicted {
            return Err(MatchingError::Dimension { what, input, predicted });
        }
    }
    Ok(())
}

fn xent(t: f64, p: f64) -> f64 {
    let mut l = 0.0;
    if t != 0.0 {
        l -= t * p.ln();
    }
    if t != 1.0 {
        l -= (1.0 - t) * (1.0 - p).ln();
    }
    l
}

/// `−log p(G | G̃)` given the assignment `X` (`k × n`, one-to-one).
///
/// Computed with explicit dense products `A' = X A Xᵀ`, `F̃' = Xᵀ F̃` and
/// `Ẽ'_l = Xᵀ Ẽ_l X`.
pub fn reconstruction_loss(
    g: &DiscreteGraph,
    pg: &ProbabilisticGraph,
    x: &Assignment,
    w: &LossWeights,
) -> Result<ReconLoss, MatchingError> {
    check_dims(g, pg, x)?;
    let (k, n) = (pg.k(), g.n());
    let xm: Vec<Vec<f64>> = x
        .to_matrix()
        .into_iter()
        .map(|r| r.into_iter().map(f64::from).collect())
        .collect();

    // A' = X A Xᵀ
    let mut xa = vec![vec![0.0; n]; k];
    for a in 0..k {
        for j in 0..n {
            xa[a][j] = (0..n).map(|i| xm[a][i] * g.adjacency(i, j)).sum();
        }
    }
    let mut adj = 0.0;
    for a in 0..k {
        for b in 0..k {
            let t: f64 = (0..n).map(|j| xa[a][j] * xm[b][j]).sum();
            let l = xent(t, pg.adj(a, b));
            if a == b {
                adj += l / k as f64;
            } else {
                adj += l / (k * (k - 1)) as f64;
            }
        }
    }

    let mut node = 0.0;
    for i in 0..n {
        // F̃'_i = Σ_a X_ai F̃_a
        let p: f64 = (0..k).map(|a| xm[a][i] * pg.node_probs(a)[g.node_class(i)]).sum();
        node -= p.ln();
    }
    if n > 0 {
        node /= n as f64;
    }

    let mut edge = 0.0;
    let slots = g.directed_edge_slots();
    if slots > 0 {
        for i in 0..n {
            for (j, c) in g.neighbors(i) {
                let mut p = 0.0;
                for a in 0..k {
                    for b in 0..k {
                        p += xm[a][i] * pg.edge_probs(a, b)[c] * xm[b][j];
                    }
                }
                edge -= p.ln();
            }
        }
        edge /= slots as f64;
    }
    let total = w.lambda_a * adj + w.lambda_f * node + w.lambda_e * edge;
    Ok(ReconLoss { adj, node, edge, total })
}

/// Constant targets of one sample for the batched tape loss.
#[derive(Debug, Clone)]
pub struct LossTargets {
    /// `A'` flattened `k × k`.
    adj_target: Vec<f64>,
    /// Flat positions into `F̃` (`k × d_n`) of the matched true classes.
    node_index: Vec<usize>,
    /// Flat positions into `Ẽ` (`k × k × d_e`) of the matched true classes.
    edge_index: Vec<usize>,
}

impl LossTargets {
    pub fn new(g: &DiscreteGraph, x: &Assignment, d_e: usize, d_n: usize) -> Result<Self, MatchingError> {
        let k = x.k();
        if x.n() != g.n() {
            return Err(MatchingError::Assignment("assignment does not cover the graph".into()));
        }
        let pi = x.targets();
        let mut adj_target = vec![0.0; k * k];
        for i in 0..g.n() {
            adj_target[pi[i] * k + pi[i]] = 1.0;
            for (j, _) in g.neighbors(i) {
                adj_target[pi[i] * k + pi[j]] = 1.0;
            }
        }
        let node_index = (0..g.n()).map(|i| pi[i] * d_n + g.node_class(i)).collect();
        let edge_index = (0..g.n())
            .flat_map(|i| g.neighbors(i).map(move |(j, c)| (i, j, c)))
            .map(|(i, j, c)| (pi[i] * k + pi[j]) * d_e + c)
            .collect();
        Ok(Self {
            adj_target,
            node_index,
            edge_index,
        })
    }
}

/// Mean reconstruction loss over a decoded batch; gradients flow to the
/// decoder outputs only (targets are constants).
pub(crate) fn batched_loss(
    tape: &mut Tape,
    out: &DecodedVars,
    targets: &[LossTargets],
    w: &LossWeights,
    k: usize,
    d_e: usize,
    d_n: usize,
) -> Result<Var, ModelError> {
    let b = targets.len();
    if b == 0 {
        return Err(ModelError::EmptyBatch);
    }
    let scale = 1.0 / b as f64;
    let mut adj_target = Vec::with_capacity(b * k * k);
    let mut adj_w = Vec::with_capacity(b * k * k);
    let mut node_index = Vec::new();
    let mut node_w = Vec::new();
    let mut edge_index = Vec::new();
    let mut edge_w = Vec::new();
    for (s, t) in targets.iter().enumerate() {
        adj_target.extend_from_slice(&t.adj_target);
        for a in 0..k {
            for bb in 0..k {
                let norm = if a == bb { k as f64 } else { (k * (k - 1)) as f64 };
                adj_w.push(w.lambda_a * scale / norm);
            }
        }
        let n = t.node_index.len();
        node_index.extend(t.node_index.iter().map(|&x| s * k * d_n + x));
        node_w.extend(std::iter::repeat_n(-w.lambda_f * scale / n.max(1) as f64, n));
        let m = t.edge_index.len();
        edge_index.extend(t.edge_index.iter().map(|&x| s * k * k * d_e + x));
        edge_w.extend(std::iter::repeat_n(-w.lambda_e * scale / m.max(1) as f64, m));
    }
    let bce = tape.bce(out.adj, adj_target)?;
    let mut total = tape.dot_const(bce, adj_w)?;
    for (var, index, weights) in [(out.node, node_index, node_w), (out.edge, edge_index, edge_w)] {
        if index.is_empty() {
            continue;
        }
        let len = index.len();
        let picked = tape.gather(var, index, &[len])?;
        let logs = tape.log(picked)?;
        let term = tape.dot_const(logs, weights)?;
        total = tape.add(total, term)?;
    }
    Ok(total)
}

/// Mean KL of a batch of diagonal Gaussians given `μ` and `log σ²`.
pub(crate) fn batched_kl(tape: &mut Tape, mu: Var, logvar: Var) -> Result<Var, TensorError> {
    let b = tape.value(mu).shape()[0];
    let mu2 = tape.mul(mu, mu)?;
    let var = tape.exp(logvar)?;
    let s = tape.add(mu2, var)?;
    let s = tape.sub(s, logvar)?;
    let s = tape.add_scalar(s, -1.0)?;
    let s = tape.sum(s)?;
    tape.scale(s, 0.5 / b as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::DiscreteGraph;

    fn ring() -> DiscreteGraph {
        DiscreteGraph::from_parts(4, 4, &[0, 1, 2], &[(0, 1, 0), (1, 2, 1), (2, 0, 3)]).unwrap()
    }

    #[test]
    fn perfect_prediction_costs_nothing() {
        let g = ring();
        let mut pg = g.to_probabilistic(5).unwrap();
        // padding nodes absent with certainty
        for a in 3..5 {
            for b in 0..5 {
                pg.adj_mut()[a * 5 + b] = 0.0;
                pg.adj_mut()[b * 5 + a] = 0.0;
            }
        }
        let x = Assignment::identity(5, 3);
        let l = reconstruction_loss(&g, &pg, &x, &LossWeights::default()).unwrap();
        assert_eq!(l.total, 0.0);
    }

    #[test]
    fn uniform_single_node() {
        let g = DiscreteGraph::from_parts(4, 4, &[3], &[]).unwrap();
        let pg = ProbabilisticGraph::uniform(1, 4, 4, 0.5);
        let w = LossWeights {
            lambda_a: 2.0,
            lambda_f: 3.0,
            ..Default::default()
        };
        let l = reconstruction_loss(&g, &pg, &Assignment::identity(1, 1), &w).unwrap();
        let expect = 2.0 * 2f64.ln() + 3.0 * 4f64.ln();
        assert!((l.total - expect).abs() < 1e-12);
        assert_eq!(l.edge, 0.0);
    }

    #[test]
    fn relabeling_graph_and_assignment_keeps_loss() {
        let g = ring();
        let pg = ProbabilisticGraph::uniform(4, 4, 4, 0.3);
        let x = Assignment::new(4, vec![2, 0, 3]).unwrap();
        let perm = [1, 2, 0];
        let gp = g.permute(&perm).unwrap();
        let mut t = vec![0; 3];
        for i in 0..3 {
            t[perm[i]] = x.target(i);
        }
        let xp = Assignment::new(4, t).unwrap();
        let w = LossWeights::default();
        let a = reconstruction_loss(&g, &pg, &x, &w).unwrap().total;
        let b = reconstruction_loss(&gp, &pg, &xp, &w).unwrap().total;
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn wrong_dimensions_rejected() {
        let g = ring();
        let pg = ProbabilisticGraph::uniform(4, 4, 4, 0.3);
        assert!(reconstruction_loss(&g, &pg, &Assignment::identity(4, 2), &LossWeights::default()).is_err());
    }

    #[test]
    fn tape_loss_matches_dense_loss() {
        let g = ring();
        let k = 4;
        let mut pg = ProbabilisticGraph::uniform(k, 4, 4, 0.3);
        // make entries distinct but symmetric
        for a in 0..k {
            for b in 0..k {
                pg.adj_mut()[a * k + b] = 0.1 + 0.05 * (a + b) as f64;
            }
        }
        let x = Assignment::new(k, vec![3, 1, 0]).unwrap();
        let w = LossWeights {
            lambda_a: 0.7,
            lambda_e: 1.3,
            lambda_f: 2.0,
            kl_weight: 0.0,
        };
        let dense = reconstruction_loss(&g, &pg, &x, &w).unwrap().total;
        let mut tape = Tape::new();
        let out = DecodedVars {
            adj: tape.constant(crate::tensor::Tensor::new(vec![1, k, k], pg.adj_data().to_vec()).unwrap()),
            edge: tape.constant(crate::tensor::Tensor::new(vec![1, k, k, 4], pg.edge_data().to_vec()).unwrap()),
            node: tape.constant(crate::tensor::Tensor::new(vec![1, k, 4], pg.node_data().to_vec()).unwrap()),
        };
        let t = LossTargets::new(&g, &x, 4, 4).unwrap();
        let v = batched_loss(&mut tape, &out, &[t], &w, k, 4, 4).unwrap();
        assert!((tape.value(v).item() - dense).abs() < 1e-12);
    }
}
