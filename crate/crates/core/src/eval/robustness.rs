//! Matching a graph against a noisy copy of itself.
//!
//! Gaussian noise is added to one tensor of the graph's degenerate
//! probabilistic form; entries are then truncated (existence to `[0, 1]`,
//! attributes to `[0, ∞)`) and attribute rows renormalized, with collapsed
//! rows reset to uniform. The resulting assignment is scored by how well it
//! reconstructs the clean graph from itself.

use rand::seq::IndexedRandom;
use rand::{Rng, RngCore};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::graph::{DiscreteGraph, ProbabilisticGraph};
use crate::matching::{match_graphs, Assignment, MatchingError};
use crate::model::LossWeights;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NoiseKind {
    A,
    E,
    F,
}

impl NoiseKind {
    pub const ALL: [NoiseKind; 3] = [NoiseKind::A, NoiseKind::E, NoiseKind::F];
}

impl std::fmt::Display for NoiseKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Self::A => "A",
            Self::E => "E",
            Self::F => "F",
        };
        f.write_str(s)
    }
}

fn renormalize(row: &mut [f64]) {
    for x in row.iter_mut() {
        *x = x.max(0.0);
    }
    let s: f64 = row.iter().sum();
    if s > 0.0 {
        row.iter_mut().for_each(|x| *x /= s);
    } else {
        let u = 1.0 / row.len() as f64;
        row.iter_mut().for_each(|x| *x = u);
    }
}

/// Perturbs one tensor with `N(0, eps²)` noise, keeping `Ã` and `Ẽ`
/// symmetric, then truncates and renormalizes.
pub fn add_noise(pg: &ProbabilisticGraph, kind: NoiseKind, eps: f64, rng: &mut impl Rng) -> ProbabilisticGraph {
    let mut out = pg.clone();
    if eps <= 0.0 {
        return out;
    }
    let normal = Normal::new(0.0, eps).expect("positive standard deviation");
    let (k, d_e, d_n) = (pg.k(), pg.d_e(), pg.d_n());
    match kind {
        NoiseKind::A => {
            let adj = out.adj_mut();
            for a in 0..k {
                for b in a..k {
                    let v = (adj[a * k + b] + normal.sample(rng)).clamp(0.0, 1.0);
                    adj[a * k + b] = v;
                    adj[b * k + a] = v;
                }
            }
        }
        NoiseKind::E => {
            let edge = out.edge_mut();
            for a in 0..k {
                for b in a..k {
                    let base = (a * k + b) * d_e;
                    for l in 0..d_e {
                        edge[base + l] += normal.sample(rng);
                    }
                    renormalize(&mut edge[base..base + d_e]);
                    let mirror = (b * k + a) * d_e;
                    let row: Vec<f64> = edge[base..base + d_e].to_vec();
                    edge[mirror..mirror + d_e].copy_from_slice(&row);
                }
            }
        }
        NoiseKind::F => {
            let node = out.node_mut();
            for a in 0..k {
                let row = &mut node[a * d_n..(a + 1) * d_n];
                for x in row.iter_mut() {
                    *x += normal.sample(rng);
                }
                renormalize(row);
            }
        }
    }
    out
}

/// Agreement fractions of reconstructing `g` from itself under `x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MatchAccuracy {
    pub diagonal: f64,
    pub off_diagonal: f64,
    pub node: f64,
    /// `None` when the graph has no edges.
    pub edge: Option<f64>,
}

impl MatchAccuracy {
    /// Weighted mean of the adjacency, node and edge terms; the adjacency term
    /// is the mean of its diagonal and off-diagonal fractions.
    pub fn combined(&self, w: &LossWeights) -> f64 {
        let mut num = w.lambda_a * 0.5 * (self.diagonal + self.off_diagonal) + w.lambda_f * self.node;
        let mut den = w.lambda_a + w.lambda_f;
        if let Some(e) = self.edge {
            num += w.lambda_e * e;
            den += w.lambda_e;
        }
        if den == 0.0 {
            0.0
        } else {
            num / den
        }
    }
}

/// 0/1 version of the reconstruction loss of `g` against its own padded
/// degenerate form on `x.k()` nodes: the same entries and normalizations,
/// counting exact agreements instead of log-likelihoods.
pub fn self_match_accuracy(g: &DiscreteGraph, x: &Assignment) -> Result<MatchAccuracy, MatchingError> {
    let k = x.k();
    let n = g.n();
    if x.n() != n {
        return Err(MatchingError::Assignment("assignment does not cover the graph".into()));
    }
    let pi = x.targets();
    let inv = x.inverse();
    // clean graph: node a of the prediction is original node a (a < n) or padding
    let clean_adj = |a: usize, b: usize| if a < n && b < n { g.adjacency(a, b) } else { 0.0 };
    let mapped_adj = |a: usize, b: usize| match (inv[a], inv[b]) {
        (Some(i), Some(j)) => g.adjacency(i, j),
        _ => 0.0,
    };
    let mut diag = 0usize;
    let mut off = 0usize;
    for a in 0..k {
        for b in 0..k {
            if mapped_adj(a, b) == clean_adj(a, b) {
                if a == b {
                    diag += 1;
                } else {
                    off += 1;
                }
            }
        }
    }
    let node_ok = (0..n).filter(|&i| pi[i] < n && g.node_class(pi[i]) == g.node_class(i)).count();
    let mut edge_ok = 0usize;
    let mut slots = 0usize;
    for i in 0..n {
        for (j, c) in g.neighbors(i) {
            slots += 1;
            if pi[i] < n && pi[j] < n && g.edge_class(pi[i], pi[j]) == Some(c) {
                edge_ok += 1;
            }
        }
    }
    Ok(MatchAccuracy {
        diagonal: diag as f64 / k as f64,
        off_diagonal: if k > 1 { off as f64 / (k * (k - 1)) as f64 } else { 1.0 },
        node: if n > 0 { node_ok as f64 / n as f64 } else { 1.0 },
        edge: (slots > 0).then(|| edge_ok as f64 / slots as f64),
    })
}

/// One trial: perturb, match the clean graph against the noisy one, score.
pub fn robustness_trial(
    g: &DiscreteGraph,
    k: usize,
    kind: NoiseKind,
    eps: f64,
    iterations: usize,
    rng: &mut impl Rng,
) -> Result<f64, MatchingError> {
    let clean = g
        .to_probabilistic(k)
        .map_err(|_| MatchingError::TooLarge { n: g.n(), k })?;
    let noisy = add_noise(&clean, kind, eps, rng);
    let x = match_graphs(g, &noisy, iterations)?;
    Ok(self_match_accuracy(g, &x)?.combined(&LossWeights::default()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RobustnessCell {
    pub kind: NoiseKind,
    pub eps: f64,
    pub k: usize,
    /// `None` when no graph fits in `k` nodes.
    pub accuracy: Option<f64>,
    pub trials: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RobustnessReport {
    pub cells: Vec<RobustnessCell>,
}

impl RobustnessReport {
    pub fn get(&self, kind: NoiseKind, eps: f64, k: usize) -> Option<&RobustnessCell> {
        self.cells.iter().find(|c| c.kind == kind && c.eps == eps && c.k == k)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessGrid {
    pub ks: Vec<usize>,
    pub eps: Vec<f64>,
    pub kinds: Vec<NoiseKind>,
    pub trials: usize,
    pub iterations: usize,
}

impl Default for RobustnessGrid {
    fn default() -> Self {
        Self {
            ks: vec![9, 15, 20],
            eps: vec![0.0, 0.4, 0.8],
            kinds: NoiseKind::ALL.to_vec(),
            trials: 100,
            iterations: crate::matching::DEFAULT_ITERATIONS,
        }
    }
}

/// Runs every `(kind, eps, k)` cell over graphs with at most `k` nodes.
/// Trial seeds are drawn sequentially before the parallel section, so the
/// report is independent of the thread count.
pub fn matching_robustness(
    graphs: &[DiscreteGraph],
    grid: &RobustnessGrid,
    seed: u64,
) -> Result<RobustnessReport, MatchingError> {
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    let mut cells = Vec::new();
    for &kind in &grid.kinds {
        for &eps in &grid.eps {
            for &k in &grid.ks {
                let bucket: Vec<&DiscreteGraph> = graphs.iter().filter(|g| g.n() <= k && !g.is_empty()).collect();
                if bucket.is_empty() {
                    log::warn!("no graphs with at most {k} nodes; cell {kind}/{eps}/{k} left empty");
                    cells.push(RobustnessCell {
                        kind,
                        eps,
                        k,
                        accuracy: None,
                        trials: 0,
                    });
                    continue;
                }
                let seeds: Vec<u64> = (0..grid.trials).map(|_| master.next_u64()).collect();
                let scores: Vec<f64> = seeds
                    .par_iter()
                    .map(|&s| {
                        let mut rng = ChaCha8Rng::seed_from_u64(s);
                        let g = bucket.choose(&mut rng).expect("bucket not empty");
                        robustness_trial(g, k, kind, eps, grid.iterations, &mut rng)
                    })
                    .collect::<Result<_, _>>()?;
                let accuracy = (!scores.is_empty()).then(|| scores.iter().sum::<f64>() / scores.len() as f64);
                cells.push(RobustnessCell {
                    kind,
                    eps,
                    k,
                    accuracy,
                    trials: scores.len(),
                });
            }
        }
    }
    Ok(RobustnessReport { cells })
}
