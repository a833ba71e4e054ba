//! Decoding along a line between two embeddings and over a random plane.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::chem::{canonical_key, check_valid, AtomVocabulary, BondVocabulary};
use crate::graph::{point_estimate, DiscreteGraph, GraphLabel, PointEstimate};
use crate::model::{GraphVae, ModelError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CellClass {
    Invalid,
    ValidWrongLabel,
    ValidCorrect,
}

impl std::fmt::Display for CellClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Invalid => "invalid",
            Self::ValidWrongLabel => "valid-wrong-label",
            Self::ValidCorrect => "valid-correct",
        })
    }
}

/// Classifies a decoded graph; without a target label any valid graph is
/// correct.
pub fn classify(g: &DiscreteGraph, target: Option<&GraphLabel>, atoms: &AtomVocabulary, bonds: &BondVocabulary) -> CellClass {
    if !check_valid(g, atoms, bonds).is_ok_and(|v| v.is_valid()) {
        CellClass::Invalid
    } else if target.is_some_and(|y| g.label() != *y) {
        CellClass::ValidWrongLabel
    } else {
        CellClass::ValidCorrect
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlaneCell {
    pub row: usize,
    pub col: usize,
    pub u: f64,
    pub v: f64,
    pub key: String,
    pub class: CellClass,
    #[serde(skip)]
    pub graph: DiscreteGraph,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlaneGrid {
    pub center: Vec<f64>,
    pub dirs: [Vec<f64>; 2],
    pub cells: Vec<PlaneCell>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Two orthonormal directions from Gaussian draws by Gram–Schmidt.
pub fn orthonormal_pair(c: usize, rng: &mut impl Rng) -> [Vec<f64>; 2] {
    assert!(c >= 2, "a plane needs at least two latent dimensions");
    loop {
        let mut a: Vec<f64> = (0..c).map(|_| rng.sample(StandardNormal)).collect();
        let mut b: Vec<f64> = (0..c).map(|_| rng.sample(StandardNormal)).collect();
        let na = dot(&a, &a).sqrt();
        if na < 1e-8 {
            continue;
        }
        a.iter_mut().for_each(|x| *x /= na);
        let p = dot(&a, &b);
        b.iter_mut().zip(&a).for_each(|(x, y)| *x -= p * y);
        let nb = dot(&b, &b).sqrt();
        if nb < 1e-8 {
            continue;
        }
        b.iter_mut().for_each(|x| *x /= nb);
        return [a, b];
    }
}

fn linspace(extent: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.0];
    }
    (0..n).map(|i| -extent + 2.0 * extent * i as f64 / (n - 1) as f64).collect()
}

/// Decodes a `grid × grid` lattice spanning `[-extent, extent]²` in a random
/// plane through `center` (the origin when `None`). A single-cell grid
/// decodes the center itself.
#[allow(clippy::too_many_arguments)]
pub fn traverse_plane(
    model: &GraphVae,
    center: Option<&[f64]>,
    extent: f64,
    grid: usize,
    label: Option<&GraphLabel>,
    atoms: &AtomVocabulary,
    bonds: &BondVocabulary,
    seed: u64,
) -> Result<PlaneGrid, ModelError> {
    let c = model.config().latent_dim;
    let center = center.map_or_else(|| vec![0.0; c], <[f64]>::to_vec);
    if center.len() != c {
        return Err(ModelError::Config(format!("center has {} entries, latent size is {c}", center.len())));
    }
    if grid == 0 {
        return Err(ModelError::Config("grid must have at least one cell".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dirs = orthonormal_pair(c, &mut rng);
    let ticks = linspace(extent, grid);
    let mut coords = Vec::with_capacity(grid * grid);
    let mut zs = Vec::with_capacity(grid * grid);
    for (row, &v) in ticks.iter().enumerate() {
        for (col, &u) in ticks.iter().enumerate() {
            coords.push((row, col, u, v));
            zs.push((0..c).map(|l| center[l] + u * dirs[0][l] + v * dirs[1][l]).collect::<Vec<f64>>());
        }
    }
    let pgs = model.decode_many(&zs, &vec![label; zs.len()])?;
    let cells = coords
        .into_iter()
        .zip(pgs)
        .map(|((row, col, u, v), pg)| {
            let graph = point_estimate(&pg, PointEstimate::default());
            PlaneCell {
                row,
                col,
                u,
                v,
                key: canonical_key(&graph),
                class: classify(&graph, label, atoms, bonds),
                graph,
            }
        })
        .collect();
    Ok(PlaneGrid { center, dirs, cells })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinePoint {
    pub step: usize,
    pub t: f64,
    pub z: Vec<f64>,
    pub key: String,
    pub class: CellClass,
    #[serde(skip)]
    pub graph: DiscreteGraph,
}

/// Decodes `steps` evenly spaced points from `μ(g1)` to `μ(g2)`.
pub fn interpolate_line(
    model: &GraphVae,
    g1: &DiscreteGraph,
    g2: &DiscreteGraph,
    steps: usize,
    atoms: &AtomVocabulary,
    bonds: &BondVocabulary,
) -> Result<Vec<LinePoint>, ModelError> {
    if steps < 2 {
        return Err(ModelError::Config("interpolation needs at least two steps".into()));
    }
    let label = if model.config().conditional {
        let (y1, y2) = (g1.label(), g2.label());
        if y1 != y2 {
            return Err(ModelError::Label(format!("endpoints have different labels {y1} and {y2}")));
        }
        Some(y1)
    } else {
        None
    };
    let mu1 = model.encode(g1, label.as_ref())?.mu;
    let mu2 = model.encode(g2, label.as_ref())?.mu;
    let ts: Vec<f64> = (0..steps).map(|s| s as f64 / (steps - 1) as f64).collect();
    let zs: Vec<Vec<f64>> = ts
        .iter()
        .enumerate()
        .map(|(s, &t)| match s {
            0 => mu1.clone(),
            _ if s == steps - 1 => mu2.clone(),
            _ => mu1.iter().zip(&mu2).map(|(a, b)| (1.0 - t) * a + t * b).collect(),
        })
        .collect();
    let pgs = model.decode_many(&zs, &vec![label.as_ref(); steps])?;
    Ok(zs
        .into_iter()
        .zip(pgs)
        .enumerate()
        .map(|(step, (z, pg))| {
            let graph = point_estimate(&pg, PointEstimate::default());
            LinePoint {
                step,
                t: ts[step],
                z,
                key: canonical_key(&graph),
                class: classify(&graph, label.as_ref(), atoms, bonds),
                graph,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    fn model(conditional: bool) -> GraphVae {
        GraphVae::new(
            ModelConfig {
                k: 5,
                latent_dim: 4,
                conv_channels: vec![6, 6],
                pooling_hidden: 8,
                decoder_hidden: vec![16],
                conditional,
                ..Default::default()
            },
            2,
        )
        .unwrap()
    }

    fn vocab() -> (AtomVocabulary, BondVocabulary) {
        (AtomVocabulary::qm9(), BondVocabulary::default())
    }

    #[test]
    fn single_cell_decodes_the_origin() {
        let (a, b) = vocab();
        let m = model(false);
        let grid = traverse_plane(&m, None, 5.0, 1, None, &a, &b, 0).unwrap();
        assert_eq!(grid.cells.len(), 1);
        let direct = point_estimate(&m.decode(&[0.0; 4], None).unwrap(), PointEstimate::default());
        assert_eq!(grid.cells[0].graph, direct);
    }

    #[test]
    fn plane_is_orthonormal_and_reproducible() {
        let (a, b) = vocab();
        let m = model(false);
        let g1 = traverse_plane(&m, None, 5.0, 3, None, &a, &b, 9).unwrap();
        assert!(dot(&g1.dirs[0], &g1.dirs[1]).abs() < 1e-12);
        assert!((dot(&g1.dirs[0], &g1.dirs[0]) - 1.0).abs() < 1e-12);
        assert_eq!(g1.cells.len(), 9);
        assert_eq!(g1.cells[0].u, -5.0);
        assert_eq!(g1, traverse_plane(&m, None, 5.0, 3, None, &a, &b, 9).unwrap());
    }

    #[test]
    fn line_endpoints_and_midpoint() {
        let (a, b) = vocab();
        let m = model(false);
        let g1 = DiscreteGraph::from_parts(4, 4, &[0, 0, 2], &[(0, 1, 0), (1, 2, 0)]).unwrap();
        let g2 = DiscreteGraph::from_parts(4, 4, &[0, 1], &[(0, 1, 2)]).unwrap();
        let two = interpolate_line(&m, &g1, &g2, 2, &a, &b).unwrap();
        assert_eq!(two.len(), 2);
        let mu1 = m.encode(&g1, None).unwrap().mu;
        let mu2 = m.encode(&g2, None).unwrap().mu;
        assert_eq!(two[0].z, mu1);
        assert_eq!(two[1].z, mu2);
        let three = interpolate_line(&m, &g1, &g2, 3, &a, &b).unwrap();
        for l in 0..4 {
            assert_eq!(three[1].z[l], (mu1[l] + mu2[l]) / 2.0);
        }
        let same = interpolate_line(&m, &g1, &g1, 4, &a, &b).unwrap();
        assert!(same.windows(2).all(|w| w[0].graph == w[1].graph));
    }

    #[test]
    fn conditional_endpoints_must_share_a_label() {
        let (a, b) = vocab();
        let m = model(true);
        let g1 = DiscreteGraph::from_parts(4, 4, &[0, 2], &[(0, 1, 0)]).unwrap();
        let g2 = DiscreteGraph::from_parts(4, 4, &[0, 1], &[(0, 1, 0)]).unwrap();
        assert!(matches!(interpolate_line(&m, &g1, &g2, 3, &a, &b), Err(ModelError::Label(_))));
        assert_eq!(interpolate_line(&m, &g1, &g1, 3, &a, &b).unwrap().len(), 3);
    }
}
