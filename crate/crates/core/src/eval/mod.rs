//! Evaluation: generation quality, ELBO, latent traversals and the matching
//! robustness benchmark, plus CSV writers for their reports.

pub mod quality;
pub mod robustness;
pub mod traverse;

pub use quality::{
    aggregate, label_frequencies, quality_metrics, sample_and_score, sample_graphs, score_samples, LabelQuality,
    QualityReport,
};
pub use robustness::{
    add_noise, matching_robustness, robustness_trial, self_match_accuracy, MatchAccuracy, NoiseKind, RobustnessCell,
    RobustnessGrid, RobustnessReport,
};
pub use traverse::{classify, interpolate_line, orthonormal_pair, traverse_plane, CellClass, LinePoint, PlaneCell, PlaneGrid};

use std::io::Write;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::graph::DiscreteGraph;
use crate::model::{GraphVae, LossWeights, ModelError};

/// Mean single-sample ELBO and its parts over a set of graphs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ElboSummary {
    pub graphs: usize,
    pub elbo: f64,
    pub reconstruction: f64,
    pub kl: f64,
}

pub fn mean_elbo(
    model: &GraphVae,
    graphs: &[DiscreteGraph],
    weights: &LossWeights,
    iterations: usize,
    seed: u64,
) -> Result<ElboSummary, ModelError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sum = ElboSummary {
        graphs: graphs.len(),
        elbo: 0.0,
        reconstruction: 0.0,
        kl: 0.0,
    };
    for g in graphs {
        let y = model.config().conditional.then(|| g.label());
        let r = model.elbo(g, y.as_ref(), weights, iterations, &mut rng)?;
        sum.elbo += r.elbo;
        sum.reconstruction += r.reconstruction;
        sum.kl += r.kl;
    }
    if !graphs.is_empty() {
        let n = graphs.len() as f64;
        sum.elbo /= n;
        sum.reconstruction /= n;
        sum.kl /= n;
    }
    Ok(sum)
}

/// One row per label plus a final `all` row with the aggregate.
pub fn write_quality_csv<W: Write>(w: W, r: &QualityReport) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["label", "freq", "valid", "accurate", "unique", "novel"])?;
    for q in &r.per_label {
        let label = q.label.as_ref().map_or_else(|| "none".to_string(), |y| y.to_string());
        out.write_record([
            label,
            q.freq.to_string(),
            q.valid.to_string(),
            q.accurate.to_string(),
            q.unique.to_string(),
            q.novel.to_string(),
        ])?;
    }
    out.write_record([
        "all".to_string(),
        "1".to_string(),
        r.valid.to_string(),
        r.accurate.to_string(),
        r.unique.to_string(),
        r.novel.to_string(),
    ])?;
    out.flush()?;
    Ok(())
}

pub fn write_robustness_csv<W: Write>(w: W, r: &RobustnessReport) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["kind", "eps", "k", "accuracy", "trials"])?;
    for c in &r.cells {
        out.write_record([
            c.kind.to_string(),
            c.eps.to_string(),
            c.k.to_string(),
            c.accuracy.map_or_else(String::new, |a| a.to_string()),
            c.trials.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_plane_csv<W: Write>(w: W, grid: &PlaneGrid) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["row", "col", "u", "v", "key", "class"])?;
    for c in &grid.cells {
        out.write_record([
            c.row.to_string(),
            c.col.to_string(),
            c.u.to_string(),
            c.v.to_string(),
            c.key.clone(),
            c.class.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_line_csv<W: Write>(w: W, points: &[LinePoint]) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["step", "t", "key", "class"])?;
    for p in points {
        out.write_record([p.step.to_string(), p.t.to_string(), p.key.clone(), p.class.to_string()])?;
    }
    out.flush()?;
    Ok(())
}
