//! Validity, accuracy, uniqueness and novelty of decoded samples.

use std::collections::HashSet;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::chem::{canonical_key, check_valid, AtomVocabulary, BondVocabulary};
use crate::graph::{point_estimate, DiscreteGraph, GraphLabel, PointEstimate};
use crate::model::{GraphVae, ModelError};

/// Metrics of one label (or of all samples of an unconditional model).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LabelQuality {
    /// `None` for an unconditional model.
    pub label: Option<GraphLabel>,
    pub freq: f64,
    pub samples: usize,
    pub valid: f64,
    pub accurate: f64,
    pub unique: f64,
    pub novel: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QualityReport {
    pub per_label: Vec<LabelQuality>,
    /// Frequency-weighted sums of the per-label values.
    pub valid: f64,
    pub accurate: f64,
    pub unique: f64,
    pub novel: f64,
    /// Samples per label.
    pub n_s: usize,
    /// Number of canonical keys novelty is measured against.
    pub index_size: usize,
}

/// Scores samples decoded for `label`. A sample is valid when it passes the
/// checker and accurate when it is also of the requested label; with no
/// label every valid sample is accurate.
pub fn score_samples(
    samples: &[DiscreteGraph],
    label: Option<&GraphLabel>,
    freq: f64,
    index: &HashSet<String>,
    atoms: &AtomVocabulary,
    bonds: &BondVocabulary,
) -> LabelQuality {
    let n_s = samples.len();
    let mut valid = 0usize;
    let mut correct: Vec<String> = Vec::new();
    for g in samples {
        if !check_valid(g, atoms, bonds).is_ok_and(|v| v.is_valid()) {
            continue;
        }
        valid += 1;
        if label.is_none_or(|y| g.label() == *y) {
            correct.push(canonical_key(g));
        }
    }
    let frac = |x: usize| if n_s == 0 { 0.0 } else { x as f64 / n_s as f64 };
    let distinct: HashSet<&String> = correct.iter().collect();
    let (unique, novel) = if correct.is_empty() {
        (0.0, 0.0)
    } else {
        let known = distinct.iter().filter(|k| index.contains(k.as_str())).count();
        (
            distinct.len() as f64 / correct.len() as f64,
            1.0 - known as f64 / distinct.len() as f64,
        )
    };
    LabelQuality {
        label: label.cloned(),
        freq,
        samples: n_s,
        valid: frac(valid),
        accurate: frac(correct.len()),
        unique,
        novel,
    }
}

/// Frequency-weighted aggregate of per-label results.
pub fn aggregate(per_label: Vec<LabelQuality>, n_s: usize, index_size: usize) -> QualityReport {
    let sum = |f: fn(&LabelQuality) -> f64| per_label.iter().map(|q| q.freq * f(q)).sum();
    QualityReport {
        valid: sum(|q| q.valid),
        accurate: sum(|q| q.accurate),
        unique: sum(|q| q.unique),
        novel: sum(|q| q.novel),
        per_label,
        n_s,
        index_size,
    }
}

/// Decodes `n` prior samples into point estimates. All latent vectors are
/// drawn up front, so the result does not depend on the thread count.
pub fn sample_graphs(
    model: &GraphVae,
    n: usize,
    label: Option<&GraphLabel>,
    rng: &mut impl Rng,
) -> Result<Vec<DiscreteGraph>, ModelError> {
    let c = model.config().latent_dim;
    let zs: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..c).map(|_| rng.sample(StandardNormal)).collect())
        .collect();
    let chunks: Vec<Vec<DiscreteGraph>> = zs
        .par_chunks(256)
        .map(|chunk| {
            let labels = vec![label; chunk.len()];
            let pgs = model.decode_many(chunk, &labels)?;
            Ok(pgs.iter().map(|pg| point_estimate(pg, PointEstimate::default())).collect())
        })
        .collect::<Result<_, ModelError>>()?;
    Ok(chunks.into_iter().flatten().collect())
}

/// Samples `n_s` graphs per label and scores them. `labels` holds
/// `(label, frequency)` pairs for a conditional model and is ignored
/// otherwise.
pub fn quality_metrics(
    model: &GraphVae,
    labels: &[(GraphLabel, f64)],
    n_s: usize,
    index: &HashSet<String>,
    atoms: &AtomVocabulary,
    bonds: &BondVocabulary,
    seed: u64,
) -> Result<QualityReport, ModelError> {
    Ok(sample_and_score(model, labels, n_s, index, atoms, bonds, seed)?.0)
}

/// [`quality_metrics`] that also returns the decoded samples, grouped in
/// the order of `QualityReport::per_label`.
pub fn sample_and_score(
    model: &GraphVae,
    labels: &[(GraphLabel, f64)],
    n_s: usize,
    index: &HashSet<String>,
    atoms: &AtomVocabulary,
    bonds: &BondVocabulary,
    seed: u64,
) -> Result<(QualityReport, Vec<Vec<DiscreteGraph>>), ModelError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut per_label = Vec::new();
    let mut all = Vec::new();
    if model.config().conditional {
        for (y, freq) in labels {
            let samples = sample_graphs(model, n_s, Some(y), &mut rng)?;
            per_label.push(score_samples(&samples, Some(y), *freq, index, atoms, bonds));
            all.push(samples);
        }
    } else {
        let samples = sample_graphs(model, n_s, None, &mut rng)?;
        per_label.push(score_samples(&samples, None, 1.0, index, atoms, bonds));
        all.push(samples);
    }
    Ok((aggregate(per_label, n_s, index.len()), all))
}

/// Label frequencies of a dataset, most frequent first (ties by label).
pub fn label_frequencies<'a>(graphs: impl IntoIterator<Item = &'a DiscreteGraph>) -> Vec<(GraphLabel, f64)> {
    let mut counts: std::collections::BTreeMap<Vec<u32>, usize> = Default::default();
    let mut total = 0usize;
    for g in graphs {
        *counts.entry(g.label().0).or_default() += 1;
        total += 1;
    }
    let mut out: Vec<(GraphLabel, f64)> = counts
        .into_iter()
        .map(|(y, c)| (GraphLabel(y), c as f64 / total as f64))
        .collect();
    out.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0 .0.cmp(&b.0 .0)));
    out
}
