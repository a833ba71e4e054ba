//! Scores prior samples of a briefly trained model for validity,
//! uniqueness and novelty against its training set.

use std::collections::HashSet;

use graphvae::chem::{canonical_key, AtomVocabulary, BondVocabulary};
use graphvae::data::ExperimentConfig;
use graphvae::eval::quality_metrics;
use graphvae::model::{GraphVae, Trainer};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = ExperimentConfig {
        synthetic_count: 500,
        latent_dim: 16,
        conv_channels: vec![16, 16],
        pooling_hidden: 32,
        decoder_hidden: vec![64, 64],
        ..Default::default()
    };
    let data: Vec<_> = cfg.dataset()?.records.into_iter().map(|r| r.graph).collect();
    let index: HashSet<String> = data.iter().map(canonical_key).collect();

    let mut trainer = Trainer::new(GraphVae::new(cfg.model_config(), 0)?, cfg.train_config(), 1);
    for _ in 0..3 {
        trainer.epoch(&data)?;
    }
    let atoms = AtomVocabulary::qm9();
    let r = quality_metrics(trainer.model(), &[], 500, &index, &atoms, &BondVocabulary::default(), 3)?;
    println!(
        "valid {:.3}  unique {:.3}  novel {:.3}  ({} samples, {} known keys)",
        r.valid, r.unique, r.novel, r.n_s, r.index_size
    );
    Ok(())
}
