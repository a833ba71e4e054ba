//! Decodes a line between two embeddings and a small grid over a random
//! latent plane, printing canonical keys and validity classes.

use graphvae::chem::{AtomVocabulary, BondVocabulary};
use graphvae::data::ExperimentConfig;
use graphvae::eval::{interpolate_line, traverse_plane, CellClass};
use graphvae::model::{GraphVae, Trainer};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = ExperimentConfig {
        synthetic_count: 400,
        latent_dim: 8,
        conv_channels: vec![16, 16],
        pooling_hidden: 32,
        decoder_hidden: vec![64, 64],
        ..Default::default()
    };
    let data: Vec<_> = cfg.dataset()?.records.into_iter().map(|r| r.graph).collect();
    let mut trainer = Trainer::new(GraphVae::new(cfg.model_config(), 0)?, cfg.train_config(), 1);
    for _ in 0..3 {
        trainer.epoch(&data)?;
    }
    let (atoms, bonds) = (AtomVocabulary::qm9(), BondVocabulary::default());

    for p in interpolate_line(trainer.model(), &data[0], &data[1], 5, &atoms, &bonds)? {
        println!("t={:.2} {:<18} {}", p.t, p.class.to_string(), p.key);
    }

    let plane = traverse_plane(trainer.model(), None, 3.0, 5, None, &atoms, &bonds, 4)?;
    for row in plane.cells.chunks(5) {
        let line: String = row
            .iter()
            .map(|c| if c.class == CellClass::Invalid { '.' } else { '#' })
            .collect();
        println!("{line}");
    }
    Ok(())
}
