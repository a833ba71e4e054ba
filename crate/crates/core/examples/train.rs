//! Trains a small unconditional model on synthetic molecules and reports
//! the training loss and held-out ELBO per epoch.

use graphvae::data::{split, ExperimentConfig};
use graphvae::eval::mean_elbo;
use graphvae::model::{GraphVae, Trainer};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = ExperimentConfig {
        synthetic_count: 600,
        test_size: 0,
        validation_size: 100,
        latent_dim: 16,
        conv_channels: vec![16, 16],
        pooling_hidden: 32,
        decoder_hidden: vec![64, 64],
        epochs: 5,
        ..Default::default()
    };
    let ds = cfg.dataset()?;
    let sp = split(ds.records.len(), cfg.seed, cfg.test_size, cfg.validation_size)?;
    let (train, validation) = (ds.graphs(&sp.train), ds.graphs(&sp.validation));

    let mut trainer = Trainer::new(GraphVae::new(cfg.model_config(), 0)?, cfg.train_config(), 1);
    for epoch in 1..=cfg.epochs {
        let s = trainer.epoch(&train)?;
        let v = mean_elbo(trainer.model(), &validation, &cfg.loss_weights(), cfg.matching_iterations, 0)?;
        println!(
            "epoch {epoch}: train loss {:.4} (reconstruction {:.4}, kl {:.4}), validation elbo {:.4}",
            s.loss, s.reconstruction, s.kl, v.elbo
        );
    }
    Ok(())
}
