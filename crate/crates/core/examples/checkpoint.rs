//! Saves a model with metadata and restores a bit-identical copy.

use graphvae::checkpoint;
use graphvae::model::{GraphVae, ModelConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let model = GraphVae::new(ModelConfig::default(), 42)?;
    let path = std::env::temp_dir().join("graphvae_example.ckpt");
    checkpoint::save(&model, &serde_json::json!({ "note": "untrained" }), &path)?;

    let (restored, meta) = checkpoint::load(&path)?;
    let z = vec![0.25; model.config().latent_dim];
    let same = model.decode(&z, None)? == restored.decode(&z, None)?;
    println!("{} bytes, meta {meta}, identical decoding: {same}", std::fs::metadata(&path)?.len());
    Ok(())
}
