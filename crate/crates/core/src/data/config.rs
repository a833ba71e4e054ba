//! Flat TOML experiment configuration.
//!
//! Every key is optional; a bare file yields the QM9 setup (k = 9, four atom
//! and bond classes, c = 40, batch 32, 25 epochs, Adam with lr 1e-3 and
//! β1 = 0.5, 75 matching iterations).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::chem::{AtomVocabulary, BondVocabulary};
use crate::matching::DEFAULT_ITERATIONS;
use crate::model::{Aggregation, LossWeights, ModelConfig, TrainConfig};
use crate::tensor::AdamConfig;

use super::DataError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// `.sdf` or `.json`; empty means "synthesize".
    pub dataset: PathBuf,
    /// Molecules to synthesize when no dataset path is given.
    pub synthetic_count: usize,
    /// `qm9` or `zinc`.
    pub vocabulary: String,
    pub k: usize,
    pub d_e: usize,
    pub d_n: usize,

    pub latent_dim: usize,
    pub conv_channels: Vec<usize>,
    pub pooling_hidden: usize,
    pub aggregation: Aggregation,
    pub decoder_hidden: Vec<usize>,

    #[serde(rename = "lambda_A")]
    pub lambda_a: f64,
    #[serde(rename = "lambda_E")]
    pub lambda_e: f64,
    #[serde(rename = "lambda_F")]
    pub lambda_f: f64,
    pub kl_weight: f64,

    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub matching_iterations: usize,
    pub seed: u64,

    pub conditional: bool,
    pub implicit_node_prob: bool,
    /// Deterministic encoder and no KL term.
    pub unregularized: bool,

    pub test_size: usize,
    pub validation_size: usize,
    /// Latent samples drawn for generation metrics.
    pub n_samples: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let model = ModelConfig::default();
        let adam = AdamConfig::default();
        let w = LossWeights::default();
        Self {
            dataset: PathBuf::new(),
            synthetic_count: 30_000,
            vocabulary: "qm9".into(),
            k: model.k,
            d_e: model.d_e,
            d_n: model.d_n,
            latent_dim: model.latent_dim,
            conv_channels: model.conv_channels,
            pooling_hidden: model.pooling_hidden,
            aggregation: model.aggregation,
            decoder_hidden: model.decoder_hidden,
            lambda_a: w.lambda_a,
            lambda_e: w.lambda_e,
            lambda_f: w.lambda_f,
            kl_weight: w.kl_weight,
            lr: adam.lr,
            beta1: adam.beta1,
            beta2: adam.beta2,
            adam_eps: adam.eps,
            epochs: 25,
            batch_size: 32,
            matching_iterations: DEFAULT_ITERATIONS,
            seed: 0,
            conditional: false,
            implicit_node_prob: false,
            unregularized: false,
            test_size: 10_000,
            validation_size: 10_000,
            n_samples: 1000,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, DataError> {
        let cfg: Self = toml::from_str(text).map_err(|e| DataError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, DataError> {
        let text = std::fs::read_to_string(path).map_err(|e| DataError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("flat config serializes")
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let atoms = self.atoms()?;
        if atoms.len() != self.d_n {
            return Err(DataError::Config(format!(
                "d_n = {} but the {} vocabulary has {} elements",
                self.d_n,
                self.vocabulary,
                atoms.len()
            )));
        }
        if BondVocabulary::default().len() != self.d_e {
            return Err(DataError::Config(format!("d_e = {} but the bond vocabulary has 4 classes", self.d_e)));
        }
        if self.batch_size == 0 {
            return Err(DataError::Config("batch_size must be positive".into()));
        }
        let w = self.loss_weights();
        if [w.lambda_a, w.lambda_e, w.lambda_f, w.kl_weight].iter().any(|&x| x.is_nan() || x < 0.0) {
            return Err(DataError::Config("loss weights must be non-negative".into()));
        }
        self.model_config().validate().map_err(|e| DataError::Config(e.to_string()))
    }

    pub fn atoms(&self) -> Result<AtomVocabulary, DataError> {
        AtomVocabulary::by_name(&self.vocabulary)
            .ok_or_else(|| DataError::Config(format!("unknown vocabulary {:?}", self.vocabulary)))
    }

    /// Loads `dataset`, or synthesizes `synthetic_count` molecules of at
    /// most `k` atoms from `seed` when the path is empty.
    pub fn dataset(&self) -> Result<super::Dataset, DataError> {
        let atoms = self.atoms()?;
        let bonds = BondVocabulary::default();
        if self.dataset.as_os_str().is_empty() {
            let synth = super::SynthConfig {
                max_atoms: self.k.min(super::SynthConfig::default().max_atoms),
                element_weights: if atoms == AtomVocabulary::qm9() {
                    super::SynthConfig::default().element_weights
                } else {
                    vec![1.0; atoms.len()]
                },
                ..Default::default()
            };
            let records = super::synthesize(self.synthetic_count, &synth, &atoms, &bonds, self.seed);
            Ok(super::Dataset::from_records(records, self.k, &atoms, &bonds))
        } else {
            super::Dataset::load(&self.dataset, self.k, &atoms, &bonds)
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            k: self.k,
            d_e: self.d_e,
            d_n: self.d_n,
            latent_dim: self.latent_dim,
            conv_channels: self.conv_channels.clone(),
            pooling_hidden: self.pooling_hidden,
            decoder_hidden: self.decoder_hidden.clone(),
            conditional: self.conditional,
            implicit_node_prob: self.implicit_node_prob,
            deterministic_encoder: self.unregularized,
            aggregation: self.aggregation,
        }
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            lambda_a: self.lambda_a,
            lambda_e: self.lambda_e,
            lambda_f: self.lambda_f,
            kl_weight: if self.unregularized { 0.0 } else { self.kl_weight },
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            matching_iterations: self.matching_iterations,
            adam: AdamConfig {
                lr: self.lr,
                beta1: self.beta1,
                beta2: self.beta2,
                eps: self.adam_eps,
            },
            weights: self.loss_weights(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bare_file_is_the_default_setup() {
        let c = ExperimentConfig::from_toml("").unwrap();
        assert_eq!(c, ExperimentConfig::default());
        assert_eq!((c.k, c.d_e, c.d_n, c.latent_dim, c.batch_size, c.epochs), (9, 4, 4, 40, 32, 25));
        assert_eq!(c.train_config().adam.beta1, 0.5);
        assert_eq!(c.matching_iterations, 75);
    }

    #[test]
    fn toml_round_trip_and_flags() {
        let c = ExperimentConfig::from_toml(
            "vocabulary = \"zinc\"\nd_n = 9\nk = 20\nunregularized = true\nlambda_E = 2.0\nconv_channels = [8, 8]\n",
        )
        .unwrap();
        assert_eq!(c.loss_weights().kl_weight, 0.0);
        assert_eq!(c.loss_weights().lambda_e, 2.0);
        assert!(c.model_config().deterministic_encoder);
        assert_eq!(ExperimentConfig::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn bad_configs_are_named() {
        assert!(ExperimentConfig::from_toml("vocabulary = \"zinc\"").is_err());
        assert!(ExperimentConfig::from_toml("nonsense = 1").is_err());
        assert!(ExperimentConfig::from_toml("lambda_A = -1.0").is_err());
    }
}
