//! One optimization step and the epoch loop.
//!
//! Step order: encode, reparameterize, decode, match each sample against its
//! own reconstruction (in parallel), build constant targets from the
//! assignments, backpropagate, Adam update, fold batch-norm statistics.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::loss::{batched_kl, batched_loss};
use super::nn::{apply_stats, Ctx, Mode};
use super::{GraphVae, LossTargets, LossWeights, ModelError};
use crate::graph::{DiscreteGraph, GraphLabel};
use crate::matching::{match_batch, Assignment, DEFAULT_ITERATIONS};
use crate::tensor::{Adam, AdamConfig, BatchStats, Gradients, Tape, Tensor, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub matching_iterations: usize,
    pub adam: AdamConfig,
    pub weights: LossWeights,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 25,
            batch_size: 32,
            matching_iterations: DEFAULT_ITERATIONS,
            adam: AdamConfig::default(),
            weights: LossWeights::default(),
        }
    }
}

/// Batch means of the objective and its parts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepStats {
    pub loss: f64,
    pub reconstruction: f64,
    pub kl: f64,
}

/// A differentiable forward pass over one batch.
pub struct BatchObjective {
    pub tape: Tape,
    pub params: Vec<Var>,
    pub loss: Var,
    pub stats: StepStats,
    pub assignments: Vec<Assignment>,
    bn_stats: Vec<(usize, BatchStats)>,
}

impl BatchObjective {
    pub fn gradients(&self) -> Result<Gradients, ModelError> {
        Ok(self.tape.backward(self.loss)?)
    }
}

impl GraphVae {
    pub(crate) fn labels_for(&self, graphs: &[&DiscreteGraph]) -> Vec<Option<GraphLabel>> {
        graphs
            .iter()
            .map(|g| self.config.conditional.then(|| g.label()))
            .collect()
    }

    /// Builds the batch objective. `noise` is the `[B, c]` reparameterization
    /// draw (ignored by a deterministic encoder); `fixed` replaces matching
    /// with the given assignments.
    pub fn objective(
        &self,
        graphs: &[&DiscreteGraph],
        weights: &LossWeights,
        noise: &Tensor,
        fixed: Option<&[Assignment]>,
        mode: Mode,
        iterations: usize,
    ) -> Result<BatchObjective, ModelError> {
        let b = graphs.len();
        if b == 0 {
            return Err(ModelError::EmptyBatch);
        }
        let c = &self.config;
        let labels = self.labels_for(graphs);
        let label_refs: Vec<Option<&GraphLabel>> = labels.iter().map(Option::as_ref).collect();
        let mut tape = Tape::new();
        let params = self.store.bind(&mut tape);
        let mut ctx = Ctx {
            tape: &mut tape,
            vars: &params,
            buffers: self.store.buffers(),
            mode,
            stats: Vec::new(),
        };
        let (mu, logvar) = self.encode_vars(&mut ctx, graphs, &label_refs)?;
        let z = if c.deterministic_encoder {
            mu
        } else {
            if noise.shape() != [b, c.latent_dim] {
                return Err(ModelError::Config(format!(
                    "noise shape {:?}, expected [{b}, {}]",
                    noise.shape(),
                    c.latent_dim
                )));
            }
            let eps = ctx.tape.constant(noise.clone());
            let half = ctx.tape.scale(logvar, 0.5)?;
            let sigma = ctx.tape.exp(half)?;
            let spread = ctx.tape.mul(sigma, eps)?;
            ctx.tape.add(mu, spread)?
        };
        let out = self.decode_vars(&mut ctx, z, &label_refs)?;
        let bn_stats = std::mem::take(&mut ctx.stats);

        let assignments = match fixed {
            Some(xs) => {
                if xs.len() != b {
                    return Err(ModelError::Config("one fixed assignment per graph".into()));
                }
                xs.to_vec()
            }
            None => {
                let pgs = (0..b)
                    .map(|s| self.extract(&tape, &out, s))
                    .collect::<Result<Vec<_>, _>>()?;
                let pairs: Vec<_> = graphs.iter().copied().zip(pgs.iter()).collect();
                match_batch(&pairs, iterations)?
            }
        };
        let targets = graphs
            .iter()
            .zip(&assignments)
            .map(|(g, x)| LossTargets::new(g, x, c.d_e, c.d_n))
            .collect::<Result<Vec<_>, _>>()?;
        let recon = batched_loss(&mut tape, &out, &targets, weights, c.k, c.d_e, c.d_n)?;
        let kl = batched_kl(&mut tape, mu, logvar)?;
        let loss = if weights.kl_weight != 0.0 {
            let scaled = tape.scale(kl, weights.kl_weight)?;
            tape.add(recon, scaled)?
        } else {
            recon
        };
        let stats = StepStats {
            loss: tape.value(loss).item(),
            reconstruction: tape.value(recon).item(),
            kl: tape.value(kl).item(),
        };
        Ok(BatchObjective {
            tape,
            params,
            loss,
            stats,
            assignments,
            bn_stats,
        })
    }
}

/// Owns a model, its optimizer and the training random stream.
pub struct Trainer {
    model: GraphVae,
    adam: Adam,
    config: TrainConfig,
    rng: ChaCha8Rng,
}

impl Trainer {
    pub fn new(model: GraphVae, config: TrainConfig, seed: u64) -> Self {
        let shapes: Vec<Vec<usize>> = model.params().values().iter().map(|t| t.shape().to_vec()).collect();
        let refs: Vec<&[usize]> = shapes.iter().map(Vec::as_slice).collect();
        let adam = Adam::new(config.adam, &refs);
        Self {
            model,
            adam,
            config,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn model(&self) -> &GraphVae {
        &self.model
    }

    pub fn into_model(self) -> GraphVae {
        self.model
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn steps(&self) -> u64 {
        self.adam.steps()
    }

    /// Changes the step size in place; moment estimates are kept.
    pub fn set_learning_rate(&mut self, lr: f64) {
        self.adam.config.lr = lr;
        self.config.adam.lr = lr;
    }

    fn draw_noise(&mut self, b: usize) -> Tensor {
        let c = self.model.config().latent_dim;
        let data = (0..b * c).map(|_| self.rng.sample(StandardNormal)).collect();
        Tensor::new(vec![b, c], data).expect("shape matches")
    }

    /// One Adam step on the batch mean objective.
    pub fn step(&mut self, batch: &[&DiscreteGraph]) -> Result<StepStats, ModelError> {
        let noise = self.draw_noise(batch.len());
        let obj = self.model.objective(
            batch,
            &self.config.weights,
            &noise,
            None,
            Mode::Train,
            self.config.matching_iterations,
        )?;
        let grads = obj.gradients()?;
        let store = self.model.params_mut();
        let grads: Vec<Tensor> = obj
            .params
            .iter()
            .zip(store.values())
            .map(|(&v, t)| grads.get_or_zeros(v, t.shape()))
            .collect();
        self.adam.update(store.values_mut(), &grads)?;
        apply_stats(store.buffers_mut(), &obj.bn_stats);
        Ok(obj.stats)
    }

    /// One pass over `data` in a fresh random order. A trailing batch of a
    /// single graph is dropped because batch statistics need two samples.
    pub fn epoch(&mut self, data: &[DiscreteGraph]) -> Result<StepStats, ModelError> {
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut self.rng);
        let mut sum = StepStats {
            loss: 0.0,
            reconstruction: 0.0,
            kl: 0.0,
        };
        let mut batches = 0usize;
        for chunk in order.chunks(self.config.batch_size.max(1)) {
            if chunk.len() < 2 && order.len() > 1 {
                continue;
            }
            let batch: Vec<&DiscreteGraph> = chunk.iter().map(|&i| &data[i]).collect();
            let s = self.step(&batch)?;
            sum.loss += s.loss;
            sum.reconstruction += s.reconstruction;
            sum.kl += s.kl;
            batches += 1;
        }
        if batches == 0 {
            return Err(ModelError::EmptyBatch);
        }
        let n = batches as f64;
        Ok(StepStats {
            loss: sum.loss / n,
            reconstruction: sum.reconstruction / n,
            kl: sum.kl / n,
        })
    }
}

/// Mean `−log p(G|z)` of graphs under the model in inference mode, one
/// posterior sample each (or `z = μ` for a deterministic encoder).
pub fn mean_reconstruction(
    model: &GraphVae,
    data: &[DiscreteGraph],
    weights: &LossWeights,
    iterations: usize,
    rng: &mut impl Rng,
) -> Result<f64, ModelError> {
    if data.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    let mut total = 0.0;
    for g in data {
        let y = model.config().conditional.then(|| g.label());
        total += model.elbo(g, y.as_ref(), weights, iterations, rng)?.reconstruction;
    }
    Ok(total / data.len() as f64)
}
