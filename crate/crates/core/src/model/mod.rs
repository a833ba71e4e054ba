//! The graph variational autoencoder.
//!
//! Encoder: edge-conditioned convolutions (each followed by a residual
//! connection, batch norm and ReLU), gated sum pooling, and a linear head
//! producing the posterior mean and log-variance. Decoder: an MLP with batch
//! norm and ReLU feeding three heads for the upper triangles of `Ã`/`Ẽ` and
//! for `F̃`. Sigmoid gives `Ã`; softmax over the class axis gives `Ẽ` and
//! `F̃`. Symmetry comes from reading both `(a, b)` and `(b, a)` from the same
//! triangle entry.

mod loss;
pub mod nn;
mod train;

pub use loss::{reconstruction_loss, LossTargets, LossWeights, ReconLoss};
pub use nn::{Aggregation, Mode, ParamStore};
pub use train::{mean_reconstruction, BatchObjective, StepStats, TrainConfig, Trainer};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{DiscreteGraph, GraphError, GraphLabel, ProbabilisticGraph};
use crate::matching::MatchingError;
use crate::tensor::{Tape, Tensor, TensorError, Var};
use nn::{BatchNorm, Ctx, EccConv, EdgeLists, GatedPool, Linear};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Matching(#[from] MatchingError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("label error: {0}")]
    Label(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("empty batch")]
    EmptyBatch,
}

/// Architecture of encoder and decoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Maximum node count of decoded graphs.
    pub k: usize,
    pub d_e: usize,
    pub d_n: usize,
    /// Latent dimension `c`.
    pub latent_dim: usize,
    pub conv_channels: Vec<usize>,
    pub pooling_hidden: usize,
    pub decoder_hidden: Vec<usize>,
    pub conditional: bool,
    pub implicit_node_prob: bool,
    /// Use `z = μ` (no sampling); pairs with a zero KL weight.
    pub deterministic_encoder: bool,
    pub aggregation: Aggregation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            k: 9,
            d_e: 4,
            d_n: 4,
            latent_dim: 40,
            conv_channels: vec![32, 64],
            pooling_hidden: 128,
            decoder_hidden: vec![128, 256, 512],
            conditional: false,
            implicit_node_prob: false,
            deterministic_encoder: false,
            aggregation: Aggregation::Mean,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::Config(m.to_string()));
        if self.k == 0 || self.d_e == 0 || self.d_n == 0 || self.latent_dim == 0 {
            return bad("k, d_e, d_n and latent_dim must be positive");
        }
        if self.conv_channels.iter().chain(&self.decoder_hidden).any(|&c| c == 0) || self.pooling_hidden == 0 {
            return bad("channel counts must be positive");
        }
        if self.implicit_node_prob && self.k < 2 {
            return bad("implicit node probabilities need k >= 2");
        }
        Ok(())
    }

    fn triangle(&self) -> usize {
        self.k * (self.k + 1) / 2
    }

    fn label_dim(&self) -> usize {
        if self.conditional {
            self.d_n
        } else {
            0
        }
    }
}

/// Diagonal Gaussian `q(z|G)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentPosterior {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl LatentPosterior {
    /// `z = μ + σ ⊙ ε`, `ε ~ N(0, I)`.
    pub fn sample(&self, rng: &mut impl Rng) -> Vec<f64> {
        self.mu
            .iter()
            .zip(&self.sigma)
            .map(|(m, s)| {
                let e: f64 = rng.sample(StandardNormal);
                m + s * e
            })
            .collect()
    }

    /// `KL[q || N(0, I)] = ½ Σ (μ² + σ² − 1 − 2 ln σ)`.
    pub fn kl_divergence(&self) -> f64 {
        0.5 * self
            .mu
            .iter()
            .zip(&self.sigma)
            .map(|(m, s)| m * m + s * s - 1.0 - 2.0 * s.ln())
            .sum::<f64>()
    }
}

/// Tape handles of a decoded batch.
#[derive(Debug, Clone, Copy)]
pub struct DecodedVars {
    /// `[B, k, k]`
    pub adj: Var,
    /// `[B, k, k, d_e]`
    pub edge: Var,
    /// `[B, k, d_n]`
    pub node: Var,
}

#[derive(Debug, Clone)]
struct EncoderLayer {
    conv: EccConv,
    skip: Option<Linear>,
    bn: BatchNorm,
}

#[derive(Debug, Clone)]
struct Encoder {
    layers: Vec<EncoderLayer>,
    pool: GatedPool,
    head: Linear,
}

#[derive(Debug, Clone)]
struct Decoder {
    hidden: Vec<(Linear, BatchNorm)>,
    head_adj: Linear,
    head_edge: Linear,
    head_node: Linear,
}

/// Encoder + decoder with their parameters.
#[derive(Debug, Clone)]
pub struct GraphVae {
    config: ModelConfig,
    store: ParamStore,
    encoder: Encoder,
    decoder: Decoder,
}

/// Batched encoder input.
struct GraphBatch {
    feats: Tensor,
    segment: Vec<usize>,
    edges: EdgeLists,
    graphs: usize,
}

impl GraphBatch {
    fn new(graphs: &[&DiscreteGraph], d_n: usize, d_e: usize) -> Result<Self, ModelError> {
        let total: usize = graphs.iter().map(|g| g.n()).sum();
        let mut feats = vec![0.0; total * d_n];
        let mut segment = Vec::with_capacity(total);
        let mut by_class = vec![Vec::new(); d_e];
        let mut degree = vec![0; total];
        let mut offset = 0;
        for (gi, g) in graphs.iter().enumerate() {
            if g.d_n() != d_n || g.d_e() != d_e {
                return Err(ModelError::Config(format!(
                    "graph vocabularies ({}, {}) differ from model ({d_n}, {d_e})",
                    g.d_n(),
                    g.d_e()
                )));
            }
            if g.is_empty() {
                return Err(ModelError::Graph(GraphError::Invalid("cannot encode an empty graph".into())));
            }
            for i in 0..g.n() {
                feats[(offset + i) * d_n + g.node_class(i)] = 1.0;
                segment.push(gi);
                for (j, c) in g.neighbors(i) {
                    by_class[c].push((offset + i, offset + j));
                    degree[offset + i] += 1;
                }
            }
            offset += g.n();
        }
        Ok(Self {
            feats: Tensor::new(vec![total, d_n], feats)?,
            segment,
            edges: EdgeLists {
                nodes: total,
                by_class,
                degree,
            },
            graphs: graphs.len(),
        })
    }
}

impl GraphVae {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::default();
        let c = &config;

        let mut layers = Vec::new();
        let mut width = c.d_n;
        for (l, &out) in c.conv_channels.iter().enumerate() {
            let name = format!("enc.conv{l}");
            let conv = EccConv::new(&mut store, &name, width, out, c.d_e, &mut rng);
            let skip = (width != out).then(|| Linear::new(&mut store, &format!("{name}.skip"), width, out, &mut rng));
            let bn = BatchNorm::new(&mut store, &format!("{name}.bn"), out);
            layers.push(EncoderLayer { conv, skip, bn });
            width = out;
        }
        let pool = GatedPool::new(&mut store, "enc.pool", width + c.label_dim(), c.pooling_hidden, &mut rng);
        let head = Linear::new(&mut store, "enc.head", c.pooling_hidden, 2 * c.latent_dim, &mut rng);

        let mut hidden = Vec::new();
        let mut width = c.latent_dim + c.label_dim();
        for (l, &out) in c.decoder_hidden.iter().enumerate() {
            let lin = Linear::new(&mut store, &format!("dec.fc{l}"), width, out, &mut rng);
            let bn = BatchNorm::new(&mut store, &format!("dec.fc{l}.bn"), out);
            hidden.push((lin, bn));
            width = out;
        }
        let t = c.triangle();
        let head_adj = Linear::new(&mut store, "dec.adj", width, t, &mut rng);
        let head_edge = Linear::new(&mut store, "dec.edge", width, t * c.d_e, &mut rng);
        let head_node = Linear::new(&mut store, "dec.node", width, c.k * c.d_n, &mut rng);

        Ok(Self {
            config,
            store,
            encoder: Encoder { layers, pool, head },
            decoder: Decoder {
                hidden,
                head_adj,
                head_edge,
                head_node,
            },
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn check_label(&self, y: Option<&GraphLabel>) -> Result<(), ModelError> {
        match (self.config.conditional, y) {
            (true, None) => Err(ModelError::Label("conditional model needs a label".into())),
            (false, Some(_)) => Err(ModelError::Label("unconditional model takes no label".into())),
            (true, Some(l)) if l.0.len() != self.config.d_n => Err(ModelError::Label(format!(
                "label has {} entries, expected {}",
                l.0.len(),
                self.config.d_n
            ))),
            _ => Ok(()),
        }
    }

    fn label_tensor(&self, labels: &[Option<&GraphLabel>]) -> Result<Option<Tensor>, ModelError> {
        for y in labels {
            self.check_label(*y)?;
        }
        if !self.config.conditional {
            return Ok(None);
        }
        let rows: Vec<Vec<f64>> = labels.iter().map(|y| y.expect("checked").as_f64()).collect();
        Ok(Some(Tensor::from_rows(&rows)?))
    }

    /// Batched encoder on a tape; returns `(μ, log σ²)`, each `[B, c]`.
    pub(crate) fn encode_vars(
        &self,
        ctx: &mut Ctx<'_>,
        graphs: &[&DiscreteGraph],
        labels: &[Option<&GraphLabel>],
    ) -> Result<(Var, Var), ModelError> {
        let c = &self.config;
        let batch = GraphBatch::new(graphs, c.d_n, c.d_e)?;
        let ys = self.label_tensor(labels)?;
        let mut h = ctx.tape.constant(batch.feats.clone());
        for layer in &self.encoder.layers {
            let conv = layer.conv.forward(ctx, h, &batch.edges, c.aggregation)?;
            let skip = match &layer.skip {
                Some(lin) => lin.forward(ctx, h)?,
                None => h,
            };
            let sum = ctx.tape.add(conv, skip)?;
            let normed = layer.bn.forward(ctx, sum)?;
            h = ctx.tape.relu(normed)?;
        }
        if let Some(y) = ys {
            let d = y.shape()[1];
            let yv = ctx.tape.constant(y);
            let index = batch
                .segment
                .iter()
                .flat_map(|&g| (0..d).map(move |j| g * d + j))
                .collect();
            let per_node = ctx.tape.gather(yv, index, &[batch.segment.len(), d])?;
            h = ctx.tape.concat(&[h, per_node], 1)?;
        }
        let pooled = self.encoder.pool.forward(ctx, h, &batch.segment, batch.graphs)?;
        let out = self.encoder.head.forward(ctx, pooled)?;
        let mu = ctx.tape.slice_cols(out, 0, c.latent_dim)?;
        let logvar = ctx.tape.slice_cols(out, c.latent_dim, 2 * c.latent_dim)?;
        Ok((mu, logvar))
    }

    /// Batched decoder on a tape; `z` is `[B, c]`.
    pub(crate) fn decode_vars(
        &self,
        ctx: &mut Ctx<'_>,
        z: Var,
        labels: &[Option<&GraphLabel>],
    ) -> Result<DecodedVars, ModelError> {
        let c = &self.config;
        let b = ctx.tape.value(z).shape()[0];
        if ctx.tape.value(z).shape() != [b, c.latent_dim] {
            return Err(ModelError::Config(format!(
                "latent batch shape {:?}, expected [_, {}]",
                ctx.tape.value(z).shape(),
                c.latent_dim
            )));
        }
        if labels.len() != b {
            return Err(ModelError::Label("one label slot per latent row".into()));
        }
        let mut h = z;
        if let Some(y) = self.label_tensor(labels)? {
            let yv = ctx.tape.constant(y);
            h = ctx.tape.concat(&[h, yv], 1)?;
        }
        for (lin, bn) in &self.decoder.hidden {
            let x = lin.forward(ctx, h)?;
            let x = bn.forward(ctx, x)?;
            h = ctx.tape.relu(x)?;
        }
        let (k, d_e, d_n, t) = (c.k, c.d_e, c.d_n, c.triangle());
        let tri_index: Vec<usize> = (0..k * k).map(|ab| tri_pos(k, ab / k, ab % k)).collect();

        let adj_logits = self.decoder.head_adj.forward(ctx, h)?;
        let adj_tri = ctx.tape.sigmoid(adj_logits)?;
        let index = (0..b)
            .flat_map(|s| tri_index.iter().map(move |&x| s * t + x))
            .collect();
        let mut adj = ctx.tape.gather(adj_tri, index, &[b, k, k])?;
        if c.implicit_node_prob {
            let off_index = (0..b * k)
                .flat_map(|row| {
                    let a = row % k;
                    (0..k).filter(move |&x| x != a).map(move |x| row * k + x)
                })
                .collect();
            let off = ctx.tape.gather(adj, off_index, &[b * k, k - 1])?;
            let diag = ctx.tape.max_last(off)?;
            let flat = ctx.tape.reshape(adj, &[b * k * k])?;
            let both = ctx.tape.concat(&[flat, diag], 0)?;
            let index = (0..b * k * k)
                .map(|i| {
                    let (row, x) = (i / k, i % k);
                    if x == row % k {
                        b * k * k + row
                    } else {
                        i
                    }
                })
                .collect();
            adj = ctx.tape.gather(both, index, &[b, k, k])?;
        }

        let edge_logits = self.decoder.head_edge.forward(ctx, h)?;
        let index = (0..b)
            .flat_map(|s| {
                tri_index
                    .iter()
                    .flat_map(move |&x| (0..d_e).map(move |l| (s * t + x) * d_e + l))
            })
            .collect();
        let edge_full = ctx.tape.gather(edge_logits, index, &[b * k * k, d_e])?;
        let edge = ctx.tape.softmax(edge_full)?;
        let edge = ctx.tape.reshape(edge, &[b, k, k, d_e])?;

        let node_logits = self.decoder.head_node.forward(ctx, h)?;
        let node_rows = ctx.tape.reshape(node_logits, &[b * k, d_n])?;
        let node = ctx.tape.softmax(node_rows)?;
        let node = ctx.tape.reshape(node, &[b, k, d_n])?;
        Ok(DecodedVars { adj, edge, node })
    }

    /// Reads sample `s` of a decoded batch into a [`ProbabilisticGraph`].
    pub(crate) fn extract(&self, tape: &Tape, out: &DecodedVars, s: usize) -> Result<ProbabilisticGraph, ModelError> {
        let (k, d_e, d_n) = (self.config.k, self.config.d_e, self.config.d_n);
        let slice = |v: Var, len: usize| tape.value(v).data()[s * len..(s + 1) * len].to_vec();
        Ok(ProbabilisticGraph::from_parts(
            k,
            d_e,
            d_n,
            slice(out.adj, k * k),
            slice(out.edge, k * k * d_e),
            slice(out.node, k * d_n),
        )?)
    }

    fn eval_ctx<'a>(&'a self, tape: &'a mut Tape, vars: &'a [Var]) -> Ctx<'a> {
        Ctx {
            tape,
            vars,
            buffers: self.store.buffers(),
            mode: Mode::Eval,
            stats: Vec::new(),
        }
    }

    /// Posterior of a single graph with batch norm in inference mode.
    pub fn encode(&self, g: &DiscreteGraph, y: Option<&GraphLabel>) -> Result<LatentPosterior, ModelError> {
        self.check_label(y)?;
        let mut tape = Tape::new();
        let vars = self.store.bind(&mut tape);
        let mut ctx = self.eval_ctx(&mut tape, &vars);
        let (mu, logvar) = self.encode_vars(&mut ctx, &[g], &[y])?;
        let mu = tape.value(mu).data().to_vec();
        let sigma = tape.value(logvar).data().iter().map(|lv| (0.5 * lv).exp()).collect();
        Ok(LatentPosterior { mu, sigma })
    }

    /// Probabilistic graph for one latent point (inference-mode batch norm).
    pub fn decode(&self, z: &[f64], y: Option<&GraphLabel>) -> Result<ProbabilisticGraph, ModelError> {
        Ok(self.decode_many(&[z.to_vec()], &[y])?.remove(0))
    }

    /// Decodes several latent points at once.
    pub fn decode_many(
        &self,
        zs: &[Vec<f64>],
        labels: &[Option<&GraphLabel>],
    ) -> Result<Vec<ProbabilisticGraph>, ModelError> {
        if zs.is_empty() {
            return Ok(Vec::new());
        }
        if zs.iter().any(|z| z.len() != self.config.latent_dim) {
            return Err(ModelError::Config(format!("latent vectors must have length {}", self.config.latent_dim)));
        }
        let mut tape = Tape::new();
        let vars = self.store.bind(&mut tape);
        let zt = Tensor::from_rows(zs)?;
        let mut ctx = self.eval_ctx(&mut tape, &vars);
        let zv = ctx.tape.constant(zt);
        let out = self.decode_vars(&mut ctx, zv, labels)?;
        (0..zs.len()).map(|s| self.extract(&tape, &out, s)).collect()
    }

    /// Single-sample ELBO, `−(reconstruction loss + KL)`, with the graph
    /// matched against its own reconstruction.
    pub fn elbo(
        &self,
        g: &DiscreteGraph,
        y: Option<&GraphLabel>,
        weights: &LossWeights,
        iterations: usize,
        rng: &mut impl Rng,
    ) -> Result<ElboReport, ModelError> {
        let post = self.encode(g, y)?;
        let z = if self.config.deterministic_encoder {
            post.mu.clone()
        } else {
            post.sample(rng)
        };
        let pg = self.decode(&z, y)?;
        let x = crate::matching::match_graphs(g, &pg, iterations)?;
        let recon = reconstruction_loss(g, &pg, &x, weights)?.total;
        let kl = post.kl_divergence();
        Ok(ElboReport {
            reconstruction: recon,
            kl,
            elbo: -(recon + kl),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ElboReport {
    /// `−log p(G|z)`.
    pub reconstruction: f64,
    pub kl: f64,
    pub elbo: f64,
}

/// Position of `(a, b)` in the row-major upper triangle (diagonal included).
fn tri_pos(k: usize, a: usize, b: usize) -> usize {
    let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
    lo * k - lo * lo.saturating_sub(1) / 2 + hi - lo
}

#[cfg(test)]
mod tests;
