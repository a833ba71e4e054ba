//! Parameter storage and the handful of layers the model is built from.

use rand::Rng;

use crate::tensor::{BatchNormMode, BatchStats, Tape, Tensor, TensorError, Var};

/// Running statistics update momentum: `running = m·running + (1-m)·batch`.
pub const BN_MOMENTUM: f64 = 0.9;

/// Named trainable tensors plus named non-trainable buffers.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
    buffer_names: Vec<String>,
    buffers: Vec<Tensor>,
}

impl ParamStore {
    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> usize {
        self.names.push(name.into());
        self.values.push(value);
        self.values.len() - 1
    }

    pub fn add_buffer(&mut self, name: impl Into<String>, value: Tensor) -> usize {
        self.buffer_names.push(name.into());
        self.buffers.push(value);
        self.buffers.len() - 1
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[Tensor] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Tensor] {
        &mut self.values
    }

    pub fn buffer_names(&self) -> &[String] {
        &self.buffer_names
    }

    pub fn buffers(&self) -> &[Tensor] {
        &self.buffers
    }

    pub fn buffers_mut(&mut self) -> &mut [Tensor] {
        &mut self.buffers
    }

    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    /// Places every parameter on the tape as a trainable leaf.
    pub fn bind(&self, tape: &mut Tape) -> Vec<Var> {
        self.values.iter().map(|v| tape.param(v.clone())).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in batch norm; running statistics are updated.
    Train,
    /// Running statistics in batch norm.
    Eval,
}

/// Per-forward context: bound parameters, buffers and pending statistics.
pub struct Ctx<'a> {
    pub tape: &'a mut Tape,
    pub vars: &'a [Var],
    pub buffers: &'a [Tensor],
    pub mode: Mode,
    pub stats: Vec<(usize, BatchStats)>,
}

impl Ctx<'_> {
    pub fn var(&self, id: usize) -> Var {
        self.vars[id]
    }
}

/// Folds observed batch statistics into the running buffers.
pub fn apply_stats(buffers: &mut [Tensor], stats: &[(usize, BatchStats)]) {
    for (mean_buf, s) in stats {
        let (lo, hi) = buffers.split_at_mut(mean_buf + 1);
        let mean = lo[*mean_buf].data_mut();
        let var = hi[0].data_mut();
        for c in 0..mean.len() {
            mean[c] = BN_MOMENTUM * mean[c] + (1.0 - BN_MOMENTUM) * s.mean[c];
            var[c] = BN_MOMENTUM * var[c] + (1.0 - BN_MOMENTUM) * s.var[c];
        }
    }
}

fn uniform_init(rng: &mut impl Rng, shape: &[usize], bound: f64) -> Tensor {
    let len = shape.iter().product();
    let data = (0..len).map(|_| rng.random_range(-bound..=bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches length")
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub w: usize,
    pub b: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, inp: usize, out: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (inp.max(1) as f64).sqrt();
        let w = store.add(format!("{name}.weight"), uniform_init(rng, &[inp, out], bound));
        let b = store.add(format!("{name}.bias"), uniform_init(rng, &[out], bound));
        Self { w, b }
    }

    pub fn forward(&self, ctx: &mut Ctx<'_>, x: Var) -> Result<Var, TensorError> {
        let (w, b) = (ctx.var(self.w), ctx.var(self.b));
        let h = ctx.tape.matmul(x, w)?;
        ctx.tape.add_row(h, b)
    }
}

#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: usize,
    pub beta: usize,
    /// Buffer index of the running mean; the running variance follows it.
    pub mean_buf: usize,
}

impl BatchNorm {
    pub fn new(store: &mut ParamStore, name: &str, ch: usize) -> Self {
        let gamma = store.add(format!("{name}.gamma"), Tensor::ones(&[ch]));
        let beta = store.add(format!("{name}.beta"), Tensor::zeros(&[ch]));
        let mean_buf = store.add_buffer(format!("{name}.running_mean"), Tensor::zeros(&[ch]));
        store.add_buffer(format!("{name}.running_var"), Tensor::ones(&[ch]));
        Self { gamma, beta, mean_buf }
    }

    pub fn forward(&self, ctx: &mut Ctx<'_>, x: Var) -> Result<Var, TensorError> {
        let (g, b) = (ctx.var(self.gamma), ctx.var(self.beta));
        match ctx.mode {
            Mode::Train => {
                let (y, stats) = ctx.tape.batch_norm(x, g, b, BatchNormMode::Train)?;
                ctx.stats.push((self.mean_buf, stats.expect("training mode returns stats")));
                Ok(y)
            }
            Mode::Eval => {
                let mean = ctx.buffers[self.mean_buf].data();
                let var = ctx.buffers[self.mean_buf + 1].data();
                let (y, _) = ctx.tape.batch_norm(x, g, b, BatchNormMode::Inference { mean, var })?;
                Ok(y)
            }
        }
    }
}

/// Neighbor aggregation used inside the edge-conditioned convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    Mean,
    Sum,
}

/// Edge-conditioned graph convolution with a linear filter-generating
/// network over one-hot edge attributes: the weight applied to a message
/// from `j` to `i` is `W_{class(i,j)}`. Each node also receives a separate
/// self transform and a bias.
#[derive(Debug, Clone)]
pub struct EccConv {
    pub self_w: usize,
    pub edge_w: Vec<usize>,
    pub bias: usize,
}

/// Node-level edge lists of a (batched) graph for message passing.
#[derive(Debug, Clone, Default)]
pub struct EdgeLists {
    pub nodes: usize,
    /// `(dst, src)` per edge class.
    pub by_class: Vec<Vec<(usize, usize)>>,
    pub degree: Vec<usize>,
}

impl EccConv {
    pub fn new(store: &mut ParamStore, name: &str, inp: usize, out: usize, d_e: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (inp.max(1) as f64).sqrt();
        let self_w = store.add(format!("{name}.self"), uniform_init(rng, &[inp, out], bound));
        let edge_w = (0..d_e)
            .map(|t| store.add(format!("{name}.edge{t}"), uniform_init(rng, &[inp, out], bound)))
            .collect();
        let bias = store.add(format!("{name}.bias"), uniform_init(rng, &[out], bound));
        Self { self_w, edge_w, bias }
    }

    pub fn forward(&self, ctx: &mut Ctx<'_>, h: Var, edges: &EdgeLists, agg: Aggregation) -> Result<Var, TensorError> {
        let w = ctx.var(self.self_w);
        let lin = ctx.tape.matmul(h, w)?;
        let mut out = ctx.tape.add_row(lin, ctx.var(self.bias))?;
        for (class, list) in edges.by_class.iter().enumerate() {
            if list.is_empty() {
                continue;
            }
            let wt = ctx.var(self.edge_w[class]);
            let msg = ctx.tape.matmul(h, wt)?;
            let links = list
                .iter()
                .map(|&(d, s)| {
                    let w = match agg {
                        Aggregation::Mean => 1.0 / edges.degree[d] as f64,
                        Aggregation::Sum => 1.0,
                    };
                    (d, s, w)
                })
                .collect();
            let agg = ctx.tape.aggregate(msg, edges.nodes, links)?;
            out = ctx.tape.add(out, agg)?;
        }
        Ok(out)
    }
}

/// Gated sum pooling: `Σ_v sigmoid(gate(h_v)) ⊙ tanh(value(h_v))` per graph.
#[derive(Debug, Clone)]
pub struct GatedPool {
    pub gate: Linear,
    pub value: Linear,
}

impl GatedPool {
    pub fn new(store: &mut ParamStore, name: &str, inp: usize, out: usize, rng: &mut impl Rng) -> Self {
        Self {
            gate: Linear::new(store, &format!("{name}.gate"), inp, out, rng),
            value: Linear::new(store, &format!("{name}.value"), inp, out, rng),
        }
    }

    /// `segment[v]` is the graph of node `v`; returns `[graphs, out]`.
    pub fn forward(&self, ctx: &mut Ctx<'_>, h: Var, segment: &[usize], graphs: usize) -> Result<Var, TensorError> {
        let mut nonempty = vec![false; graphs];
        for &s in segment {
            nonempty[s] = true;
        }
        if let Some(g) = nonempty.iter().position(|&x| !x) {
            return Err(crate::tensor::TensorError::Shape {
                op: "gated_pool",
                detail: format!("graph {g} has no nodes"),
            });
        }
        let g = self.gate.forward(ctx, h)?;
        let g = ctx.tape.sigmoid(g)?;
        let v = self.value.forward(ctx, h)?;
        let v = ctx.tape.tanh(v)?;
        let gv = ctx.tape.mul(g, v)?;
        let links = segment.iter().enumerate().map(|(node, &s)| (s, node, 1.0)).collect();
        ctx.tape.aggregate(gv, graphs, links)
    }
}
