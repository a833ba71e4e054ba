//! Wengert-list reverse-mode differentiation.
//!
//! A [`Tape`] owns every intermediate value of one forward pass. Nodes are
//! appended in evaluation order, so the node list is already a topological
//! order and [`Tape::backward`] is a single reverse sweep that visits each
//! node once.

use super::{matmul_at_raw, matmul_bt_raw, matmul_raw, shape_err, Tensor, TensorError};

/// Lower clamp applied to arguments of logarithms.
pub const LOG_FLOOR: f64 = 1e-15;

const BN_EPS: f64 = 1e-5;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy)]
pub enum BatchNormMode<'a> {
    /// Normalize with statistics of the current rows.
    Train,
    /// Normalize with externally tracked running statistics.
    Inference { mean: &'a [f64], var: &'a [f64] },
}

/// Per-channel batch statistics observed during a training-mode batch norm.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    AddRow(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    Concat {
        inputs: Vec<usize>,
        widths: Vec<usize>,
        outer: usize,
    },
    Gather {
        input: usize,
        index: Vec<usize>,
    },
    Aggregate {
        input: usize,
        cols: usize,
        links: Vec<(usize, usize, f64)>,
    },
    Relu(usize),
    Sigmoid(usize),
    Tanh(usize),
    Exp(usize),
    Log(usize),
    Softmax(usize),
    BatchNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        train: bool,
    },
    Sum(usize),
    Mean(usize),
    SumRows(usize),
    MaxLast {
        input: usize,
        argmax: Vec<usize>,
    },
    Bce {
        p: usize,
        target: Vec<f64>,
    },
    DotConst {
        input: usize,
        weights: Vec<f64>,
    },
    Reshape(usize),
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Recording of one forward computation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar root with respect to every node that needed one.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, or zeros of `shape` when `v` did not influence the root.
    pub fn get_or_zeros(&self, v: Var, shape: &[usize]) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(shape))
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool, name: &'static str) -> Result<Var, TensorError> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite { op: name });
        }
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn ng(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Matrix product of two 2-D tensors.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(shape_err("matmul", format!("{:?} x {:?}", sa, sb)));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let out = matmul_raw(self.data(a), self.data(b), m, k, n);
        let ng = self.ng(&[a, b]);
        self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a.0, b.0), ng, "matmul")
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), TensorError> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(
                op,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let data = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor {
            shape: self.shape(a).to_vec(),
            data,
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.same_shape("add", a, b)?;
        let out = self.zip_with(a, b, |x, y| x + y);
        let ng = self.ng(&[a, b]);
        self.push(out, Op::Add(a.0, b.0), ng, "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.same_shape("sub", a, b)?;
        let out = self.zip_with(a, b, |x, y| x - y);
        let ng = self.ng(&[a, b]);
        self.push(out, Op::Sub(a.0, b.0), ng, "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.same_shape("mul", a, b)?;
        let out = self.zip_with(a, b, |x, y| x * y);
        let ng = self.ng(&[a, b]);
        self.push(out, Op::Mul(a.0, b.0), ng, "mul")
    }

    /// Adds the vector `row` (length = last axis of `a`) to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var, TensorError> {
        let (_, cols) = self.value(a).as_matrix_dims();
        if self.value(row).len() != cols {
            return Err(shape_err(
                "add_row",
                format!("{:?} + {:?}", self.shape(a), self.shape(row)),
            ));
        }
        let r = self.data(row);
        let data = self
            .data(a)
            .iter()
            .enumerate()
            .map(|(i, &x)| x + r[i % cols])
            .collect();
        let out = Tensor {
            shape: self.shape(a).to_vec(),
            data,
        };
        let ng = self.ng(&[a, row]);
        self.push(out, Op::AddRow(a.0, row.0), ng, "add_row")
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var, TensorError> {
        let out = self.value(a).map(|x| x * c);
        let ng = self.ng(&[a]);
        self.push(out, Op::Scale(a.0, c), ng, "scale")
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var, TensorError> {
        let out = self.value(a).map(|x| x + c);
        let ng = self.ng(&[a]);
        self.push(out, Op::AddScalar(a.0), ng, "add_scalar")
    }

    /// Concatenates along `axis`. All inputs must agree on every other axis.
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var, TensorError> {
        let first = inputs
            .first()
            .ok_or_else(|| shape_err("concat", "no inputs"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(shape_err("concat", format!("axis {} for {:?}", axis, base)));
        }
        let mut widths = Vec::with_capacity(inputs.len());
        let mut axis_total = 0;
        for &v in inputs {
            let s = self.shape(v);
            if s.len() != base.len()
                || s.iter()
                    .zip(&base)
                    .enumerate()
                    .any(|(d, (x, y))| d != axis && x != y)
            {
                return Err(shape_err("concat", format!("{:?} vs {:?}", s, base)));
            }
            axis_total += s[axis];
            widths.push(s[axis..].iter().product::<usize>());
        }
        let outer: usize = base[..axis].iter().product();
        let mut data = Vec::with_capacity(outer * widths.iter().sum::<usize>());
        for o in 0..outer {
            for (&v, &w) in inputs.iter().zip(&widths) {
                data.extend_from_slice(&self.data(v)[o * w..(o + 1) * w]);
            }
        }
        let mut shape = base;
        shape[axis] = axis_total;
        let ng = self.ng(inputs);
        let op = Op::Concat {
            inputs: inputs.iter().map(|v| v.0).collect(),
            widths,
            outer,
        };
        self.push(Tensor::new(shape, data)?, op, ng, "concat")
    }

    /// `out.flat[i] = a.flat[index[i]]`, reshaped to `shape`.
    pub fn gather(&mut self, a: Var, index: Vec<usize>, shape: &[usize]) -> Result<Var, TensorError> {
        let src = self.data(a);
        if shape.iter().product::<usize>() != index.len() {
            return Err(shape_err("gather", format!("{} indices for {:?}", index.len(), shape)));
        }
        let mut data = Vec::with_capacity(index.len());
        for &i in &index {
            match src.get(i) {
                Some(&v) => data.push(v),
                None => {
                    return Err(TensorError::Index {
                        op: "gather",
                        index: i,
                        len: src.len(),
                    })
                }
            }
        }
        let ng = self.ng(&[a]);
        self.push(
            Tensor::new(shape.to_vec(), data)?,
            Op::Gather { input: a.0, index },
            ng,
            "gather",
        )
    }

    /// Column range `[start, end)` of a 2-D tensor.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var, TensorError> {
        let s = self.shape(a);
        if s.len() != 2 || start > end || end > s[1] {
            return Err(shape_err("slice_cols", format!("{:?}[{}..{}]", s, start, end)));
        }
        let (rows, cols) = (s[0], s[1]);
        let index = (0..rows)
            .flat_map(|r| (start..end).map(move |c| r * cols + c))
            .collect();
        self.gather(a, index, &[rows, end - start])
    }

    /// Sparse row aggregation: `out[dst] += w * a[src]` for each `(dst, src, w)`.
    pub fn aggregate(
        &mut self,
        a: Var,
        out_rows: usize,
        links: Vec<(usize, usize, f64)>,
    ) -> Result<Var, TensorError> {
        let s = self.shape(a);
        if s.len() != 2 {
            return Err(shape_err("aggregate", format!("{:?}", s)));
        }
        let (rows, cols) = (s[0], s[1]);
        let src = self.data(a);
        let mut data = vec![0.0; out_rows * cols];
        for &(d, sidx, w) in &links {
            if d >= out_rows || sidx >= rows {
                return Err(TensorError::Index {
                    op: "aggregate",
                    index: d.max(sidx),
                    len: rows.min(out_rows),
                });
            }
            let from = &src[sidx * cols..(sidx + 1) * cols];
            for (o, &v) in data[d * cols..(d + 1) * cols].iter_mut().zip(from) {
                *o += w * v;
            }
        }
        let ng = self.ng(&[a]);
        self.push(
            Tensor::new(vec![out_rows, cols], data)?,
            Op::Aggregate {
                input: a.0,
                cols,
                links,
            },
            ng,
            "aggregate",
        )
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op, name: &'static str) -> Result<Var, TensorError> {
        let out = self.value(a).map(f);
        let ng = self.ng(&[a]);
        self.push(out, op, ng, name)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, TensorError> {
        self.unary(a, |x| x.max(0.0), Op::Relu(a.0), "relu")
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, TensorError> {
        self.unary(a, sigmoid, Op::Sigmoid(a.0), "sigmoid")
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var, TensorError> {
        self.unary(a, f64::tanh, Op::Tanh(a.0), "tanh")
    }

    pub fn exp(&mut self, a: Var) -> Result<Var, TensorError> {
        self.unary(a, f64::exp, Op::Exp(a.0), "exp")
    }

    /// Natural log; arguments are clamped below at [`LOG_FLOOR`].
    pub fn log(&mut self, a: Var) -> Result<Var, TensorError> {
        self.unary(a, |x| x.max(LOG_FLOOR).ln(), Op::Log(a.0), "log")
    }

    /// Softmax over the last axis, computed with max subtraction.
    pub fn softmax(&mut self, a: Var) -> Result<Var, TensorError> {
        let (rows, cols) = self.value(a).as_matrix_dims();
        let src = self.data(a);
        let mut data = vec![0.0; src.len()];
        for r in 0..rows {
            let x = &src[r * cols..(r + 1) * cols];
            let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let out = &mut data[r * cols..(r + 1) * cols];
            let mut total = 0.0;
            for (o, &v) in out.iter_mut().zip(x) {
                *o = (v - m).exp();
                total += *o;
            }
            for o in out.iter_mut() {
                *o /= total;
            }
        }
        let out = Tensor {
            shape: self.shape(a).to_vec(),
            data,
        };
        let ng = self.ng(&[a]);
        self.push(out, Op::Softmax(a.0), ng, "softmax")
    }

    /// Batch normalization of a 2-D `[rows, channels]` tensor over its rows.
    ///
    /// Returns the observed batch statistics in training mode so the caller
    /// can maintain running averages.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mode: BatchNormMode<'_>,
    ) -> Result<(Var, Option<BatchStats>), TensorError> {
        let s = self.shape(x);
        if s.len() != 2 {
            return Err(shape_err("batch_norm", format!("{:?}", s)));
        }
        let (rows, ch) = (s[0], s[1]);
        if self.value(gamma).len() != ch || self.value(beta).len() != ch {
            return Err(shape_err("batch_norm", "gamma/beta length"));
        }
        if rows == 0 {
            return Err(shape_err("batch_norm", "empty batch"));
        }
        let xs = self.data(x);
        let (mean, var, train) = match mode {
            BatchNormMode::Train => {
                let mut mean = vec![0.0; ch];
                for r in 0..rows {
                    for c in 0..ch {
                        mean[c] += xs[r * ch + c];
                    }
                }
                mean.iter_mut().for_each(|m| *m /= rows as f64);
                let mut var = vec![0.0; ch];
                for r in 0..rows {
                    for c in 0..ch {
                        let d = xs[r * ch + c] - mean[c];
                        var[c] += d * d;
                    }
                }
                var.iter_mut().for_each(|v| *v /= rows as f64);
                (mean, var, true)
            }
            BatchNormMode::Inference { mean, var } => {
                if mean.len() != ch || var.len() != ch {
                    return Err(shape_err("batch_norm", "running stats length"));
                }
                (mean.to_vec(), var.to_vec(), false)
            }
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let (g, b) = (self.data(gamma), self.data(beta));
        let mut xhat = vec![0.0; rows * ch];
        let mut out = vec![0.0; rows * ch];
        for r in 0..rows {
            for c in 0..ch {
                let i = r * ch + c;
                xhat[i] = (xs[i] - mean[c]) * inv_std[c];
                out[i] = g[c] * xhat[i] + b[c];
            }
        }
        let ng = self.ng(&[x, gamma, beta]);
        let v = self.push(
            Tensor::new(vec![rows, ch], out)?,
            Op::BatchNorm {
                x: x.0,
                gamma: gamma.0,
                beta: beta.0,
                xhat,
                inv_std,
                train,
            },
            ng,
            "batch_norm",
        )?;
        Ok((v, train.then_some(BatchStats { mean, var })))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var, TensorError> {
        let s = self.value(a).sum();
        let ng = self.ng(&[a]);
        self.push(Tensor::scalar(s), Op::Sum(a.0), ng, "sum")
    }

    pub fn mean(&mut self, a: Var) -> Result<Var, TensorError> {
        let t = self.value(a);
        if t.is_empty() {
            return Err(shape_err("mean", "empty tensor"));
        }
        let m = t.sum() / t.len() as f64;
        let ng = self.ng(&[a]);
        self.push(Tensor::scalar(m), Op::Mean(a.0), ng, "mean")
    }

    /// Sum over the first axis of a 2-D tensor.
    pub fn sum_rows(&mut self, a: Var) -> Result<Var, TensorError> {
        let s = self.shape(a);
        if s.len() != 2 {
            return Err(shape_err("sum_rows", format!("{:?}", s)));
        }
        let (rows, cols) = (s[0], s[1]);
        let src = self.data(a);
        let mut out = vec![0.0; cols];
        for r in 0..rows {
            for c in 0..cols {
                out[c] += src[r * cols + c];
            }
        }
        let ng = self.ng(&[a]);
        self.push(Tensor::vector(out), Op::SumRows(a.0), ng, "sum_rows")
    }

    /// Maximum over the last axis. Ties resolve to the lowest index, which is
    /// also where the subgradient is routed.
    pub fn max_last(&mut self, a: Var) -> Result<Var, TensorError> {
        let (rows, cols) = self.value(a).as_matrix_dims();
        if cols == 0 {
            return Err(shape_err("max_last", "empty axis"));
        }
        let src = self.data(a);
        let mut out = Vec::with_capacity(rows);
        let mut argmax = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = &src[r * cols..(r + 1) * cols];
            let mut best = 0;
            for (c, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = c;
                }
            }
            out.push(row[best]);
            argmax.push(r * cols + best);
        }
        let shape = self.shape(a)[..self.shape(a).len() - 1].to_vec();
        let ng = self.ng(&[a]);
        self.push(
            Tensor::new(shape, out)?,
            Op::MaxLast { input: a.0, argmax },
            ng,
            "max_last",
        )
    }

    /// Elementwise binary cross-entropy `-(t ln p + (1-t) ln(1-p))` against a
    /// constant target. Terms whose coefficient is zero are skipped, so a
    /// prediction that equals its 0/1 target contributes exactly zero.
    pub fn bce(&mut self, p: Var, target: Vec<f64>) -> Result<Var, TensorError> {
        if target.len() != self.value(p).len() {
            return Err(shape_err("bce", "target length"));
        }
        let data = self
            .data(p)
            .iter()
            .zip(&target)
            .map(|(&p, &t)| {
                let mut l = 0.0;
                if t != 0.0 {
                    l -= t * p.max(LOG_FLOOR).ln();
                }
                if t != 1.0 {
                    l -= (1.0 - t) * (1.0 - p).max(LOG_FLOOR).ln();
                }
                l
            })
            .collect();
        let out = Tensor {
            shape: self.shape(p).to_vec(),
            data,
        };
        let ng = self.ng(&[p]);
        self.push(out, Op::Bce { p: p.0, target }, ng, "bce")
    }

    /// `Σ a_i w_i` against constant weights.
    pub fn dot_const(&mut self, a: Var, weights: Vec<f64>) -> Result<Var, TensorError> {
        if weights.len() != self.value(a).len() {
            return Err(shape_err("dot_const", "weight length"));
        }
        let s = self.data(a).iter().zip(&weights).map(|(x, w)| x * w).sum();
        let ng = self.ng(&[a]);
        self.push(
            Tensor::scalar(s),
            Op::DotConst {
                input: a.0,
                weights,
            },
            ng,
            "dot_const",
        )
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, TensorError> {
        let out = self.value(a).clone().reshape(shape)?;
        let ng = self.ng(&[a]);
        self.push(out, Op::Reshape(a.0), ng, "reshape")
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(&self, root: Var) -> Result<Gradients, TensorError> {
        let rv = self.value(root);
        if rv.len() != 1 {
            return Err(TensorError::NonScalarRoot(rv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::ones(rv.shape()));

        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], target: usize, delta: Tensor) {
        if !self.nodes[target].needs_grad {
            return;
        }
        match &mut grads[target] {
            Some(g) => g.add_assign(&delta),
            slot @ None => *slot = Some(delta),
        }
    }

    fn like(&self, idx: usize, data: Vec<f64>) -> Tensor {
        Tensor {
            shape: self.nodes[idx].value.shape().to_vec(),
            data,
        }
    }

    fn propagate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[idx];
        let out = node.value.data();
        let gd = g.data();
        let val = |i: usize| self.nodes[i].value.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.nodes[*a].value.shape(), self.nodes[*b].value.shape());
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                if self.nodes[*a].needs_grad {
                    let da = matmul_bt_raw(gd, val(*b), m, n, k);
                    self.accumulate(grads, *a, self.like(*a, da));
                }
                if self.nodes[*b].needs_grad {
                    let db = matmul_at_raw(val(*a), gd, m, k, n);
                    self.accumulate(grads, *b, self.like(*b, db));
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                let da = gd.iter().zip(val(*b)).map(|(x, y)| x * y).collect();
                let db = gd.iter().zip(val(*a)).map(|(x, y)| x * y).collect();
                self.accumulate(grads, *a, self.like(*a, da));
                self.accumulate(grads, *b, self.like(*b, db));
            }
            Op::AddRow(a, row) => {
                self.accumulate(grads, *a, g.clone());
                let cols = self.nodes[*row].value.len();
                let mut dr = vec![0.0; cols];
                for (i, &x) in gd.iter().enumerate() {
                    dr[i % cols] += x;
                }
                self.accumulate(grads, *row, self.like(*row, dr));
            }
            Op::Scale(a, c) => self.accumulate(grads, *a, g.map(|x| x * c)),
            Op::AddScalar(a) | Op::Reshape(a) => {
                self.accumulate(grads, *a, self.like(*a, gd.to_vec()))
            }
            Op::Concat {
                inputs,
                widths,
                outer,
            } => {
                let total: usize = widths.iter().sum();
                let mut offset = 0;
                for (&inp, &w) in inputs.iter().zip(widths) {
                    let mut d = Vec::with_capacity(outer * w);
                    for o in 0..*outer {
                        d.extend_from_slice(&gd[o * total + offset..o * total + offset + w]);
                    }
                    offset += w;
                    self.accumulate(grads, inp, self.like(inp, d));
                }
            }
            Op::Gather { input, index } => {
                let mut d = vec![0.0; self.nodes[*input].value.len()];
                for (&i, &x) in index.iter().zip(gd) {
                    d[i] += x;
                }
                self.accumulate(grads, *input, self.like(*input, d));
            }
            Op::Aggregate { input, cols, links } => {
                let mut d = vec![0.0; self.nodes[*input].value.len()];
                for &(dst, src, w) in links {
                    for c in 0..*cols {
                        d[src * cols + c] += w * gd[dst * cols + c];
                    }
                }
                self.accumulate(grads, *input, self.like(*input, d));
            }
            Op::Relu(a) => {
                let d = gd
                    .iter()
                    .zip(val(*a))
                    .map(|(&x, &v)| if v > 0.0 { x } else { 0.0 })
                    .collect();
                self.accumulate(grads, *a, self.like(*a, d));
            }
            Op::Sigmoid(a) => {
                let d = gd.iter().zip(out).map(|(&x, &y)| x * y * (1.0 - y)).collect();
                self.accumulate(grads, *a, self.like(*a, d));
            }
            Op::Tanh(a) => {
                let d = gd.iter().zip(out).map(|(&x, &y)| x * (1.0 - y * y)).collect();
                self.accumulate(grads, *a, self.like(*a, d));
            }
            Op::Exp(a) => {
                let d = gd.iter().zip(out).map(|(&x, &y)| x * y).collect();
                self.accumulate(grads, *a, self.like(*a, d));
            }
            Op::Log(a) => {
                let d = gd
                    .iter()
                    .zip(val(*a))
                    .map(|(&x, &v)| x / v.max(LOG_FLOOR))
                    .collect();
                self.accumulate(grads, *a, self.like(*a, d));
            }
            Op::Softmax(a) => {
                let (rows, cols) = node.value.as_matrix_dims();
                let mut d = vec![0.0; out.len()];
                for r in 0..rows {
                    let y = &out[r * cols..(r + 1) * cols];
                    let gy = &gd[r * cols..(r + 1) * cols];
                    let dot: f64 = y.iter().zip(gy).map(|(a, b)| a * b).sum();
                    for c in 0..cols {
                        d[r * cols + c] = y[c] * (gy[c] - dot);
                    }
                }
                self.accumulate(grads, *a, self.like(*a, d));
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            } => {
                let (rows, ch) = node.value.as_matrix_dims();
                let gam = val(*gamma);
                let mut dgamma = vec![0.0; ch];
                let mut dbeta = vec![0.0; ch];
                for r in 0..rows {
                    for c in 0..ch {
                        let i = r * ch + c;
                        dgamma[c] += gd[i] * xhat[i];
                        dbeta[c] += gd[i];
                    }
                }
                if self.nodes[*x].needs_grad {
                    let mut dx = vec![0.0; rows * ch];
                    if *train {
                        let nr = rows as f64;
                        for c in 0..ch {
                            // dgamma[c] = Σ dy·xhat and dbeta[c] = Σ dy
                            for r in 0..rows {
                                let i = r * ch + c;
                                dx[i] = gam[c] * inv_std[c] / nr
                                    * (nr * gd[i] - dbeta[c] - xhat[i] * dgamma[c]);
                            }
                        }
                    } else {
                        for r in 0..rows {
                            for c in 0..ch {
                                let i = r * ch + c;
                                dx[i] = gd[i] * gam[c] * inv_std[c];
                            }
                        }
                    }
                    self.accumulate(grads, *x, self.like(*x, dx));
                }
                self.accumulate(grads, *gamma, self.like(*gamma, dgamma));
                self.accumulate(grads, *beta, self.like(*beta, dbeta));
            }
            Op::Sum(a) => {
                let n = self.nodes[*a].value.len();
                self.accumulate(grads, *a, self.like(*a, vec![gd[0]; n]));
            }
            Op::Mean(a) => {
                let n = self.nodes[*a].value.len();
                self.accumulate(grads, *a, self.like(*a, vec![gd[0] / n as f64; n]));
            }
            Op::SumRows(a) => {
                let n = self.nodes[*a].value.len();
                let cols = gd.len();
                let d = (0..n).map(|i| gd[i % cols]).collect();
                self.accumulate(grads, *a, self.like(*a, d));
            }
            Op::MaxLast { input, argmax } => {
                let mut d = vec![0.0; self.nodes[*input].value.len()];
                for (&i, &x) in argmax.iter().zip(gd) {
                    d[i] += x;
                }
                self.accumulate(grads, *input, self.like(*input, d));
            }
            Op::Bce { p, target } => {
                let d = gd
                    .iter()
                    .zip(val(*p))
                    .zip(target)
                    .map(|((&x, &p), &t)| {
                        let mut dl = 0.0;
                        if t != 0.0 {
                            dl -= t / p.max(LOG_FLOOR);
                        }
                        if t != 1.0 {
                            dl += (1.0 - t) / (1.0 - p).max(LOG_FLOOR);
                        }
                        x * dl
                    })
                    .collect();
                self.accumulate(grads, *p, self.like(*p, d));
            }
            Op::DotConst { input, weights } => {
                let d = weights.iter().map(|w| w * gd[0]).collect();
                self.accumulate(grads, *input, self.like(*input, d));
            }
        }
    }
}
