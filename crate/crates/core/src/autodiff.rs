//! Define-by-run reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every operation as a node holding its value, its
//! operands and whatever it needs to compute local gradients. Operands always
//! precede the node that uses them, so [`Tape::backward`] is a single sweep
//! over the nodes in reverse order.
//!
//! A fresh tape is built for every training step.

use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::{dot, matmul_nt_into, matmul_tn_into, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddRow(Var, Var),
    Relu(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        mean: Vec<f64>,
        rstd: Vec<f64>,
    },
    Gather {
        table: Var,
        indices: Vec<usize>,
    },
    Concat(Vec<Var>),
    Sum(Var),
    Mean(Var),
    Attention {
        q: Var,
        k: Var,
        v: Var,
        seq_len: usize,
        heads: usize,
        probs: Vec<f64>,
    },
    SoftmaxCrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<f64>,
    },
    BceWithLogits {
        logits: Var,
        labels: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Arc<Tensor>,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of one backward pass, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// `None` when the node does not influence the differentiated output or
    /// does not require gradients.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
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

    /// A trainable input; gradients are tracked.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.leaf_shared(Arc::new(value))
    }

    pub fn leaf_shared(&mut self, value: Arc<Tensor>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// A fixed input; no gradient is computed for it.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value: Arc::new(value),
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, name: &'static str, value: Tensor, op: Op, operands: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(name));
        }
        let requires_grad = operands.iter().any(|&o| self.needs(o));
        self.nodes.push(Node {
            value: Arc::new(value),
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        self.push("matmul", out, Op::MatMul(a, b), &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if !x.same_shape(y) {
            return Err(Error::dim("add", x.shape(), y.shape()));
        }
        let mut out = x.clone();
        out.accumulate(y);
        self.push("add", out, Op::Add(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if !x.same_shape(y) {
            return Err(Error::dim("mul", x.shape(), y.shape()));
        }
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p * q).collect();
        let out = Tensor::new(x.shape().to_vec(), data)?;
        self.push("mul", out, Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let out = self.value(a).map(|v| v * factor);
        self.push("scale", out, Op::Scale(a, factor), &[a])
    }

    /// Adds a single row vector to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (x, r) = (self.value(a), self.value(row));
        let cols = x.cols();
        if r.len() != cols {
            return Err(Error::dim("add_row", x.shape(), r.shape()));
        }
        let mut out = x.clone();
        for i in 0..out.rows() {
            for (o, b) in out.row_mut(i).iter_mut().zip(r.data()) {
                *o += b;
            }
        }
        self.push("add_row", out, Op::AddRow(a, row), &[a, row])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(|v| if v > 0.0 { v } else { 0.0 });
        self.push("relu", out, Op::Relu(a), &[a])
    }

    /// Row-wise layer normalization with learned gain and bias.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let xv = self.value(x);
        let (rows, cols) = (xv.rows(), xv.cols());
        let (g, b) = (self.value(gamma), self.value(beta));
        if g.len() != cols || b.len() != cols {
            return Err(Error::dim("layer_norm", xv.shape(), g.shape()));
        }
        let mut out = Tensor::zeros(xv.shape());
        let mut means = Vec::with_capacity(rows);
        let mut rstds = Vec::with_capacity(rows);
        for i in 0..rows {
            let row = xv.row(i);
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let rstd = 1.0 / libm::sqrt(var + eps);
            for (j, o) in out.row_mut(i).iter_mut().enumerate() {
                *o = (row[j] - mean) * rstd * g.data()[j] + b.data()[j];
            }
            means.push(mean);
            rstds.push(rstd);
        }
        let op = Op::LayerNorm {
            x,
            gamma,
            beta,
            mean: means,
            rstd: rstds,
        };
        self.push("layer_norm", out, op, &[x, gamma, beta])
    }

    /// Selects rows of `table` (embedding lookup). Indices may repeat.
    pub fn gather(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let t = self.value(table);
        let (rows, cols) = (t.rows(), t.cols());
        let mut data = Vec::with_capacity(indices.len() * cols);
        for &i in indices {
            if i >= rows {
                return Err(Error::Index {
                    what: "gather row",
                    index: i,
                    limit: rows,
                });
            }
            data.extend_from_slice(t.row(i));
        }
        let out = Tensor::matrix(indices.len(), cols, data)?;
        let op = Op::Gather {
            table,
            indices: indices.to_vec(),
        };
        self.push("gather", out, op, &[table])
    }

    /// Concatenates along columns; all parts need the same row count.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Precondition("concat of zero tensors".into()))?;
        let rows = self.value(*first).rows();
        let mut total = 0;
        for &p in parts {
            let v = self.value(p);
            if v.rows() != rows {
                return Err(Error::dim("concat", self.value(*first).shape(), v.shape()));
            }
            total += v.cols();
        }
        let mut data = Vec::with_capacity(rows * total);
        for i in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(i));
            }
        }
        let out = Tensor::matrix(rows, total, data)?;
        self.push("concat", out, Op::Concat(parts.to_vec()), parts)
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(a).sum());
        self.push("sum", out, Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a);
        if v.is_empty() {
            return Err(Error::Precondition("mean of an empty tensor".into()));
        }
        let out = Tensor::scalar(v.sum() / v.len() as f64);
        self.push("mean", out, Op::Mean(a), &[a])
    }

    /// Multi-head scaled dot-product self-attention.
    ///
    /// `q`, `k`, `v` are `(blocks·seq_len) × hidden`; attention never crosses
    /// a block of `seq_len` consecutive rows. Heads split the hidden columns
    /// into `heads` contiguous groups.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, seq_len: usize, heads: usize) -> Result<Var> {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        if !qv.same_shape(kv) || !qv.same_shape(vv) {
            return Err(Error::dim("attention", qv.shape(), kv.shape()));
        }
        let (n, hidden) = (qv.rows(), qv.cols());
        if seq_len == 0 || n % seq_len != 0 || heads == 0 || hidden % heads != 0 {
            return Err(Error::config("attention needs rows divisible by seq_len and hidden by heads"));
        }
        let dh = hidden / heads;
        let scale = 1.0 / libm::sqrt(dh as f64);
        let blocks = n / seq_len;
        let mut probs = vec![0.0; blocks * heads * seq_len * seq_len];
        let mut out = vec![0.0; n * hidden];
        let (qd, kd, vd) = (qv.data(), kv.data(), vv.data());
        for b in 0..blocks {
            for h in 0..heads {
                let p = &mut probs[(b * heads + h) * seq_len * seq_len..][..seq_len * seq_len];
                for i in 0..seq_len {
                    let qi = &qd[(b * seq_len + i) * hidden + h * dh..][..dh];
                    let row = &mut p[i * seq_len..(i + 1) * seq_len];
                    for (j, s) in row.iter_mut().enumerate() {
                        let kj = &kd[(b * seq_len + j) * hidden + h * dh..][..dh];
                        *s = dot(qi, kj) * scale;
                    }
                    softmax_in_place(row);
                    for (j, &pij) in row.iter().enumerate() {
                        let vj = &vd[(b * seq_len + j) * hidden + h * dh..][..dh];
                        let o = &mut out[(b * seq_len + i) * hidden + h * dh..][..dh];
                        for (ov, &x) in o.iter_mut().zip(vj) {
                            *ov += pij * x;
                        }
                    }
                }
            }
        }
        let out = Tensor::matrix(n, hidden, out)?;
        let op = Op::Attention {
            q,
            k,
            v,
            seq_len,
            heads,
            probs,
        };
        self.push("attention", out, op, &[q, k, v])
    }

    /// Mean over rows of `-log softmax(logits)[target]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let l = self.value(logits);
        let (rows, classes) = (l.rows(), l.cols());
        if targets.len() != rows || rows == 0 {
            return Err(Error::dim("softmax_cross_entropy", l.shape(), &[targets.len()]));
        }
        let mut probs = l.data().to_vec();
        let mut total = 0.0;
        for (i, &t) in targets.iter().enumerate() {
            if t >= classes {
                return Err(Error::Index {
                    what: "target class",
                    index: t,
                    limit: classes,
                });
            }
            let row = l.row(i);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let log_z = max + libm::log(row.iter().map(|v| libm::exp(v - max)).sum::<f64>());
            total += log_z - row[t];
            softmax_in_place(&mut probs[i * classes..(i + 1) * classes]);
        }
        let out = Tensor::scalar(total / rows as f64);
        let op = Op::SoftmaxCrossEntropy {
            logits,
            targets: targets.to_vec(),
            probs,
        };
        self.push("softmax_cross_entropy", out, op, &[logits])
    }

    /// Mean binary cross-entropy of sigmoid(logits) against labels in [0, 1].
    pub fn bce_with_logits(&mut self, logits: Var, labels: &[f64]) -> Result<Var> {
        let z = self.value(logits);
        if z.len() != labels.len() || labels.is_empty() {
            return Err(Error::dim("bce_with_logits", z.shape(), &[labels.len()]));
        }
        let total: f64 = z
            .data()
            .iter()
            .zip(labels)
            .map(|(&x, &y)| x.max(0.0) - x * y + libm::log1p(libm::exp(-x.abs())))
            .sum();
        let out = Tensor::scalar(total / labels.len() as f64);
        let op = Op::BceWithLogits {
            logits,
            labels: labels.to_vec(),
        };
        self.push("bce_with_logits", out, op, &[logits])
    }

    /// Reverse sweep from `output`, seeded with ones (the gradient of the sum
    /// of its entries).
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(Tensor::filled(self.value(output).shape(), 1.0));
        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(idx, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        for (node, g) in self.nodes.iter().zip(grads.iter_mut()) {
            if !node.requires_grad {
                *g = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn send(&self, grads: &mut [Option<Tensor>], to: Var, contribution: Tensor) {
        if !self.needs(to) {
            return;
        }
        match &mut grads[to.0] {
            Some(existing) => existing.accumulate(&contribution),
            slot @ None => *slot = Some(contribution),
        }
    }

    fn propagate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let node = &self.nodes[idx];
        if !node.requires_grad {
            return Ok(());
        }
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                if self.needs(*a) {
                    let mut ga = vec![0.0; m * k];
                    matmul_nt_into(g.data(), bv.data(), &mut ga, m, n, k);
                    self.send(grads, *a, Tensor::new(av.shape().to_vec(), ga)?);
                }
                if self.needs(*b) {
                    let mut gb = vec![0.0; k * n];
                    matmul_tn_into(av.data(), g.data(), &mut gb, m, k, n);
                    self.send(grads, *b, Tensor::new(bv.shape().to_vec(), gb)?);
                }
            }
            Op::Add(a, b) => {
                self.send(grads, *a, g.clone());
                self.send(grads, *b, g.clone());
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.needs(*a) {
                    let d = g.data().iter().zip(bv.data()).map(|(x, y)| x * y).collect();
                    self.send(grads, *a, Tensor::new(av.shape().to_vec(), d)?);
                }
                if self.needs(*b) {
                    let d = g.data().iter().zip(av.data()).map(|(x, y)| x * y).collect();
                    self.send(grads, *b, Tensor::new(bv.shape().to_vec(), d)?);
                }
            }
            Op::Scale(a, factor) => {
                let f = *factor;
                self.send(grads, *a, g.map(|v| v * f));
            }
            Op::AddRow(a, row) => {
                self.send(grads, *a, g.clone());
                if self.needs(*row) {
                    let mut col_sums = vec![0.0; g.cols()];
                    for i in 0..g.rows() {
                        for (s, v) in col_sums.iter_mut().zip(g.row(i)) {
                            *s += v;
                        }
                    }
                    self.send(grads, *row, Tensor::new(self.value(*row).shape().to_vec(), col_sums)?);
                }
            }
            Op::Relu(a) => {
                let x = self.value(*a);
                let d = g
                    .data()
                    .iter()
                    .zip(x.data())
                    .map(|(gv, &xv)| if xv > 0.0 { *gv } else { 0.0 })
                    .collect();
                self.send(grads, *a, Tensor::new(x.shape().to_vec(), d)?);
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                mean,
                rstd,
            } => {
                let xv = self.value(*x);
                let gam = self.value(*gamma).data();
                let (rows, cols) = (xv.rows(), xv.cols());
                let mut dx = Tensor::zeros(xv.shape());
                let mut dgamma = vec![0.0; cols];
                let mut dbeta = vec![0.0; cols];
                let mut xhat = vec![0.0; cols];
                let mut dxhat = vec![0.0; cols];
                for i in 0..rows {
                    let row = xv.row(i);
                    let grow = g.row(i);
                    for j in 0..cols {
                        xhat[j] = (row[j] - mean[i]) * rstd[i];
                        dxhat[j] = grow[j] * gam[j];
                        dgamma[j] += grow[j] * xhat[j];
                        dbeta[j] += grow[j];
                    }
                    let sum_d: f64 = dxhat.iter().sum();
                    let sum_dx: f64 = dxhat.iter().zip(&xhat).map(|(a, b)| a * b).sum();
                    let n = cols as f64;
                    for (j, o) in dx.row_mut(i).iter_mut().enumerate() {
                        *o = rstd[i] / n * (n * dxhat[j] - sum_d - xhat[j] * sum_dx);
                    }
                }
                self.send(grads, *x, dx);
                let gshape = self.value(*gamma).shape().to_vec();
                self.send(grads, *gamma, Tensor::new(gshape, dgamma)?);
                let bshape = self.value(*beta).shape().to_vec();
                self.send(grads, *beta, Tensor::new(bshape, dbeta)?);
            }
            Op::Gather { table, indices } => {
                let t = self.value(*table);
                let mut dt = Tensor::zeros(t.shape());
                for (r, &i) in indices.iter().enumerate() {
                    for (o, v) in dt.row_mut(i).iter_mut().zip(g.row(r)) {
                        *o += v;
                    }
                }
                self.send(grads, *table, dt);
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let pv = self.value(p);
                    let c = pv.cols();
                    if self.needs(p) {
                        let mut d = Vec::with_capacity(pv.len());
                        for i in 0..g.rows() {
                            d.extend_from_slice(&g.row(i)[offset..offset + c]);
                        }
                        self.send(grads, p, Tensor::new(pv.shape().to_vec(), d)?);
                    }
                    offset += c;
                }
            }
            Op::Sum(a) => {
                let s = self.value(*a).shape().to_vec();
                self.send(grads, *a, Tensor::filled(&s, g.item()));
            }
            Op::Mean(a) => {
                let v = self.value(*a);
                let s = v.shape().to_vec();
                self.send(grads, *a, Tensor::filled(&s, g.item() / v.len() as f64));
            }
            Op::Attention {
                q,
                k,
                v,
                seq_len,
                heads,
                probs,
            } => {
                let (qv, kv, vv) = (self.value(*q), self.value(*k), self.value(*v));
                let (n, hidden) = (qv.rows(), qv.cols());
                let (l, h_count) = (*seq_len, *heads);
                let dh = hidden / h_count;
                let scale = 1.0 / libm::sqrt(dh as f64);
                let (qd, kd, vd, gd) = (qv.data(), kv.data(), vv.data(), g.data());
                let mut dq = vec![0.0; n * hidden];
                let mut dk = vec![0.0; n * hidden];
                let mut dv = vec![0.0; n * hidden];
                let mut dp = vec![0.0; l];
                for b in 0..n / l {
                    for h in 0..h_count {
                        let p = &probs[(b * h_count + h) * l * l..][..l * l];
                        for i in 0..l {
                            let gi = &gd[(b * l + i) * hidden + h * dh..][..dh];
                            let prow = &p[i * l..(i + 1) * l];
                            for j in 0..l {
                                let vj = &vd[(b * l + j) * hidden + h * dh..][..dh];
                                dp[j] = dot(gi, vj);
                                let dvj = &mut dv[(b * l + j) * hidden + h * dh..][..dh];
                                for (o, &x) in dvj.iter_mut().zip(gi) {
                                    *o += prow[j] * x;
                                }
                            }
                            let pd: f64 = prow.iter().zip(&dp).map(|(a, c)| a * c).sum();
                            for j in 0..l {
                                let ds = prow[j] * (dp[j] - pd) * scale;
                                if ds == 0.0 {
                                    continue;
                                }
                                let qi = (b * l + i) * hidden + h * dh;
                                let kj = (b * l + j) * hidden + h * dh;
                                for c in 0..dh {
                                    dq[qi + c] += ds * kd[kj + c];
                                    dk[kj + c] += ds * qd[qi + c];
                                }
                            }
                        }
                    }
                }
                let shape = qv.shape().to_vec();
                self.send(grads, *q, Tensor::new(shape.clone(), dq)?);
                self.send(grads, *k, Tensor::new(shape.clone(), dk)?);
                self.send(grads, *v, Tensor::new(shape, dv)?);
            }
            Op::SoftmaxCrossEntropy {
                logits,
                targets,
                probs,
            } => {
                let lv = self.value(*logits);
                let classes = lv.cols();
                let scale = g.item() / targets.len() as f64;
                let mut d = probs.clone();
                for (i, &t) in targets.iter().enumerate() {
                    d[i * classes + t] -= 1.0;
                }
                for x in &mut d {
                    *x *= scale;
                }
                self.send(grads, *logits, Tensor::new(lv.shape().to_vec(), d)?);
            }
            Op::BceWithLogits { logits, labels } => {
                let z = self.value(*logits);
                let scale = g.item() / labels.len() as f64;
                let d = z
                    .data()
                    .iter()
                    .zip(labels)
                    .map(|(&x, &y)| (sigmoid(x) - y) * scale)
                    .collect();
                self.send(grads, *logits, Tensor::new(z.shape().to_vec(), d)?);
            }
        }
        Ok(())
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

/// Max-subtracted softmax over a slice.
pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for v in row.iter_mut() {
        *v = libm::exp(*v - max);
        z += *v;
    }
    for v in row.iter_mut() {
        *v /= z;
    }
}

/// Convenience wrapper: `softmax(row)` as a new vector.
pub fn softmax(row: &[f64]) -> Vec<f64> {
    let mut out = row.to_vec();
    softmax_in_place(&mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_log_k() {
        let mut tape = Tape::new();
        let l = tape.leaf(Tensor::zeros(&[3, 16]));
        let loss = tape.softmax_cross_entropy(l, &[0, 7, 15]).unwrap();
        assert!((tape.value(loss).item() - libm::log(16.0)).abs() < 1e-12);
    }

    #[test]
    fn confident_logit_loss() {
        let mut tape = Tape::new();
        let two = tape.leaf(Tensor::matrix(1, 2, vec![10.0, 0.0]).unwrap());
        let loss = tape.softmax_cross_entropy(two, &[0]).unwrap();
        assert!((tape.value(loss).item() - 4.54e-5).abs() < 1e-7);

        let mut row = vec![0.0; 16];
        row[0] = 10.0;
        let wide = tape.leaf(Tensor::matrix(1, 16, row).unwrap());
        let loss = tape.softmax_cross_entropy(wide, &[0]).unwrap();
        // -ln(e^10 / (e^10 + 15))
        let expected = libm::log1p(15.0 * libm::exp(-10.0));
        assert!((tape.value(loss).item() - expected).abs() < 1e-15);
    }

    #[test]
    fn out_of_range_target() {
        let mut tape = Tape::new();
        let l = tape.leaf(Tensor::zeros(&[1, 4]));
        assert!(matches!(
            tape.softmax_cross_entropy(l, &[4]),
            Err(Error::Index { index: 4, limit: 4, .. })
        ));
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::filled(&[2, 2], 1.0));
        let w = tape.leaf(Tensor::filled(&[2, 2], 2.0));
        let y = tape.matmul(a, w).unwrap();
        let s = tape.sum(y).unwrap();
        let grads = tape.backward(s).unwrap();
        assert!(grads.get(a).is_none());
        assert_eq!(grads.get(w).unwrap().data(), &[2.0, 2.0, 2.0, 2.0]);
    }

    #[test]
    fn shared_operand_accumulates() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(3.0));
        let y = tape.mul(x, x).unwrap();
        let grads = tape.backward(y).unwrap();
        assert_eq!(grads.get(x).unwrap().item(), 6.0);
    }
}
