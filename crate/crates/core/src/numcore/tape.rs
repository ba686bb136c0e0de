//! Reverse-mode differentiation over a linear record of executed ops.
//!
//! A [`Tape`] borrows the [`ParamStore`] it reads parameters from. Every op
//! appends one node; [`Tape::backward`] walks the nodes in exact reverse
//! order and adds parameter gradients into a [`GradStore`].

use super::kernels::{self, axpy, dot};
use super::{GradStore, ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Input,
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Neg(Var),
    Relu(Var),
    Sigmoid(Var),
    Log(Var),
    Clamp(Var, f64, f64),
    Softmax(Var),
    Concat(Vec<Var>),
    Mix { weights: Var, experts: Vec<Var> },
    Gather { table: Var, indices: Vec<usize> },
    Sum(Var),
    Mean(Var),
    Bce { probs: Var, targets: Vec<f64> },
}

/// Lower/upper probability clamp applied inside binary cross-entropy.
pub const PROB_CLAMP: f64 = 1e-7;

enum Value<'p> {
    Owned(Tensor),
    Borrowed(&'p Tensor),
}

impl Value<'_> {
    fn get(&self) -> &Tensor {
        match self {
            Value::Owned(t) => t,
            Value::Borrowed(t) => t,
        }
    }
}

struct Node<'p> {
    value: Value<'p>,
    op: Op,
    requires_grad: bool,
}

/// Gradients of leaf nodes produced by one backward pass.
#[derive(Debug, Clone)]
pub struct NodeGrads {
    grads: Vec<Option<Vec<f64>>>,
}

impl NodeGrads {
    /// Gradient with respect to a leaf or parameter node, if it was reached.
    pub fn get(&self, var: Var) -> Option<&[f64]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }
}

pub struct Tape<'p> {
    store: &'p ParamStore,
    nodes: Vec<Node<'p>>,
    param_nodes: Vec<Option<Var>>,
}

impl<'p> Tape<'p> {
    pub fn new(store: &'p ParamStore) -> Self {
        Self {
            store,
            nodes: Vec::new(),
            param_nodes: vec![None; store.len()],
        }
    }

    pub fn store(&self) -> &'p ParamStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor {
        self.nodes[var.0].value.get()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    /// Constant input; never receives a gradient.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Input, false)
    }

    /// Free-standing differentiable tensor, not backed by the parameter store.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Node for a stored parameter. Repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_nodes[id.0] {
            return v;
        }
        self.nodes.push(Node {
            value: Value::Borrowed(self.store.value(id)),
            op: Op::Param(id),
            requires_grad: true,
        });
        let var = Var(self.nodes.len() - 1);
        self.param_nodes[id.0] = Some(var);
        var
    }

    fn matrix_dims(&self, var: Var, op: &'static str) -> Result<(usize, usize)> {
        let t = self.value(var);
        if t.shape().len() != 2 {
            return Err(Error::shape(op, t.shape(), &[0, 0]));
        }
        Ok(t.dims2())
    }

    /// `a[m×k] · b[k×n]`
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.matrix_dims(a, "matmul")?;
        let (k2, n) = self.matrix_dims(b, "matmul")?;
        if k != k2 {
            return Err(Error::shape("matmul", self.value(a).shape(), self.value(b).shape()));
        }
        let mut out = vec![0.0; m * n];
        kernels::matmul_acc(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::MatMul(a, b), rg))
    }

    /// `a[m×k] · b[n×k]ᵀ`, the layout used by linear layers with `[out × in]` weights.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.matrix_dims(a, "matmul_bt")?;
        let (n, k2) = self.matrix_dims(b, "matmul_bt")?;
        if k != k2 {
            return Err(Error::shape("matmul_bt", self.value(a).shape(), self.value(b).shape()));
        }
        let mut out = vec![0.0; m * n];
        kernels::matmul_bt_acc(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::MatMulBt(a, b), rg))
    }

    /// Adds a length-`n` bias to every row of an `m×n` matrix.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (m, n) = self.matrix_dims(x, "add_bias")?;
        if self.value(bias).len() != n {
            return Err(Error::shape("add_bias", self.value(x).shape(), self.value(bias).shape()));
        }
        let b = self.value(bias).data();
        let mut out = self.value(x).data().to_vec();
        for r in 0..m {
            for (o, bv) in out[r * n..(r + 1) * n].iter_mut().zip(b) {
                *o += bv;
            }
        }
        let rg = self.rg(x) || self.rg(bias);
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::AddBias(x, bias), rg))
    }

    fn binary_shape(&self, a: Var, b: Var, op: &'static str) -> Result<Vec<usize>> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() == tb.shape() || tb.len() == 1 {
            Ok(ta.shape().to_vec())
        } else if ta.len() == 1 {
            Ok(tb.shape().to_vec())
        } else {
            Err(Error::shape(op, ta.shape(), tb.shape()))
        }
    }

    fn binary(&mut self, a: Var, b: Var, op: Op, name: &'static str, f: fn(f64, f64) -> f64) -> Result<Var> {
        let shape = self.binary_shape(a, b, name)?;
        let (ta, tb) = (self.value(a).data(), self.value(b).data());
        let n: usize = shape.iter().product();
        let out: Vec<f64> = (0..n)
            .map(|i| f(ta[if ta.len() == 1 { 0 } else { i }], tb[if tb.len() == 1 { 0 } else { i }]))
            .collect();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(shape, out)?, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Add(a, b), "add", |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Sub(a, b), "sub", |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Mul(a, b), "mul", |x, y| x * y)
    }

    fn unary(&mut self, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let t = self.value(x);
        let out = Tensor::new(t.shape().to_vec(), t.data().iter().map(|&v| f(v)).collect())
            .expect("same shape as input");
        let rg = self.rg(x);
        self.push(out, op, rg)
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        self.unary(x, Op::Scale(x, factor), |v| v * factor)
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.unary(x, Op::Neg(x), |v| -v)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, Op::Relu(x), |v| v.max(0.0))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Op::Sigmoid(x), kernels::sigmoid)
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        self.unary(x, Op::Clamp(x, lo, hi), |v| v.clamp(lo, hi))
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        if let Some(bad) = self.value(x).data().iter().find(|v| v.is_nan() || **v <= 0.0) {
            return Err(Error::numeric("log", format!("non-positive argument {bad}")));
        }
        Ok(self.unary(x, Op::Log(x), f64::ln))
    }

    /// Row-wise softmax. A rank-1 tensor is a single row.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        if t.is_empty() {
            return Err(Error::Contract("softmax of an empty tensor".into()));
        }
        if !t.is_finite() {
            return Err(Error::numeric("softmax", "non-finite logit"));
        }
        let (rows, cols) = t.dims2();
        let mut out = t.data().to_vec();
        for r in 0..rows {
            kernels::softmax_in_place(&mut out[r * cols..(r + 1) * cols]);
        }
        let shape = t.shape().to_vec();
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(shape, out)?, Op::Softmax(x), rg))
    }

    /// Concatenates along the last dimension.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::Contract("concat of zero parts".into()))?;
        if parts.len() == 1 {
            return Ok(first);
        }
        let lead = self.value(first).shape().split_last().map(|(_, l)| l.to_vec()).unwrap_or_default();
        let rows = self.value(first).rows();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let t = self.value(p);
            let p_lead = t.shape().split_last().map(|(_, l)| l.to_vec()).unwrap_or_default();
            if p_lead != lead {
                return Err(Error::shape("concat", self.value(first).shape(), t.shape()));
            }
            widths.push(t.cols());
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(r));
            }
        }
        let mut shape = lead;
        shape.push(total);
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Tensor::new(shape, out)?, Op::Concat(parts.to_vec()), rg))
    }

    /// Convex mixing of expert outputs: `out[r] = Σ_k weights[r, k] · experts[k][r]`.
    ///
    /// `weights` is `[rows × K]`, or `[1 × K]`/`[K]` to share one weight vector
    /// across all rows. Every expert is `[rows × width]`.
    pub fn mix(&mut self, weights: Var, experts: &[Var]) -> Result<Var> {
        let k = experts.len();
        if k == 0 {
            return Err(Error::Contract("mix over zero experts".into()));
        }
        let shape = self.value(experts[0]).shape().to_vec();
        let (rows, width) = self.value(experts[0]).dims2();
        for &e in experts {
            if self.value(e).shape() != shape.as_slice() {
                return Err(Error::shape("mix", &shape, self.value(e).shape()));
            }
        }
        let (w_rows, w_cols) = self.value(weights).dims2();
        if w_cols != k || (w_rows != rows && w_rows != 1) {
            return Err(Error::shape("mix", self.value(weights).shape(), &[rows, k]));
        }
        let w = self.value(weights).data();
        let mut out = vec![0.0; rows * width];
        for (j, &e) in experts.iter().enumerate() {
            let ed = self.value(e).data();
            for r in 0..rows {
                let wr = if w_rows == 1 { w[j] } else { w[r * k + j] };
                axpy(wr, &ed[r * width..(r + 1) * width], &mut out[r * width..(r + 1) * width]);
            }
        }
        let rg = self.rg(weights) || experts.iter().any(|&e| self.rg(e));
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::Mix {
                weights,
                experts: experts.to_vec(),
            },
            rg,
        ))
    }

    /// Selects rows of a `[vocab × dim]` table.
    pub fn gather_rows(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let (vocab, dim) = self.matrix_dims(table, "gather_rows")?;
        let t = self.value(table).data();
        let mut out = Vec::with_capacity(indices.len() * dim);
        for &i in indices {
            if i >= vocab {
                return Err(Error::Index {
                    what: "embedding table".into(),
                    index: i,
                    size: vocab,
                });
            }
            out.extend_from_slice(&t[i * dim..(i + 1) * dim]);
        }
        let rg = self.rg(table);
        Ok(self.push(
            Tensor::matrix(indices.len(), dim, out)?,
            Op::Gather {
                table,
                indices: indices.to_vec(),
            },
            rg,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        if t.is_empty() {
            return Err(Error::Contract("mean of an empty tensor".into()));
        }
        let m = t.data().iter().sum::<f64>() / t.len() as f64;
        let rg = self.rg(x);
        Ok(self.push(Tensor::scalar(m), Op::Mean(x), rg))
    }

    /// Elementwise binary cross-entropy with probabilities clamped to
    /// `[PROB_CLAMP, 1 - PROB_CLAMP]`. Output has the shape of `probs`.
    pub fn bce(&mut self, probs: Var, targets: &[f64]) -> Result<Var> {
        let p = self.value(probs);
        if p.len() != targets.len() {
            return Err(Error::shape("bce", p.shape(), &[targets.len()]));
        }
        let out: Vec<f64> = p
            .data()
            .iter()
            .zip(targets)
            .map(|(&p, &y)| {
                let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
                -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
            })
            .collect();
        let shape = p.shape().to_vec();
        let rg = self.rg(probs);
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::Bce {
                probs,
                targets: targets.to_vec(),
            },
            rg,
        ))
    }

    /// Backpropagates from a scalar `loss`, adding parameter gradients into
    /// `grads`. Leaf and parameter gradients are also returned.
    pub fn backward(&self, loss: Var, grads: &mut GradStore) -> Result<NodeGrads> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        if grads.len() != self.store.len() {
            return Err(Error::Contract("gradient store does not match parameter store".into()));
        }
        let mut g: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        g[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(grad) = g[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Input => {}
                Op::Leaf => {
                    g[idx] = Some(grad);
                }
                Op::Param(id) => {
                    grads.accumulate(*id, &grad);
                    g[idx] = Some(grad);
                }
                op => self.propagate(op, idx, &grad, &mut g),
            }
        }
        Ok(NodeGrads { grads: g })
    }

    fn accum(&self, g: &mut [Option<Vec<f64>>], var: Var, f: impl FnOnce(&mut [f64])) {
        if !self.rg(var) {
            return;
        }
        let slot = g[var.0].get_or_insert_with(|| vec![0.0; self.value(var).len()]);
        f(slot);
    }

    fn propagate(&self, op: &Op, idx: usize, grad: &[f64], g: &mut [Option<Vec<f64>>]) {
        let out = self.nodes[idx].value.get();
        match op {
            Op::Input | Op::Leaf | Op::Param(_) => unreachable!(),
            Op::MatMul(a, b) => {
                let (m, k) = self.value(*a).dims2();
                let n = self.value(*b).cols();
                let (ad, bd) = (self.value(*a).data(), self.value(*b).data());
                self.accum(g, *a, |ga| kernels::matmul_bt_acc(grad, bd, ga, m, n, k));
                self.accum(g, *b, |gb| kernels::matmul_at_acc(ad, grad, gb, m, k, n));
            }
            Op::MatMulBt(a, b) => {
                let (m, k) = self.value(*a).dims2();
                let n = self.value(*b).rows();
                let (ad, bd) = (self.value(*a).data(), self.value(*b).data());
                self.accum(g, *a, |ga| kernels::matmul_acc(grad, bd, ga, m, n, k));
                self.accum(g, *b, |gb| kernels::matmul_at_acc(grad, ad, gb, m, n, k));
            }
            Op::AddBias(x, bias) => {
                let n = self.value(*bias).len();
                self.accum(g, *x, |gx| axpy(1.0, grad, gx));
                self.accum(g, *bias, |gb| {
                    for row in grad.chunks(n) {
                        axpy(1.0, row, gb);
                    }
                });
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(op, Op::Sub(..)) { -1.0 } else { 1.0 };
                self.accum(g, *a, |ga| reduce_into(ga, grad, 1.0));
                self.accum(g, *b, |gb| reduce_into(gb, grad, sign));
            }
            Op::Mul(a, b) => {
                let (ad, bd) = (self.value(*a).data(), self.value(*b).data());
                self.accum(g, *a, |ga| {
                    let prod: Vec<f64> = (0..grad.len()).map(|i| grad[i] * bd[bcast(bd, i)]).collect();
                    reduce_into(ga, &prod, 1.0);
                });
                self.accum(g, *b, |gb| {
                    let prod: Vec<f64> = (0..grad.len()).map(|i| grad[i] * ad[bcast(ad, i)]).collect();
                    reduce_into(gb, &prod, 1.0);
                });
            }
            Op::Scale(x, f) => self.accum(g, *x, |gx| axpy(*f, grad, gx)),
            Op::Neg(x) => self.accum(g, *x, |gx| axpy(-1.0, grad, gx)),
            Op::Relu(x) => {
                let xd = self.value(*x).data();
                self.accum(g, *x, |gx| {
                    for i in 0..grad.len() {
                        if xd[i] > 0.0 {
                            gx[i] += grad[i];
                        }
                    }
                });
            }
            Op::Sigmoid(x) => {
                let s = out.data();
                self.accum(g, *x, |gx| {
                    for i in 0..grad.len() {
                        gx[i] += grad[i] * s[i] * (1.0 - s[i]);
                    }
                });
            }
            Op::Log(x) => {
                let xd = self.value(*x).data();
                self.accum(g, *x, |gx| {
                    for i in 0..grad.len() {
                        gx[i] += grad[i] / xd[i];
                    }
                });
            }
            Op::Clamp(x, lo, hi) => {
                let xd = self.value(*x).data();
                self.accum(g, *x, |gx| {
                    for i in 0..grad.len() {
                        if xd[i] >= *lo && xd[i] <= *hi {
                            gx[i] += grad[i];
                        }
                    }
                });
            }
            Op::Softmax(x) => {
                let (rows, cols) = out.dims2();
                let s = out.data();
                self.accum(g, *x, |gx| {
                    for r in 0..rows {
                        let sr = &s[r * cols..(r + 1) * cols];
                        let gr = &grad[r * cols..(r + 1) * cols];
                        let inner = dot(sr, gr);
                        for c in 0..cols {
                            gx[r * cols + c] += sr[c] * (gr[c] - inner);
                        }
                    }
                });
            }
            Op::Concat(parts) => {
                let (rows, total) = out.dims2();
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    self.accum(g, p, |gp| {
                        for r in 0..rows {
                            axpy(1.0, &grad[r * total + offset..r * total + offset + w], &mut gp[r * w..(r + 1) * w]);
                        }
                    });
                    offset += w;
                }
            }
            Op::Mix { weights, experts } => {
                let k = experts.len();
                let (rows, width) = out.dims2();
                let w_rows = self.value(*weights).rows();
                let w = self.value(*weights).data();
                for (j, &e) in experts.iter().enumerate() {
                    self.accum(g, e, |ge| {
                        for r in 0..rows {
                            let wr = if w_rows == 1 { w[j] } else { w[r * k + j] };
                            axpy(wr, &grad[r * width..(r + 1) * width], &mut ge[r * width..(r + 1) * width]);
                        }
                    });
                }
                self.accum(g, *weights, |gw| {
                    for (j, &e) in experts.iter().enumerate() {
                        let ed = self.value(e).data();
                        for r in 0..rows {
                            let d = dot(&grad[r * width..(r + 1) * width], &ed[r * width..(r + 1) * width]);
                            if w_rows == 1 {
                                gw[j] += d;
                            } else {
                                gw[r * k + j] += d;
                            }
                        }
                    }
                });
            }
            Op::Gather { table, indices } => {
                let dim = self.value(*table).cols();
                self.accum(g, *table, |gt| {
                    for (r, &i) in indices.iter().enumerate() {
                        axpy(1.0, &grad[r * dim..(r + 1) * dim], &mut gt[i * dim..(i + 1) * dim]);
                    }
                });
            }
            Op::Sum(x) => self.accum(g, *x, |gx| gx.iter_mut().for_each(|v| *v += grad[0])),
            Op::Mean(x) => {
                let n = self.value(*x).len() as f64;
                self.accum(g, *x, |gx| gx.iter_mut().for_each(|v| *v += grad[0] / n));
            }
            Op::Bce { probs, targets } => {
                let p = self.value(*probs).data();
                self.accum(g, *probs, |gp| {
                    for i in 0..grad.len() {
                        let pi = p[i];
                        if (PROB_CLAMP..=1.0 - PROB_CLAMP).contains(&pi) {
                            gp[i] += grad[i] * (pi - targets[i]) / (pi * (1.0 - pi));
                        }
                    }
                });
            }
        }
    }
}

#[inline]
fn bcast(x: &[f64], i: usize) -> usize {
    if x.len() == 1 {
        0
    } else {
        i
    }
}

/// Adds `sign * grad` into `target`, summing everything when `target` is a
/// broadcast scalar.
fn reduce_into(target: &mut [f64], grad: &[f64], sign: f64) {
    if target.len() == grad.len() {
        axpy(sign, grad, target);
    } else {
        target[0] += sign * grad.iter().sum::<f64>();
    }
}
