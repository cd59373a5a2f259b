//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! Every operation appends a node holding its forward value and the inputs
//! it read. [`Graph::backward`] walks the tape in reverse and accumulates
//! vector-Jacobian products. Nodes built only from constants never receive
//! gradient buffers.

use std::rc::Rc;

use super::kernels::{self, dot};
use super::resample::ResamplePlan;
use super::tensor::Tensor;
use crate::error::{shape_err, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddRow(Var, Var),
    MulRow(Var, Var),
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    Transpose(Var),
    Softmax(Var),
    /// Input and the cached `tanh` of the inner polynomial.
    Gelu(Var, Rc<Vec<f64>>),
    Sigmoid(Var),
    LayerNorm(Var, Rc<Vec<f64>>),
    Sum(Var),
    MeanRows(Var),
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize),
    GatherRows(Var, Rc<Vec<usize>>),
    Reshape(Var),
    Resample(Var, Rc<ResamplePlan>),
    CrossEntropy(Var, Rc<Vec<(usize, usize)>>),
    Bce(Var, Rc<Vec<f64>>, f64),
    Dice(Var, Rc<Vec<f64>>, f64),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradient buffers indexed by [`Var`]; `None` when no gradient reached it.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient or zeros of the right length.
    pub fn get_or_zeros(&self, g: &Graph, v: Var) -> Vec<f64> {
        self.get(v)
            .map(|s| s.to_vec())
            .unwrap_or_else(|| vec![0.0; g.value(v).len()])
    }
}

fn same_shape(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(shape_err!("{what}: {:?} vs {:?}", a.shape(), b.shape()));
    }
    Ok(())
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Differentiable input.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data()[0]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    fn unary(&mut self, a: Var, value: Tensor, op: Op) -> Var {
        let rg = self.rg(a);
        self.push(value, op, rg)
    }

    fn binary(&mut self, a: Var, b: Var, value: Tensor, op: Op) -> Var {
        let rg = self.rg(a) || self.rg(b);
        self.push(value, op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape(ta, tb, "add")?;
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.binary(a, b, t, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape(ta, tb, "sub")?;
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x - y).collect();
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.binary(a, b, t, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape(ta, tb, "mul")?;
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.binary(a, b, t, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let ta = self.value(a);
        let data = ta.data().iter().map(|x| x * s).collect();
        let t = Tensor::new(ta.shape().to_vec(), data).expect("same shape");
        self.unary(a, t, Op::Scale(a, s))
    }

    /// Sum of several same-shaped values.
    pub fn sum_all(&mut self, vars: &[Var]) -> Result<Var> {
        let (first, rest) = vars
            .split_first()
            .ok_or_else(|| Error::Input("sum of an empty list".into()))?;
        let mut acc = *first;
        for &v in rest {
            acc = self.add(acc, v)?;
        }
        Ok(acc)
    }

    /// `m[r×c] + row[1×c]` broadcast over rows.
    pub fn add_row(&mut self, m: Var, row: Var) -> Result<Var> {
        let (tm, tr) = (self.value(m), self.value(row));
        let c = tm.cols();
        if tr.len() != c {
            return Err(shape_err!("add_row: {:?} vs row {:?}", tm.shape(), tr.shape()));
        }
        let mut data = tm.data().to_vec();
        for chunk in data.chunks_mut(c) {
            for (x, y) in chunk.iter_mut().zip(tr.data()) {
                *x += y;
            }
        }
        let t = Tensor::new(tm.shape().to_vec(), data)?;
        Ok(self.binary(m, row, t, Op::AddRow(m, row)))
    }

    /// `m[r×c] ⊙ row[1×c]` broadcast over rows.
    pub fn mul_row(&mut self, m: Var, row: Var) -> Result<Var> {
        let (tm, tr) = (self.value(m), self.value(row));
        let c = tm.cols();
        if tr.len() != c {
            return Err(shape_err!("mul_row: {:?} vs row {:?}", tm.shape(), tr.shape()));
        }
        let mut data = tm.data().to_vec();
        for chunk in data.chunks_mut(c) {
            for (x, y) in chunk.iter_mut().zip(tr.data()) {
                *x *= y;
            }
        }
        let t = Tensor::new(tm.shape().to_vec(), data)?;
        Ok(self.binary(m, row, t, Op::MulRow(m, row)))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (n, k, k2, m) = (ta.rows(), ta.cols(), tb.rows(), tb.cols());
        if k != k2 {
            return Err(shape_err!("matmul: {:?} · {:?}", ta.shape(), tb.shape()));
        }
        let mut out = vec![0.0; n * m];
        kernels::matmul_acc(&mut out, ta.data(), tb.data(), n, k, m);
        let t = Tensor::matrix(n, m, out)?;
        Ok(self.binary(a, b, t, Op::MatMul(a, b)))
    }

    /// `a · bᵀ`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (n, d, m, d2) = (ta.rows(), ta.cols(), tb.rows(), tb.cols());
        if d != d2 {
            return Err(shape_err!("matmul_nt: {:?} · {:?}ᵀ", ta.shape(), tb.shape()));
        }
        let mut out = vec![0.0; n * m];
        kernels::matmul_nt_acc(&mut out, ta.data(), tb.data(), n, d, m);
        let t = Tensor::matrix(n, m, out)?;
        Ok(self.binary(a, b, t, Op::MatMulNT(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let (r, c) = (ta.rows(), ta.cols());
        let src = ta.data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = src[i * c + j];
            }
        }
        let t = Tensor::matrix(c, r, out).expect("transpose shape");
        self.unary(a, t, Op::Transpose(a))
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let c = ta.cols();
        let mut data = ta.data().to_vec();
        for row in data.chunks_mut(c) {
            kernels::softmax_in_place(row);
        }
        let t = Tensor::new(ta.shape().to_vec(), data).expect("same shape");
        self.unary(a, t, Op::Softmax(a))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let tanh: Vec<f64> = ta.data().iter().map(|&x| kernels::gelu_tanh(x)).collect();
        let data = ta.data().iter().zip(&tanh).map(|(&x, &t)| 0.5 * x * (1.0 + t)).collect();
        let t = Tensor::new(ta.shape().to_vec(), data).expect("same shape");
        self.unary(a, t, Op::Gelu(a, Rc::new(tanh)))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let data = ta.data().iter().map(|&x| kernels::sigmoid(x)).collect();
        let t = Tensor::new(ta.shape().to_vec(), data).expect("same shape");
        self.unary(a, t, Op::Sigmoid(a))
    }

    /// Row-wise standardisation (no affine part).
    pub fn layer_norm(&mut self, a: Var, eps: f64) -> Var {
        let ta = self.value(a);
        let c = ta.cols();
        let mut data = ta.data().to_vec();
        let mut inv_std = Vec::with_capacity(ta.rows());
        for row in data.chunks_mut(c) {
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / c as f64;
            let is = 1.0 / (var + eps).sqrt();
            for x in row.iter_mut() {
                *x = (*x - mean) * is;
            }
            inv_std.push(is);
        }
        let t = Tensor::new(ta.shape().to_vec(), data).expect("same shape");
        self.unary(a, t, Op::LayerNorm(a, Rc::new(inv_std)))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.unary(a, Tensor::scalar(s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Column means: `r×c → 1×c`.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let (r, c) = (ta.rows(), ta.cols());
        let mut out = vec![0.0; c];
        for row in ta.data().chunks(c) {
            for (o, x) in out.iter_mut().zip(row) {
                *o += x;
            }
        }
        for o in out.iter_mut() {
            *o /= r as f64;
        }
        self.unary(a, Tensor::row(out), Op::MeanRows(a))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Input("concat of an empty list".into()));
        }
        let c = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        let mut rg = false;
        for &p in parts {
            let t = self.value(p);
            if t.cols() != c {
                return Err(shape_err!("concat_rows: width {} vs {}", t.cols(), c));
            }
            rows += t.rows();
            data.extend_from_slice(t.data());
            rg |= self.rg(p);
        }
        let t = Tensor::matrix(rows, c, data)?;
        Ok(self.push(t, Op::ConcatRows(parts.to_vec()), rg))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let ta = self.value(a);
        if len == 0 || start + len > ta.rows() {
            return Err(shape_err!(
                "slice_rows {start}..{} of {} rows",
                start + len,
                ta.rows()
            ));
        }
        let c = ta.cols();
        let data = ta.data()[start * c..(start + len) * c].to_vec();
        let t = Tensor::matrix(len, c, data)?;
        Ok(self.unary(a, t, Op::SliceRows(a, start)))
    }

    pub fn row(&mut self, a: Var, i: usize) -> Result<Var> {
        self.slice_rows(a, i, 1)
    }

    /// Embedding lookup: rows of `table` selected by `ids`.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let tt = self.value(table);
        let (r, c) = (tt.rows(), tt.cols());
        if ids.is_empty() {
            return Err(Error::Input("gather of no rows".into()));
        }
        let mut data = Vec::with_capacity(ids.len() * c);
        for &i in ids {
            if i >= r {
                return Err(shape_err!("gather row {i} of {r}"));
            }
            data.extend_from_slice(tt.row_slice(i));
        }
        let t = Tensor::matrix(ids.len(), c, data)?;
        Ok(self.unary(table, t, Op::GatherRows(table, Rc::new(ids.to_vec()))))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a).clone().reshape(shape)?;
        Ok(self.unary(a, t, Op::Reshape(a)))
    }

    /// Apply a spatial resampling plan to an `in_rows × c` map.
    pub fn resample(&mut self, a: Var, plan: Rc<ResamplePlan>) -> Result<Var> {
        let ta = self.value(a);
        if ta.rows() != plan.in_rows {
            return Err(shape_err!(
                "resample expects {} locations, got {}",
                plan.in_rows,
                ta.rows()
            ));
        }
        let c = ta.cols();
        let out = plan.apply(ta.data(), c);
        let t = Tensor::matrix(plan.out_rows, c, out)?;
        Ok(self.unary(a, t, Op::Resample(a, plan)))
    }

    /// Mean token cross-entropy over the listed `(row, target)` pairs of a
    /// `rows × vocab` logit matrix.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[(usize, usize)]) -> Result<Var> {
        let tl = self.value(logits);
        let (r, v) = (tl.rows(), tl.cols());
        if targets.is_empty() {
            return Err(Error::Input("cross-entropy over no targets".into()));
        }
        let mut total = 0.0;
        for &(row, tgt) in targets {
            if row >= r || tgt >= v {
                return Err(shape_err!("cross-entropy target ({row}, {tgt}) outside {r}×{v}"));
            }
            let x = tl.row_slice(row);
            let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + x.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
            total += lse - x[tgt];
        }
        let t = Tensor::scalar(total / targets.len() as f64);
        Ok(self.unary(logits, t, Op::CrossEntropy(logits, Rc::new(targets.to_vec()))))
    }

    /// Mean per-pixel binary cross-entropy; predictions are clamped to
    /// `[delta, 1 - delta]` before the logarithm.
    pub fn bce(&mut self, pred: Var, gt: &[f64], delta: f64) -> Result<Var> {
        let tp = self.value(pred);
        if tp.len() != gt.len() {
            return Err(shape_err!("bce: {} predictions vs {} targets", tp.len(), gt.len()));
        }
        let t = Tensor::scalar(bce_value(tp.data(), gt, delta));
        Ok(self.unary(pred, t, Op::Bce(pred, Rc::new(gt.to_vec()), delta)))
    }

    /// Smoothed Dice loss `1 - (2Σpg + ε) / (Σp + Σg + ε)`.
    pub fn dice(&mut self, pred: Var, gt: &[f64], eps: f64) -> Result<Var> {
        let tp = self.value(pred);
        if tp.len() != gt.len() {
            return Err(shape_err!("dice: {} predictions vs {} targets", tp.len(), gt.len()));
        }
        let t = Tensor::scalar(dice_value(tp.data(), gt, eps));
        Ok(self.unary(pred, t, Op::Dice(pred, Rc::new(gt.to_vec()), eps)))
    }

    /// Reverse sweep from a scalar output.
    pub fn backward(&self, out: Var) -> Result<Gradients> {
        if self.value(out).len() != 1 {
            return Err(shape_err!(
                "backward needs a scalar output, got {:?}",
                self.value(out).shape()
            ));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[out.0] = Some(vec![1.0]);
        for idx in (0..=out.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.backprop_node(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn backprop_node(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let y = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.acc(grads, *a, |d| add_into(d, g));
                self.acc(grads, *b, |d| add_into(d, g));
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, |d| add_into(d, g));
                self.acc(grads, *b, |d| {
                    for (x, gv) in d.iter_mut().zip(g) {
                        *x -= gv;
                    }
                });
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                self.acc(grads, *a, |d| {
                    for i in 0..d.len() {
                        d[i] += g[i] * vb[i];
                    }
                });
                self.acc(grads, *b, |d| {
                    for i in 0..d.len() {
                        d[i] += g[i] * va[i];
                    }
                });
            }
            Op::Scale(a, s) => {
                self.acc(grads, *a, |d| {
                    for (x, gv) in d.iter_mut().zip(g) {
                        *x += s * gv;
                    }
                });
            }
            Op::AddRow(m, r) => {
                self.acc(grads, *m, |d| add_into(d, g));
                let c = self.value(*r).len();
                self.acc(grads, *r, |d| {
                    for chunk in g.chunks(c) {
                        add_into(d, chunk);
                    }
                });
            }
            Op::MulRow(m, r) => {
                let vr = self.value(*r).data();
                let vm = self.value(*m).data();
                let c = vr.len();
                self.acc(grads, *m, |d| {
                    for (dc, gc) in d.chunks_mut(c).zip(g.chunks(c)) {
                        for j in 0..c {
                            dc[j] += gc[j] * vr[j];
                        }
                    }
                });
                self.acc(grads, *r, |d| {
                    for (mc, gc) in vm.chunks(c).zip(g.chunks(c)) {
                        for j in 0..c {
                            d[j] += gc[j] * mc[j];
                        }
                    }
                });
            }
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (n, k, m) = (ta.rows(), ta.cols(), tb.cols());
                self.acc(grads, *a, |d| kernels::matmul_nt_acc(d, g, tb.data(), n, m, k));
                self.acc(grads, *b, |d| kernels::matmul_tn_acc(d, ta.data(), g, n, k, m));
            }
            Op::MatMulNT(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (n, dd, m) = (ta.rows(), ta.cols(), tb.rows());
                self.acc(grads, *a, |d| kernels::matmul_acc(d, g, tb.data(), n, m, dd));
                self.acc(grads, *b, |d| kernels::matmul_tn_acc(d, g, ta.data(), n, m, dd));
            }
            Op::Transpose(a) => {
                let ta = self.value(*a);
                let (r, c) = (ta.rows(), ta.cols());
                self.acc(grads, *a, |d| {
                    for i in 0..r {
                        for j in 0..c {
                            d[i * c + j] += g[j * r + i];
                        }
                    }
                });
            }
            Op::Softmax(a) => {
                let c = node.value.cols();
                self.acc(grads, *a, |d| {
                    for ((dr, yr), gr) in d.chunks_mut(c).zip(y.chunks(c)).zip(g.chunks(c)) {
                        let s = dot(yr, gr);
                        for j in 0..c {
                            dr[j] += yr[j] * (gr[j] - s);
                        }
                    }
                });
            }
            Op::Gelu(a, tanh) => {
                let x = self.value(*a).data();
                self.acc(grads, *a, |d| {
                    for i in 0..d.len() {
                        d[i] += g[i] * kernels::gelu_grad_from_tanh(x[i], tanh[i]);
                    }
                });
            }
            Op::Sigmoid(a) => {
                self.acc(grads, *a, |d| {
                    for i in 0..d.len() {
                        d[i] += g[i] * y[i] * (1.0 - y[i]);
                    }
                });
            }
            Op::LayerNorm(a, inv_std) => {
                let c = node.value.cols();
                self.acc(grads, *a, |d| {
                    for (r, ((dr, yr), gr)) in
                        d.chunks_mut(c).zip(y.chunks(c)).zip(g.chunks(c)).enumerate()
                    {
                        let mg = gr.iter().sum::<f64>() / c as f64;
                        let mgy = dot(gr, yr) / c as f64;
                        for j in 0..c {
                            dr[j] += inv_std[r] * (gr[j] - mg - yr[j] * mgy);
                        }
                    }
                });
            }
            Op::Sum(a) => {
                self.acc(grads, *a, |d| {
                    for x in d.iter_mut() {
                        *x += g[0];
                    }
                });
            }
            Op::MeanRows(a) => {
                let ta = self.value(*a);
                let (r, c) = (ta.rows(), ta.cols());
                self.acc(grads, *a, |d| {
                    for dr in d.chunks_mut(c) {
                        for j in 0..c {
                            dr[j] += g[j] / r as f64;
                        }
                    }
                });
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    self.acc(grads, p, |d| add_into(d, &g[off..off + n]));
                    off += n;
                }
            }
            Op::SliceRows(a, start) => {
                let c = node.value.cols();
                let off = start * c;
                self.acc(grads, *a, |d| add_into(&mut d[off..off + g.len()], g));
            }
            Op::GatherRows(t, ids) => {
                let c = node.value.cols();
                self.acc(grads, *t, |d| {
                    for (k, &i) in ids.iter().enumerate() {
                        add_into(&mut d[i * c..(i + 1) * c], &g[k * c..(k + 1) * c]);
                    }
                });
            }
            Op::Reshape(a) => {
                self.acc(grads, *a, |d| add_into(d, g));
            }
            Op::Resample(a, plan) => {
                let c = node.value.cols();
                self.acc(grads, *a, |d| plan.apply_transpose_acc(g, c, d));
            }
            Op::CrossEntropy(l, targets) => {
                let tl = self.value(*l);
                let v = tl.cols();
                let w = g[0] / targets.len() as f64;
                self.acc(grads, *l, |d| {
                    for &(row, tgt) in targets.iter() {
                        let mut p = tl.row_slice(row).to_vec();
                        kernels::softmax_in_place(&mut p);
                        let dr = &mut d[row * v..(row + 1) * v];
                        for j in 0..v {
                            dr[j] += w * p[j];
                        }
                        dr[tgt] -= w;
                    }
                });
            }
            Op::Bce(p, gt, delta) => {
                let x = self.value(*p).data();
                let n = x.len() as f64;
                self.acc(grads, *p, |d| {
                    for i in 0..d.len() {
                        let v = x[i];
                        if v > *delta && v < 1.0 - delta {
                            d[i] += g[0] * (-gt[i] / v + (1.0 - gt[i]) / (1.0 - v)) / n;
                        }
                    }
                });
            }
            Op::Dice(p, gt, eps) => {
                let x = self.value(*p).data();
                let inter: f64 = x.iter().zip(gt.iter()).map(|(a, b)| a * b).sum();
                let denom = x.iter().sum::<f64>() + gt.iter().sum::<f64>() + eps;
                let num = 2.0 * inter + eps;
                self.acc(grads, *p, |d| {
                    for i in 0..d.len() {
                        d[i] -= g[0] * (2.0 * gt[i] * denom - num) / (denom * denom);
                    }
                });
            }
        }
    }

    fn acc(&self, grads: &mut [Option<Vec<f64>>], v: Var, f: impl FnOnce(&mut [f64])) {
        if !self.rg(v) {
            return;
        }
        let buf = grads[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.len()]);
        f(buf);
    }
}

fn add_into(d: &mut [f64], g: &[f64]) {
    for (x, y) in d.iter_mut().zip(g) {
        *x += y;
    }
}

pub(crate) fn bce_value(pred: &[f64], gt: &[f64], delta: f64) -> f64 {
    let n = pred.len() as f64;
    pred.iter()
        .zip(gt)
        .map(|(&p, &g)| {
            let c = p.clamp(delta, 1.0 - delta);
            -(g * c.ln() + (1.0 - g) * (1.0 - c).ln())
        })
        .sum::<f64>()
        / n
}

pub(crate) fn dice_value(pred: &[f64], gt: &[f64], eps: f64) -> f64 {
    let inter: f64 = pred.iter().zip(gt).map(|(a, b)| a * b).sum();
    let denom = pred.iter().sum::<f64>() + gt.iter().sum::<f64>() + eps;
    1.0 - (2.0 * inter + eps) / denom
}
