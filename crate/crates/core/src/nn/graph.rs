//! Eager reverse-mode differentiation over [`Tensor`] values.
//!
//! Every operation computes its value immediately and records how to push
//! gradients back to its inputs. [`Graph::backward`] walks the record in
//! reverse creation order, so gradient accumulation order is fixed.

use std::collections::{BTreeMap, HashMap};

use super::tensor::{matmul_acc, matmul_at_acc, matmul_bt_acc, softmax_rows};
use super::{Gradients, ParameterSet, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)

enum Op {
    Param,
    Const,
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Gather { table: Var, ids: Vec<usize> },
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, rstd: Vec<f64> },
    Gelu(Var),
    Softmax(Var),
    SliceCols { x: Var, start: usize },
    ConcatCols(Vec<Var>),
    MeanRows(Var),
    Sum(Var),
    CrossEntropy { logits: Var, targets: Vec<usize>, mask: Vec<bool>, probs: Vec<f64>, normalizer: f64 },
}

struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<String, Var>,
}

fn shape_err(op: &str, msg: String) -> Error {
    Error::Tensor { tensor: op.to_string(), message: msg }
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

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        let t = &self.nodes[v.0].value;
        (t.rows(), t.cols())
    }

    /// Leaf bound to a named parameter. Repeated calls return the same node.
    pub fn param(&mut self, params: &ParameterSet, name: &str) -> Result<Var> {
        if let Some(&v) = self.params.get(name) {
            return Ok(v);
        }
        let value = params
            .get(name)
            .ok_or_else(|| Error::Tensor { tensor: name.to_string(), message: "no such parameter".into() })?
            .clone();
        let v = self.push(value, Op::Param);
        self.params.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Const)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(shape_err("add", format!("{:?} vs {:?}", va.shape(), vb.shape())));
        }
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x + y).collect();
        let out = Tensor::new(va.shape().to_vec(), data)?;
        Ok(self.push(out, Op::Add(a, b)))
    }

    /// Adds a length-`c` row to every row of an `r x c` matrix.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (r, c) = self.dims(x);
        if self.value(bias).len() != c {
            return Err(shape_err("add_row", format!("bias {} vs cols {c}", self.value(bias).len())));
        }
        let b = self.value(bias).data();
        let mut data = self.value(x).data().to_vec();
        for i in 0..r {
            for (o, bv) in data[i * c..(i + 1) * c].iter_mut().zip(b) {
                *o += bv;
            }
        }
        let out = Tensor::new(self.value(x).shape().to_vec(), data)?;
        Ok(self.push(out, Op::AddRow(x, bias)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(shape_err("mul", format!("{:?} vs {:?}", va.shape(), vb.shape())));
        }
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x * y).collect();
        let out = Tensor::new(va.shape().to_vec(), data)?;
        Ok(self.push(out, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let va = self.value(a);
        let out = Tensor::new(va.shape().to_vec(), va.data().iter().map(|x| x * s).collect()).unwrap();
        self.push(out, Op::Scale(a, s))
    }

    /// `a[m x k] * b[k x n]`
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims(a);
        let (k2, n) = self.dims(b);
        if k != k2 {
            return Err(shape_err("matmul", format!("{m}x{k} * {k2}x{n}")));
        }
        let mut out = vec![0.0; m * n];
        matmul_acc(&mut out, self.value(a).data(), self.value(b).data(), m, k, n);
        Ok(self.push(Tensor::matrix(m, n, out), Op::MatMul(a, b)))
    }

    /// `a[m x k] * b[n x k]^T`
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims(a);
        let (n, k2) = self.dims(b);
        if k != k2 {
            return Err(shape_err("matmul_bt", format!("{m}x{k} * ({n}x{k2})^T")));
        }
        let mut out = vec![0.0; m * n];
        matmul_bt_acc(&mut out, self.value(a).data(), self.value(b).data(), m, k, n);
        Ok(self.push(Tensor::matrix(m, n, out), Op::MatMulBt(a, b)))
    }

    /// Rows of `table` selected by `ids`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (n, d) = self.dims(table);
        let t = self.value(table).data();
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= n {
                return Err(shape_err("gather", format!("id {id} out of range for {n} rows")));
            }
            out.extend_from_slice(&t[id * d..(id + 1) * d]);
        }
        Ok(self.push(Tensor::matrix(ids.len(), d, out), Op::Gather { table, ids: ids.to_vec() }))
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let (r, c) = self.dims(x);
        if self.value(gamma).len() != c || self.value(beta).len() != c {
            return Err(shape_err("layer_norm", format!("gain/bias length vs cols {c}")));
        }
        let xs = self.value(x).data();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut xhat = vec![0.0; r * c];
        let mut rstd = vec![0.0; r];
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &xs[i * c..(i + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let rs = 1.0 / (var + LN_EPS).sqrt();
            rstd[i] = rs;
            for j in 0..c {
                let h = (row[j] - mean) * rs;
                xhat[i * c + j] = h;
                out[i * c + j] = h * g[j] + b[j];
            }
        }
        let out = Tensor::new(self.value(x).shape().to_vec(), out)?;
        Ok(self.push(out, Op::LayerNorm { x, gamma, beta, xhat, rstd }))
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, x: Var) -> Var {
        let vx = self.value(x);
        let data = vx
            .data()
            .iter()
            .map(|&v| 0.5 * v * (1.0 + (GELU_C * (v + 0.044715 * v * v * v)).tanh()))
            .collect();
        let out = Tensor::new(vx.shape().to_vec(), data).unwrap();
        self.push(out, Op::Gelu(x))
    }

    /// Row softmax; with `causal` entries above the diagonal are zero.
    pub fn softmax(&mut self, x: Var, causal: bool) -> Var {
        let (r, c) = self.dims(x);
        let data = softmax_rows(self.value(x).data(), r, c, causal);
        self.push(Tensor::matrix(r, c, data), Op::Softmax(x))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, width: usize) -> Result<Var> {
        let (r, c) = self.dims(x);
        if start + width > c {
            return Err(shape_err("slice_cols", format!("[{start}, {}) of {c} cols", start + width)));
        }
        let xs = self.value(x).data();
        let mut out = Vec::with_capacity(r * width);
        for i in 0..r {
            out.extend_from_slice(&xs[i * c + start..i * c + start + width]);
        }
        Ok(self.push(Tensor::matrix(r, width, out), Op::SliceCols { x, start }))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let r = self.dims(parts[0]).0;
        if parts.iter().any(|&p| self.dims(p).0 != r) {
            return Err(shape_err("concat_cols", "row counts differ".into()));
        }
        let total: usize = parts.iter().map(|&p| self.dims(p).1).sum();
        let mut out = Vec::with_capacity(r * total);
        for i in 0..r {
            for &p in parts {
                let c = self.dims(p).1;
                out.extend_from_slice(&self.value(p).data()[i * c..(i + 1) * c]);
            }
        }
        Ok(self.push(Tensor::matrix(r, total, out), Op::ConcatCols(parts.to_vec())))
    }

    /// Column means: `r x c -> 1 x c`.
    pub fn mean_rows(&mut self, x: Var) -> Var {
        let (r, c) = self.dims(x);
        let xs = self.value(x).data();
        let mut out = vec![0.0; c];
        for i in 0..r {
            for (o, v) in out.iter_mut().zip(&xs[i * c..(i + 1) * c]) {
                *o += v;
            }
        }
        let denom = r.max(1) as f64;
        out.iter_mut().for_each(|o| *o /= denom);
        self.push(Tensor::matrix(1, c, out), Op::MeanRows(x))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    /// Softmax cross-entropy over the rows of `logits`: the sum of
    /// `-log softmax(row)[target]` over unmasked rows, divided by
    /// `normalizer` (the unmasked row count when `None`).
    pub fn cross_entropy(
        &mut self,
        logits: Var,
        targets: &[usize],
        mask: Option<&[bool]>,
        normalizer: Option<f64>,
    ) -> Result<Var> {
        let (steps, n) = self.dims(logits);
        if targets.len() != steps {
            return Err(shape_err("cross_entropy", format!("{} targets for {steps} steps", targets.len())));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= n) {
            return Err(Error::Invalid(format!("target id {bad} >= vocabulary size {n}")));
        }
        let mask: Vec<bool> = match mask {
            Some(m) if m.len() == steps => m.to_vec(),
            Some(m) => return Err(shape_err("cross_entropy", format!("mask length {} vs {steps}", m.len()))),
            None => vec![true; steps],
        };
        let count = mask.iter().filter(|m| **m).count();
        let normalizer = normalizer.unwrap_or(count.max(1) as f64);
        let probs = softmax_rows(self.value(logits).data(), steps, n, false);
        let xs = self.value(logits).data();
        let mut total = 0.0;
        for i in 0..steps {
            if mask[i] {
                let row = &xs[i * n..(i + 1) * n];
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                total += lse - row[targets[i]];
            }
        }
        let loss = if count == 0 { 0.0 } else { total / normalizer };
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy { logits, targets: targets.to_vec(), mask, probs, normalizer },
        ))
    }

    /// Reverse pass from a scalar node. Returns gradients for every
    /// parameter leaf that the loss depends on.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::Tensor {
                tensor: "loss".into(),
                message: format!("backward needs a scalar, got shape {:?}", self.value(loss).shape()),
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);

        fn acc(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut Vec<f64> {
            grads[v.0].get_or_insert_with(|| vec![0.0; len])
        }

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Param | Op::Const => {
                    grads[idx] = Some(g);
                }
                Op::Add(a, b) => {
                    for v in [a, b] {
                        let len = self.value(*v).len();
                        acc(&mut grads, *v, len).iter_mut().zip(&g).for_each(|(o, x)| *o += x);
                    }
                }
                Op::AddRow(x, bias) => {
                    let (r, c) = self.dims(*x);
                    acc(&mut grads, *x, r * c).iter_mut().zip(&g).for_each(|(o, v)| *o += v);
                    let gb = acc(&mut grads, *bias, c);
                    for i in 0..r {
                        gb.iter_mut().zip(&g[i * c..(i + 1) * c]).for_each(|(o, v)| *o += v);
                    }
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                    let ga = acc(&mut grads, *a, va.len());
                    for i in 0..g.len() {
                        ga[i] += g[i] * vb[i];
                    }
                    let gb = acc(&mut grads, *b, vb.len());
                    for i in 0..g.len() {
                        gb[i] += g[i] * va[i];
                    }
                }
                Op::Scale(a, s) => {
                    let len = self.value(*a).len();
                    acc(&mut grads, *a, len).iter_mut().zip(&g).for_each(|(o, v)| *o += s * v);
                }
                Op::MatMul(a, b) => {
                    let (m, k) = self.dims(*a);
                    let n = self.dims(*b).1;
                    let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                    // dA = G B^T ; dB = A^T G
                    matmul_bt_acc(acc(&mut grads, *a, m * k), &g, vb, m, n, k);
                    matmul_at_acc(acc(&mut grads, *b, k * n), va, &g, m, k, n);
                }
                Op::MatMulBt(a, b) => {
                    let (m, k) = self.dims(*a);
                    let n = self.dims(*b).0;
                    let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                    // dA = G B ; dB = G^T A
                    matmul_acc(acc(&mut grads, *a, m * k), &g, vb, m, n, k);
                    matmul_at_acc(acc(&mut grads, *b, n * k), &g, va, m, n, k);
                }
                Op::Gather { table, ids } => {
                    let (n, d) = self.dims(*table);
                    let gt = acc(&mut grads, *table, n * d);
                    for (i, &id) in ids.iter().enumerate() {
                        gt[id * d..(id + 1) * d].iter_mut().zip(&g[i * d..(i + 1) * d]).for_each(|(o, v)| *o += v);
                    }
                }
                Op::LayerNorm { x, gamma, beta, xhat, rstd } => {
                    let (r, c) = self.dims(*x);
                    let gamma_v = self.value(*gamma).data();
                    {
                        let gg = acc(&mut grads, *gamma, c);
                        for i in 0..r {
                            for j in 0..c {
                                gg[j] += g[i * c + j] * xhat[i * c + j];
                            }
                        }
                    }
                    {
                        let gbeta = acc(&mut grads, *beta, c);
                        for i in 0..r {
                            for j in 0..c {
                                gbeta[j] += g[i * c + j];
                            }
                        }
                    }
                    let gx = acc(&mut grads, *x, r * c);
                    let cf = c as f64;
                    for i in 0..r {
                        let mut sum_d = 0.0;
                        let mut sum_dx = 0.0;
                        for j in 0..c {
                            let d = g[i * c + j] * gamma_v[j];
                            sum_d += d;
                            sum_dx += d * xhat[i * c + j];
                        }
                        for j in 0..c {
                            let d = g[i * c + j] * gamma_v[j];
                            gx[i * c + j] += rstd[i] / cf * (cf * d - sum_d - xhat[i * c + j] * sum_dx);
                        }
                    }
                }
                Op::Gelu(x) => {
                    let xs = self.value(*x).data();
                    let gx = acc(&mut grads, *x, xs.len());
                    for i in 0..xs.len() {
                        let v = xs[i];
                        let t = (GELU_C * (v + 0.044715 * v * v * v)).tanh();
                        let d = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * v * v);
                        gx[i] += g[i] * d;
                    }
                }
                Op::Softmax(x) => {
                    let (r, c) = self.dims(*x);
                    let y = node.value.data();
                    let gx = acc(&mut grads, *x, r * c);
                    for i in 0..r {
                        let dot: f64 = (0..c).map(|j| g[i * c + j] * y[i * c + j]).sum();
                        for j in 0..c {
                            gx[i * c + j] += y[i * c + j] * (g[i * c + j] - dot);
                        }
                    }
                }
                Op::SliceCols { x, start } => {
                    let (r, c) = self.dims(*x);
                    let w = node.value.cols();
                    let gx = acc(&mut grads, *x, r * c);
                    for i in 0..r {
                        gx[i * c + start..i * c + start + w].iter_mut().zip(&g[i * w..(i + 1) * w]).for_each(|(o, v)| *o += v);
                    }
                }
                Op::ConcatCols(parts) => {
                    let total = node.value.cols();
                    let r = node.value.rows();
                    let mut offset = 0;
                    for p in parts {
                        let c = self.dims(*p).1;
                        let gp = acc(&mut grads, *p, r * c);
                        for i in 0..r {
                            gp[i * c..(i + 1) * c]
                                .iter_mut()
                                .zip(&g[i * total + offset..i * total + offset + c])
                                .for_each(|(o, v)| *o += v);
                        }
                        offset += c;
                    }
                }
                Op::MeanRows(x) => {
                    let (r, c) = self.dims(*x);
                    let gx = acc(&mut grads, *x, r * c);
                    let inv = 1.0 / r.max(1) as f64;
                    for i in 0..r {
                        gx[i * c..(i + 1) * c].iter_mut().zip(&g).for_each(|(o, v)| *o += v * inv);
                    }
                }
                Op::Sum(x) => {
                    let len = self.value(*x).len();
                    acc(&mut grads, *x, len).iter_mut().for_each(|o| *o += g[0]);
                }
                Op::CrossEntropy { logits, targets, mask, probs, normalizer } => {
                    let (steps, n) = self.dims(*logits);
                    let gl = acc(&mut grads, *logits, steps * n);
                    let scale = g[0] / normalizer;
                    for i in 0..steps {
                        if !mask[i] {
                            continue;
                        }
                        for j in 0..n {
                            gl[i * n + j] += scale * probs[i * n + j];
                        }
                        gl[i * n + targets[i]] -= scale;
                    }
                }
            }
        }

        let mut out = BTreeMap::new();
        for (name, &v) in &self.params {
            if let Some(g) = grads[v.0].take() {
                out.insert(name.clone(), Tensor::new(self.value(v).shape().to_vec(), g)?);
            }
        }
        Ok(Gradients(out))
    }
}
