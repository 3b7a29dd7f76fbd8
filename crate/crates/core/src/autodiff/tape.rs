use std::collections::BTreeMap;

use statrs::function::erf::erf;

use super::tensor::{gemm, Tensor};
use crate::error::{Error, Result};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

/// Gradient of one node: dense, or a set of rows for embedding tables.
#[derive(Debug, Clone, PartialEq)]
pub enum Grad {
    Dense(Vec<f64>),
    Rows(BTreeMap<usize, Vec<f64>>),
}

impl Grad {
    /// Dense view with the given shape.
    pub fn to_dense(&self, rows: usize, cols: usize) -> Vec<f64> {
        match self {
            Grad::Dense(d) => d.clone(),
            Grad::Rows(map) => {
                let mut d = vec![0.0; rows * cols];
                for (&r, v) in map {
                    d[r * cols..(r + 1) * cols].copy_from_slice(v);
                }
                d
            }
        }
    }
}

enum Value<'p> {
    Own(Tensor),
    Ref(&'p Tensor),
}

enum Op {
    Leaf,
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    MatMul(Var, Var),
    CumSum(Var),
    ColumnwiseDot(Var, Var),
    MulByColumn(Var, Var),
    MulByRow(Var, Var),
    Gelu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Abs(Var),
    Reciprocal(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        shift: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Softmax(Var),
    LogSoftmax(Var),
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<f64>,
    },
    MeanRows(Var),
    SumRows(Var),
    SumAll(Var),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    Gather(Var, Vec<usize>),
}

struct Node<'p> {
    value: Value<'p>,
    op: Op,
    needs_grad: bool,
}

/// Records operations in execution (hence topological) order for one
/// forward pass. Parameters are borrowed, never copied.
pub struct Tape<'p> {
    nodes: Vec<Node<'p>>,
    consumed: bool,
}

impl Default for Tape<'_> {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_err(op: &'static str, shapes: &[(usize, usize)]) -> Error {
    let s: Vec<String> = shapes.iter().map(|(r, c)| format!("{r}x{c}")).collect();
    Error::Shape {
        op,
        shapes: s.join(", "),
    }
}

fn std_normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + erf(x / std::f64::consts::SQRT_2))
}

fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

pub fn gelu(x: f64) -> f64 {
    x * std_normal_cdf(x)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softmax_rows(x: &Tensor) -> Vec<f64> {
    let mut out = x.data.clone();
    for r in out.chunks_mut(x.cols) {
        let m = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for v in r.iter_mut() {
            *v = (*v - m).exp();
            s += *v;
        }
        for v in r.iter_mut() {
            *v /= s;
        }
    }
    out
}

impl<'p> Tape<'p> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            consumed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        match &self.nodes[v.0].value {
            Value::Own(t) => t,
            Value::Ref(t) => t,
        }
    }

    fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).shape()
    }

    fn push(&mut self, value: Tensor, op: Op, parents: &[Var]) -> Var {
        let needs_grad = parents.iter().any(|p| self.nodes[p.0].needs_grad);
        self.nodes.push(Node {
            value: Value::Own(value),
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A trainable parameter (receives a gradient).
    pub fn param(&mut self, t: &'p Tensor) -> Var {
        self.nodes.push(Node {
            value: Value::Ref(t),
            op: Op::Leaf,
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// An owned leaf that receives a gradient.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            value: Value::Own(t),
            op: Op::Leaf,
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// An input that needs no gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            value: Value::Own(t),
            op: Op::Leaf,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    fn zip_same(&self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err(op, &[ta.shape(), tb.shape()]));
        }
        let data = ta.data.iter().zip(&tb.data).map(|(&x, &y)| f(x, y)).collect();
        Ok(Tensor {
            rows: ta.rows,
            cols: ta.cols,
            data,
        })
    }

    fn map(&self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let t = self.value(a);
        Tensor {
            rows: t.rows,
            cols: t.cols,
            data: t.data.iter().map(|&x| f(x)).collect(),
        }
    }

    /// Elementwise sum; `b` may also be a single row broadcast over `a`'s rows.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa == sb {
            let v = self.zip_same("add", a, b, |x, y| x + y)?;
            return Ok(self.push(v, Op::Add(a, b), &[a, b]));
        }
        if sb.0 == 1 && sb.1 == sa.1 {
            let mut v = self.value(a).clone();
            let row = self.value(b).data.clone();
            for r in v.data.chunks_mut(sa.1) {
                for (x, y) in r.iter_mut().zip(&row) {
                    *x += y;
                }
            }
            return Ok(self.push(v, Op::AddRow(a, b), &[a, b]));
        }
        Err(shape_err("add", &[sa, sb]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip_same("sub", a, b, |x, y| x - y)?;
        Ok(self.push(v, Op::Sub(a, b), &[a, b]))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip_same("mul", a, b, |x, y| x * y)?;
        Ok(self.push(v, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.map(a, |x| x * s);
        self.push(v, Op::Scale(a, s), &[a])
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let v = self.map(a, |x| x + s);
        self.push(v, Op::AddScalar(a), &[a])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.cols != tb.rows {
            return Err(shape_err("matmul", &[ta.shape(), tb.shape()]));
        }
        let mut out = Tensor::zeros(ta.rows, tb.cols);
        gemm(&ta.data, ta.rows, ta.cols, false, &tb.data, tb.rows, tb.cols, false, &mut out.data, 0.0);
        Ok(self.push(out, Op::MatMul(a, b), &[a, b]))
    }

    /// Running sum down the rows (the sequence axis).
    pub fn cumulative_sum(&mut self, a: Var) -> Var {
        let mut v = self.value(a).clone();
        let c = v.cols;
        for r in 1..v.rows {
            for j in 0..c {
                v.data[r * c + j] += v.data[(r - 1) * c + j];
            }
        }
        self.push(v, Op::CumSum(a), &[a])
    }

    /// Per-row dot product of two equally shaped matrices, giving `rows x 1`.
    pub fn columnwise_dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err("columnwise_dot", &[ta.shape(), tb.shape()]));
        }
        let data: Vec<f64> = ta
            .data
            .chunks(ta.cols.max(1))
            .zip(tb.data.chunks(tb.cols.max(1)))
            .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p * q).sum())
            .collect();
        let v = Tensor {
            rows: ta.rows,
            cols: 1,
            data,
        };
        Ok(self.push(v, Op::ColumnwiseDot(a, b), &[a, b]))
    }

    /// `a * b` where `b` is `rows x 1` (scales rows) or `1 x cols` (scales columns).
    pub fn broadcast_mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if tb.shape() == (ta.rows, 1) {
            let mut v = ta.clone();
            for (r, s) in v.data.chunks_mut(ta.cols.max(1)).zip(&tb.data) {
                for x in r {
                    *x *= s;
                }
            }
            return Ok(self.push(v, Op::MulByColumn(a, b), &[a, b]));
        }
        if tb.shape() == (1, ta.cols) {
            let mut v = ta.clone();
            for r in v.data.chunks_mut(ta.cols.max(1)) {
                for (x, s) in r.iter_mut().zip(&tb.data) {
                    *x *= s;
                }
            }
            return Ok(self.push(v, Op::MulByRow(a, b), &[a, b]));
        }
        Err(shape_err("broadcast_mul", &[ta.shape(), tb.shape()]))
    }

    /// Exact (erf-based) GELU.
    pub fn gelu(&mut self, a: Var) -> Var {
        let v = self.map(a, gelu);
        self.push(v, Op::Gelu(a), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.map(a, f64::tanh);
        self.push(v, Op::Tanh(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.map(a, sigmoid);
        self.push(v, Op::Sigmoid(a), &[a])
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let v = self.map(a, f64::abs);
        self.push(v, Op::Abs(a), &[a])
    }

    pub fn reciprocal(&mut self, a: Var) -> Var {
        let v = self.map(a, |x| 1.0 / x);
        self.push(v, Op::Reciprocal(a), &[a])
    }

    /// Row-wise layer normalization with per-column gain and shift (`1 x cols`).
    pub fn layer_norm(&mut self, x: Var, gain: Var, shift: Var) -> Result<Var> {
        let (tx, tg, ts) = (self.value(x), self.value(gain), self.value(shift));
        let c = tx.cols;
        if tg.shape() != (1, c) || ts.shape() != (1, c) {
            return Err(shape_err("layer_norm", &[tx.shape(), tg.shape(), ts.shape()]));
        }
        let mut xhat = vec![0.0; tx.data.len()];
        let mut inv_std = vec![0.0; tx.rows];
        let mut out = Tensor::zeros(tx.rows, c);
        for r in 0..tx.rows {
            let row = tx.row(r);
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std[r] = inv;
            for j in 0..c {
                let h = (row[j] - mean) * inv;
                xhat[r * c + j] = h;
                out.data[r * c + j] = h * tg.data[j] + ts.data[j];
            }
        }
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                shift,
                xhat,
                inv_std,
            },
            &[x, gain, shift],
        ))
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let v = Tensor {
            rows: t.rows,
            cols: t.cols,
            data: softmax_rows(t),
        };
        self.push(v, Op::Softmax(a), &[a])
    }

    /// Row-wise log-softmax.
    pub fn log_softmax(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let mut v = t.clone();
        for r in v.data.chunks_mut(t.cols) {
            let m = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + r.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
            for x in r {
                *x -= lse;
            }
        }
        self.push(v, Op::LogSoftmax(a), &[a])
    }

    /// Mean negative log-likelihood of `targets` under row-wise softmax of `logits`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let t = self.value(logits);
        if targets.len() != t.rows || targets.iter().any(|&k| k >= t.cols) {
            return Err(Error::Shape {
                op: "cross_entropy",
                shapes: format!("logits {}x{} with {} targets", t.rows, t.cols, targets.len()),
            });
        }
        let probs = softmax_rows(t);
        let mut loss = 0.0;
        for (r, &k) in targets.iter().enumerate() {
            let row = t.row(r);
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
            loss += lse - row[k];
        }
        loss /= targets.len() as f64;
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            &[logits],
        ))
    }

    /// Mean over rows, giving `1 x cols`.
    pub fn mean_pool(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let mut v = Tensor::zeros(1, t.cols);
        for r in t.data.chunks(t.cols.max(1)) {
            for (s, x) in v.data.iter_mut().zip(r) {
                *s += x;
            }
        }
        let n = t.rows.max(1) as f64;
        for s in &mut v.data {
            *s /= n;
        }
        self.push(v, Op::MeanRows(a), &[a])
    }

    /// Sum over rows, giving `1 x cols`.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let mut v = Tensor::zeros(1, t.cols);
        for r in t.data.chunks(t.cols.max(1)) {
            for (s, x) in v.data.iter_mut().zip(r) {
                *s += x;
            }
        }
        self.push(v, Op::SumRows(a), &[a])
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.value(a).data.iter().sum();
        self.push(Tensor::scalar(s), Op::SumAll(a), &[a])
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(a);
        if start + len > t.rows {
            return Err(shape_err("slice_rows", &[t.shape(), (start, len)]));
        }
        let v = Tensor {
            rows: len,
            cols: t.cols,
            data: t.data[start * t.cols..(start + len) * t.cols].to_vec(),
        };
        Ok(self.push(v, Op::SliceRows(a, start), &[a]))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(a);
        if start + len > t.cols {
            return Err(shape_err("slice_cols", &[t.shape(), (start, len)]));
        }
        let mut data = Vec::with_capacity(t.rows * len);
        for r in 0..t.rows {
            data.extend_from_slice(&t.row(r)[start..start + len]);
        }
        let v = Tensor {
            rows: t.rows,
            cols: len,
            data,
        };
        Ok(self.push(v, Op::SliceCols(a, start), &[a]))
    }

    /// Stacks matrices with equal column counts vertically.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = parts.first().map_or(0, |&p| self.shape(p).1);
        if parts.is_empty() || parts.iter().any(|&p| self.shape(p).1 != cols) {
            let shapes: Vec<_> = parts.iter().map(|&p| self.shape(p)).collect();
            return Err(shape_err("concat_rows", &shapes));
        }
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            data.extend_from_slice(&t.data);
            rows += t.rows;
        }
        let v = Tensor { rows, cols, data };
        Ok(self.push(v, Op::ConcatRows(parts.to_vec()), parts))
    }

    /// Joins matrices with equal row counts side by side.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = parts.first().map_or(0, |&p| self.shape(p).0);
        if parts.is_empty() || parts.iter().any(|&p| self.shape(p).0 != rows) {
            let shapes: Vec<_> = parts.iter().map(|&p| self.shape(p)).collect();
            return Err(shape_err("concat_cols", &shapes));
        }
        let cols: usize = parts.iter().map(|&p| self.shape(p).1).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let v = Tensor { rows, cols, data };
        Ok(self.push(v, Op::ConcatCols(parts.to_vec()), parts))
    }

    /// Rows `ids` of `table`, giving `ids.len() x cols`.
    pub fn embedding_lookup(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let t = self.value(table);
        if let Some(&bad) = ids.iter().find(|&&i| i >= t.rows) {
            return Err(Error::Shape {
                op: "embedding_lookup",
                shapes: format!("id {bad} in table {}x{}", t.rows, t.cols),
            });
        }
        let mut data = Vec::with_capacity(ids.len() * t.cols);
        for &i in ids {
            data.extend_from_slice(t.row(i));
        }
        let v = Tensor {
            rows: ids.len(),
            cols: t.cols,
            data,
        };
        Ok(self.push(v, Op::Gather(table, ids.to_vec()), &[table]))
    }

    /// Reverse pass from a scalar. A tape supports exactly one backward pass.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::StaleTape);
        }
        let (r, c) = self.shape(loss);
        if (r, c) != (1, 1) {
            return Err(Error::NonScalarLoss { rows: r, cols: c });
        }
        self.consumed = true;
        let mut grads: Vec<Option<Grad>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Grad::Dense(vec![1.0]));
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad || matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let g = match grads[i].take() {
                Some(Grad::Dense(g)) => g,
                Some(rows @ Grad::Rows(_)) => {
                    let (r, c) = self.shape(Var(i));
                    rows.to_dense(r, c)
                }
                None => continue,
            };
            self.propagate(i, &g, &mut grads);
            // interior gradients are not reported
        }
        Ok(Gradients {
            grads: grads
                .into_iter()
                .zip(&self.nodes)
                .map(|(g, n)| if matches!(n.op, Op::Leaf) && n.needs_grad { g } else { None })
                .collect(),
        })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Grad>]) {
        let out = self.value(Var(i));
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.acc(grads, *a, || g.to_vec());
                self.acc(grads, *b, || g.to_vec());
            }
            Op::AddRow(a, b) => {
                self.acc(grads, *a, || g.to_vec());
                self.acc(grads, *b, || {
                    let mut s = vec![0.0; out.cols];
                    for r in g.chunks(out.cols) {
                        for (x, y) in s.iter_mut().zip(r) {
                            *x += y;
                        }
                    }
                    s
                });
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, || g.to_vec());
                self.acc(grads, *b, || g.iter().map(|x| -x).collect());
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                self.acc(grads, *a, || g.iter().zip(&tb.data).map(|(x, y)| x * y).collect());
                self.acc(grads, *b, || g.iter().zip(&ta.data).map(|(x, y)| x * y).collect());
            }
            Op::Scale(a, s) => self.acc(grads, *a, || g.iter().map(|x| x * s).collect()),
            Op::AddScalar(a) => self.acc(grads, *a, || g.to_vec()),
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                self.acc(grads, *a, || {
                    let mut d = vec![0.0; ta.len()];
                    gemm(g, out.rows, out.cols, false, &tb.data, tb.rows, tb.cols, true, &mut d, 0.0);
                    d
                });
                self.acc(grads, *b, || {
                    let mut d = vec![0.0; tb.len()];
                    gemm(&ta.data, ta.rows, ta.cols, true, g, out.rows, out.cols, false, &mut d, 0.0);
                    d
                });
            }
            Op::CumSum(a) => self.acc(grads, *a, || {
                let c = out.cols;
                let mut d = g.to_vec();
                for r in (0..out.rows.saturating_sub(1)).rev() {
                    for j in 0..c {
                        d[r * c + j] += d[(r + 1) * c + j];
                    }
                }
                d
            }),
            Op::ColumnwiseDot(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let c = ta.cols;
                let scaled = |other: &Tensor| {
                    let mut d = other.data.clone();
                    for (r, s) in d.chunks_mut(c.max(1)).zip(g) {
                        for x in r {
                            *x *= s;
                        }
                    }
                    d
                };
                self.acc(grads, *a, || scaled(tb));
                self.acc(grads, *b, || scaled(ta));
            }
            Op::MulByColumn(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let c = ta.cols.max(1);
                self.acc(grads, *a, || {
                    let mut d = g.to_vec();
                    for (r, s) in d.chunks_mut(c).zip(&tb.data) {
                        for x in r {
                            *x *= s;
                        }
                    }
                    d
                });
                self.acc(grads, *b, || {
                    g.chunks(c)
                        .zip(ta.data.chunks(c))
                        .map(|(gr, ar)| gr.iter().zip(ar).map(|(x, y)| x * y).sum())
                        .collect()
                });
            }
            Op::MulByRow(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let c = ta.cols.max(1);
                self.acc(grads, *a, || {
                    let mut d = g.to_vec();
                    for r in d.chunks_mut(c) {
                        for (x, s) in r.iter_mut().zip(&tb.data) {
                            *x *= s;
                        }
                    }
                    d
                });
                self.acc(grads, *b, || {
                    let mut s = vec![0.0; ta.cols];
                    for (gr, ar) in g.chunks(c).zip(ta.data.chunks(c)) {
                        for j in 0..ta.cols {
                            s[j] += gr[j] * ar[j];
                        }
                    }
                    s
                });
            }
            Op::Gelu(a) => {
                let ta = self.value(*a);
                self.acc(grads, *a, || {
                    g.iter()
                        .zip(&ta.data)
                        .map(|(d, &x)| d * (std_normal_cdf(x) + x * std_normal_pdf(x)))
                        .collect()
                });
            }
            Op::Tanh(a) => self.acc(grads, *a, || {
                g.iter().zip(&out.data).map(|(d, y)| d * (1.0 - y * y)).collect()
            }),
            Op::Sigmoid(a) => self.acc(grads, *a, || {
                g.iter().zip(&out.data).map(|(d, y)| d * y * (1.0 - y)).collect()
            }),
            Op::Abs(a) => {
                let ta = self.value(*a);
                self.acc(grads, *a, || {
                    g.iter()
                        .zip(&ta.data)
                        .map(|(d, &x)| if x > 0.0 { *d } else if x < 0.0 { -d } else { 0.0 })
                        .collect()
                });
            }
            Op::Reciprocal(a) => self.acc(grads, *a, || {
                g.iter().zip(&out.data).map(|(d, y)| -d * y * y).collect()
            }),
            Op::LayerNorm {
                x,
                gain,
                shift,
                xhat,
                inv_std,
            } => {
                let c = out.cols;
                let tg = self.value(*gain);
                self.acc(grads, *x, || {
                    let mut d = vec![0.0; g.len()];
                    for r in 0..out.rows {
                        let gr = &g[r * c..(r + 1) * c];
                        let hr = &xhat[r * c..(r + 1) * c];
                        let dh: Vec<f64> = gr.iter().zip(&tg.data).map(|(a, b)| a * b).collect();
                        let sum_dh: f64 = dh.iter().sum();
                        let sum_dh_h: f64 = dh.iter().zip(hr).map(|(a, b)| a * b).sum();
                        let k = inv_std[r] / c as f64;
                        for j in 0..c {
                            d[r * c + j] = k * (c as f64 * dh[j] - sum_dh - hr[j] * sum_dh_h);
                        }
                    }
                    d
                });
                self.acc(grads, *gain, || {
                    let mut s = vec![0.0; c];
                    for (gr, hr) in g.chunks(c).zip(xhat.chunks(c)) {
                        for j in 0..c {
                            s[j] += gr[j] * hr[j];
                        }
                    }
                    s
                });
                self.acc(grads, *shift, || {
                    let mut s = vec![0.0; c];
                    for gr in g.chunks(c) {
                        for j in 0..c {
                            s[j] += gr[j];
                        }
                    }
                    s
                });
            }
            Op::Softmax(a) => self.acc(grads, *a, || {
                let c = out.cols;
                let mut d = vec![0.0; g.len()];
                for ((dr, gr), yr) in d.chunks_mut(c).zip(g.chunks(c)).zip(out.data.chunks(c)) {
                    let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                    for j in 0..c {
                        dr[j] = yr[j] * (gr[j] - dot);
                    }
                }
                d
            }),
            Op::LogSoftmax(a) => self.acc(grads, *a, || {
                let c = out.cols;
                let mut d = vec![0.0; g.len()];
                for ((dr, gr), yr) in d.chunks_mut(c).zip(g.chunks(c)).zip(out.data.chunks(c)) {
                    let s: f64 = gr.iter().sum();
                    for j in 0..c {
                        dr[j] = gr[j] - yr[j].exp() * s;
                    }
                }
                d
            }),
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            } => {
                let c = self.value(*logits).cols;
                let scale = g[0] / targets.len() as f64;
                self.acc(grads, *logits, || {
                    let mut d = probs.clone();
                    for (r, &k) in targets.iter().enumerate() {
                        d[r * c + k] -= 1.0;
                    }
                    for x in &mut d {
                        *x *= scale;
                    }
                    d
                });
            }
            Op::MeanRows(a) => {
                let ta = self.value(*a);
                let n = ta.rows.max(1) as f64;
                self.acc(grads, *a, || {
                    let mut d = Vec::with_capacity(ta.len());
                    for _ in 0..ta.rows {
                        d.extend(g.iter().map(|x| x / n));
                    }
                    d
                });
            }
            Op::SumRows(a) => {
                let ta = self.value(*a);
                self.acc(grads, *a, || {
                    let mut d = Vec::with_capacity(ta.len());
                    for _ in 0..ta.rows {
                        d.extend_from_slice(g);
                    }
                    d
                });
            }
            Op::SumAll(a) => {
                let n = self.value(*a).len();
                self.acc(grads, *a, || vec![g[0]; n]);
            }
            Op::SliceRows(a, start) => {
                let ta = self.value(*a);
                let off = start * ta.cols;
                self.acc_in_place(grads, *a, |d| {
                    for (x, y) in d[off..off + g.len()].iter_mut().zip(g) {
                        *x += y;
                    }
                });
            }
            Op::SliceCols(a, start) => {
                let ta = self.value(*a);
                let len = out.cols;
                self.acc_in_place(grads, *a, |d| {
                    for r in 0..ta.rows {
                        let dst = &mut d[r * ta.cols + start..r * ta.cols + start + len];
                        for (x, y) in dst.iter_mut().zip(&g[r * len..(r + 1) * len]) {
                            *x += y;
                        }
                    }
                });
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    let seg = &g[off..off + n];
                    self.acc(grads, p, || seg.to_vec());
                    off += n;
                }
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let tp = self.value(p);
                    let w = tp.cols;
                    self.acc(grads, p, || {
                        let mut d = Vec::with_capacity(tp.len());
                        for r in 0..tp.rows {
                            d.extend_from_slice(&g[r * out.cols + off..r * out.cols + off + w]);
                        }
                        d
                    });
                    off += w;
                }
            }
            Op::Gather(table, ids) => {
                if !self.wants(*table) {
                    return;
                }
                let c = out.cols;
                let slot = &mut grads[table.0];
                if slot.is_none() {
                    *slot = Some(Grad::Rows(BTreeMap::new()));
                }
                match slot {
                    Some(Grad::Dense(d)) => {
                        for (k, &id) in ids.iter().enumerate() {
                            for j in 0..c {
                                d[id * c + j] += g[k * c + j];
                            }
                        }
                    }
                    Some(Grad::Rows(map)) => {
                        for (k, &id) in ids.iter().enumerate() {
                            let row = map.entry(id).or_insert_with(|| vec![0.0; c]);
                            for j in 0..c {
                                row[j] += g[k * c + j];
                            }
                        }
                    }
                    None => unreachable!(),
                }
            }
        }
    }

    /// Like `acc`, but `f` adds its contribution straight into the dense
    /// gradient buffer (so slices of a large input stay cheap).
    fn acc_in_place(&self, grads: &mut [Option<Grad>], v: Var, f: impl FnOnce(&mut [f64])) {
        if !self.wants(v) {
            return;
        }
        let t = self.value(v);
        let slot = &mut grads[v.0];
        if let Some(Grad::Rows(_)) = slot {
            let dense = slot.take().unwrap().to_dense(t.rows, t.cols);
            *slot = Some(Grad::Dense(dense));
        }
        match slot.get_or_insert_with(|| Grad::Dense(vec![0.0; t.len()])) {
            Grad::Dense(d) => f(d),
            Grad::Rows(_) => unreachable!("converted to dense above"),
        }
    }

    /// Adds a dense contribution to `v`'s gradient if `v` needs one.
    fn acc(&self, grads: &mut [Option<Grad>], v: Var, f: impl FnOnce() -> Vec<f64>) {
        if !self.wants(v) {
            return;
        }
        let d = f();
        match &mut grads[v.0] {
            slot @ None => *slot = Some(Grad::Dense(d)),
            Some(Grad::Dense(e)) => {
                for (x, y) in e.iter_mut().zip(&d) {
                    *x += y;
                }
            }
            Some(Grad::Rows(map)) => {
                let c = self.value(v).cols;
                let mut dense = d;
                for (&r, row) in map.iter() {
                    for j in 0..c {
                        dense[r * c + j] += row[j];
                    }
                }
                grads[v.0] = Some(Grad::Dense(dense));
            }
        }
    }
}

/// Gradients of the leaves of one backward pass.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Grad>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Grad> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Grad> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}
