//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every operation appends a node holding its output value and a record of
//! its inputs. Because nodes are only ever appended, the tape is already in
//! topological order and `backward` is a single reverse sweep.

use std::ops::Deref;

use super::tensor::{check_finite, Tensor};
use crate::error::{Error, Result};

/// Variance guard for [`Tape::layer_norm`].
pub const LAYER_NORM_EPS: f64 = 1e-5;
/// Probabilities are clamped to this floor before taking the log.
pub const LOG_CLAMP: f64 = 1e-12;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Value<'a> {
    Owned(Tensor),
    Borrowed(&'a Tensor),
}

impl Deref for Value<'_> {
    type Target = Tensor;

    fn deref(&self) -> &Tensor {
        match self {
            Value::Owned(t) => t,
            Value::Borrowed(t) => t,
        }
    }
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Transpose(Var),
    Reshape(Var),
    Relu(Var),
    LeakyRelu(Var, f64),
    Elu(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        normed: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Softmax(Var),
    OuterAdd(Var, Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceRows {
        x: Var,
        start: usize,
    },
    Sum(Var),
    CrossEntropy {
        probs: Var,
        labels: Vec<usize>,
    },
}

struct Node<'a> {
    value: Value<'a>,
    op: Op,
    requires_grad: bool,
}

/// Ordered record of executed operations.
///
/// Parameters may be borrowed for the lifetime `'a` so that building a tape
/// over a large model does not copy its weights.
#[derive(Default)]
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient with respect to `var`; zero when the loss does not depend on it.
    pub fn wrt(&self, var: Var) -> Tensor {
        match &self.grads[var.0] {
            Some(g) => Tensor::from_parts(self.shapes[var.0].clone(), g.clone()),
            None => Tensor::zeros(&self.shapes[var.0]),
        }
    }

    /// Moves the gradient of `var` out, leaving nothing behind.
    pub fn take(&mut self, var: Var) -> Option<Vec<f64>> {
        self.grads[var.0].take()
    }
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Shape {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

fn require_matrix(op: &'static str, t: &Tensor) -> Result<()> {
    if t.shape().len() == 2 {
        Ok(())
    } else {
        Err(Error::Shape {
            op,
            left: t.shape().to_vec(),
            right: vec![],
        })
    }
}

fn slot(grads: &mut [Option<Vec<f64>>], var: Var, len: usize) -> &mut [f64] {
    grads[var.0].get_or_insert_with(|| vec![0.0; len])
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Value<'a>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_result(
        &mut self,
        op_name: &'static str,
        shape: Vec<usize>,
        data: Vec<f64>,
        op: Op,
        inputs: &[Var],
    ) -> Result<Var> {
        check_finite(op_name, &data)?;
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        Ok(self.push(Value::Owned(Tensor::from_parts(shape, data)), op, requires_grad))
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(Value::Owned(t), Op::Leaf, false)
    }

    pub fn constant_ref(&mut self, t: &'a Tensor) -> Var {
        self.push(Value::Borrowed(t), Op::Leaf, false)
    }

    /// Registers a differentiable leaf that borrows its value.
    pub fn param(&mut self, t: &'a Tensor) -> Var {
        self.push(Value::Borrowed(t), Op::Leaf, true)
    }

    pub fn param_owned(&mut self, t: Tensor) -> Var {
        self.push(Value::Owned(t), Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        require_matrix("matmul", ta)?;
        require_matrix("matmul", tb)?;
        let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
        if tb.rows() != k {
            return Err(shape_err("matmul", ta, tb));
        }
        let (ad, bd) = (ta.data(), tb.data());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let orow = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let av = ad[i * k + p];
                if av == 0.0 {
                    continue;
                }
                let brow = &bd[p * n..(p + 1) * n];
                for (o, bv) in orow.iter_mut().zip(brow) {
                    *o += av * bv;
                }
            }
        }
        self.push_result("matmul", vec![m, n], out, Op::MatMul(a, b), &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err("add", ta, tb));
        }
        let out = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
        let shape = ta.shape().to_vec();
        self.push_result("add", shape, out, Op::Add(a, b), &[a, b])
    }

    /// Adds a bias vector to every row of `x`.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(bias));
        let n = tx.cols();
        if tb.numel() != n {
            return Err(shape_err("add_row", tx, tb));
        }
        let bd = tb.data();
        let out = tx
            .data()
            .chunks(n)
            .flat_map(|row| row.iter().zip(bd).map(|(v, b)| v + b))
            .collect();
        let shape = tx.shape().to_vec();
        self.push_result("add_row", shape, out, Op::AddRow(x, bias), &[x, bias])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err("mul", ta, tb));
        }
        let out = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let shape = ta.shape().to_vec();
        self.push_result("mul", shape, out, Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        let t = self.value(x);
        let out = t.data().iter().map(|v| v * factor).collect();
        let shape = t.shape().to_vec();
        self.push_result("scale", shape, out, Op::Scale(x, factor), &[x])
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        require_matrix("transpose", t)?;
        let (r, c) = (t.rows(), t.cols());
        let d = t.data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = d[i * c + j];
            }
        }
        self.push_result("transpose", vec![c, r], out, Op::Transpose(x), &[x])
    }

    /// Reinterprets the row-major data under a new shape with the same element count.
    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x);
        if shape.iter().product::<usize>() != t.numel() || shape.contains(&0) {
            return Err(Error::Shape {
                op: "reshape",
                left: t.shape().to_vec(),
                right: shape.to_vec(),
            });
        }
        let out = t.data().to_vec();
        self.push_result("reshape", shape.to_vec(), out, Op::Reshape(x), &[x])
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let out = t.data().iter().map(|&v| v.max(0.0)).collect();
        let shape = t.shape().to_vec();
        self.push_result("relu", shape, out, Op::Relu(x), &[x])
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var> {
        if !(slope > 0.0 && slope < 1.0) {
            return Err(Error::invalid(format!("leaky_relu slope {slope} not in (0,1)")));
        }
        let t = self.value(x);
        let out = t.data().iter().map(|&v| if v > 0.0 { v } else { slope * v }).collect();
        let shape = t.shape().to_vec();
        self.push_result("leaky_relu", shape, out, Op::LeakyRelu(x, slope), &[x])
    }

    pub fn elu(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let out = t.data().iter().map(|&v| if v > 0.0 { v } else { v.exp_m1() }).collect();
        let shape = t.shape().to_vec();
        self.push_result("elu", shape, out, Op::Elu(x), &[x])
    }

    /// Layer normalization over the last axis, `gain * (x - mean) / sqrt(var + eps) + bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let (tx, tg, tb) = (self.value(x), self.value(gain), self.value(bias));
        let n = tx.cols();
        if tg.numel() != n {
            return Err(shape_err("layer_norm", tx, tg));
        }
        if tb.numel() != n {
            return Err(shape_err("layer_norm", tx, tb));
        }
        let rows = tx.rows();
        let mut normed = Vec::with_capacity(tx.numel());
        let mut inv_std = Vec::with_capacity(rows);
        let mut out = Vec::with_capacity(tx.numel());
        for row in tx.data().chunks(n) {
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std.push(inv);
            for (j, v) in row.iter().enumerate() {
                let xh = (v - mean) * inv;
                normed.push(xh);
                out.push(tg.data()[j] * xh + tb.data()[j]);
            }
        }
        let shape = tx.shape().to_vec();
        self.push_result(
            "layer_norm",
            shape,
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                normed,
                inv_std,
            },
            &[x, gain, bias],
        )
    }

    /// Softmax over the last axis restricted to positions where `mask` is true.
    ///
    /// Masked positions are exactly zero. `None` keeps every position. Each
    /// row is stabilized by subtracting its maximum kept score.
    pub fn masked_softmax(&mut self, x: Var, mask: Option<&[bool]>) -> Result<Var> {
        let t = self.value(x);
        if let Some(m) = mask {
            if m.len() != t.numel() {
                return Err(Error::Shape {
                    op: "masked_softmax",
                    left: t.shape().to_vec(),
                    right: vec![m.len()],
                });
            }
        }
        let n = t.cols();
        let keep = |idx: usize| mask.is_none_or(|m| m[idx]);
        let mut out = vec![0.0; t.numel()];
        for (r, row) in t.data().chunks(n).enumerate() {
            let base = r * n;
            let max = (0..n)
                .filter(|&j| keep(base + j))
                .map(|j| row[j])
                .fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                return Err(Error::EmptyNeighborhood { row: r });
            }
            let mut total = 0.0;
            for j in 0..n {
                if keep(base + j) {
                    let e = (row[j] - max).exp();
                    out[base + j] = e;
                    total += e;
                }
            }
            for v in &mut out[base..base + n] {
                *v /= total;
            }
        }
        let shape = t.shape().to_vec();
        self.push_result("masked_softmax", shape, out, Op::Softmax(x), &[x])
    }

    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        self.masked_softmax(x, None)
    }

    /// `out[i][j] = col[i] + row[j]` for two vectors (any shape, taken flat).
    pub fn outer_add(&mut self, col: Var, row: Var) -> Result<Var> {
        let (tc, tr) = (self.value(col), self.value(row));
        let (n, m) = (tc.numel(), tr.numel());
        let mut out = Vec::with_capacity(n * m);
        for &c in tc.data() {
            out.extend(tr.data().iter().map(|r| c + r));
        }
        self.push_result("outer_add", vec![n, m], out, Op::OuterAdd(col, row), &[col, row])
    }

    /// Concatenates matrices with equal row counts along the column axis.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| Error::invalid("concat_cols of nothing"))?;
        let rows = self.value(*first).rows();
        let mut total = 0;
        for &p in parts {
            let t = self.value(p);
            require_matrix("concat_cols", t)?;
            if t.rows() != rows {
                return Err(shape_err("concat_cols", self.value(*first), t));
            }
            total += t.cols();
        }
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(r));
            }
        }
        self.push_result(
            "concat_cols",
            vec![rows, total],
            out,
            Op::ConcatCols(parts.to_vec()),
            parts,
        )
    }

    /// Stacks matrices with equal column counts.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| Error::invalid("concat_rows of nothing"))?;
        let cols = self.value(*first).cols();
        let mut out = Vec::new();
        for &p in parts {
            let t = self.value(p);
            require_matrix("concat_rows", t)?;
            if t.cols() != cols {
                return Err(shape_err("concat_rows", self.value(*first), t));
            }
            out.extend_from_slice(t.data());
        }
        let rows = out.len() / cols;
        self.push_result(
            "concat_rows",
            vec![rows, cols],
            out,
            Op::ConcatRows(parts.to_vec()),
            parts,
        )
    }

    /// Rows `start..start + len` of a matrix.
    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(x);
        require_matrix("slice_rows", t)?;
        if len == 0 || start + len > t.rows() {
            return Err(Error::Shape {
                op: "slice_rows",
                left: t.shape().to_vec(),
                right: vec![start, len],
            });
        }
        let c = t.cols();
        let out = t.data()[start * c..(start + len) * c].to_vec();
        self.push_result("slice_rows", vec![len, c], out, Op::SliceRows { x, start }, &[x])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().sum();
        self.push_result("sum", vec![1], vec![s], Op::Sum(x), &[x])
    }

    /// Mean over the batch of `-ln(max(p_true, 1e-12))`.
    ///
    /// Every row of `probs` must be a probability vector within 1e-5.
    pub fn cross_entropy(&mut self, probs: Var, labels: &[usize]) -> Result<Var> {
        let t = self.value(probs);
        let classes = t.cols();
        if t.rows() != labels.len() {
            return Err(Error::Shape {
                op: "cross_entropy",
                left: t.shape().to_vec(),
                right: vec![labels.len()],
            });
        }
        let mut total = 0.0;
        for (row, &label) in t.data().chunks(classes).zip(labels) {
            if label >= classes {
                return Err(Error::LabelOutOfRange { label, classes });
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-5 || row.iter().any(|&p| p < 0.0) {
                return Err(Error::invalid(format!(
                    "cross_entropy row is not a probability vector (sum {s})"
                )));
            }
            total -= row[label].max(LOG_CLAMP).ln();
        }
        let loss = total / labels.len() as f64;
        self.push_result(
            "cross_entropy",
            vec![1],
            vec![loss],
            Op::CrossEntropy {
                probs,
                labels: labels.to_vec(),
            },
            &[probs],
        )
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lt = self.value(loss);
        if !lt.is_scalar() {
            return Err(Error::NotScalar {
                shape: lt.shape().to_vec(),
            });
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        let shapes = self.nodes.iter().map(|nd| nd.value.shape().to_vec()).collect();
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![1.0]);
        }

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else {
                continue;
            };
            let out = &node.value;
            let rg = |v: Var| self.nodes[v.0].requires_grad;
            let val = |v: Var| -> &Tensor { &self.nodes[v.0].value };

            match &node.op {
                Op::Leaf => unreachable!(),
                Op::MatMul(a, b) => {
                    let (ta, tb) = (val(*a), val(*b));
                    let (m, k, nn) = (ta.rows(), ta.cols(), tb.cols());
                    if rg(*a) {
                        let bd = tb.data();
                        let da = slot(&mut grads, *a, m * k);
                        for i in 0..m {
                            let grow = &g[i * nn..(i + 1) * nn];
                            for p in 0..k {
                                let brow = &bd[p * nn..(p + 1) * nn];
                                da[i * k + p] += grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                            }
                        }
                    }
                    if rg(*b) {
                        let ad = ta.data();
                        let db = slot(&mut grads, *b, k * nn);
                        for i in 0..m {
                            let grow = &g[i * nn..(i + 1) * nn];
                            for p in 0..k {
                                let av = ad[i * k + p];
                                if av == 0.0 {
                                    continue;
                                }
                                for (d, gv) in db[p * nn..(p + 1) * nn].iter_mut().zip(grow) {
                                    *d += av * gv;
                                }
                            }
                        }
                    }
                }
                Op::Add(a, b) => {
                    for v in [*a, *b] {
                        if rg(v) {
                            let d = slot(&mut grads, v, g.len());
                            d.iter_mut().zip(&g).for_each(|(d, gv)| *d += gv);
                        }
                    }
                }
                Op::AddRow(x, bias) => {
                    if rg(*x) {
                        let d = slot(&mut grads, *x, g.len());
                        d.iter_mut().zip(&g).for_each(|(d, gv)| *d += gv);
                    }
                    if rg(*bias) {
                        let c = out.cols();
                        let d = slot(&mut grads, *bias, c);
                        for row in g.chunks(c) {
                            d.iter_mut().zip(row).for_each(|(d, gv)| *d += gv);
                        }
                    }
                }
                Op::Mul(a, b) => {
                    let (ta, tb) = (val(*a), val(*b));
                    if rg(*a) {
                        let d = slot(&mut grads, *a, g.len());
                        for ((d, gv), bv) in d.iter_mut().zip(&g).zip(tb.data()) {
                            *d += gv * bv;
                        }
                    }
                    if rg(*b) {
                        let d = slot(&mut grads, *b, g.len());
                        for ((d, gv), av) in d.iter_mut().zip(&g).zip(ta.data()) {
                            *d += gv * av;
                        }
                    }
                }
                Op::Scale(x, f) => {
                    let d = slot(&mut grads, *x, g.len());
                    d.iter_mut().zip(&g).for_each(|(d, gv)| *d += gv * f);
                }
                Op::Transpose(x) => {
                    // out is c×r, x is r×c
                    let (c, r) = (out.rows(), out.cols());
                    let d = slot(&mut grads, *x, g.len());
                    for j in 0..c {
                        for i in 0..r {
                            d[i * c + j] += g[j * r + i];
                        }
                    }
                }
                Op::Reshape(x) => {
                    let d = slot(&mut grads, *x, g.len());
                    d.iter_mut().zip(&g).for_each(|(d, gv)| *d += gv);
                }
                Op::Relu(x) => {
                    let xd = val(*x).data();
                    let d = slot(&mut grads, *x, g.len());
                    for ((d, gv), xv) in d.iter_mut().zip(&g).zip(xd) {
                        if *xv > 0.0 {
                            *d += gv;
                        }
                    }
                }
                Op::LeakyRelu(x, slope) => {
                    let xd = val(*x).data();
                    let d = slot(&mut grads, *x, g.len());
                    for ((d, gv), xv) in d.iter_mut().zip(&g).zip(xd) {
                        *d += if *xv > 0.0 { *gv } else { gv * slope };
                    }
                }
                Op::Elu(x) => {
                    let xd = val(*x).data();
                    let d = slot(&mut grads, *x, g.len());
                    for (((d, gv), xv), yv) in d.iter_mut().zip(&g).zip(xd).zip(out.data()) {
                        *d += if *xv > 0.0 { *gv } else { gv * (yv + 1.0) };
                    }
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    normed,
                    inv_std,
                } => {
                    let c = out.cols();
                    let gd = val(*gain).data();
                    if rg(*gain) {
                        let d = slot(&mut grads, *gain, c);
                        for (grow, nrow) in g.chunks(c).zip(normed.chunks(c)) {
                            for j in 0..c {
                                d[j] += grow[j] * nrow[j];
                            }
                        }
                    }
                    if rg(*bias) {
                        let d = slot(&mut grads, *bias, c);
                        for grow in g.chunks(c) {
                            d.iter_mut().zip(grow).for_each(|(d, gv)| *d += gv);
                        }
                    }
                    if rg(*x) {
                        let d = slot(&mut grads, *x, g.len());
                        let nf = c as f64;
                        for (r, (grow, nrow)) in g.chunks(c).zip(normed.chunks(c)).enumerate() {
                            let dxh: Vec<f64> = grow.iter().zip(gd).map(|(a, b)| a * b).collect();
                            let s1: f64 = dxh.iter().sum();
                            let s2: f64 = dxh.iter().zip(nrow).map(|(a, b)| a * b).sum();
                            let inv = inv_std[r];
                            for j in 0..c {
                                d[r * c + j] += inv / nf * (nf * dxh[j] - s1 - nrow[j] * s2);
                            }
                        }
                    }
                }
                Op::Softmax(x) => {
                    let c = out.cols();
                    let d = slot(&mut grads, *x, g.len());
                    for (r, (grow, yrow)) in g.chunks(c).zip(out.data().chunks(c)).enumerate() {
                        let dot: f64 = grow.iter().zip(yrow).map(|(a, b)| a * b).sum();
                        for j in 0..c {
                            d[r * c + j] += yrow[j] * (grow[j] - dot);
                        }
                    }
                }
                Op::OuterAdd(col, row) => {
                    let (n, m) = (out.rows(), out.cols());
                    if rg(*col) {
                        let d = slot(&mut grads, *col, n);
                        for i in 0..n {
                            d[i] += g[i * m..(i + 1) * m].iter().sum::<f64>();
                        }
                    }
                    if rg(*row) {
                        let d = slot(&mut grads, *row, m);
                        for grow in g.chunks(m) {
                            d.iter_mut().zip(grow).for_each(|(d, gv)| *d += gv);
                        }
                    }
                }
                Op::ConcatCols(parts) => {
                    let total = out.cols();
                    let mut offset = 0;
                    for &p in parts {
                        let pc = val(p).cols();
                        if rg(p) {
                            let d = slot(&mut grads, p, out.rows() * pc);
                            for (r, grow) in g.chunks(total).enumerate() {
                                for j in 0..pc {
                                    d[r * pc + j] += grow[offset + j];
                                }
                            }
                        }
                        offset += pc;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let len = val(p).numel();
                        if rg(p) {
                            let d = slot(&mut grads, p, len);
                            d.iter_mut().zip(&g[offset..offset + len]).for_each(|(d, gv)| *d += gv);
                        }
                        offset += len;
                    }
                }
                Op::SliceRows { x, start } => {
                    let c = out.cols();
                    let len = val(*x).numel();
                    let d = slot(&mut grads, *x, len);
                    d[start * c..start * c + g.len()]
                        .iter_mut()
                        .zip(&g)
                        .for_each(|(d, gv)| *d += gv);
                }
                Op::Sum(x) => {
                    let len = val(*x).numel();
                    let d = slot(&mut grads, *x, len);
                    d.iter_mut().for_each(|d| *d += g[0]);
                }
                Op::CrossEntropy { probs, labels } => {
                    let tp = val(*probs);
                    let c = tp.cols();
                    let batch = labels.len() as f64;
                    let d = slot(&mut grads, *probs, tp.numel());
                    for (r, &label) in labels.iter().enumerate() {
                        let p = tp.data()[r * c + label];
                        if p >= LOG_CLAMP {
                            d[r * c + label] -= g[0] / (batch * p);
                        }
                    }
                }
            }
        }

        Ok(Gradients { grads, shapes })
    }
}
