//! Tape-based reverse-mode differentiation over a fixed op vocabulary.
//!
//! A [`Tape`] records every operation of one forward pass. Leaves are either
//! borrowed constants (never differentiated) or named parameters. Calling
//! [`Tape::backward`] walks the tape in reverse and returns a [`GradientMap`]
//! holding exactly the requested trainable parameters.
//!
//! Nodes that do not depend on any parameter are marked as not requiring a
//! gradient and are skipped during the reverse sweep, so frozen sub-graphs
//! cost nothing beyond their forward evaluation.

use std::borrow::Cow;
use std::collections::{BTreeMap, BTreeSet};

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// Gradients keyed by parameter name, in sorted name order.
pub type GradientMap = BTreeMap<String, Tensor>;

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Tensor, inv_std: Vec<f64> },
    Softmax(Var),
    LogSoftmax(Var),
    Gelu(Var),
    Abs(Var),
    Square(Var),
    SliceRows(Var, usize),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    L2Normalize(Var),
    Sum(Var),
    Mean(Var),
    Reshape(Var),
}

#[derive(Debug)]
struct Node<'a> {
    value: Cow<'a, Tensor>,
    op: Op,
    requires_grad: bool,
    param: Option<String>,
}

#[derive(Debug, Default)]
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
    failure: Option<String>,
}

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_C: f64 = 0.044_715;

impl<'a> Tape<'a> {
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

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Names of all parameter leaves recorded so far.
    pub fn param_names(&self) -> BTreeSet<&str> {
        self.nodes.iter().filter_map(|n| n.param.as_deref()).collect()
    }

    /// First op that produced a non-finite value, if any.
    pub fn check(&self) -> Result<()> {
        match &self.failure {
            Some(msg) => Err(Error::NonFinite(msg.clone())),
            None => Ok(()),
        }
    }

    /// Frozen input: borrowed, never differentiated.
    pub fn constant(&mut self, t: &'a Tensor) -> Var {
        self.push(Cow::Borrowed(t), Op::Leaf, false, "constant")
    }

    pub fn constant_owned(&mut self, t: Tensor) -> Var {
        self.push(Cow::Owned(t), Op::Leaf, false, "constant")
    }

    /// Differentiable leaf. Several leaves may share a name; their gradients add up.
    pub fn param(&mut self, name: impl Into<String>, t: &'a Tensor) -> Var {
        let v = self.push(Cow::Borrowed(t), Op::Leaf, true, "param");
        self.nodes[v.0].param = Some(name.into());
        v
    }

    pub fn param_owned(&mut self, name: impl Into<String>, t: Tensor) -> Var {
        let v = self.push(Cow::Owned(t), Op::Leaf, true, "param");
        self.nodes[v.0].param = Some(name.into());
        v
    }

    fn push(&mut self, value: Cow<'a, Tensor>, op: Op, requires_grad: bool, name: &str) -> Var {
        if self.failure.is_none() && !value.is_finite() {
            self.failure = Some(format!("{name} produced a non-finite value (node {})", self.nodes.len()));
        }
        self.nodes.push(Node { value, op, requires_grad, param: None });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn op(&mut self, value: Tensor, op: Op, inputs: &[Var], name: &str) -> Var {
        let rg = self.rg(inputs);
        self.push(Cow::Owned(value), op, rg, name)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.op(out, Op::MatMul(a, b), &[a, b], "matmul"))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).transpose()?;
        Ok(self.op(out, Op::Transpose(a), &[a], "transpose"))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).add(self.value(b))?;
        Ok(self.op(out, Op::Add(a, b), &[a, b], "add"))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).sub(self.value(b))?;
        Ok(self.op(out, Op::Sub(a, b), &[a, b], "sub"))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        Ok(self.op(out, Op::Mul(a, b), &[a, b], "mul"))
    }

    /// Adds a length-`n` vector to every row of an `[m, n]` (or `[n]`) tensor.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let x = self.value(a);
        let r = self.value(row);
        let (_, n) = x.dims2()?;
        if r.numel() != n {
            return Err(Error::shape(format!("add_row: {:?} + {:?}", x.shape(), r.shape())));
        }
        let mut out = x.clone();
        for chunk in out.data_mut().chunks_mut(n.max(1)) {
            for (o, b) in chunk.iter_mut().zip(r.data()) {
                *o += b;
            }
        }
        Ok(self.op(out, Op::AddRow(a, row), &[a, row], "add_row"))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).scale(s);
        self.op(out, Op::Scale(a, s), &[a], "scale")
    }

    /// Row-wise layer normalization with an affine gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let xv = self.value(x);
        let (r, c) = xv.dims2()?;
        if self.value(gain).numel() != c || self.value(bias).numel() != c {
            return Err(Error::shape(format!("layer_norm width {c}")));
        }
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let mut xhat = vec![0.0; r * c];
        let mut out = vec![0.0; r * c];
        let mut inv_std = Vec::with_capacity(r);
        for i in 0..r {
            let row = &xv.data()[i * c..(i + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std.push(is);
            for j in 0..c {
                let h = (row[j] - mean) * is;
                xhat[i * c + j] = h;
                out[i * c + j] = h * g[j] + b[j];
            }
        }
        let shape = xv.shape().to_vec();
        let xhat = Tensor::from_parts(shape.clone(), xhat);
        let out = Tensor::from_parts(shape, out);
        Ok(self.op(out, Op::LayerNorm { x, gain, bias, xhat, inv_std }, &[x, gain, bias], "layer_norm"))
    }

    /// Row-wise softmax. With `causal`, entry `(i, j)` for `j > i` is masked to zero.
    pub fn softmax(&mut self, a: Var, causal: bool) -> Result<Var> {
        let x = self.value(a);
        let (r, c) = x.dims2()?;
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let limit = if causal { (i + 1).min(c) } else { c };
            let row = &x.data()[i * c..i * c + limit];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for j in 0..limit {
                let e = (row[j] - max).exp();
                out[i * c + j] = e;
                z += e;
            }
            for v in &mut out[i * c..i * c + limit] {
                *v /= z;
            }
        }
        let out = Tensor::from_parts(x.shape().to_vec(), out);
        Ok(self.op(out, Op::Softmax(a), &[a], "softmax"))
    }

    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let (r, c) = x.dims2()?;
        let mut out = x.data().to_vec();
        for i in 0..r {
            let row = &mut out[i * c..(i + 1) * c];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            row.iter_mut().for_each(|v| *v -= lse);
        }
        let out = Tensor::from_parts(x.shape().to_vec(), out);
        Ok(self.op(out, Op::LogSoftmax(a), &[a], "log_softmax"))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| 0.5 * x * (1.0 + (GELU_K * (x + GELU_C * x * x * x)).tanh()));
        self.op(out, Op::Gelu(a), &[a], "gelu")
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::abs);
        self.op(out, Op::Abs(a), &[a], "abs")
    }

    pub fn square(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x * x);
        self.op(out, Op::Square(a), &[a], "square")
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let out = self.value(a).slice_rows(start, end)?;
        Ok(self.op(out, Op::SliceRows(a, start), &[a], "slice_rows"))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let vals: Vec<&Tensor> = parts.iter().map(|v| self.value(*v)).collect();
        let out = Tensor::concat_rows(&vals)?;
        Ok(self.op(out, Op::ConcatRows(parts.to_vec()), parts, "concat_rows"))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let out = self.value(a).slice_cols(start, end)?;
        Ok(self.op(out, Op::SliceCols(a, start), &[a], "slice_cols"))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let vals: Vec<&Tensor> = parts.iter().map(|v| self.value(*v)).collect();
        let out = Tensor::concat_cols(&vals)?;
        Ok(self.op(out, Op::ConcatCols(parts.to_vec()), parts, "concat_cols"))
    }

    /// Scales each row to unit L2 norm. A zero row poisons the tape.
    pub fn l2_normalize(&mut self, a: Var) -> Result<Var> {
        let out = match self.value(a).l2_normalize_rows() {
            Ok(t) => t,
            Err(e) => {
                if self.failure.is_none() {
                    self.failure = Some(format!("l2_normalize: {e}"));
                }
                self.value(a).map(|_| f64::NAN)
            }
        };
        Ok(self.op(out, Op::L2Normalize(a), &[a], "l2_normalize"))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        self.op(out, Op::Sum(a), &[a], "sum")
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let out = Tensor::scalar(x.sum() / x.numel().max(1) as f64);
        self.op(out, Op::Mean(a), &[a], "mean")
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let out = self.value(a).clone().reshape(shape)?;
        Ok(self.op(out, Op::Reshape(a), &[a], "reshape"))
    }

    /// Reverse sweep from a scalar loss.
    pub fn backward(&self, loss: Var, trainables: &BTreeSet<String>) -> Result<GradientMap> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(Error::shape(format!("backward needs a scalar loss, got {:?}", lv.shape())));
        }
        self.backward_with_seed(loss, Tensor::full(lv.shape(), 1.0), trainables)
    }

    /// Reverse sweep from an arbitrary node given the upstream gradient `seed`.
    ///
    /// Every name in `trainables` gets an entry; names that never reached the
    /// output get a zero tensor of the parameter's shape (or `[0]` when the
    /// name is absent from the tape entirely).
    pub fn backward_with_seed(&self, output: Var, seed: Tensor, trainables: &BTreeSet<String>) -> Result<GradientMap> {
        if trainables.is_empty() {
            return Err(Error::invalid("backward called with no trainable parameters"));
        }
        self.check()?;
        if seed.shape() != self.value(output).shape() {
            return Err(Error::shape(format!(
                "seed {:?} vs output {:?}",
                seed.shape(),
                self.value(output).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..=output.0).map(|_| None).collect();
        grads[output.0] = Some(seed);

        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            if matches!(node.op, Op::Leaf) {
                grads[idx] = Some(g);
                continue;
            }
            self.propagate(idx, &g, &mut grads)?;
        }

        let mut out = GradientMap::new();
        for name in trainables {
            let mut acc: Option<Tensor> = None;
            let mut shape: Option<Vec<usize>> = None;
            for (idx, node) in self.nodes.iter().enumerate().take(output.0 + 1) {
                if node.param.as_deref() != Some(name.as_str()) {
                    continue;
                }
                shape.get_or_insert_with(|| node.value.shape().to_vec());
                if let Some(g) = &grads[idx] {
                    match &mut acc {
                        Some(a) => a.add_assign(g),
                        None => acc = Some(g.clone()),
                    }
                }
            }
            let g = acc.unwrap_or_else(|| Tensor::zeros(shape.as_deref().unwrap_or(&[0])));
            if !g.is_finite() {
                return Err(Error::NonFinite(format!("gradient of {name} is not finite")));
            }
            out.insert(name.clone(), g);
        }
        Ok(out)
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let node = &self.nodes[idx];
        let y = node.value.as_ref();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                if self.requires_grad(*a) {
                    let ga = g.matmul(&bv.transpose()?)?;
                    self.accumulate(grads, *a, ga.reshape(av.shape().to_vec())?);
                }
                if self.requires_grad(*b) {
                    let (m, k) = av.dims2()?;
                    let a2 = av.clone().reshape(vec![m, k])?;
                    let (gm, gn) = g.dims2()?;
                    let g2 = g.clone().reshape(vec![gm, gn])?;
                    self.accumulate(grads, *b, a2.transpose()?.matmul(&g2)?);
                }
            }
            Op::Transpose(a) => self.accumulate(grads, *a, g.transpose()?),
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.scale(-1.0));
            }
            Op::Mul(a, b) => {
                if self.requires_grad(*a) {
                    self.accumulate(grads, *a, g.zip_map(self.value(*b), |x, y| x * y)?);
                }
                if self.requires_grad(*b) {
                    self.accumulate(grads, *b, g.zip_map(self.value(*a), |x, y| x * y)?);
                }
            }
            Op::AddRow(a, row) => {
                self.accumulate(grads, *a, g.clone());
                if self.requires_grad(*row) {
                    let rv = self.value(*row);
                    let n = rv.numel();
                    let mut acc = vec![0.0; n];
                    for chunk in g.data().chunks(n.max(1)) {
                        for (s, v) in acc.iter_mut().zip(chunk) {
                            *s += v;
                        }
                    }
                    self.accumulate(grads, *row, Tensor::from_parts(rv.shape().to_vec(), acc));
                }
            }
            Op::Scale(a, s) => self.accumulate(grads, *a, g.scale(*s)),
            Op::LayerNorm { x, gain, bias, xhat, inv_std } => {
                let (r, c) = xhat.dims2()?;
                let gv = self.value(*gain).data();
                if self.requires_grad(*x) {
                    let mut dx = vec![0.0; r * c];
                    for i in 0..r {
                        let gr = &g.data()[i * c..(i + 1) * c];
                        let hr = &xhat.data()[i * c..(i + 1) * c];
                        let dh: Vec<f64> = gr.iter().zip(gv).map(|(a, b)| a * b).collect();
                        let mean_dh = dh.iter().sum::<f64>() / c as f64;
                        let mean_dh_h = dh.iter().zip(hr).map(|(a, b)| a * b).sum::<f64>() / c as f64;
                        for j in 0..c {
                            dx[i * c + j] = inv_std[i] * (dh[j] - mean_dh - hr[j] * mean_dh_h);
                        }
                    }
                    self.accumulate(grads, *x, Tensor::from_parts(xhat.shape().to_vec(), dx));
                }
                if self.requires_grad(*gain) {
                    let mut dg = vec![0.0; c];
                    for i in 0..r {
                        for j in 0..c {
                            dg[j] += g.data()[i * c + j] * xhat.data()[i * c + j];
                        }
                    }
                    let shape = self.value(*gain).shape().to_vec();
                    self.accumulate(grads, *gain, Tensor::from_parts(shape, dg));
                }
                if self.requires_grad(*bias) {
                    let mut db = vec![0.0; c];
                    for i in 0..r {
                        for j in 0..c {
                            db[j] += g.data()[i * c + j];
                        }
                    }
                    let shape = self.value(*bias).shape().to_vec();
                    self.accumulate(grads, *bias, Tensor::from_parts(shape, db));
                }
            }
            Op::Softmax(a) => {
                let (r, c) = y.dims2()?;
                let mut dx = vec![0.0; r * c];
                for i in 0..r {
                    let yr = &y.data()[i * c..(i + 1) * c];
                    let gr = &g.data()[i * c..(i + 1) * c];
                    let s: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..c {
                        dx[i * c + j] = yr[j] * (gr[j] - s);
                    }
                }
                self.accumulate(grads, *a, Tensor::from_parts(y.shape().to_vec(), dx));
            }
            Op::LogSoftmax(a) => {
                let (r, c) = y.dims2()?;
                let mut dx = vec![0.0; r * c];
                for i in 0..r {
                    let yr = &y.data()[i * c..(i + 1) * c];
                    let gr = &g.data()[i * c..(i + 1) * c];
                    let s: f64 = gr.iter().sum();
                    for j in 0..c {
                        dx[i * c + j] = gr[j] - yr[j].exp() * s;
                    }
                }
                self.accumulate(grads, *a, Tensor::from_parts(y.shape().to_vec(), dx));
            }
            Op::Gelu(a) => {
                let d = g.zip_map(self.value(*a), |gi, x| {
                    let u = GELU_K * (x + GELU_C * x * x * x);
                    let t = u.tanh();
                    let du = GELU_K * (1.0 + 3.0 * GELU_C * x * x);
                    gi * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du)
                })?;
                self.accumulate(grads, *a, d);
            }
            Op::Abs(a) => {
                let d = g.zip_map(self.value(*a), |gi, x| {
                    if x > 0.0 {
                        gi
                    } else if x < 0.0 {
                        -gi
                    } else {
                        0.0
                    }
                })?;
                self.accumulate(grads, *a, d);
            }
            Op::Square(a) => {
                let d = g.zip_map(self.value(*a), |gi, x| 2.0 * x * gi)?;
                self.accumulate(grads, *a, d);
            }
            Op::SliceRows(a, start) => {
                let av = self.value(*a);
                let (_, c) = av.dims2()?;
                let mut full = Tensor::zeros(av.shape());
                full.data_mut()[start * c..start * c + g.numel()].copy_from_slice(g.data());
                self.accumulate(grads, *a, full);
            }
            Op::ConcatRows(parts) => {
                let mut row = 0;
                for p in parts {
                    let pv = self.value(*p);
                    let r = pv.rows();
                    if self.requires_grad(*p) {
                        let piece = g.slice_rows(row, row + r)?.reshape(pv.shape().to_vec())?;
                        self.accumulate(grads, *p, piece);
                    }
                    row += r;
                }
            }
            Op::SliceCols(a, start) => {
                let av = self.value(*a);
                let (r, c) = av.dims2()?;
                let w = g.cols();
                let mut full = Tensor::zeros(av.shape());
                for i in 0..r {
                    full.data_mut()[i * c + start..i * c + start + w].copy_from_slice(&g.data()[i * w..(i + 1) * w]);
                }
                self.accumulate(grads, *a, full);
            }
            Op::ConcatCols(parts) => {
                let mut col = 0;
                for p in parts {
                    let pv = self.value(*p);
                    let w = pv.cols();
                    if self.requires_grad(*p) {
                        let piece = g.slice_cols(col, col + w)?.reshape(pv.shape().to_vec())?;
                        self.accumulate(grads, *p, piece);
                    }
                    col += w;
                }
            }
            Op::L2Normalize(a) => {
                let x = self.value(*a);
                let (r, c) = x.dims2()?;
                let mut dx = vec![0.0; r * c];
                for i in 0..r {
                    let xr = &x.data()[i * c..(i + 1) * c];
                    let yr = &y.data()[i * c..(i + 1) * c];
                    let gr = &g.data()[i * c..(i + 1) * c];
                    let n = xr.iter().map(|v| v * v).sum::<f64>().sqrt();
                    let yg: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..c {
                        dx[i * c + j] = (gr[j] - yr[j] * yg) / n;
                    }
                }
                self.accumulate(grads, *a, Tensor::from_parts(x.shape().to_vec(), dx));
            }
            Op::Sum(a) => {
                let shape = self.value(*a).shape().to_vec();
                self.accumulate(grads, *a, Tensor::full(&shape, g.data()[0]));
            }
            Op::Mean(a) => {
                let av = self.value(*a);
                let n = av.numel().max(1) as f64;
                self.accumulate(grads, *a, Tensor::full(av.shape(), g.data()[0] / n));
            }
            Op::Reshape(a) => {
                let shape = self.value(*a).shape().to_vec();
                self.accumulate(grads, *a, g.clone().reshape(shape)?);
            }
        }
        Ok(())
    }
}
