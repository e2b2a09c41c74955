//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every operation appends a node holding its output value and the indices
//! of its inputs. [`Tape::backward`] walks the nodes in reverse and
//! accumulates adjoints. Matrices are rank-2 tensors; a bias is any tensor
//! whose element count equals the matrix column count.

// Only needed when no dependency links std.
#[allow(unused_imports)]
use num_traits::Float;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;


use crate::error::{bail, Error, Result};
use crate::params::ParamSet;
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: f64 = 0.044_715;

/// Tanh-approximated GELU.
pub fn gelu_scalar(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_K * x * x * x)).tanh())
}

pub fn gelu_grad_scalar(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_K * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_K * x * x)
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    AddRow(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Gelu(usize),
    Tanh(usize),
    Transpose(usize),
    SliceCols { x: usize, start: usize },
    ConcatCols(Vec<usize>),
    ConcatRows(Vec<usize>),
    GatherRows { x: usize, idx: Vec<usize> },
    CausalSoftmax(usize),
    LayerNorm { x: usize, gain: usize, bias: usize, xhat: Vec<f64>, rstd: Vec<f64> },
    CrossEntropy { logits: usize, targets: Vec<usize>, weights: Vec<f64>, probs: Vec<f64> },
    Sum(usize),
    Mean(usize),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Adjoints produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug, Clone)]
pub struct Grads {
    grads: Vec<Option<Vec<f64>>>,
}

impl Grads {
    /// Gradient of the loss with respect to `v`, if `v` is reachable and tracked.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

/// A recording of tensor operations.
#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
    bindings: Vec<(String, Var)>,
}

fn check_finite(t: &Tensor, op: &'static str) -> Result<()> {
    if t.all_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(op))
    }
}

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

fn transpose_raw(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; a.len()];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = a[i * cols + j];
        }
    }
    out
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

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool, name: &'static str) -> Result<Var> {
        check_finite(&value, name)?;
        self.nodes.push(Node { value, op, needs_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    fn needs(&self, v: usize) -> bool {
        self.nodes[v].needs_grad
    }

    /// Registers a tensor; it is tracked iff `requires_grad` is set on it.
    pub fn leaf(&mut self, t: Tensor) -> Result<Var> {
        let needs = t.requires_grad();
        self.push(t, Op::Leaf, needs, "leaf")
    }

    /// Registers an untracked tensor.
    pub fn constant(&mut self, mut t: Tensor) -> Result<Var> {
        t.set_requires_grad(false);
        self.push(t, Op::Leaf, false, "constant")
    }

    /// Registers a named parameter. Trainable (non-frozen) parameters are
    /// tracked, and [`Tape::backward_into`] writes their gradients back.
    pub fn param(&mut self, params: &ParamSet, name: &str) -> Result<Var> {
        if let Some((_, v)) = self.bindings.iter().find(|(n, _)| n == name) {
            return Ok(*v);
        }
        let t = params.get(name)?;
        let tracked = !params.is_frozen(name);
        let mut t = t.clone();
        t.set_grad(None)?;
        t.set_requires_grad(tracked);
        let v = self.push(t, Op::Leaf, tracked, "param")?;
        self.bindings.push((String::from(name), v));
        Ok(v)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn dims2(&self, v: Var, op: &str) -> Result<(usize, usize)> {
        let s = self.nodes[v.0].value.shape();
        if s.len() != 2 {
            bail!(Dimension, "{} expects a matrix, got shape {:?}", op, s);
        }
        Ok((s[0], s[1]))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2(a, "matmul")?;
        let (k2, n) = self.dims2(b, "matmul")?;
        if k != k2 {
            bail!(Dimension, "matmul inner dimensions {} and {} differ", k, k2);
        }
        let out = matmul_raw(self.value(a).data(), self.value(b).data(), m, k, n);
        let needs = self.needs(a.0) || self.needs(b.0);
        self.push(Tensor::new(&[m, n], out)?, Op::MatMul(a.0, b.0), needs, "matmul")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            bail!(Dimension, "add shapes {:?} and {:?} differ", va.shape(), vb.shape());
        }
        let out = va.data().iter().zip(vb.data()).map(|(x, y)| x + y).collect();
        let t = Tensor::new(va.shape(), out)?;
        let needs = self.needs(a.0) || self.needs(b.0);
        self.push(t, Op::Add(a.0, b.0), needs, "add")
    }

    /// Adds a row vector to every row of a matrix.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (m, n) = self.dims2(x, "add_row")?;
        if self.value(bias).len() != n {
            bail!(Dimension, "bias of {} values for {} columns", self.value(bias).len(), n);
        }
        let b = self.value(bias).data();
        let mut out = self.value(x).data().to_vec();
        for row in out.chunks_mut(n) {
            row.iter_mut().zip(b).for_each(|(o, bv)| *o += bv);
        }
        let needs = self.needs(x.0) || self.needs(bias.0);
        self.push(Tensor::new(&[m, n], out)?, Op::AddRow(x.0, bias.0), needs, "add_row")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            bail!(Dimension, "mul shapes {:?} and {:?} differ", va.shape(), vb.shape());
        }
        let out = va.data().iter().zip(vb.data()).map(|(x, y)| x * y).collect();
        let t = Tensor::new(va.shape(), out)?;
        let needs = self.needs(a.0) || self.needs(b.0);
        self.push(t, Op::Mul(a.0, b.0), needs, "mul")
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Result<Var> {
        let v = self.value(x);
        let t = Tensor::new(v.shape(), v.data().iter().map(|a| a * s).collect())?;
        let needs = self.needs(x.0);
        self.push(t, Op::Scale(x.0, s), needs, "scale")
    }

    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let t = Tensor::new(v.shape(), v.data().iter().map(|&a| gelu_scalar(a)).collect())?;
        let needs = self.needs(x.0);
        self.push(t, Op::Gelu(x.0), needs, "gelu")
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let t = Tensor::new(v.shape(), v.data().iter().map(|a| a.tanh()).collect())?;
        let needs = self.needs(x.0);
        self.push(t, Op::Tanh(x.0), needs, "tanh")
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let (m, n) = self.dims2(x, "transpose")?;
        let out = transpose_raw(self.value(x).data(), m, n);
        let needs = self.needs(x.0);
        self.push(Tensor::new(&[n, m], out)?, Op::Transpose(x.0), needs, "transpose")
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let (m, n) = self.dims2(x, "slice_cols")?;
        if start > end || end > n {
            bail!(Index, "column range {}..{} outside {} columns", start, end, n);
        }
        let w = end - start;
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(m * w);
        for i in 0..m {
            out.extend_from_slice(&src[i * n + start..i * n + end]);
        }
        let needs = self.needs(x.0);
        self.push(Tensor::new(&[m, w], out)?, Op::SliceCols { x: x.0, start }, needs, "slice_cols")
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            bail!(Contract, "concat_cols of nothing");
        }
        let m = self.dims2(parts[0], "concat_cols")?.0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.dims2(p, "concat_cols")?;
            if r != m {
                bail!(Dimension, "concat_cols row counts {} and {} differ", m, r);
            }
            widths.push(c);
        }
        let n: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[i * w..(i + 1) * w]);
            }
        }
        let needs = parts.iter().any(|p| self.needs(p.0));
        let op = Op::ConcatCols(parts.iter().map(|p| p.0).collect());
        self.push(Tensor::new(&[m, n], out)?, op, needs, "concat_cols")
    }

    /// Stacks matrices vertically. Zero-row parts are allowed.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            bail!(Contract, "concat_rows of nothing");
        }
        let n = self.dims2(parts[0], "concat_rows")?.1;
        let mut m = 0;
        for &p in parts {
            let (r, c) = self.dims2(p, "concat_rows")?;
            if c != n {
                bail!(Dimension, "concat_rows column counts {} and {} differ", n, c);
            }
            m += r;
        }
        let mut out = Vec::with_capacity(m * n);
        for &p in parts {
            out.extend_from_slice(self.value(p).data());
        }
        let needs = parts.iter().any(|p| self.needs(p.0));
        let op = Op::ConcatRows(parts.iter().map(|p| p.0).collect());
        self.push(Tensor::new(&[m, n], out)?, op, needs, "concat_rows")
    }

    /// Row lookup: output row `i` is input row `idx[i]`.
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let (m, n) = self.dims2(x, "gather_rows")?;
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(idx.len() * n);
        for &i in idx {
            if i >= m {
                bail!(Index, "row {} out of range for {} rows", i, m);
            }
            out.extend_from_slice(&src[i * n..(i + 1) * n]);
        }
        let needs = self.needs(x.0);
        let op = Op::GatherRows { x: x.0, idx: idx.to_vec() };
        self.push(Tensor::new(&[idx.len(), n], out)?, op, needs, "gather_rows")
    }

    /// Row-wise softmax where row `i` only covers columns `0..=i`; masked
    /// entries are exactly zero.
    pub fn causal_softmax(&mut self, x: Var) -> Result<Var> {
        let (m, n) = self.dims2(x, "causal_softmax")?;
        let src = self.value(x).data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let lim = (i + 1).min(n);
            let row = &src[i * n..i * n + lim];
            let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for (j, &v) in row.iter().enumerate() {
                let e = (v - mx).exp();
                out[i * n + j] = e;
                z += e;
            }
            out[i * n..i * n + lim].iter_mut().for_each(|v| *v /= z);
        }
        let needs = self.needs(x.0);
        self.push(Tensor::new(&[m, n], out)?, Op::CausalSoftmax(x.0), needs, "causal_softmax")
    }

    /// Per-row normalization over columns with learned gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (m, n) = self.dims2(x, "layer_norm")?;
        if self.value(gain).len() != n || self.value(bias).len() != n {
            bail!(Dimension, "layer_norm gain/bias must have {} values", n);
        }
        let src = self.value(x).data();
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let mut xhat = vec![0.0; m * n];
        let mut rstd = vec![0.0; m];
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &src[i * n..(i + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let r = 1.0 / (var + eps).sqrt();
            rstd[i] = r;
            for j in 0..n {
                let h = (row[j] - mean) * r;
                xhat[i * n + j] = h;
                out[i * n + j] = h * g[j] + b[j];
            }
        }
        let needs = self.needs(x.0) || self.needs(gain.0) || self.needs(bias.0);
        let op = Op::LayerNorm { x: x.0, gain: gain.0, bias: bias.0, xhat, rstd };
        self.push(Tensor::new(&[m, n], out)?, op, needs, "layer_norm")
    }

    /// Mean negative log-likelihood of `targets` under row-wise softmax.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let mask = vec![true; targets.len()];
        self.masked_cross_entropy(logits, targets, &mask)
    }

    /// Cross-entropy averaged over the rows where `mask` is set; masked rows
    /// contribute neither loss nor gradient, whatever their target.
    pub fn masked_cross_entropy(&mut self, logits: Var, targets: &[usize], mask: &[bool]) -> Result<Var> {
        let (m, v) = self.dims2(logits, "cross_entropy")?;
        if targets.len() != m || mask.len() != m {
            bail!(Dimension, "{} targets / {} mask entries for {} logit rows", targets.len(), mask.len(), m);
        }
        let active = mask.iter().filter(|&&b| b).count();
        if active == 0 {
            bail!(Contract, "cross_entropy over zero active positions");
        }
        let w = 1.0 / active as f64;
        let src = self.value(logits).data();
        let mut probs = vec![0.0; m * v];
        let mut weights = vec![0.0; m];
        let mut loss = 0.0;
        for i in 0..m {
            if !mask[i] {
                continue;
            }
            let t = targets[i];
            if t >= v {
                bail!(Index, "target id {} out of range for vocabulary of {}", t, v);
            }
            let row = &src[i * v..(i + 1) * v];
            let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|x| (x - mx).exp()).sum();
            let lse = mx + z.ln();
            for j in 0..v {
                probs[i * v + j] = (row[j] - lse).exp();
            }
            loss += w * (lse - row[t]);
            weights[i] = w;
        }
        let needs = self.needs(logits.0);
        let op = Op::CrossEntropy { logits: logits.0, targets: targets.to_vec(), weights, probs };
        self.push(Tensor::scalar(loss), op, needs, "cross_entropy")
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().sum();
        let needs = self.needs(x.0);
        self.push(Tensor::scalar(s), Op::Sum(x.0), needs, "sum")
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        if v.is_empty() {
            bail!(Contract, "mean of an empty tensor");
        }
        let s = v.data().iter().sum::<f64>() / v.len() as f64;
        let needs = self.needs(x.0);
        self.push(Tensor::scalar(s), Op::Mean(x.0), needs, "mean")
    }

    /// Back-propagates from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Grads> {
        if self.value(loss).len() != 1 {
            bail!(Contract, "backward needs a scalar loss, got shape {:?}", self.value(loss).shape());
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.backprop_node(idx, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        Ok(Grads { grads })
    }

    /// [`Tape::backward`], then accumulates the gradients of every parameter
    /// bound with [`Tape::param`] into `params`. Unreached parameters receive
    /// zeros.
    pub fn backward_into(&self, loss: Var, params: &mut ParamSet) -> Result<Grads> {
        let grads = self.backward(loss)?;
        for (name, v) in &self.bindings {
            if params.is_frozen(name) {
                continue;
            }
            let t = params.get_mut(name)?;
            match grads.get(*v) {
                Some(g) => t.accumulate_grad(g)?,
                None => {
                    let z = vec![0.0; t.len()];
                    t.accumulate_grad(&z)?
                }
            }
        }
        Ok(grads)
    }

    fn backprop_node(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) -> Result<()> {
        let node = &self.nodes[idx];
        let mut acc = |i: usize, delta: Vec<f64>| {
            if !self.nodes[i].needs_grad {
                return;
            }
            match &mut grads[i] {
                Some(buf) => buf.iter_mut().zip(&delta).for_each(|(b, d)| *b += d),
                slot @ None => *slot = Some(delta),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (&self.nodes[*a].value, &self.nodes[*b].value);
                let (m, k) = (va.shape()[0], va.shape()[1]);
                let n = vb.shape()[1];
                if self.nodes[*a].needs_grad {
                    let bt = transpose_raw(vb.data(), k, n);
                    acc(*a, matmul_raw(g, &bt, m, n, k));
                }
                if self.nodes[*b].needs_grad {
                    let at = transpose_raw(va.data(), m, k);
                    acc(*b, matmul_raw(&at, g, k, m, n));
                }
            }
            Op::Add(a, b) => {
                acc(*a, g.to_vec());
                acc(*b, g.to_vec());
            }
            Op::AddRow(x, b) => {
                acc(*x, g.to_vec());
                let n = self.nodes[*b].value.len();
                let mut db = vec![0.0; n];
                for row in g.chunks(n) {
                    db.iter_mut().zip(row).for_each(|(d, r)| *d += r);
                }
                acc(*b, db);
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.nodes[*a].value.data(), self.nodes[*b].value.data());
                acc(*a, g.iter().zip(vb).map(|(x, y)| x * y).collect());
                acc(*b, g.iter().zip(va).map(|(x, y)| x * y).collect());
            }
            Op::Scale(x, s) => acc(*x, g.iter().map(|v| v * s).collect()),
            Op::Gelu(x) => {
                let vx = self.nodes[*x].value.data();
                acc(*x, g.iter().zip(vx).map(|(d, &a)| d * gelu_grad_scalar(a)).collect());
            }
            Op::Tanh(x) => {
                let y = node.value.data();
                acc(*x, g.iter().zip(y).map(|(d, t)| d * (1.0 - t * t)).collect());
            }
            Op::Transpose(x) => {
                let (m, n) = (node.value.shape()[0], node.value.shape()[1]);
                acc(*x, transpose_raw(g, m, n));
            }
            Op::SliceCols { x, start } => {
                let src = &self.nodes[*x].value;
                let (m, n) = (src.shape()[0], src.shape()[1]);
                let w = node.value.shape()[1];
                let mut dx = vec![0.0; m * n];
                for i in 0..m {
                    dx[i * n + start..i * n + start + w].copy_from_slice(&g[i * w..(i + 1) * w]);
                }
                acc(*x, dx);
            }
            Op::ConcatCols(parts) => {
                let m = node.value.shape()[0];
                let n = node.value.shape()[1];
                let mut off = 0;
                for &p in parts {
                    let w = self.nodes[p].value.shape()[1];
                    let mut dp = Vec::with_capacity(m * w);
                    for i in 0..m {
                        dp.extend_from_slice(&g[i * n + off..i * n + off + w]);
                    }
                    acc(p, dp);
                    off += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let len = self.nodes[p].value.len();
                    acc(p, g[off..off + len].to_vec());
                    off += len;
                }
            }
            Op::GatherRows { x, idx } => {
                let src = &self.nodes[*x].value;
                let n = src.shape()[1];
                let mut dx = vec![0.0; src.len()];
                for (r, &i) in idx.iter().enumerate() {
                    dx[i * n..(i + 1) * n].iter_mut().zip(&g[r * n..(r + 1) * n]).for_each(|(d, v)| *d += v);
                }
                acc(*x, dx);
            }
            Op::CausalSoftmax(x) => {
                let (m, n) = (node.value.shape()[0], node.value.shape()[1]);
                let y = node.value.data();
                let mut dx = vec![0.0; m * n];
                for i in 0..m {
                    let lim = (i + 1).min(n);
                    let dot: f64 = (0..lim).map(|j| y[i * n + j] * g[i * n + j]).sum();
                    for j in 0..lim {
                        dx[i * n + j] = y[i * n + j] * (g[i * n + j] - dot);
                    }
                }
                acc(*x, dx);
            }
            Op::LayerNorm { x, gain, bias, xhat, rstd } => {
                let (m, n) = (node.value.shape()[0], node.value.shape()[1]);
                let gv = self.nodes[*gain].value.data();
                let mut dx = vec![0.0; m * n];
                let mut dg = vec![0.0; n];
                let mut db = vec![0.0; n];
                for i in 0..m {
                    let gr = &g[i * n..(i + 1) * n];
                    let xh = &xhat[i * n..(i + 1) * n];
                    let mut mean_d = 0.0;
                    let mut mean_dx = 0.0;
                    for j in 0..n {
                        let d = gr[j] * gv[j];
                        mean_d += d;
                        mean_dx += d * xh[j];
                        dg[j] += gr[j] * xh[j];
                        db[j] += gr[j];
                    }
                    mean_d /= n as f64;
                    mean_dx /= n as f64;
                    for j in 0..n {
                        let d = gr[j] * gv[j];
                        dx[i * n + j] = rstd[i] * (d - mean_d - xh[j] * mean_dx);
                    }
                }
                acc(*x, dx);
                acc(*gain, dg);
                acc(*bias, db);
            }
            Op::CrossEntropy { logits, targets, weights, probs } => {
                let v = self.nodes[*logits].value.shape()[1];
                let up = g[0];
                let mut dx = vec![0.0; probs.len()];
                for (i, (&t, &w)) in targets.iter().zip(weights).enumerate() {
                    if w == 0.0 {
                        continue;
                    }
                    for j in 0..v {
                        let onehot = if j == t { 1.0 } else { 0.0 };
                        dx[i * v + j] = up * w * (probs[i * v + j] - onehot);
                    }
                }
                acc(*logits, dx);
            }
            Op::Sum(x) => {
                let n = self.nodes[*x].value.len();
                acc(*x, vec![g[0]; n]);
            }
            Op::Mean(x) => {
                let n = self.nodes[*x].value.len();
                acc(*x, vec![g[0] / n as f64; n]);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::finite_difference_check;
    use crate::rng::seeded;

    fn mat(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn matmul_identity_and_hand_product() {
        let mut t = Tape::new();
        let i2 = t.constant(Tensor::eye(2)).unwrap();
        let m = t.constant(mat(&[&[1.0, 2.0], &[3.0, 4.0]])).unwrap();
        let y = t.matmul(i2, m).unwrap();
        assert_eq!(t.value(y).data(), &[1.0, 2.0, 3.0, 4.0]);

        let a = t.constant(mat(&[&[1.0, 2.0]])).unwrap();
        let b = t.constant(mat(&[&[3.0], &[4.0]])).unwrap();
        let y = t.matmul(a, b).unwrap();
        assert_eq!(t.value(y).shape(), &[1, 1]);
        assert_eq!(t.value(y).item(), 11.0);
    }

    #[test]
    fn matmul_shape_mismatch() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::zeros(&[2, 3])).unwrap();
        let b = t.constant(Tensor::zeros(&[2, 3])).unwrap();
        assert!(matches!(t.matmul(a, b), Err(Error::Dimension(_))));
    }

    #[test]
    fn matmul_gradient_matches_fd() {
        for seed in 0..3 {
            let mut rng = seeded(seed);
            let a = Tensor::randn(&[3, 4], 1.0, &mut rng);
            let b = Tensor::randn(&[4, 2], 1.0, &mut rng);
            let w = Tensor::randn(&[3, 2], 1.0, &mut rng);
            let err_a = finite_difference_check(
                |t, x| {
                    let bv = t.constant(b.clone())?;
                    let wv = t.constant(w.clone())?;
                    let y = t.matmul(x, bv)?;
                    let y = t.mul(y, wv)?;
                    t.sum(y)
                },
                &a,
                1e-6,
            )
            .unwrap();
            let err_b = finite_difference_check(
                |t, x| {
                    let av = t.constant(a.clone())?;
                    let wv = t.constant(w.clone())?;
                    let y = t.matmul(av, x)?;
                    let y = t.mul(y, wv)?;
                    t.sum(y)
                },
                &b,
                1e-6,
            )
            .unwrap();
            assert!(err_a < 1e-4 && err_b < 1e-4, "{err_a} {err_b}");
        }
    }

    #[test]
    fn gelu_values() {
        assert_eq!(gelu_scalar(0.0), 0.0);
        assert!((gelu_scalar(10.0) - 10.0).abs() < 1e-12);
        assert!(gelu_scalar(-10.0).abs() < 1e-12);
        // Closed form evaluated independently at x = 1.
        let u: f64 = (2.0 / core::f64::consts::PI).sqrt() * (1.0 + 0.044715);
        let expect = 0.5 * (1.0 + u.tanh());
        assert!((gelu_scalar(1.0) - expect).abs() < 1e-15);
        assert!((gelu_scalar(1.0) - 0.841_191_990_608_276_8).abs() < 1e-12);
    }

    #[test]
    fn gelu_gradient_matches_fd() {
        let x = Tensor::new(&[1], vec![1.0]).unwrap();
        let err = finite_difference_check(|t, v| {
            let y = t.gelu(v)?;
            t.sum(y)
        }, &x, 1e-6)
        .unwrap();
        assert!(err < 1e-4);
        for seed in 0..3 {
            let x = Tensor::randn(&[4, 5], 2.0, &mut seeded(10 + seed));
            let err = finite_difference_check(|t, v| {
                let y = t.gelu(v)?;
                let y = t.mul(y, v)?;
                t.sum(y)
            }, &x, 1e-6)
            .unwrap();
            assert!(err < 1e-4, "{err}");
        }
    }

    /// Straightforward loop-and-log reference.
    fn naive_ce(logits: &Tensor, targets: &[usize]) -> f64 {
        let v = logits.cols();
        let mut total = 0.0;
        for (i, &t) in targets.iter().enumerate() {
            let row = &logits.data()[i * v..(i + 1) * v];
            let denom: f64 = row.iter().map(|x| x.exp()).sum();
            total += -(row[t].exp() / denom).ln();
        }
        total / targets.len() as f64
    }

    #[test]
    fn cross_entropy_cases() {
        let mut t = Tape::new();
        let u = t.constant(Tensor::zeros(&[3, 4])).unwrap();
        let l = t.cross_entropy(u, &[0, 1, 3]).unwrap();
        assert!((t.value(l).item() - 4f64.ln()).abs() < 1e-15);

        let mut conf = Tensor::full(&[2, 4], -50.0);
        conf.data_mut()[2] = 50.0;
        conf.data_mut()[4 + 1] = 50.0;
        let c = t.constant(conf).unwrap();
        let l = t.cross_entropy(c, &[2, 1]).unwrap();
        assert!(t.value(l).item() < 1e-30);

        let bad = t.cross_entropy(u, &[0, 4, 1]);
        assert!(matches!(bad, Err(Error::Index(_))));

        let mut rng = seeded(3);
        let x = Tensor::randn(&[5, 7], 1.5, &mut rng);
        let targets = [0, 6, 3, 3, 1];
        let v = t.constant(x.clone()).unwrap();
        let l = t.cross_entropy(v, &targets).unwrap();
        assert!((t.value(l).item() - naive_ce(&x, &targets)).abs() < 1e-10);
    }

    #[test]
    fn masked_positions_are_ignored() {
        let mut rng = seeded(4);
        let x = Tensor::randn(&[4, 6], 1.0, &mut rng);
        let mask = [false, true, false, true];
        let mut t = Tape::new();
        let v = t.leaf(x.clone().with_requires_grad()).unwrap();
        let l1 = t.masked_cross_entropy(v, &[0, 2, 5, 1], &mask).unwrap();
        let l2 = t.masked_cross_entropy(v, &[4, 2, 0, 1], &mask).unwrap();
        assert_eq!(t.value(l1).item().to_bits(), t.value(l2).item().to_bits());
        let g = t.backward(l1).unwrap();
        let g = g.get(v).unwrap();
        assert!(g[..6].iter().all(|&d| d == 0.0));
        assert!(g[6..12].iter().any(|&d| d != 0.0));
    }

    #[test]
    fn cross_entropy_gradient_matches_fd() {
        for seed in 0..3 {
            let x = Tensor::randn(&[5, 7], 1.0, &mut seeded(20 + seed));
            let err = finite_difference_check(|t, v| t.cross_entropy(v, &[1, 0, 6, 2, 2]), &x, 1e-6).unwrap();
            assert!(err < 1e-4, "{err}");
        }
    }

    #[test]
    fn structural_ops_gradients() {
        for seed in 0..3 {
            let mut rng = seeded(30 + seed);
            let x = Tensor::randn(&[4, 6], 1.0, &mut rng);
            let w = Tensor::randn(&[6, 4], 1.0, &mut rng);
            let gain = Tensor::rand_uniform(&[6], 0.5, 1.5, &mut rng);
            let bias = Tensor::randn(&[6], 0.3, &mut rng);
            let coef = Tensor::randn(&[4, 6], 1.0, &mut rng);
            let err = finite_difference_check(
                |t, v| {
                    let g = t.constant(gain.clone())?;
                    let b = t.constant(bias.clone())?;
                    let n = t.layer_norm(v, g, b, 1e-5)?;
                    let a = t.slice_cols(n, 0, 3)?;
                    let c = t.slice_cols(n, 3, 6)?;
                    let r = t.concat_cols(&[c, a])?;
                    let wv = t.constant(w.clone())?;
                    let s = t.matmul(r, wv)?;
                    let s = t.scale(s, 0.5)?;
                    let p = t.causal_softmax(s)?;
                    let pt = t.transpose(p)?;
                    let z = t.matmul(pt, r)?;
                    let z = t.tanh(z)?;
                    let rows = t.gather_rows(z, &[3, 0, 0, 2])?;
                    let cv = t.constant(coef.clone())?;
                    let y = t.mul(rows, cv)?;
                    let y2 = t.concat_rows(&[y, rows])?;
                    t.mean(y2)
                },
                &x,
                1e-6,
            )
            .unwrap();
            assert!(err < 1e-4, "{err}");
        }
    }

    #[test]
    fn causal_softmax_masks_future() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::randn(&[3, 3], 1.0, &mut seeded(1))).unwrap();
        let p = t.causal_softmax(x).unwrap();
        let v = t.value(p);
        assert_eq!(v.row(0), &[1.0, 0.0, 0.0]);
        assert_eq!(v.row(1)[2], 0.0);
        for i in 0..3 {
            assert!((v.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn non_scalar_backward_rejected() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::zeros(&[2, 2]).with_requires_grad()).unwrap();
        assert!(matches!(t.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn non_finite_is_an_error() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::full(&[1, 1], 1e300)).unwrap();
        assert!(matches!(t.mul(x, x), Err(Error::NonFinite(_))));
    }
}
