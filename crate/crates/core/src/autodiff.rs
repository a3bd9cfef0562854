//! Tape-based reverse-mode automatic differentiation.
//!
//! Every operation on a [`Var`] computes its value eagerly and appends a node
//! to the owning [`Tape`]. [`Tape::backward`] walks the nodes in reverse and
//! returns a [`Gradients`] table. A tape may only be differentiated once;
//! call [`Tape::reset`] before recording the next step.
//!
//! ```
//! use moeqa::autodiff::Tape;
//! use moeqa::tensor::Tensor;
//!
//! let tape = Tape::new();
//! let x = tape.leaf(Tensor::vector(vec![1.0, 2.0, 3.0]));
//! let loss = x.mul(x).unwrap().sum();
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.wrt(x).data(), &[2.0, 4.0, 6.0]);
//! ```

use std::cell::{Cell, RefCell};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const LAYER_NORM_EPS: f64 = 1e-5;

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

#[derive(Debug)]
enum Op {
    Leaf,
    Constant,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddBias { x: usize, bias: usize },
    MatMul(usize, usize),
    Transpose(usize),
    Reshape(usize),
    Sum(usize),
    Softmax { x: usize, outer: usize, len: usize, inner: usize },
    LayerNorm { x: usize, gain: usize, bias: usize, xhat: Vec<f64>, inv_std: Vec<f64> },
    Gelu(usize),
    Embed { table: usize, ids: Vec<usize> },
    CrossEntropy { logits: usize, target: usize, probs: Vec<f64> },
    SliceRows { x: usize, start: usize },
    ConcatRows(Vec<usize>),
    SliceCols { x: usize, start: usize },
    ConcatCols(Vec<usize>),
    GatherRows { x: usize, rows: Vec<usize> },
    ScatterRows { x: usize, rows: Vec<usize> },
    ScaleRows { x: usize, w: usize },
    Pick { x: usize, flat: Vec<usize> },
    RowNormalize(usize),
    MeanRows(usize),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Recording tape. Confined to one thread at a time (`!Sync`).
#[derive(Debug, Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    differentiated: Cell<bool>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    /// Records a differentiable input (parameter or probe point).
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf)
    }

    /// Records a value that never receives a gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Constant)
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Drops every recorded node so the tape can be reused.
    pub fn reset(&mut self) {
        self.nodes.get_mut().clear();
        self.differentiated.set(false);
    }

    fn push(&self, value: Tensor, op: Op) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn value(&self, id: usize) -> Tensor {
        self.nodes.borrow()[id].value.clone()
    }

    fn with<R>(&self, id: usize, f: impl FnOnce(&Tensor) -> R) -> R {
        f(&self.nodes.borrow()[id].value)
    }

    fn with2<R>(&self, a: usize, b: usize, f: impl FnOnce(&Tensor, &Tensor) -> R) -> R {
        let nodes = self.nodes.borrow();
        f(&nodes[a].value, &nodes[b].value)
    }

    /// Reverse pass from a scalar loss.
    ///
    /// Fails if `loss` is not a one-element tensor or if this tape was
    /// already differentiated since the last [`reset`](Tape::reset).
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        if !std::ptr::eq(self, loss.tape) {
            return Err(Error::contract("loss was recorded on a different tape"));
        }
        if self.differentiated.get() {
            return Err(Error::contract(
                "backward already ran on this tape; reset it before the next pass",
            ));
        }
        let nodes = self.nodes.borrow();
        let loss_node = &nodes[loss.id];
        if loss_node.value.numel() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                loss_node.value.shape()
            )));
        }
        self.differentiated.set(true);

        let mut grads: Vec<Option<Tensor>> = vec![None; loss.id + 1];
        grads[loss.id] = Some(Tensor::full(loss_node.value.shape(), 1.0));

        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            propagate(&nodes, node, &g, &mut grads);
            if matches!(node.op, Op::Leaf) {
                grads[id] = Some(g);
            }
        }
        Ok(Gradients { grads })
    }
}

fn accumulate(grads: &mut [Option<Tensor>], id: usize, g: Tensor) {
    match &mut grads[id] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn propagate(nodes: &[Node], node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
    let out = &node.value;
    let val = |id: usize| &nodes[id].value;
    match &node.op {
        Op::Leaf | Op::Constant => {}
        Op::Add(a, b) => {
            accumulate(grads, *a, g.clone());
            accumulate(grads, *b, g.clone());
        }
        Op::Sub(a, b) => {
            accumulate(grads, *a, g.clone());
            accumulate(grads, *b, g.map(|x| -x));
        }
        Op::Mul(a, b) => {
            let (va, vb) = (val(*a), val(*b));
            let ga = zip_map(g, vb, |x, y| x * y);
            let gb = zip_map(g, va, |x, y| x * y);
            accumulate(grads, *a, ga);
            accumulate(grads, *b, gb);
        }
        Op::Scale(a, s) => accumulate(grads, *a, g.map(|x| x * s)),
        Op::AddBias { x, bias } => {
            let n = *val(*bias).shape().last().unwrap();
            let mut gb = vec![0.0; n];
            for row in g.data().chunks(n) {
                for (acc, v) in gb.iter_mut().zip(row) {
                    *acc += v;
                }
            }
            accumulate(grads, *x, g.clone());
            accumulate(grads, *bias, Tensor::from_parts(val(*bias).shape().to_vec(), gb));
        }
        Op::MatMul(a, b) => {
            let (va, vb) = (val(*a), val(*b));
            let (m, k) = (va.shape()[0], va.shape()[1]);
            let n = vb.shape()[1];
            let ga = matmul_a_bt(g.data(), vb.data(), m, n, k);
            let gb = matmul_at_b(va.data(), g.data(), m, k, n);
            accumulate(grads, *a, Tensor::from_parts(vec![m, k], ga));
            accumulate(grads, *b, Tensor::from_parts(vec![k, n], gb));
        }
        Op::Transpose(a) => {
            let (r, c) = (out.shape()[0], out.shape()[1]);
            accumulate(grads, *a, Tensor::from_parts(vec![c, r], transpose(g.data(), r, c)));
        }
        Op::Reshape(a) => {
            let shape = val(*a).shape().to_vec();
            accumulate(grads, *a, Tensor::from_parts(shape, g.data().to_vec()));
        }
        Op::Sum(a) => {
            let shape = val(*a).shape();
            accumulate(grads, *a, Tensor::full(shape, g.item()));
        }
        Op::Softmax { x, outer, len, inner } => {
            let y = out.data();
            let gd = g.data();
            let mut gx = vec![0.0; y.len()];
            for o in 0..*outer {
                for i in 0..*inner {
                    let idx = |j: usize| (o * len + j) * inner + i;
                    let dot: f64 = (0..*len).map(|j| gd[idx(j)] * y[idx(j)]).sum();
                    for j in 0..*len {
                        gx[idx(j)] = y[idx(j)] * (gd[idx(j)] - dot);
                    }
                }
            }
            accumulate(grads, *x, Tensor::from_parts(out.shape().to_vec(), gx));
        }
        Op::LayerNorm { x, gain, bias, xhat, inv_std } => {
            let n = *out.shape().last().unwrap();
            let gain_v = val(*gain).data();
            let mut gx = vec![0.0; xhat.len()];
            let mut ggain = vec![0.0; n];
            let mut gbias = vec![0.0; n];
            for (r, inv) in inv_std.iter().enumerate() {
                let span = r * n..(r + 1) * n;
                let gr = &g.data()[span.clone()];
                let xr = &xhat[span.clone()];
                let mut sum_d = 0.0;
                let mut sum_dx = 0.0;
                for j in 0..n {
                    ggain[j] += gr[j] * xr[j];
                    gbias[j] += gr[j];
                    let d = gr[j] * gain_v[j];
                    sum_d += d;
                    sum_dx += d * xr[j];
                }
                let nf = n as f64;
                for j in 0..n {
                    let d = gr[j] * gain_v[j];
                    gx[span.start + j] = inv / nf * (nf * d - sum_d - xr[j] * sum_dx);
                }
            }
            accumulate(grads, *x, Tensor::from_parts(out.shape().to_vec(), gx));
            accumulate(grads, *gain, Tensor::from_parts(vec![n], ggain));
            accumulate(grads, *bias, Tensor::from_parts(vec![n], gbias));
        }
        Op::Gelu(a) => {
            let gx = zip_map(g, val(*a), |gv, x| gv * gelu_grad(x));
            accumulate(grads, *a, gx);
        }
        Op::Embed { table, ids } => {
            let tshape = val(*table).shape().to_vec();
            let d = tshape[1];
            let mut gt = vec![0.0; tshape[0] * d];
            for (row, &id) in ids.iter().enumerate() {
                for j in 0..d {
                    gt[id * d + j] += g.data()[row * d + j];
                }
            }
            accumulate(grads, *table, Tensor::from_parts(tshape, gt));
        }
        Op::CrossEntropy { logits, target, probs } => {
            let gv = g.item();
            let mut gl: Vec<f64> = probs.iter().map(|p| p * gv).collect();
            gl[*target] -= gv;
            accumulate(grads, *logits, Tensor::from_parts(val(*logits).shape().to_vec(), gl));
        }
        Op::SliceRows { x, start } => {
            let shape = val(*x).shape().to_vec();
            let cols = shape[1];
            let mut gx = vec![0.0; shape[0] * cols];
            gx[start * cols..start * cols + g.numel()].copy_from_slice(g.data());
            accumulate(grads, *x, Tensor::from_parts(shape, gx));
        }
        Op::ConcatRows(parts) => {
            let mut offset = 0;
            for &p in parts {
                let shape = val(p).shape().to_vec();
                let n = shape.iter().product::<usize>();
                let gp = g.data()[offset..offset + n].to_vec();
                offset += n;
                accumulate(grads, p, Tensor::from_parts(shape, gp));
            }
        }
        Op::SliceCols { x, start } => {
            let shape = val(*x).shape().to_vec();
            let (rows, cols) = (shape[0], shape[1]);
            let width = out.shape()[1];
            let mut gx = vec![0.0; rows * cols];
            for r in 0..rows {
                gx[r * cols + start..r * cols + start + width]
                    .copy_from_slice(&g.data()[r * width..(r + 1) * width]);
            }
            accumulate(grads, *x, Tensor::from_parts(shape, gx));
        }
        Op::ConcatCols(parts) => {
            let (rows, total) = (out.shape()[0], out.shape()[1]);
            let mut offset = 0;
            for &p in parts {
                let width = val(p).shape()[1];
                let mut gp = Vec::with_capacity(rows * width);
                for r in 0..rows {
                    gp.extend_from_slice(&g.data()[r * total + offset..r * total + offset + width]);
                }
                offset += width;
                accumulate(grads, p, Tensor::from_parts(vec![rows, width], gp));
            }
        }
        Op::GatherRows { x, rows } => {
            let shape = val(*x).shape().to_vec();
            let cols = shape[1];
            let mut gx = vec![0.0; shape[0] * cols];
            for (i, &r) in rows.iter().enumerate() {
                for j in 0..cols {
                    gx[r * cols + j] += g.data()[i * cols + j];
                }
            }
            accumulate(grads, *x, Tensor::from_parts(shape, gx));
        }
        Op::ScatterRows { x, rows } => {
            let cols = out.shape()[1];
            let mut gx = Vec::with_capacity(rows.len() * cols);
            for &r in rows {
                gx.extend_from_slice(&g.data()[r * cols..(r + 1) * cols]);
            }
            accumulate(grads, *x, Tensor::from_parts(vec![rows.len(), cols], gx));
        }
        Op::ScaleRows { x, w } => {
            let (vx, vw) = (val(*x), val(*w));
            let cols = vx.shape()[1];
            let mut gx = vec![0.0; vx.numel()];
            let mut gw = vec![0.0; vw.numel()];
            for (r, wr) in vw.data().iter().enumerate() {
                for j in 0..cols {
                    let i = r * cols + j;
                    gx[i] = g.data()[i] * wr;
                    gw[r] += g.data()[i] * vx.data()[i];
                }
            }
            accumulate(grads, *x, Tensor::from_parts(vx.shape().to_vec(), gx));
            accumulate(grads, *w, Tensor::from_parts(vw.shape().to_vec(), gw));
        }
        Op::Pick { x, flat } => {
            let shape = val(*x).shape().to_vec();
            let mut gx = vec![0.0; shape.iter().product()];
            for (i, &f) in flat.iter().enumerate() {
                gx[f] += g.data()[i];
            }
            accumulate(grads, *x, Tensor::from_parts(shape, gx));
        }
        Op::RowNormalize(a) => {
            let va = val(*a);
            let cols = va.shape()[1];
            let mut gx = vec![0.0; va.numel()];
            for r in 0..va.shape()[0] {
                let span = r * cols..(r + 1) * cols;
                let s: f64 = va.data()[span.clone()].iter().sum();
                let y = &out.data()[span.clone()];
                let gr = &g.data()[span.clone()];
                let dot: f64 = gr.iter().zip(y).map(|(a, b)| a * b).sum();
                for j in 0..cols {
                    gx[span.start + j] = (gr[j] - dot) / s;
                }
            }
            accumulate(grads, *a, Tensor::from_parts(va.shape().to_vec(), gx));
        }
        Op::MeanRows(a) => {
            let shape = val(*a).shape().to_vec();
            let (rows, cols) = (shape[0], shape[1]);
            let mut gx = Vec::with_capacity(rows * cols);
            for _ in 0..rows {
                gx.extend(g.data().iter().map(|v| v / rows as f64));
            }
            accumulate(grads, *a, Tensor::from_parts(shape, gx));
        }
    }
}

/// Gradient table produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of a leaf, or `None` if the loss does not depend on it.
    pub fn get(&self, var: Var<'_>) -> Option<&Tensor> {
        self.grads.get(var.id).and_then(Option::as_ref)
    }

    /// Gradient of a leaf, zero-filled when the loss does not depend on it.
    pub fn wrt(&self, var: Var<'_>) -> Tensor {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(&var.shape()))
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Tensor {
        self.tape.value(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.with(self.id, |t| t.shape().to_vec())
    }

    /// Value of a one-element var.
    pub fn item(&self) -> f64 {
        self.tape.with(self.id, Tensor::item)
    }

    fn same_shape(&self, other: Var<'t>, op: &'static str) -> Result<()> {
        let (a, b) = (self.shape(), other.shape());
        if a != b {
            return Err(Error::Dimension { op, left: a, right: b });
        }
        Ok(())
    }

    fn elementwise(
        &self,
        other: Var<'t>,
        op: &'static str,
        f: impl Fn(f64, f64) -> f64,
        node: Op,
    ) -> Result<Var<'t>> {
        self.same_shape(other, op)?;
        let value = self.tape.with2(self.id, other.id, |a, b| zip_map(a, b, f));
        Ok(self.tape.push(value, node))
    }

    pub fn add(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.elementwise(other, "add", |a, b| a + b, Op::Add(self.id, other.id))
    }

    pub fn sub(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.elementwise(other, "sub", |a, b| a - b, Op::Sub(self.id, other.id))
    }

    pub fn mul(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.elementwise(other, "mul", |a, b| a * b, Op::Mul(self.id, other.id))
    }

    pub fn scale(&self, factor: f64) -> Var<'t> {
        let value = self.tape.with(self.id, |t| t.map(|x| x * factor));
        self.tape.push(value, Op::Scale(self.id, factor))
    }

    /// Adds a length-`n` bias to every row of an `[m, n]` matrix.
    pub fn add_bias(&self, bias: Var<'t>) -> Result<Var<'t>> {
        let value = self.tape.with2(self.id, bias.id, |x, b| {
            let n = *x.shape().last().unwrap_or(&0);
            if b.shape() != [n] || x.rank() != 2 {
                return Err(Error::Dimension {
                    op: "add_bias",
                    left: x.shape().to_vec(),
                    right: b.shape().to_vec(),
                });
            }
            let data = x
                .data()
                .chunks(n)
                .flat_map(|row| row.iter().zip(b.data()).map(|(v, c)| v + c))
                .collect();
            Ok(Tensor::from_parts(x.shape().to_vec(), data))
        })?;
        Ok(self.tape.push(value, Op::AddBias { x: self.id, bias: bias.id }))
    }

    pub fn matmul(&self, other: Var<'t>) -> Result<Var<'t>> {
        let value = self.tape.with2(self.id, other.id, matmul)?;
        Ok(self.tape.push(value, Op::MatMul(self.id, other.id)))
    }

    pub fn transpose(&self) -> Result<Var<'t>> {
        let value = self.tape.with(self.id, |t| {
            let (r, c) = t.dims2()?;
            Ok::<_, Error>(Tensor::from_parts(vec![c, r], transpose(t.data(), r, c)))
        })?;
        Ok(self.tape.push(value, Op::Transpose(self.id)))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<'t>> {
        let value = self.tape.with(self.id, |t| t.reshape(shape))?;
        Ok(self.tape.push(value, Op::Reshape(self.id)))
    }

    pub fn sum(&self) -> Var<'t> {
        let value = self.tape.with(self.id, |t| Tensor::scalar(t.sum()));
        self.tape.push(value, Op::Sum(self.id))
    }

    pub fn mean(&self) -> Var<'t> {
        let n = self.tape.with(self.id, Tensor::numel) as f64;
        self.sum().scale(1.0 / n)
    }

    pub fn softmax(&self, axis: usize) -> Result<Var<'t>> {
        let (value, outer, len, inner) = self.tape.with(self.id, |t| {
            if axis >= t.rank() {
                return Err(Error::Index {
                    op: "softmax axis",
                    index: axis,
                    limit: t.rank(),
                });
            }
            let shape = t.shape();
            let outer: usize = shape[..axis].iter().product();
            let len = shape[axis];
            let inner: usize = shape[axis + 1..].iter().product();
            let y = softmax_along(t, outer, len, inner)?;
            Ok((y, outer, len, inner))
        })?;
        Ok(self.tape.push(value, Op::Softmax { x: self.id, outer, len, inner }))
    }

    /// Row-wise layer normalisation over the last axis of an `[m, n]` matrix.
    pub fn layer_norm(&self, gain: Var<'t>, bias: Var<'t>) -> Result<Var<'t>> {
        let nodes = self.tape.nodes.borrow();
        let (x, g, b) = (&nodes[self.id].value, &nodes[gain.id].value, &nodes[bias.id].value);
        let (rows, n) = x.dims2()?;
        if g.shape() != [n] || b.shape() != [n] {
            return Err(Error::Dimension {
                op: "layer_norm",
                left: x.shape().to_vec(),
                right: g.shape().to_vec(),
            });
        }
        let mut xhat = Vec::with_capacity(x.numel());
        let mut inv_std = Vec::with_capacity(rows);
        let mut y = Vec::with_capacity(x.numel());
        for row in x.data().chunks(n) {
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std.push(inv);
            for j in 0..n {
                let h = (row[j] - mean) * inv;
                xhat.push(h);
                y.push(h * g.data()[j] + b.data()[j]);
            }
        }
        let value = Tensor::from_parts(x.shape().to_vec(), y);
        drop(nodes);
        Ok(self.tape.push(
            value,
            Op::LayerNorm { x: self.id, gain: gain.id, bias: bias.id, xhat, inv_std },
        ))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&self) -> Var<'t> {
        let value = self.tape.with(self.id, |t| t.map(gelu));
        self.tape.push(value, Op::Gelu(self.id))
    }

    /// Looks up rows of an `[vocab, d]` table.
    pub fn embed(&self, ids: &[usize]) -> Result<Var<'t>> {
        let value = self.tape.with(self.id, |table| {
            let (vocab, d) = table.dims2()?;
            let mut data = Vec::with_capacity(ids.len() * d);
            for &id in ids {
                if id >= vocab {
                    return Err(Error::Index { op: "embed", index: id, limit: vocab });
                }
                data.extend_from_slice(table.row(id));
            }
            nonempty(ids.len(), "embed")?;
            Ok(Tensor::from_parts(vec![ids.len(), d], data))
        })?;
        Ok(self.tape.push(value, Op::Embed { table: self.id, ids: ids.to_vec() }))
    }

    /// `-log softmax(logits)[target]` over all elements of `self`.
    pub fn cross_entropy(&self, target: usize) -> Result<Var<'t>> {
        let (loss, probs) = self.tape.with(self.id, |t| {
            if target >= t.numel() {
                return Err(Error::Index {
                    op: "cross_entropy target",
                    index: target,
                    limit: t.numel(),
                });
            }
            let probs = softmax_along(t, 1, t.numel(), 1)?.into_data();
            let max = t.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + t.data().iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            Ok((lse - t.data()[target], probs))
        })?;
        Ok(self.tape.push(
            Tensor::scalar(loss),
            Op::CrossEntropy { logits: self.id, target, probs },
        ))
    }

    pub fn slice_rows(&self, start: usize, len: usize) -> Result<Var<'t>> {
        let value = self.tape.with(self.id, |t| {
            let (rows, cols) = t.dims2()?;
            nonempty(len, "slice_rows")?;
            if start + len > rows {
                return Err(Error::Index { op: "slice_rows", index: start + len, limit: rows });
            }
            Ok(Tensor::from_parts(
                vec![len, cols],
                t.data()[start * cols..(start + len) * cols].to_vec(),
            ))
        })?;
        Ok(self.tape.push(value, Op::SliceRows { x: self.id, start }))
    }

    pub fn slice_cols(&self, start: usize, width: usize) -> Result<Var<'t>> {
        let value = self.tape.with(self.id, |t| {
            let (rows, cols) = t.dims2()?;
            nonempty(width, "slice_cols")?;
            if start + width > cols {
                return Err(Error::Index { op: "slice_cols", index: start + width, limit: cols });
            }
            let mut data = Vec::with_capacity(rows * width);
            for r in 0..rows {
                data.extend_from_slice(&t.row(r)[start..start + width]);
            }
            Ok(Tensor::from_parts(vec![rows, width], data))
        })?;
        Ok(self.tape.push(value, Op::SliceCols { x: self.id, start }))
    }

    /// Rows of `self` at `rows` (repeats allowed), as a `[rows.len(), n]` matrix.
    pub fn gather_rows(&self, rows: &[usize]) -> Result<Var<'t>> {
        let value = self.tape.with(self.id, |t| {
            let (m, cols) = t.dims2()?;
            nonempty(rows.len(), "gather_rows")?;
            let mut data = Vec::with_capacity(rows.len() * cols);
            for &r in rows {
                if r >= m {
                    return Err(Error::Index { op: "gather_rows", index: r, limit: m });
                }
                data.extend_from_slice(t.row(r));
            }
            Ok(Tensor::from_parts(vec![rows.len(), cols], data))
        })?;
        Ok(self.tape.push(value, Op::GatherRows { x: self.id, rows: rows.to_vec() }))
    }

    /// Places row `i` of `self` at row `rows[i]` of a zero `[total, n]` matrix.
    /// `rows` must be distinct.
    pub fn scatter_rows(&self, rows: &[usize], total: usize) -> Result<Var<'t>> {
        let value = self.tape.with(self.id, |t| {
            let (m, cols) = t.dims2()?;
            if m != rows.len() {
                return Err(Error::Dimension {
                    op: "scatter_rows",
                    left: t.shape().to_vec(),
                    right: vec![rows.len()],
                });
            }
            let mut seen = vec![false; total];
            let mut data = vec![0.0; total * cols];
            for (i, &r) in rows.iter().enumerate() {
                if r >= total {
                    return Err(Error::Index { op: "scatter_rows", index: r, limit: total });
                }
                if std::mem::replace(&mut seen[r], true) {
                    return Err(Error::contract("scatter_rows targets must be distinct"));
                }
                data[r * cols..(r + 1) * cols].copy_from_slice(t.row(i));
            }
            Ok(Tensor::from_parts(vec![total, cols], data))
        })?;
        Ok(self.tape.push(value, Op::ScatterRows { x: self.id, rows: rows.to_vec() }))
    }

    /// Multiplies row `i` of an `[m, n]` matrix by `w[i]`.
    pub fn scale_rows(&self, w: Var<'t>) -> Result<Var<'t>> {
        let value = self.tape.with2(self.id, w.id, |x, w| {
            let (m, cols) = x.dims2()?;
            if w.numel() != m {
                return Err(Error::Dimension {
                    op: "scale_rows",
                    left: x.shape().to_vec(),
                    right: w.shape().to_vec(),
                });
            }
            let data = x
                .data()
                .chunks(cols)
                .zip(w.data())
                .flat_map(|(row, s)| row.iter().map(move |v| v * s))
                .collect();
            Ok::<_, Error>(Tensor::from_parts(x.shape().to_vec(), data))
        })?;
        Ok(self.tape.push(value, Op::ScaleRows { x: self.id, w: w.id }))
    }

    /// Picks `(row, col)` entries of a matrix into a tensor of `out_shape`.
    pub fn pick(&self, positions: &[(usize, usize)], out_shape: &[usize]) -> Result<Var<'t>> {
        let (value, flat) = self.tape.with(self.id, |t| {
            let (m, cols) = t.dims2()?;
            if out_shape.iter().product::<usize>() != positions.len() {
                return Err(Error::Dimension {
                    op: "pick",
                    left: out_shape.to_vec(),
                    right: vec![positions.len()],
                });
            }
            nonempty(positions.len(), "pick")?;
            let mut flat = Vec::with_capacity(positions.len());
            for &(r, c) in positions {
                if r >= m || c >= cols {
                    return Err(Error::Index { op: "pick", index: r * cols + c, limit: m * cols });
                }
                flat.push(r * cols + c);
            }
            let data = flat.iter().map(|&f| t.data()[f]).collect();
            Ok((Tensor::from_parts(out_shape.to_vec(), data), flat))
        })?;
        Ok(self.tape.push(value, Op::Pick { x: self.id, flat }))
    }

    /// Divides each row of a positive `[m, n]` matrix by its sum.
    pub fn row_normalize(&self) -> Result<Var<'t>> {
        let value = self.tape.with(self.id, |t| {
            let (_, cols) = t.dims2()?;
            let mut data = Vec::with_capacity(t.numel());
            for row in t.data().chunks(cols) {
                let s: f64 = row.iter().sum();
                if !(s > 0.0) {
                    return Err(Error::Numeric {
                        op: "row_normalize",
                        detail: format!("row sum {s} is not positive"),
                    });
                }
                data.extend(row.iter().map(|v| v / s));
            }
            Ok(Tensor::from_parts(t.shape().to_vec(), data))
        })?;
        Ok(self.tape.push(value, Op::RowNormalize(self.id)))
    }

    /// Column means of an `[m, n]` matrix, as a length-`n` vector.
    pub fn mean_rows(&self) -> Result<Var<'t>> {
        let value = self.tape.with(self.id, |t| {
            let (m, cols) = t.dims2()?;
            let mut acc = vec![0.0; cols];
            for row in t.data().chunks(cols) {
                for (a, v) in acc.iter_mut().zip(row) {
                    *a += v;
                }
            }
            acc.iter_mut().for_each(|a| *a /= m as f64);
            Ok::<_, Error>(Tensor::from_parts(vec![cols], acc))
        })?;
        Ok(self.tape.push(value, Op::MeanRows(self.id)))
    }
}

/// Stacks `[r_i, n]` matrices vertically.
pub fn concat_rows<'t>(parts: &[Var<'t>]) -> Result<Var<'t>> {
    let first = parts.first().ok_or_else(|| Error::contract("concat_rows of nothing"))?;
    let tape = first.tape;
    let nodes = tape.nodes.borrow();
    let cols = nodes[first.id].value.dims2()?.1;
    let mut rows = 0;
    let mut data = Vec::new();
    for p in parts {
        let v = &nodes[p.id].value;
        let (r, c) = v.dims2()?;
        if c != cols {
            return Err(Error::Dimension {
                op: "concat_rows",
                left: vec![rows, cols],
                right: v.shape().to_vec(),
            });
        }
        rows += r;
        data.extend_from_slice(v.data());
    }
    drop(nodes);
    let ids = parts.iter().map(|p| p.id).collect();
    Ok(tape.push(Tensor::from_parts(vec![rows, cols], data), Op::ConcatRows(ids)))
}

/// Joins `[m, c_i]` matrices side by side.
pub fn concat_cols<'t>(parts: &[Var<'t>]) -> Result<Var<'t>> {
    let first = parts.first().ok_or_else(|| Error::contract("concat_cols of nothing"))?;
    let tape = first.tape;
    let nodes = tape.nodes.borrow();
    let rows = nodes[first.id].value.dims2()?.0;
    let mut widths = Vec::with_capacity(parts.len());
    for p in parts {
        let v = &nodes[p.id].value;
        let (r, c) = v.dims2()?;
        if r != rows {
            return Err(Error::Dimension {
                op: "concat_cols",
                left: vec![rows],
                right: v.shape().to_vec(),
            });
        }
        widths.push(c);
    }
    let total: usize = widths.iter().sum();
    let mut data = Vec::with_capacity(rows * total);
    for r in 0..rows {
        for p in parts {
            data.extend_from_slice(nodes[p.id].value.row(r));
        }
    }
    drop(nodes);
    let ids = parts.iter().map(|p| p.id).collect();
    Ok(tape.push(Tensor::from_parts(vec![rows, total], data), Op::ConcatCols(ids)))
}

fn nonempty(n: usize, op: &'static str) -> Result<()> {
    if n == 0 {
        return Err(Error::contract(format!("{op} would produce an empty tensor")));
    }
    Ok(())
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(x, y)| f(*x, *y)).collect();
    Tensor::from_parts(a.shape().to_vec(), data)
}

pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

/// Plain matrix product of two rank-2 tensors.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = a.dims2()?;
    let (k2, n) = b.dims2()?;
    if k != k2 {
        return Err(Error::Dimension {
            op: "matmul",
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    let mut out = vec![0.0; m * n];
    let (ad, bd) = (a.data(), b.data());
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = ad[i * k + p];
            if av == 0.0 {
                continue;
            }
            for (o, bv) in orow.iter_mut().zip(&bd[p * n..(p + 1) * n]) {
                *o += av * bv;
            }
        }
    }
    Ok(Tensor::from_parts(vec![m, n], out))
}

// g [m, n] * b^T where b is [k, n]  ->  [m, k]
fn matmul_a_bt(g: &[f64], b: &[f64], m: usize, n: usize, k: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * k];
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            out[i * k + p] = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
        }
    }
    out
}

// a^T * g where a is [m, k], g is [m, n]  ->  [k, n]
fn matmul_at_b(a: &[f64], g: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; k * n];
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            for (o, gv) in out[p * n..(p + 1) * n].iter_mut().zip(grow) {
                *o += av * gv;
            }
        }
    }
    out
}

fn transpose(data: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; data.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = data[r * cols + c];
        }
    }
    out
}

fn softmax_along(t: &Tensor, outer: usize, len: usize, inner: usize) -> Result<Tensor> {
    if t.data().iter().any(|v| v.is_nan()) {
        return Err(Error::Numeric {
            op: "softmax",
            detail: "input contains NaN".into(),
        });
    }
    let x = t.data();
    let mut y = vec![0.0; x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let idx = |j: usize| (o * len + j) * inner + i;
            let max = (0..len).map(|j| x[idx(j)]).fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for j in 0..len {
                let e = (x[idx(j)] - max).exp();
                y[idx(j)] = e;
                total += e;
            }
            for j in 0..len {
                y[idx(j)] /= total;
            }
        }
    }
    Ok(Tensor::from_parts(t.shape().to_vec(), y))
}

/// Softmax of a plain tensor along `axis`, without recording.
pub fn softmax(t: &Tensor, axis: usize) -> Result<Tensor> {
    let tape = Tape::new();
    let v = tape.constant(t.clone()).softmax(axis)?;
    Ok(v.value())
}
