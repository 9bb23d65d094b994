use std::cell::RefCell;
use std::fmt;

use super::kernels;
use super::{Element, Tensor};
use crate::error::{Error, Result};

/// A single-use computation tape.
///
/// Nodes are appended in evaluation order, so every node's inputs precede
/// it and the reverse sweep in [`Graph::backward`] is a plain reverse
/// iteration. A graph supports exactly one backward pass.
pub struct Graph<E: Element = f32> {
    tape: RefCell<Tape<E>>,
}

struct Tape<E: Element> {
    nodes: Vec<Node<E>>,
    grads: Vec<Option<Tensor<E>>>,
    backward_done: bool,
}

struct Node<E: Element> {
    value: Tensor<E>,
    op: Op<E>,
    requires_grad: bool,
}

enum Op<E: Element> {
    Leaf,
    MatMul {
        a: usize,
        b: usize,
        m: usize,
        k: usize,
        n: usize,
    },
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddRow {
        x: usize,
        bias: usize,
    },
    Scale {
        x: usize,
        factor: E,
    },
    Gelu(usize),
    Softmax(usize),
    LayerNorm {
        x: usize,
        gain: usize,
        bias: usize,
        xhat: Vec<E>,
        rstd: Vec<E>,
    },
    Reshape(usize),
    Transpose {
        x: usize,
        rows: usize,
        cols: usize,
    },
    GatherRows {
        x: usize,
        ids: Vec<usize>,
    },
    GatherElements {
        x: usize,
        idx: Vec<usize>,
    },
    ConcatRows(Vec<usize>),
    ConcatCols(Vec<usize>),
    SliceCols {
        x: usize,
        start: usize,
    },
    MeanRows(usize),
    Sum(usize),
    Mse {
        pred: usize,
        target: usize,
    },
    MaskedMse {
        pred: usize,
        target: usize,
        weights: Vec<E>,
        denom: E,
    },
}

impl<E: Element> Op<E> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul { .. } => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::AddRow { .. } => "add_row",
            Op::Scale { .. } => "scale",
            Op::Gelu(_) => "gelu",
            Op::Softmax(_) => "softmax",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Reshape(_) => "reshape",
            Op::Transpose { .. } => "transpose",
            Op::GatherRows { .. } => "gather_rows",
            Op::GatherElements { .. } => "gather_elements",
            Op::ConcatRows(_) => "concat_rows",
            Op::ConcatCols(_) => "concat_cols",
            Op::SliceCols { .. } => "slice_cols",
            Op::MeanRows(_) => "mean_rows",
            Op::Sum(_) => "sum",
            Op::Mse { .. } => "mse_loss",
            Op::MaskedMse { .. } => "masked_mse",
        }
    }

    fn inputs(&self) -> Vec<usize> {
        match self {
            Op::Leaf => vec![],
            Op::MatMul { a, b, .. } => vec![*a, *b],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::AddRow { x, bias } => vec![*x, *bias],
            Op::LayerNorm { x, gain, bias, .. } => vec![*x, *gain, *bias],
            Op::Mse { pred, target } | Op::MaskedMse { pred, target, .. } => vec![*pred, *target],
            Op::ConcatRows(ids) | Op::ConcatCols(ids) => ids.clone(),
            Op::Scale { x, .. }
            | Op::Gelu(x)
            | Op::Softmax(x)
            | Op::Reshape(x)
            | Op::Transpose { x, .. }
            | Op::GatherRows { x, .. }
            | Op::GatherElements { x, .. }
            | Op::SliceCols { x, .. }
            | Op::MeanRows(x)
            | Op::Sum(x) => vec![*x],
        }
    }
}

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g, E: Element = f32> {
    graph: &'g Graph<E>,
    id: usize,
}

impl<E: Element> fmt::Debug for Var<'_, E> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

impl<E: Element> Default for Graph<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E: Element> Graph<E> {
    pub fn new() -> Self {
        Self {
            tape: RefCell::new(Tape {
                nodes: Vec::new(),
                grads: Vec::new(),
                backward_done: false,
            }),
        }
    }

    pub fn len(&self) -> usize {
        self.tape.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn leaf(&self, value: Tensor<E>, requires_grad: bool) -> Var<'_, E> {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// A trainable leaf.
    pub fn param(&self, value: Tensor<E>) -> Var<'_, E> {
        self.leaf(value, true)
    }

    pub fn constant(&self, value: Tensor<E>) -> Var<'_, E> {
        self.leaf(value, false)
    }

    fn push(&self, value: Tensor<E>, op: Op<E>, requires_grad: bool) -> Var<'_, E> {
        let mut tape = self.tape.borrow_mut();
        tape.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            graph: self,
            id: tape.nodes.len() - 1,
        }
    }

    fn push_op(&self, value: Tensor<E>, op: Op<E>) -> Var<'_, E> {
        let requires_grad = {
            let tape = self.tape.borrow();
            op.inputs().iter().any(|&i| tape.nodes[i].requires_grad)
        };
        self.push(value, op, requires_grad)
    }

    fn owns(&self, v: &Var<'_, E>) -> Result<()> {
        if std::ptr::eq(self, v.graph) {
            Ok(())
        } else {
            Err(Error::Contract(
                "variable belongs to a different graph".into(),
            ))
        }
    }

    fn with_values<R>(&self, ids: &[usize], f: impl FnOnce(&[&Tensor<E>]) -> R) -> R {
        let tape = self.tape.borrow();
        let vals: Vec<&Tensor<E>> = ids.iter().map(|&i| &tape.nodes[i].value).collect();
        f(&vals)
    }

    /// Stacks 2-D (or row-major n-D) tensors along the leading dimension.
    pub fn concat_rows<'g>(&'g self, parts: &[Var<'g, E>]) -> Result<Var<'g, E>> {
        if parts.is_empty() {
            return Err(Error::Contract("concat_rows of zero tensors".into()));
        }
        for p in parts {
            self.owns(p)?;
        }
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        let out = self.with_values(&ids, |vals| {
            let tail = vals[0].shape()[1..].to_vec();
            let mut rows = 0;
            let mut data = Vec::new();
            for v in vals {
                if v.shape()[1..] != tail[..] {
                    return Err(Error::dim("concat_rows", vals[0].shape(), v.shape()));
                }
                rows += v.rows();
                data.extend_from_slice(v.data());
            }
            let mut shape = vec![rows];
            shape.extend(tail);
            Ok(Tensor::from_parts(shape, data))
        })?;
        Ok(self.push_op(out, Op::ConcatRows(ids)))
    }

    /// Joins 2-D tensors with equal row counts side by side.
    pub fn concat_cols<'g>(&'g self, parts: &[Var<'g, E>]) -> Result<Var<'g, E>> {
        if parts.is_empty() {
            return Err(Error::Contract("concat_cols of zero tensors".into()));
        }
        for p in parts {
            self.owns(p)?;
        }
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        let out = self.with_values(&ids, |vals| {
            let rows = vals[0].shape()[0];
            for v in vals {
                if v.ndim() != 2 || v.shape()[0] != rows {
                    return Err(Error::dim("concat_cols", vals[0].shape(), v.shape()));
                }
            }
            let total: usize = vals.iter().map(|v| v.shape()[1]).sum();
            let mut data = Vec::with_capacity(rows * total);
            for r in 0..rows {
                for v in vals {
                    data.extend_from_slice(v.row(r));
                }
            }
            Ok(Tensor::from_parts(vec![rows, total], data))
        })?;
        Ok(self.push_op(out, Op::ConcatCols(ids)))
    }

    /// Runs the reverse sweep from a one-element `loss`.
    ///
    /// Gradients are retained for every node that requires them and can be
    /// read with [`Var::grad`]. A second call on the same graph is an error.
    pub fn backward(&self, loss: Var<'_, E>) -> Result<()> {
        self.owns(&loss)?;
        let mut tape = self.tape.borrow_mut();
        if tape.backward_done {
            return Err(Error::Contract(
                "backward() already ran on this graph; build a new forward pass".into(),
            ));
        }
        let loss_node = &tape.nodes[loss.id];
        if loss_node.value.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward() needs a scalar loss, got shape {:?}",
                loss_node.value.shape()
            )));
        }
        tape.backward_done = true;
        let Tape { nodes, grads, .. } = &mut *tape;
        grads.clear();
        grads.resize_with(nodes.len(), || None);
        grads[loss.id] = Some(Tensor::from_parts(
            nodes[loss.id].value.shape().to_vec(),
            vec![E::one()],
        ));
        for id in (0..=loss.id).rev() {
            if !nodes[id].requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            propagate(nodes, grads, id, &g);
            grads[id] = Some(g);
        }
        Ok(())
    }
}

fn accumulate<E: Element>(
    nodes: &[Node<E>],
    grads: &mut [Option<Tensor<E>>],
    id: usize,
    contribution: Vec<E>,
) {
    if !nodes[id].requires_grad {
        return;
    }
    match &mut grads[id] {
        Some(g) => {
            for (a, b) in g.data_mut().iter_mut().zip(contribution) {
                *a = *a + b;
            }
        }
        slot @ None => {
            *slot = Some(Tensor::from_parts(
                nodes[id].value.shape().to_vec(),
                contribution,
            ))
        }
    }
}

fn propagate<E: Element>(
    nodes: &[Node<E>],
    grads: &mut [Option<Tensor<E>>],
    id: usize,
    g: &Tensor<E>,
) {
    let gd = g.data();
    let val = |i: usize| &nodes[i].value;
    let wants = |i: usize| nodes[i].requires_grad;
    match &nodes[id].op {
        Op::Leaf => {}
        Op::MatMul { a, b, m, k, n } => {
            if wants(*a) {
                let da = kernels::matmul_nt(gd, val(*b).data(), *m, *n, *k);
                accumulate(nodes, grads, *a, da);
            }
            if wants(*b) {
                let db = kernels::matmul_tn(val(*a).data(), gd, *m, *k, *n);
                accumulate(nodes, grads, *b, db);
            }
        }
        Op::Add(a, b) => {
            accumulate(nodes, grads, *a, gd.to_vec());
            accumulate(nodes, grads, *b, gd.to_vec());
        }
        Op::Sub(a, b) => {
            accumulate(nodes, grads, *a, gd.to_vec());
            accumulate(nodes, grads, *b, gd.iter().map(|&v| -v).collect());
        }
        Op::Mul(a, b) => {
            let (av, bv) = (val(*a).data(), val(*b).data());
            if wants(*a) {
                accumulate(
                    nodes,
                    grads,
                    *a,
                    gd.iter().zip(bv).map(|(&g, &y)| g * y).collect(),
                );
            }
            if wants(*b) {
                accumulate(
                    nodes,
                    grads,
                    *b,
                    gd.iter().zip(av).map(|(&g, &x)| g * x).collect(),
                );
            }
        }
        Op::AddRow { x, bias } => {
            accumulate(nodes, grads, *x, gd.to_vec());
            if wants(*bias) {
                let n = val(*bias).numel();
                let mut db = vec![E::zero(); n];
                for chunk in gd.chunks_exact(n) {
                    for (acc, &v) in db.iter_mut().zip(chunk) {
                        *acc = *acc + v;
                    }
                }
                accumulate(nodes, grads, *bias, db);
            }
        }
        Op::Scale { x, factor } => {
            accumulate(nodes, grads, *x, gd.iter().map(|&v| v * *factor).collect());
        }
        Op::Gelu(x) => {
            let dx = gd
                .iter()
                .zip(val(*x).data())
                .map(|(&g, &xi)| g * kernels::gelu_grad(xi))
                .collect();
            accumulate(nodes, grads, *x, dx);
        }
        Op::Softmax(x) => {
            let y = nodes[id].value.data();
            let n = nodes[id].value.last_dim();
            let mut dx = vec![E::zero(); y.len()];
            for ((ys, gs), ds) in y
                .chunks_exact(n)
                .zip(gd.chunks_exact(n))
                .zip(dx.chunks_exact_mut(n))
            {
                let dot: E = ys.iter().zip(gs).map(|(&a, &b)| a * b).sum();
                for ((d, &yi), &gi) in ds.iter_mut().zip(ys).zip(gs) {
                    *d = yi * (gi - dot);
                }
            }
            accumulate(nodes, grads, *x, dx);
        }
        Op::LayerNorm {
            x,
            gain,
            bias,
            xhat,
            rstd,
        } => {
            let gamma = val(*gain).data();
            let n = gamma.len();
            if wants(*gain) {
                let mut dg = vec![E::zero(); n];
                for (gs, xs) in gd.chunks_exact(n).zip(xhat.chunks_exact(n)) {
                    for ((acc, &gi), &xi) in dg.iter_mut().zip(gs).zip(xs) {
                        *acc = *acc + gi * xi;
                    }
                }
                accumulate(nodes, grads, *gain, dg);
            }
            if wants(*bias) {
                let mut db = vec![E::zero(); n];
                for gs in gd.chunks_exact(n) {
                    for (acc, &gi) in db.iter_mut().zip(gs) {
                        *acc = *acc + gi;
                    }
                }
                accumulate(nodes, grads, *bias, db);
            }
            if wants(*x) {
                let inv_n = E::one() / E::from_f64(n as f64);
                let mut dx = vec![E::zero(); gd.len()];
                for (r, ((gs, xs), ds)) in gd
                    .chunks_exact(n)
                    .zip(xhat.chunks_exact(n))
                    .zip(dx.chunks_exact_mut(n))
                    .enumerate()
                {
                    let mut mean_d = E::zero();
                    let mut mean_dx = E::zero();
                    for j in 0..n {
                        let d = gs[j] * gamma[j];
                        mean_d = mean_d + d;
                        mean_dx = mean_dx + d * xs[j];
                    }
                    mean_d = mean_d * inv_n;
                    mean_dx = mean_dx * inv_n;
                    for j in 0..n {
                        let d = gs[j] * gamma[j];
                        ds[j] = rstd[r] * (d - mean_d - xs[j] * mean_dx);
                    }
                }
                accumulate(nodes, grads, *x, dx);
            }
        }
        Op::Reshape(x) => accumulate(nodes, grads, *x, gd.to_vec()),
        Op::Transpose { x, rows, cols } => {
            // forward mapped [rows×cols] to [cols×rows]
            accumulate(nodes, grads, *x, kernels::transpose(gd, *cols, *rows));
        }
        Op::GatherRows { x, ids } => {
            let src = val(*x);
            let w = src.row_len();
            let mut dx = vec![E::zero(); src.numel()];
            for (out_r, &in_r) in ids.iter().enumerate() {
                let dst = &mut dx[in_r * w..(in_r + 1) * w];
                for (d, &v) in dst.iter_mut().zip(&gd[out_r * w..(out_r + 1) * w]) {
                    *d = *d + v;
                }
            }
            accumulate(nodes, grads, *x, dx);
        }
        Op::GatherElements { x, idx } => {
            let mut dx = vec![E::zero(); val(*x).numel()];
            for (&i, &v) in idx.iter().zip(gd) {
                dx[i] = dx[i] + v;
            }
            accumulate(nodes, grads, *x, dx);
        }
        Op::ConcatRows(ids) => {
            let mut offset = 0;
            for &i in ids {
                let len = val(i).numel();
                accumulate(nodes, grads, i, gd[offset..offset + len].to_vec());
                offset += len;
            }
        }
        Op::ConcatCols(ids) => {
            let total = g.shape()[1];
            let mut col = 0;
            for &i in ids {
                let v = val(i);
                let (rows, w) = (v.shape()[0], v.shape()[1]);
                if wants(i) {
                    let mut part = Vec::with_capacity(rows * w);
                    for r in 0..rows {
                        part.extend_from_slice(&gd[r * total + col..r * total + col + w]);
                    }
                    accumulate(nodes, grads, i, part);
                }
                col += w;
            }
        }
        Op::SliceCols { x, start } => {
            let src = val(*x);
            let (rows, cols) = (src.shape()[0], src.shape()[1]);
            let w = g.shape()[1];
            let mut dx = vec![E::zero(); rows * cols];
            for r in 0..rows {
                dx[r * cols + start..r * cols + start + w].copy_from_slice(&gd[r * w..(r + 1) * w]);
            }
            accumulate(nodes, grads, *x, dx);
        }
        Op::MeanRows(x) => {
            let src = val(*x);
            let rows = src.rows();
            let scale = E::one() / E::from_f64(rows as f64);
            let row: Vec<E> = gd.iter().map(|&v| v * scale).collect();
            let dx = (0..rows).flat_map(|_| row.iter().copied()).collect();
            accumulate(nodes, grads, *x, dx);
        }
        Op::Sum(x) => {
            accumulate(nodes, grads, *x, vec![gd[0]; val(*x).numel()]);
        }
        Op::Mse { pred, target } => {
            let (p, t) = (val(*pred).data(), val(*target).data());
            let scale = E::from_f64(2.0) * gd[0] / E::from_f64(p.len() as f64);
            let dp: Vec<E> = p.iter().zip(t).map(|(&a, &b)| (a - b) * scale).collect();
            if wants(*target) {
                accumulate(nodes, grads, *target, dp.iter().map(|&v| -v).collect());
            }
            accumulate(nodes, grads, *pred, dp);
        }
        Op::MaskedMse {
            pred,
            target,
            weights,
            denom,
        } => {
            let (p, t) = (val(*pred).data(), val(*target).data());
            let scale = if *denom > E::zero() {
                E::from_f64(2.0) * gd[0] / *denom
            } else {
                E::zero()
            };
            let dp: Vec<E> = p
                .iter()
                .zip(t)
                .zip(weights)
                .map(|((&a, &b), &w)| w * (a - b) * scale)
                .collect();
            if wants(*target) {
                accumulate(nodes, grads, *target, dp.iter().map(|&v| -v).collect());
            }
            accumulate(nodes, grads, *pred, dp);
        }
    }
}

impl<'g, E: Element> Var<'g, E> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn graph(&self) -> &'g Graph<E> {
        self.graph
    }

    pub fn value(&self) -> Tensor<E> {
        self.graph.tape.borrow().nodes[self.id].value.clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.graph.tape.borrow().nodes[self.id]
            .value
            .shape()
            .to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.tape.borrow().nodes[self.id].requires_grad
    }

    /// Value of a one-element variable.
    pub fn item(&self) -> Result<E> {
        self.graph.tape.borrow().nodes[self.id].value.item()
    }

    /// Gradient populated by [`Graph::backward`], if this node received one.
    pub fn grad(&self) -> Option<Tensor<E>> {
        self.graph
            .tape
            .borrow()
            .grads
            .get(self.id)
            .cloned()
            .flatten()
    }

    pub fn op_name(&self) -> &'static str {
        self.graph.tape.borrow().nodes[self.id].op.name()
    }

    fn unary(self, f: impl FnOnce(&Tensor<E>) -> Result<(Tensor<E>, Op<E>)>) -> Result<Self> {
        let (out, op) = self.graph.with_values(&[self.id], |v| f(v[0]))?;
        Ok(self.graph.push_op(out, op))
    }

    fn binary(
        self,
        rhs: Self,
        f: impl FnOnce(&Tensor<E>, &Tensor<E>) -> Result<(Tensor<E>, Op<E>)>,
    ) -> Result<Self> {
        self.graph.owns(&rhs)?;
        let (out, op) = self
            .graph
            .with_values(&[self.id, rhs.id], |v| f(v[0], v[1]))?;
        Ok(self.graph.push_op(out, op))
    }

    fn zip_same(
        self,
        rhs: Self,
        name: &'static str,
        f: impl Fn(E, E) -> E,
        op: fn(usize, usize) -> Op<E>,
    ) -> Result<Self> {
        let (a, b) = (self.id, rhs.id);
        self.binary(rhs, |x, y| {
            if x.shape() != y.shape() {
                return Err(Error::dim(name, x.shape(), y.shape()));
            }
            let data = x
                .data()
                .iter()
                .zip(y.data())
                .map(|(&p, &q)| f(p, q))
                .collect();
            Ok((Tensor::from_parts(x.shape().to_vec(), data), op(a, b)))
        })
    }

    /// `[m×k] · [k×n] → [m×n]`
    pub fn matmul(self, rhs: Self) -> Result<Self> {
        let (a, b) = (self.id, rhs.id);
        self.binary(rhs, |x, y| {
            if x.ndim() != 2 || y.ndim() != 2 || x.shape()[1] != y.shape()[0] {
                return Err(Error::dim("matmul", x.shape(), y.shape()));
            }
            let (m, k, n) = (x.shape()[0], x.shape()[1], y.shape()[1]);
            let data = kernels::matmul(x.data(), y.data(), m, k, n);
            Ok((
                Tensor::from_parts(vec![m, n], data),
                Op::MatMul { a, b, m, k, n },
            ))
        })
    }

    pub fn add(self, rhs: Self) -> Result<Self> {
        self.zip_same(rhs, "add", |p, q| p + q, Op::Add)
    }

    pub fn sub(self, rhs: Self) -> Result<Self> {
        self.zip_same(rhs, "sub", |p, q| p - q, Op::Sub)
    }

    pub fn mul(self, rhs: Self) -> Result<Self> {
        self.zip_same(rhs, "mul", |p, q| p * q, Op::Mul)
    }

    /// Adds a bias vector to every row (broadcast over the last dimension).
    pub fn add_row(self, bias: Self) -> Result<Self> {
        let (x, b) = (self.id, bias.id);
        self.binary(bias, |t, bv| {
            let n = t.last_dim();
            if bv.numel() != n {
                return Err(Error::dim("add_row", t.shape(), bv.shape()));
            }
            let mut data = t.data().to_vec();
            for chunk in data.chunks_exact_mut(n) {
                for (v, &bb) in chunk.iter_mut().zip(bv.data()) {
                    *v = *v + bb;
                }
            }
            Ok((
                Tensor::from_parts(t.shape().to_vec(), data),
                Op::AddRow { x, bias: b },
            ))
        })
    }

    pub fn scale(self, factor: E) -> Result<Self> {
        let x = self.id;
        self.unary(|t| Ok((t.map(|v| v * factor), Op::Scale { x, factor })))
    }

    /// GELU, tanh approximation.
    pub fn gelu(self) -> Result<Self> {
        let x = self.id;
        self.unary(|t| Ok((t.map(kernels::gelu), Op::Gelu(x))))
    }

    /// Softmax over the last dimension with max subtraction.
    pub fn softmax(self) -> Result<Self> {
        let x = self.id;
        self.unary(|t| {
            if !t.all_finite() {
                return Err(Error::NumericInput("softmax"));
            }
            let n = t.last_dim();
            let mut data = t.data().to_vec();
            for chunk in data.chunks_exact_mut(n) {
                let max = chunk.iter().copied().fold(E::neg_infinity(), E::max);
                let mut sum = E::zero();
                for v in chunk.iter_mut() {
                    *v = (*v - max).exp();
                    sum = sum + *v;
                }
                for v in chunk.iter_mut() {
                    *v = *v / sum;
                }
            }
            Ok((Tensor::from_parts(t.shape().to_vec(), data), Op::Softmax(x)))
        })
    }

    /// Normalizes each last-dimension slice to zero mean and unit population
    /// variance, then applies `gain` and `bias`.
    pub fn layer_norm(self, gain: Self, bias: Self, eps: E) -> Result<Self> {
        self.graph.owns(&gain)?;
        self.graph.owns(&bias)?;
        let (x, gi, bi) = (self.id, gain.id, bias.id);
        let (out, op) = self.graph.with_values(&[x, gi, bi], |v| {
            let (t, gamma, beta) = (v[0], v[1], v[2]);
            let n = t.last_dim();
            if gamma.numel() != n || beta.numel() != n {
                return Err(Error::dim("layer_norm", t.shape(), gamma.shape()));
            }
            let inv_n = E::one() / E::from_f64(n as f64);
            let rows = t.numel() / n;
            let mut xhat = Vec::with_capacity(t.numel());
            let mut rstd = Vec::with_capacity(rows);
            let mut out = Vec::with_capacity(t.numel());
            for chunk in t.data().chunks_exact(n) {
                let mean = chunk.iter().copied().sum::<E>() * inv_n;
                let var = chunk.iter().map(|&v| (v - mean) * (v - mean)).sum::<E>() * inv_n;
                let r = E::one() / (var + eps).sqrt();
                rstd.push(r);
                for (j, &v) in chunk.iter().enumerate() {
                    let xh = (v - mean) * r;
                    xhat.push(xh);
                    out.push(xh * gamma.data()[j] + beta.data()[j]);
                }
            }
            Ok((
                Tensor::from_parts(t.shape().to_vec(), out),
                Op::LayerNorm {
                    x,
                    gain: gi,
                    bias: bi,
                    xhat,
                    rstd,
                },
            ))
        })?;
        Ok(self.graph.push_op(out, op))
    }

    pub fn reshape(self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        let x = self.id;
        let shape = shape.into();
        self.unary(|t| Ok((t.clone().reshaped(shape)?, Op::Reshape(x))))
    }

    /// 2-D transpose.
    pub fn transpose(self) -> Result<Self> {
        let x = self.id;
        self.unary(|t| {
            if t.ndim() != 2 {
                return Err(Error::dim("transpose", t.shape(), &[]));
            }
            let (rows, cols) = (t.shape()[0], t.shape()[1]);
            let data = kernels::transpose(t.data(), rows, cols);
            Ok((
                Tensor::from_parts(vec![cols, rows], data),
                Op::Transpose { x, rows, cols },
            ))
        })
    }

    /// Selects rows (leading-dimension slices) by index; indices may repeat.
    /// The backward pass scatter-adds into the selected rows only.
    pub fn gather_rows(self, ids: &[usize]) -> Result<Self> {
        let x = self.id;
        let ids = ids.to_vec();
        self.unary(|t| {
            let rows = t.rows();
            if ids.is_empty() {
                return Err(Error::Contract("gather_rows with no indices".into()));
            }
            if let Some(&bad) = ids.iter().find(|&&i| i >= rows) {
                return Err(Error::Index {
                    op: "gather_rows",
                    index: bad,
                    extent: rows,
                });
            }
            let mut data = Vec::with_capacity(ids.len() * t.row_len());
            for &i in &ids {
                data.extend_from_slice(t.row(i));
            }
            let mut shape = t.shape().to_vec();
            shape[0] = ids.len();
            Ok((Tensor::from_parts(shape, data), Op::GatherRows { x, ids }))
        })
    }

    /// Builds a tensor of `shape` whose i-th flat element is `self.flat[idx[i]]`.
    pub fn gather_elements(self, idx: &[usize], shape: impl Into<Vec<usize>>) -> Result<Self> {
        let x = self.id;
        let idx = idx.to_vec();
        let shape = shape.into();
        self.unary(|t| {
            let n: usize = shape.iter().product();
            if n != idx.len() || shape.is_empty() || shape.contains(&0) {
                return Err(Error::dim("gather_elements", &shape, &[idx.len()]));
            }
            if let Some(&bad) = idx.iter().find(|&&i| i >= t.numel()) {
                return Err(Error::Index {
                    op: "gather_elements",
                    index: bad,
                    extent: t.numel(),
                });
            }
            let data = idx.iter().map(|&i| t.data()[i]).collect();
            Ok((
                Tensor::from_parts(shape, data),
                Op::GatherElements { x, idx },
            ))
        })
    }

    /// Columns `start..start+width` of a 2-D tensor.
    pub fn slice_cols(self, start: usize, width: usize) -> Result<Self> {
        let x = self.id;
        self.unary(|t| {
            if t.ndim() != 2 || width == 0 || start + width > t.shape()[1] {
                return Err(Error::Index {
                    op: "slice_cols",
                    index: start + width,
                    extent: t.last_dim(),
                });
            }
            let (rows, cols) = (t.shape()[0], t.shape()[1]);
            let mut data = Vec::with_capacity(rows * width);
            for r in 0..rows {
                data.extend_from_slice(&t.data()[r * cols + start..r * cols + start + width]);
            }
            Ok((
                Tensor::from_parts(vec![rows, width], data),
                Op::SliceCols { x, start },
            ))
        })
    }

    /// Mean over the leading dimension; `[r×c] → [1×c]`.
    pub fn mean_rows(self) -> Result<Self> {
        let x = self.id;
        self.unary(|t| {
            let (rows, w) = (t.rows(), t.row_len());
            let scale = E::one() / E::from_f64(rows as f64);
            let mut acc = vec![E::zero(); w];
            for r in 0..rows {
                for (a, &v) in acc.iter_mut().zip(t.row(r)) {
                    *a = *a + v;
                }
            }
            acc.iter_mut().for_each(|a| *a = *a * scale);
            Ok((Tensor::from_parts(vec![1, w], acc), Op::MeanRows(x)))
        })
    }

    pub fn sum(self) -> Result<Self> {
        let x = self.id;
        self.unary(|t| Ok((Tensor::scalar(t.data().iter().copied().sum()), Op::Sum(x))))
    }

    /// Mean squared error `(1/n)·Σ(target − pred)²`.
    pub fn mse_loss(self, target: Self) -> Result<Self> {
        let (pred, tgt) = (self.id, target.id);
        self.binary(target, |p, t| {
            if p.shape() != t.shape() {
                return Err(Error::dim("mse_loss", p.shape(), t.shape()));
            }
            let n = E::from_f64(p.numel() as f64);
            let s: E = p
                .data()
                .iter()
                .zip(t.data())
                .map(|(&a, &b)| (a - b) * (a - b))
                .sum();
            Ok((Tensor::scalar(s / n), Op::Mse { pred, target: tgt }))
        })
    }

    /// Weighted squared error `Σ w·(pred − target)² / Σ w`; zero when all
    /// weights vanish.
    pub fn masked_mse(self, target: Self, weights: &Tensor<E>) -> Result<Self> {
        let (pred, tgt) = (self.id, target.id);
        let w = weights.data().to_vec();
        let wshape = weights.shape().to_vec();
        self.binary(target, |p, t| {
            if p.shape() != t.shape() {
                return Err(Error::dim("masked_mse", p.shape(), t.shape()));
            }
            if p.shape() != &wshape[..] {
                return Err(Error::dim("masked_mse", p.shape(), &wshape));
            }
            let denom: E = w.iter().copied().sum();
            let s: E = p
                .data()
                .iter()
                .zip(t.data())
                .zip(&w)
                .map(|((&a, &b), &wi)| wi * (a - b) * (a - b))
                .sum();
            let loss = if denom > E::zero() {
                s / denom
            } else {
                E::zero()
            };
            Ok((
                Tensor::scalar(loss),
                Op::MaskedMse {
                    pred,
                    target: tgt,
                    weights: w,
                    denom,
                },
            ))
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64_slice(shape.to_vec(), v).unwrap()
    }

    #[test]
    fn matmul_identity_and_hand_case() {
        let g = Graph::<f64>::new();
        let eye = g.constant(t(&[2, 2], &[1., 0., 0., 1.]));
        let x = g.constant(t(&[2, 2], &[0.3, -1.5, 2.0, 7.0]));
        assert_eq!(eye.matmul(x).unwrap().value(), x.value());

        let a = g.constant(t(&[2, 2], &[1., 2., 3., 4.]));
        let b = g.constant(t(&[2, 1], &[5., 6.]));
        assert_eq!(a.matmul(b).unwrap().value().data(), &[17., 39.]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let g = Graph::<f32>::new();
        let a = g.constant(Tensor::zeros([2, 3]).unwrap());
        let b = g.constant(Tensor::zeros([2, 3]).unwrap());
        let err = a.matmul(b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
        assert!(matches!(err, Error::Dimension { .. }));
    }

    #[test]
    fn softmax_cases() {
        let g = Graph::<f64>::new();
        let y = g
            .constant(t(&[3], &[0., 0., 0.]))
            .softmax()
            .unwrap()
            .value();
        for v in y.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
        let y = g.constant(t(&[2], &[1000., 0.])).softmax().unwrap().value();
        assert!((y.data()[0] - 1.0).abs() < 1e-6 && y.data()[1].abs() < 1e-6);

        // oracle: exp(i)/Σexp(j), i in 1..=3
        let z: f64 = (1..=3).map(|i| (i as f64).exp()).sum();
        let expect: Vec<f64> = (1..=3).map(|i| (i as f64).exp() / z).collect();
        let y = g
            .constant(t(&[3], &[1., 2., 3.]))
            .softmax()
            .unwrap()
            .value();
        for (a, b) in y.data().iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((expect[0] - 0.0900).abs() < 5e-5);
        assert!((expect[1] - 0.2447).abs() < 5e-5);
        assert!((expect[2] - 0.6652).abs() < 5e-5);
    }

    #[test]
    fn softmax_rejects_non_finite() {
        let g = Graph::<f32>::new();
        let x = g.constant(Tensor::new([2], vec![f32::NAN, 0.0]).unwrap());
        assert!(matches!(x.softmax(), Err(Error::NumericInput(_))));
    }

    #[test]
    fn layer_norm_cases() {
        let g = Graph::<f64>::new();
        let gain = g.constant(t(&[3], &[1., 1., 1.]));
        let bias = g.constant(t(&[3], &[0., 0., 0.]));
        let y = g
            .constant(t(&[1, 3], &[5., 5., 5.]))
            .layer_norm(gain, bias, 1e-5)
            .unwrap();
        assert!(y.value().data().iter().all(|v| v.abs() < 1e-12));

        let y = g
            .constant(t(&[1, 3], &[1., 2., 3.]))
            .layer_norm(gain, bias, 0.0)
            .unwrap();
        // population variance 2/3 → (x − 2)/sqrt(2/3)
        let s = (2.0f64 / 3.0).sqrt();
        let expect = [-1.0 / s, 0.0, 1.0 / s];
        for (a, b) in y.value().data().iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((expect[0] + 1.2247).abs() < 1e-4);
    }

    #[test]
    fn gelu_zero_and_gather_identity() {
        let g = Graph::<f32>::new();
        assert_eq!(
            g.constant(Tensor::scalar(0.0))
                .gelu()
                .unwrap()
                .item()
                .unwrap(),
            0.0
        );
        let x = g.constant(Tensor::new([3, 2], vec![1., 2., 3., 4., 5., 6.]).unwrap());
        assert_eq!(x.gather_rows(&[0, 1, 2]).unwrap().value(), x.value());
        assert!(matches!(
            x.gather_rows(&[3]),
            Err(Error::Index { index: 3, .. })
        ));
    }

    #[test]
    fn gather_rows_backward_is_one_hot() {
        let g = Graph::<f64>::new();
        let x = g.param(Tensor::zeros([4, 3]).unwrap());
        let loss = x.gather_rows(&[2]).unwrap().sum().unwrap();
        g.backward(loss).unwrap();
        let grad = x.grad().unwrap();
        for r in 0..4 {
            let want = if r == 2 { 1.0 } else { 0.0 };
            assert!(grad.row(r).iter().all(|&v| v == want));
        }
    }

    #[test]
    fn mse_values_and_grad() {
        let g = Graph::<f64>::new();
        let p = g.param(t(&[2], &[1., 2.]));
        let y = g.constant(t(&[2], &[3., 2.]));
        let loss = p.mse_loss(y).unwrap();
        assert_eq!(loss.item().unwrap(), 2.0);
        g.backward(loss).unwrap();
        // 2(pred − target)/n
        assert_eq!(p.grad().unwrap().data(), &[-2.0, 0.0]);

        let g = Graph::<f64>::new();
        let p = g.constant(t(&[2], &[1., 2.]));
        assert_eq!(p.mse_loss(p).unwrap().item().unwrap(), 0.0);
        let q = g.constant(t(&[3], &[1., 2., 3.]));
        assert!(matches!(p.mse_loss(q), Err(Error::Dimension { .. })));
    }

    #[test]
    fn backward_contracts() {
        let g = Graph::<f64>::new();
        let x = g.param(t(&[3], &[1., 2., 3.]));
        assert!(matches!(g.backward(x), Err(Error::Contract(_))));
        let s = x.sum().unwrap();
        g.backward(s).unwrap();
        assert_eq!(x.grad().unwrap().data(), &[1., 1., 1.]);
        assert!(matches!(g.backward(s), Err(Error::Contract(_))));
    }

    #[test]
    fn constants_receive_no_gradient() {
        let g = Graph::<f64>::new();
        let c = g.constant(t(&[2], &[1., 2.]));
        let p = g.param(t(&[2], &[3., 4.]));
        let loss = c.mul(p).unwrap().sum().unwrap();
        g.backward(loss).unwrap();
        assert!(c.grad().is_none());
        assert_eq!(p.grad().unwrap().data(), &[1., 2.]);
    }

    #[test]
    fn vars_from_other_graph_are_rejected() {
        let g1 = Graph::<f64>::new();
        let g2 = Graph::<f64>::new();
        let a = g1.constant(t(&[1], &[1.]));
        let b = g2.constant(t(&[1], &[1.]));
        assert!(matches!(a.add(b), Err(Error::Contract(_))));
    }
}
