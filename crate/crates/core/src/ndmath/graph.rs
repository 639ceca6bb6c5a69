use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::array::NdArray;
use super::conv::{self, Conv2dGeom, TConv1dGeom};
use super::norm::{self, BatchNormSaved};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Training or inference behaviour for layers that differ between the two.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Train,
    Eval,
}

/// Batch statistics observed by a train-mode batch norm, to be folded into
/// running statistics by the owner of the parameter store.
#[derive(Clone, Debug)]
pub struct BatchStats<T> {
    pub tag: usize,
    pub mean: Vec<T>,
    /// Unbiased (n-1) variance.
    pub var: Vec<T>,
}

pub(crate) enum Op<T> {
    Leaf,
    Fc { input: Var, weight: Var, bias: Option<Var> },
    Conv2d { input: Var, kernel: Var, bias: Option<Var>, geom: Conv2dGeom },
    TConv1d { input: Var, kernel: Var, bias: Option<Var>, geom: TConv1dGeom },
    BatchNorm { input: Var, gamma: Var, beta: Var, saved: BatchNormSaved<T> },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBroadcast(Var, Var),
    Scale(Var, T),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Reshape(Var),
    SwapLast2(Var),
    NarrowLast { input: Var, start: usize },
    Stack(Vec<Var>),
    Upsample2x(Var),
    CumsumTime(Var),
    Sum(Var),
    AdeLoss { pred: Var, target: NdArray<T> },
}

pub(crate) struct Node<T> {
    pub(crate) value: NdArray<T>,
    pub(crate) op: Op<T>,
    pub(crate) requires_grad: bool,
}

/// Recorded computation with reverse-mode differentiation.
///
/// Nodes are appended in evaluation order, so the node list is already a
/// topological order and backward simply walks it in reverse.
pub struct Graph<T> {
    pub(crate) nodes: Vec<Node<T>>,
    grads: Vec<Option<NdArray<T>>>,
    batch_stats: Vec<BatchStats<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new(), grads: Vec::new(), batch_stats: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Constant input; never receives a gradient.
    pub fn constant(&mut self, value: NdArray<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: NdArray<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn leaf(&mut self, value: NdArray<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn value(&self, v: Var) -> &NdArray<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last `backward` call with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&NdArray<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take_batch_stats(&mut self) -> Vec<BatchStats<T>> {
        std::mem::take(&mut self.batch_stats)
    }

    pub(crate) fn record_batch_stats(&mut self, stats: BatchStats<T>) {
        self.batch_stats.push(stats);
    }

    pub(crate) fn push(&mut self, value: NdArray<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    pub(crate) fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Reverse accumulation from a scalar `loss`.
    ///
    /// Every leaf that requires a gradient ends up with one; leaves the loss
    /// does not depend on get zeros.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let lv = &self.nodes[loss.0].value;
        if lv.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<NdArray<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(NdArray::full(lv.shape(), T::one()));

        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            self.backprop_node(id, &g, &mut grads)?;
            grads[id] = Some(g);
        }

        for (id, node) in self.nodes.iter().enumerate() {
            if node.requires_grad && matches!(node.op, Op::Leaf) && grads[id].is_none() {
                grads[id] = Some(NdArray::zeros(node.value.shape()));
            }
        }
        self.grads = grads;
        Ok(())
    }

    fn backprop_node(&self, id: usize, g: &NdArray<T>, grads: &mut [Option<NdArray<T>>]) -> Result<()> {
        let node = &self.nodes[id];
        let val = |v: Var| &self.nodes[v.0].value;
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => {}
            Op::Fc { input, weight, bias } => {
                let (x, w) = (val(*input), val(*weight));
                let (b, din) = (x.shape()[0], x.shape()[1]);
                let dout = w.shape()[0];
                use crate::scalar::{gemm, MatRef};
                if wants(*input) {
                    let mut dx = vec![T::zero(); b * din];
                    gemm(T::one(), MatRef::new(g.data(), b, dout), MatRef::new(w.data(), dout, din), T::zero(), &mut dx);
                    accumulate(grads, *input, x.shape(), dx);
                }
                if wants(*weight) {
                    let mut dw = vec![T::zero(); dout * din];
                    gemm(T::one(), MatRef::new(g.data(), b, dout).t(), MatRef::new(x.data(), b, din), T::zero(), &mut dw);
                    accumulate(grads, *weight, w.shape(), dw);
                }
                if let Some(bias) = bias {
                    if wants(*bias) {
                        let mut db = vec![T::zero(); dout];
                        for row in g.data().chunks(dout) {
                            for (d, &v) in db.iter_mut().zip(row) {
                                *d += v;
                            }
                        }
                        accumulate(grads, *bias, &[dout], db);
                    }
                }
            }
            Op::Conv2d { input, kernel, bias, geom } => {
                let (dx, dk, db) = conv::conv2d_backward(
                    val(*input).data(),
                    val(*kernel).data(),
                    g.data(),
                    geom,
                    wants(*input),
                    wants(*kernel),
                    bias.map(wants).unwrap_or(false),
                );
                if let Some(dx) = dx {
                    accumulate(grads, *input, val(*input).shape(), dx);
                }
                if let Some(dk) = dk {
                    accumulate(grads, *kernel, val(*kernel).shape(), dk);
                }
                if let (Some(db), Some(bias)) = (db, bias) {
                    accumulate(grads, *bias, &[geom.out_channels], db);
                }
            }
            Op::TConv1d { input, kernel, bias, geom } => {
                let (dx, dk, db) = conv::tconv1d_backward(
                    val(*input).data(),
                    val(*kernel).data(),
                    g.data(),
                    geom,
                    wants(*input),
                    wants(*kernel),
                    bias.map(wants).unwrap_or(false),
                );
                if let Some(dx) = dx {
                    accumulate(grads, *input, val(*input).shape(), dx);
                }
                if let Some(dk) = dk {
                    accumulate(grads, *kernel, val(*kernel).shape(), dk);
                }
                if let (Some(db), Some(bias)) = (db, bias) {
                    accumulate(grads, *bias, &[geom.out_channels], db);
                }
            }
            Op::BatchNorm { input, gamma, beta, saved } => {
                let (dx, dgamma, dbeta) = norm::batch_norm_backward(g.data(), val(*gamma).data(), saved);
                if wants(*input) {
                    accumulate(grads, *input, val(*input).shape(), dx);
                }
                if wants(*gamma) {
                    accumulate(grads, *gamma, val(*gamma).shape(), dgamma);
                }
                if wants(*beta) {
                    accumulate(grads, *beta, val(*beta).shape(), dbeta);
                }
            }
            Op::Add(a, b) => {
                if wants(*a) {
                    accumulate(grads, *a, g.shape(), g.data().to_vec());
                }
                if wants(*b) {
                    accumulate(grads, *b, g.shape(), g.data().to_vec());
                }
            }
            Op::Sub(a, b) => {
                if wants(*a) {
                    accumulate(grads, *a, g.shape(), g.data().to_vec());
                }
                if wants(*b) {
                    accumulate(grads, *b, g.shape(), g.data().iter().map(|&v| -v).collect());
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a).data(), val(*b).data());
                if wants(*a) {
                    accumulate(grads, *a, g.shape(), g.data().iter().zip(bv).map(|(&d, &y)| d * y).collect());
                }
                if wants(*b) {
                    accumulate(grads, *b, g.shape(), g.data().iter().zip(av).map(|(&d, &x)| d * x).collect());
                }
            }
            Op::AddBroadcast(a, b) => {
                if wants(*a) {
                    accumulate(grads, *a, g.shape(), g.data().to_vec());
                }
                if wants(*b) {
                    let n = val(*b).len();
                    let mut db = vec![T::zero(); n];
                    for chunk in g.data().chunks(n) {
                        for (d, &v) in db.iter_mut().zip(chunk) {
                            *d += v;
                        }
                    }
                    accumulate(grads, *b, val(*b).shape(), db);
                }
            }
            Op::Scale(a, c) => {
                if wants(*a) {
                    accumulate(grads, *a, g.shape(), g.data().iter().map(|&d| d * *c).collect());
                }
            }
            Op::Relu(a) => {
                if wants(*a) {
                    let out = node.value.data();
                    let dx = g.data().iter().zip(out).map(|(&d, &y)| if y > T::zero() { d } else { T::zero() }).collect();
                    accumulate(grads, *a, g.shape(), dx);
                }
            }
            Op::Sigmoid(a) => {
                if wants(*a) {
                    let out = node.value.data();
                    let dx = g.data().iter().zip(out).map(|(&d, &y)| d * y * (T::one() - y)).collect();
                    accumulate(grads, *a, g.shape(), dx);
                }
            }
            Op::Tanh(a) => {
                if wants(*a) {
                    let out = node.value.data();
                    let dx = g.data().iter().zip(out).map(|(&d, &y)| d * (T::one() - y * y)).collect();
                    accumulate(grads, *a, g.shape(), dx);
                }
            }
            Op::Reshape(a) => {
                if wants(*a) {
                    accumulate(grads, *a, val(*a).shape(), g.data().to_vec());
                }
            }
            Op::SwapLast2(a) => {
                if wants(*a) {
                    // g has the swapped shape; swapping back is the adjoint
                    let gs = g.shape();
                    let (r, c) = (gs[gs.len() - 2], gs[gs.len() - 1]);
                    accumulate(grads, *a, val(*a).shape(), swap_last2_data(g.data(), r, c));
                }
            }
            Op::NarrowLast { input, start } => {
                if wants(*input) {
                    let xs = val(*input).shape();
                    let full = *xs.last().unwrap();
                    let len = *g.shape().last().unwrap();
                    let mut dx = vec![T::zero(); val(*input).len()];
                    for (row, grow) in dx.chunks_mut(full).zip(g.data().chunks(len)) {
                        row[*start..*start + len].copy_from_slice(grow);
                    }
                    accumulate(grads, *input, xs, dx);
                }
            }
            Op::Stack(parts) => {
                let n = parts.len();
                let d = val(parts[0]).len() / val(parts[0]).shape()[0];
                for (t, p) in parts.iter().enumerate() {
                    if wants(*p) {
                        let dp = g.data().chunks(n * d).flat_map(|row| row[t * d..(t + 1) * d].iter().copied()).collect();
                        accumulate(grads, *p, val(*p).shape(), dp);
                    }
                }
            }
            Op::Upsample2x(a) => {
                if wants(*a) {
                    let dx = g.data().chunks(2).map(|p| p[0] + p[1]).collect();
                    accumulate(grads, *a, val(*a).shape(), dx);
                }
            }
            Op::CumsumTime(a) => {
                if wants(*a) {
                    let s = g.shape();
                    let (steps, d) = (s[1], s[2]);
                    let mut dx = g.data().to_vec();
                    for seq in dx.chunks_mut(steps * d) {
                        for t in (0..steps - 1).rev() {
                            for k in 0..d {
                                let next = seq[(t + 1) * d + k];
                                seq[t * d + k] += next;
                            }
                        }
                    }
                    accumulate(grads, *a, s, dx);
                }
            }
            Op::Sum(a) => {
                if wants(*a) {
                    let x = val(*a);
                    accumulate(grads, *a, x.shape(), vec![g.item(); x.len()]);
                }
            }
            Op::AdeLoss { pred, target } => {
                if wants(*pred) {
                    let p = val(*pred);
                    let n = T::from_usize(p.len() / 2).unwrap();
                    let scale = g.item() / n;
                    let mut dp = vec![T::zero(); p.len()];
                    for ((d, pp), tt) in dp.chunks_mut(2).zip(p.data().chunks(2)).zip(target.data().chunks(2)) {
                        let (dx, dy) = (pp[0] - tt[0], pp[1] - tt[1]);
                        let dist = (dx * dx + dy * dy).sqrt();
                        if dist > T::zero() {
                            d[0] = scale * dx / dist;
                            d[1] = scale * dy / dist;
                        }
                    }
                    accumulate(grads, *pred, p.shape(), dp);
                }
            }
        }
        Ok(())
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<NdArray<T>>], v: Var, shape: &[usize], data: Vec<T>) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (a, b) in existing.data_mut().iter_mut().zip(data) {
                *a += b;
            }
        }
        slot @ None => {
            *slot = Some(NdArray::from_vec(shape, data).expect("gradient shape"));
        }
    }
}

/// Swap the last two axes of a row-major buffer whose trailing block is `rows × cols`.
pub(crate) fn swap_last2_data<T: Copy>(data: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(data.len());
    for block in data.chunks(rows * cols) {
        for c in 0..cols {
            for r in 0..rows {
                out.push(block[r * cols + c]);
            }
        }
    }
    out
}
