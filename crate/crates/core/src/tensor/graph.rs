use super::broadcast::BroadcastPlan;
use super::{matmul, split_axis, Float, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Batch-normalization statistics mode.
#[derive(Clone, Debug)]
pub enum BnMode<'a, T> {
    /// Normalize with the statistics of the current batch.
    Train { eps: T },
    /// Normalize with stored running statistics.
    Eval {
        running_mean: &'a [T],
        running_var: &'a [T],
        eps: T,
    },
}

/// Per-channel batch statistics observed in a training-mode batch norm.
/// `var` is the biased (population) variance.
#[derive(Clone, Debug)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
    pub count: usize,
}

pub(crate) enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddScalar(Var),
    MulScalar(Var, T),
    Sqrt(Var),
    Abs(Var),
    Relu(Var),
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    MaxPool {
        x: Var,
        axis: usize,
        argmax: Vec<u32>,
    },
    Mean(Var),
    Rms(Var),
    Sum(Var),
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    Expand(Var),
    Gather {
        x: Var,
        index: Vec<usize>,
    },
    Reshape(Var),
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        mean: Vec<T>,
        inv_std: Vec<T>,
        train: bool,
        relu: bool,
    },
    ChannelAffine {
        x: Var,
        scale: Var,
        shift: Var,
    },
    Dropout {
        x: Var,
        mask: Vec<T>,
    },
    SoftmaxCe {
        logits: Var,
        probs: Vec<T>,
        target: Vec<T>,
    },
}

impl<T> Op<T> {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) => vec![*a, *b],
            Op::AddScalar(x)
            | Op::MulScalar(x, _)
            | Op::Sqrt(x)
            | Op::Abs(x)
            | Op::Relu(x)
            | Op::Mean(x)
            | Op::Rms(x)
            | Op::Sum(x)
            | Op::Expand(x)
            | Op::Reshape(x) => vec![*x],
            Op::Linear { x, w, b } => {
                let mut v = vec![*x, *w];
                v.extend(b.iter().copied());
                v
            }
            Op::MaxPool { x, .. } | Op::Gather { x, .. } | Op::Dropout { x, .. } => vec![*x],
            Op::Concat { inputs, .. } => inputs.clone(),
            Op::BatchNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            Op::ChannelAffine { x, scale, shift } => vec![*x, *scale, *shift],
            Op::SoftmaxCe { logits, .. } => vec![*logits],
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
    grad: Option<Tensor<T>>,
}

/// Tape of recorded operations. Operations are appended in execution order,
/// so every node's inputs precede it and a reverse sweep is a valid
/// topological traversal.
///
/// A graph is single-threaded; independent graphs may live on different
/// threads.
pub struct Graph<T: Float> {
    nodes: Vec<Node<T>>,
    pub(crate) fc_macs: u64,
}

impl<T: Float> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Float> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            fc_macs: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Multiply-accumulates performed by forward fully connected layers.
    pub fn fc_macs(&self) -> u64 {
        self.fc_macs
    }

    /// Records a constant input (no gradient).
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.push_raw(value, Op::Leaf, false)
    }

    /// Records a trainable leaf whose gradient is kept after [`Graph::backward`].
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push_raw(value, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last backward pass for a trainable leaf.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Tensor<T>> {
        self.nodes[v.0].grad.take()
    }

    fn push_raw(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub(crate) fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        let requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        self.push_raw(value, op, requires_grad)
    }

    /// Reverse sweep from a scalar loss. Leaf gradients from any previous
    /// sweep are replaced; contributions from shared subexpressions add up.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let root = &self.nodes[loss.0].value;
        if root.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                root.shape()
            )));
        }
        for node in &mut self.nodes {
            node.grad = None;
        }
        let mut grads: Vec<Option<Vec<T>>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            if matches!(self.nodes[i].op, Op::Leaf) {
                let shape = self.nodes[i].value.shape().to_vec();
                self.nodes[i].grad = Some(Tensor { shape, data: g });
                continue;
            }
            let contributions = self.node_backward(i, &g);
            for (var, delta) in contributions {
                if !self.nodes[var.0].requires_grad {
                    continue;
                }
                match &mut grads[var.0] {
                    Some(acc) => acc.iter_mut().zip(&delta).for_each(|(a, d)| *a += *d),
                    slot @ None => *slot = Some(delta),
                }
            }
        }
        Ok(())
    }

    fn val(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient contributions of node `i` to its inputs given its output gradient.
    fn node_backward(&self, i: usize, g: &[T]) -> Vec<(Var, Vec<T>)> {
        let node = &self.nodes[i];
        let out = &node.value;
        let mut res = Vec::new();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) {
                    -T::one()
                } else {
                    T::one()
                };
                if self.wants(*a) {
                    res.push((*a, reduce_to(g, out.shape(), self.val(*a).shape(), |_, gv| gv)));
                }
                if self.wants(*b) {
                    res.push((*b, reduce_to(g, out.shape(), self.val(*b).shape(), |_, gv| sign * gv)));
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.val(*a), self.val(*b));
                if self.wants(*a) {
                    let bb = expand_to(bv, out.shape());
                    res.push((*a, reduce_to(g, out.shape(), av.shape(), |o, gv| gv * bb[o])));
                }
                if self.wants(*b) {
                    let aa = expand_to(av, out.shape());
                    res.push((*b, reduce_to(g, out.shape(), bv.shape(), |o, gv| gv * aa[o])));
                }
            }
            Op::Div(a, b) => {
                let (av, bv) = (self.val(*a), self.val(*b));
                let bb = expand_to(bv, out.shape());
                if self.wants(*a) {
                    res.push((*a, reduce_to(g, out.shape(), av.shape(), |o, gv| gv / bb[o])));
                }
                if self.wants(*b) {
                    let y = out.data();
                    res.push((*b, reduce_to(g, out.shape(), bv.shape(), |o, gv| -gv * y[o] / bb[o])));
                }
            }
            Op::AddScalar(x) => res.push((*x, g.to_vec())),
            Op::MulScalar(x, c) => res.push((*x, g.iter().map(|&v| v * *c).collect())),
            Op::Sqrt(x) => {
                let half = T::of(0.5);
                let d = g.iter().zip(out.data()).map(|(&gv, &y)| gv * half / y).collect();
                res.push((*x, d));
            }
            Op::Abs(x) => {
                let d = g
                    .iter()
                    .zip(self.val(*x).data())
                    .map(|(&gv, &xv)| {
                        if xv > T::zero() {
                            gv
                        } else if xv < T::zero() {
                            -gv
                        } else {
                            T::zero()
                        }
                    })
                    .collect();
                res.push((*x, d));
            }
            Op::Relu(x) => {
                let d = g
                    .iter()
                    .zip(out.data())
                    .map(|(&gv, &y)| if y > T::zero() { gv } else { T::zero() })
                    .collect();
                res.push((*x, d));
            }
            Op::Linear { x, w, b } => {
                let (xv, wv) = (self.val(*x), self.val(*w));
                let (din, dout) = (wv.shape()[0], wv.shape()[1]);
                let rows = xv.numel() / din;
                if self.wants(*x) {
                    let mut gx = vec![T::zero(); rows * din];
                    matmul(rows, dout, din, g, false, wv.data(), true, &mut gx, false);
                    res.push((*x, gx));
                }
                if self.wants(*w) {
                    let mut gw = vec![T::zero(); din * dout];
                    matmul(din, rows, dout, xv.data(), true, g, false, &mut gw, false);
                    res.push((*w, gw));
                }
                if let Some(b) = b {
                    if self.wants(*b) {
                        let mut gb = vec![T::zero(); dout];
                        for row in g.chunks_exact(dout) {
                            gb.iter_mut().zip(row).for_each(|(a, &v)| *a += v);
                        }
                        res.push((*b, gb));
                    }
                }
            }
            Op::MaxPool { x, axis, argmax } => {
                let (outer, ext, inner) = split_axis(self.val(*x).shape(), *axis);
                let mut gx = vec![T::zero(); outer * ext * inner];
                for o in 0..outer {
                    for j in 0..inner {
                        let k = argmax[o * inner + j] as usize;
                        gx[(o * ext + k) * inner + j] += g[o * inner + j];
                    }
                }
                res.push((*x, gx));
            }
            Op::Mean(x) => {
                let xv = self.val(*x);
                let n = T::of((xv.numel() / out.numel()) as f64);
                let plan = BroadcastPlan::new(xv.shape(), out.shape()).expect("mean plan");
                let mut gx = vec![T::zero(); xv.numel()];
                plan.for_each(|i, j| gx[i] = g[j] / n);
                res.push((*x, gx));
            }
            Op::Rms(x) => {
                let xv = self.val(*x);
                let n = T::of((xv.numel() / out.numel()) as f64);
                let plan = BroadcastPlan::new(xv.shape(), out.shape()).expect("rms plan");
                let (xd, yd) = (xv.data(), out.data());
                let mut gx = vec![T::zero(); xv.numel()];
                plan.for_each(|i, j| {
                    if yd[j] > T::zero() {
                        gx[i] = g[j] * xd[i] / (n * yd[j]);
                    }
                });
                res.push((*x, gx));
            }
            Op::Sum(x) => res.push((*x, vec![g[0]; self.val(*x).numel()])),
            Op::Concat { inputs, axis } => {
                let (outer, total, inner) = split_axis(out.shape(), *axis);
                let mut offset = 0;
                for v in inputs {
                    let ext = self.val(*v).shape()[*axis];
                    if self.wants(*v) {
                        let mut gi = Vec::with_capacity(outer * ext * inner);
                        for o in 0..outer {
                            let start = (o * total + offset) * inner;
                            gi.extend_from_slice(&g[start..start + ext * inner]);
                        }
                        res.push((*v, gi));
                    }
                    offset += ext;
                }
            }
            Op::Expand(x) => {
                res.push((*x, reduce_to(g, out.shape(), self.val(*x).shape(), |_, gv| gv)));
            }
            Op::Gather { x, index } => {
                let xs = self.val(*x).shape();
                let (batch, n, c) = (xs[0], xs[1], xs[2]);
                let q = index.len() / batch;
                let mut gx = vec![T::zero(); batch * n * c];
                for b in 0..batch {
                    for (r, &src) in index[b * q..(b + 1) * q].iter().enumerate() {
                        let dst = &mut gx[(b * n + src) * c..(b * n + src + 1) * c];
                        let gr = &g[(b * q + r) * c..(b * q + r + 1) * c];
                        dst.iter_mut().zip(gr).for_each(|(a, &v)| *a += v);
                    }
                }
                res.push((*x, gx));
            }
            Op::Reshape(x) => res.push((*x, g.to_vec())),
            Op::BatchNorm {
                x,
                gamma,
                beta,
                mean,
                inv_std,
                train,
                relu,
            } => {
                let xv = self.val(*x);
                let gam = self.val(*gamma).data();
                let c = gam.len();
                let rows = xv.numel() / c;
                let dy: Vec<T> = if *relu {
                    g.iter()
                        .zip(out.data())
                        .map(|(&gv, &y)| if y > T::zero() { gv } else { T::zero() })
                        .collect()
                } else {
                    g.to_vec()
                };
                let mut sum_dy = vec![T::zero(); c];
                let mut sum_dy_xhat = vec![T::zero(); c];
                for (xr, dr) in xv.data().chunks_exact(c).zip(dy.chunks_exact(c)) {
                    for ch in 0..c {
                        let xhat = (xr[ch] - mean[ch]) * inv_std[ch];
                        sum_dy[ch] += dr[ch];
                        sum_dy_xhat[ch] += dr[ch] * xhat;
                    }
                }
                if self.wants(*x) {
                    let mut gx = vec![T::zero(); xv.numel()];
                    let r = T::of(rows as f64);
                    for ((gr, xr), dr) in gx
                        .chunks_exact_mut(c)
                        .zip(xv.data().chunks_exact(c))
                        .zip(dy.chunks_exact(c))
                    {
                        for ch in 0..c {
                            let scale = gam[ch] * inv_std[ch];
                            gr[ch] = if *train {
                                let xhat = (xr[ch] - mean[ch]) * inv_std[ch];
                                scale / r * (r * dr[ch] - sum_dy[ch] - xhat * sum_dy_xhat[ch])
                            } else {
                                scale * dr[ch]
                            };
                        }
                    }
                    res.push((*x, gx));
                }
                if self.wants(*gamma) {
                    res.push((*gamma, sum_dy_xhat));
                }
                if self.wants(*beta) {
                    res.push((*beta, sum_dy));
                }
            }
            Op::ChannelAffine { x, scale, shift } => {
                let xv = self.val(*x);
                let sc = self.val(*scale).data();
                let c = sc.len();
                if self.wants(*x) {
                    let mut gx = g.to_vec();
                    for row in gx.chunks_exact_mut(c) {
                        row.iter_mut().zip(sc).for_each(|(v, &s)| *v *= s);
                    }
                    res.push((*x, gx));
                }
                if self.wants(*scale) {
                    let mut gs = vec![T::zero(); c];
                    for (gr, xr) in g.chunks_exact(c).zip(xv.data().chunks_exact(c)) {
                        for ch in 0..c {
                            gs[ch] += gr[ch] * xr[ch];
                        }
                    }
                    res.push((*scale, gs));
                }
                if self.wants(*shift) {
                    let mut gb = vec![T::zero(); c];
                    for gr in g.chunks_exact(c) {
                        gb.iter_mut().zip(gr).for_each(|(a, &v)| *a += v);
                    }
                    res.push((*shift, gb));
                }
            }
            Op::Dropout { x, mask } => {
                res.push((*x, g.iter().zip(mask).map(|(&gv, &m)| gv * m).collect()));
            }
            Op::SoftmaxCe { logits, probs, target } => {
                let batch = self.val(*logits).shape()[0];
                let scale = g[0] / T::of(batch as f64);
                let d = probs.iter().zip(target).map(|(&p, &t)| (p - t) * scale).collect();
                res.push((*logits, d));
            }
        }
        res
    }
}

/// Materializes `t` broadcast to `shape`; returns the data unchanged when
/// the shapes already agree.
fn expand_to<'a, T: Float>(t: &'a Tensor<T>, shape: &[usize]) -> std::borrow::Cow<'a, [T]> {
    if t.shape() == shape {
        return std::borrow::Cow::Borrowed(t.data());
    }
    let plan = BroadcastPlan::new(shape, t.shape()).expect("broadcast plan");
    let numel: usize = shape.iter().product();
    let mut out = vec![T::zero(); numel];
    let src = t.data();
    plan.for_each(|o, i| out[o] = src[i]);
    std::borrow::Cow::Owned(out)
}

/// Sums an output-shaped gradient back onto a (possibly broadcast) operand.
/// `f(out_index, grad_value)` transforms each term before accumulation.
fn reduce_to<T: Float>(g: &[T], out_shape: &[usize], operand_shape: &[usize], f: impl Fn(usize, T) -> T) -> Vec<T> {
    let numel: usize = operand_shape.iter().product();
    if out_shape == operand_shape {
        return g.iter().enumerate().map(|(o, &gv)| f(o, gv)).collect();
    }
    let plan = BroadcastPlan::new(out_shape, operand_shape).expect("reduce plan");
    let mut acc = vec![T::zero(); numel];
    plan.for_each(|o, i| acc[i] += f(o, g[o]));
    acc
}
