//! Forward definitions of the recorded operations. Backward rules live next
//! to the tape in `graph.rs`.

use super::broadcast::{broadcast_shape, zip_broadcast, BroadcastPlan};
use super::graph::{BatchStats, BnMode, Op};
use super::{matmul, split_axis, Float, Graph, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy)]
enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

impl<T: Float> Graph<T> {
    fn binary(&mut self, kind: Binary, a: Var, b: Var) -> Result<Var> {
        let name = match kind {
            Binary::Add => "add",
            Binary::Sub => "sub",
            Binary::Mul => "mul",
            Binary::Div => "div",
        };
        let (av, bv) = (self.value(a), self.value(b));
        let shape = broadcast_shape(name, av.shape(), bv.shape())?;
        let f = |x: T, y: T| match kind {
            Binary::Add => x + y,
            Binary::Sub => x - y,
            Binary::Mul => x * y,
            Binary::Div => x / y,
        };
        let data: Vec<T> = if av.shape() == bv.shape() {
            av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect()
        } else {
            zip_broadcast(&shape, av.data(), av.shape(), bv.data(), bv.shape(), f)
        };
        let op = match kind {
            Binary::Add => Op::Add(a, b),
            Binary::Sub => Op::Sub(a, b),
            Binary::Mul => Op::Mul(a, b),
            Binary::Div => Op::Div(a, b),
        };
        Ok(self.push(Tensor { shape, data }, op))
    }

    /// Elementwise sum; equal ranks, singleton axes broadcast.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Div, a, b)
    }

    fn unary(&mut self, x: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let v = self.value(x);
        let out = Tensor {
            shape: v.shape().to_vec(),
            data: v.data().iter().map(|&e| f(e)).collect(),
        };
        self.push(out, op)
    }

    pub fn add_scalar(&mut self, x: Var, c: T) -> Var {
        self.unary(x, |e| e + c, Op::AddScalar(x))
    }

    pub fn mul_scalar(&mut self, x: Var, c: T) -> Var {
        self.unary(x, |e| e * c, Op::MulScalar(x, c))
    }

    pub fn sqrt(&mut self, x: Var) -> Var {
        self.unary(x, |e| e.sqrt(), Op::Sqrt(x))
    }

    pub fn abs(&mut self, x: Var) -> Var {
        self.unary(x, |e| e.abs(), Op::Abs(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |e| if e > T::zero() { e } else { T::zero() }, Op::Relu(x))
    }

    /// `y[.., j] = sum_i x[.., i] * w[i, j] + b[j]` over the last axis of `x`.
    pub fn fully_connected(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (xv, wv) = (self.value(x), self.value(w));
        let mismatch = || Error::Dimension {
            op: "fully_connected",
            lhs: xv.shape().to_vec(),
            rhs: wv.shape().to_vec(),
        };
        if wv.rank() != 2 || xv.rank() == 0 || *xv.shape().last().unwrap() != wv.shape()[0] {
            return Err(mismatch());
        }
        let (din, dout) = (wv.shape()[0], wv.shape()[1]);
        if let Some(b) = b {
            let bs = self.value(b).shape();
            if bs != [dout] {
                return Err(Error::Dimension {
                    op: "fully_connected(bias)",
                    lhs: vec![dout],
                    rhs: bs.to_vec(),
                });
            }
        }
        let rows = xv.numel() / din;
        let mut out = vec![T::zero(); rows * dout];
        if let Some(b) = b {
            let bd = self.value(b).data();
            for row in out.chunks_exact_mut(dout) {
                row.copy_from_slice(bd);
            }
        }
        matmul(
            rows,
            din,
            dout,
            xv.data(),
            false,
            wv.data(),
            false,
            &mut out,
            b.is_some(),
        );
        let mut shape = xv.shape().to_vec();
        *shape.last_mut().unwrap() = dout;
        self.fc_macs += (rows * din * dout) as u64;
        Ok(self.push(Tensor { shape, data: out }, Op::Linear { x, w, b }))
    }

    /// Max over `axis`, dropping it. The gradient flows to the first
    /// maximal entry.
    pub fn max_pool_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let xv = self.value(x);
        if axis >= xv.rank() {
            return Err(Error::Index {
                op: "max_pool_axis",
                index: axis,
                extent: xv.rank(),
            });
        }
        let (outer, ext, inner) = split_axis(xv.shape(), axis);
        let d = xv.data();
        let mut out = vec![T::zero(); outer * inner];
        let mut argmax = vec![0u32; outer * inner];
        for o in 0..outer {
            let base = o * ext * inner;
            let orow = &mut out[o * inner..(o + 1) * inner];
            orow.copy_from_slice(&d[base..base + inner]);
            let arow = &mut argmax[o * inner..(o + 1) * inner];
            for k in 1..ext {
                let src = &d[base + k * inner..base + (k + 1) * inner];
                for j in 0..inner {
                    if src[j] > orow[j] {
                        orow[j] = src[j];
                        arow[j] = k as u32;
                    }
                }
            }
        }
        let mut shape = xv.shape().to_vec();
        shape.remove(axis);
        Ok(self.push(Tensor { shape, data: out }, Op::MaxPool { x, axis, argmax }))
    }

    fn reduced_shape(&self, op: &'static str, x: Var, axes: &[usize]) -> Result<Vec<usize>> {
        let shape = self.value(x).shape();
        if axes.is_empty() {
            return Err(Error::arg(format!("{op}: empty axis set")));
        }
        let mut out = shape.to_vec();
        for &a in axes {
            if a >= shape.len() {
                return Err(Error::Index {
                    op,
                    index: a,
                    extent: shape.len(),
                });
            }
            out[a] = 1;
        }
        Ok(out)
    }

    /// Mean over `axes`, keeping them as singleton extents.
    pub fn reduce_mean(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let shape = self.reduced_shape("reduce_mean", x, axes)?;
        let xv = self.value(x);
        let numel: usize = shape.iter().product();
        let n = T::of((xv.numel() / numel) as f64);
        let mut out = vec![T::zero(); numel];
        let d = xv.data();
        BroadcastPlan::new(xv.shape(), &shape)
            .expect("reduced shape")
            .for_each(|i, j| out[j] += d[i]);
        out.iter_mut().for_each(|v| *v /= n);
        Ok(self.push(Tensor { shape, data: out }, Op::Mean(x)))
    }

    /// Root mean square over `axes`, keeping them as singleton extents:
    /// `sqrt(mean(x^2))`. The gradient at a zero RMS is taken as zero.
    pub fn rms(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let shape = self.reduced_shape("rms", x, axes)?;
        let xv = self.value(x);
        let numel: usize = shape.iter().product();
        let n = T::of((xv.numel() / numel) as f64);
        let mut out = vec![T::zero(); numel];
        let d = xv.data();
        BroadcastPlan::new(xv.shape(), &shape)
            .expect("reduced shape")
            .for_each(|i, j| out[j] += d[i] * d[i]);
        out.iter_mut().for_each(|v| *v = (*v / n).sqrt());
        Ok(self.push(Tensor { shape, data: out }, Op::Rms(x)))
    }

    /// Mean and population standard deviation (no Bessel correction) over
    /// `axes`, both differentiable.
    pub fn reduce_mean_std(&mut self, x: Var, axes: &[usize]) -> Result<(Var, Var)> {
        let mean = self.reduce_mean(x, axes)?;
        let dev = self.sub(x, mean)?;
        let std = self.rms(dev, axes)?;
        Ok((mean, std))
    }

    /// Sum of all entries as a rank-0 tensor.
    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.value(x).data().iter().copied().sum();
        self.push(Tensor::scalar(total), Op::Sum(x))
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = inputs.first().ok_or_else(|| Error::arg("concat of zero tensors"))?;
        let base = self.value(*first).shape().to_vec();
        if axis >= base.len() {
            return Err(Error::Index {
                op: "concat",
                index: axis,
                extent: base.len(),
            });
        }
        let mut total = 0;
        for v in inputs {
            let s = self.value(*v).shape();
            let compatible =
                s.len() == base.len() && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::Dimension {
                    op: "concat",
                    lhs: base,
                    rhs: s.to_vec(),
                });
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let (outer, _, inner) = split_axis(&shape, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for v in inputs {
                let t = self.value(*v);
                let chunk = t.shape()[axis] * inner;
                out.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        Ok(self.push(
            Tensor { shape, data: out },
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
        ))
    }

    /// Repeats a singleton `axis` `n` times.
    pub fn expand(&mut self, x: Var, axis: usize, n: usize) -> Result<Var> {
        let xv = self.value(x);
        if axis >= xv.rank() || xv.shape()[axis] != 1 || n == 0 {
            return Err(Error::arg(format!(
                "expand: axis {axis} of {:?} is not a singleton (n = {n})",
                xv.shape()
            )));
        }
        let mut shape = xv.shape().to_vec();
        shape[axis] = n;
        let numel: usize = shape.iter().product();
        let mut out = vec![T::zero(); numel];
        let d = xv.data();
        BroadcastPlan::new(&shape, xv.shape())
            .expect("singleton axis")
            .for_each(|o, i| out[o] = d[i]);
        Ok(self.push(Tensor { shape, data: out }, Op::Expand(x)))
    }

    /// Gathers rows of `x: [batch, n, c]` into `[batch, q, c]` where
    /// `index[b * q + r]` selects the source row for batch `b`.
    /// Differentiable with respect to `x` only.
    pub fn gather_rows(&mut self, x: Var, index: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        if xv.rank() != 3 {
            return Err(Error::Dimension {
                op: "gather_rows",
                lhs: xv.shape().to_vec(),
                rhs: vec![index.len()],
            });
        }
        let (batch, n, c) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
        if index.is_empty() || index.len() % batch != 0 {
            return Err(Error::arg(format!(
                "gather_rows: {} indices do not split over batch {batch}",
                index.len()
            )));
        }
        let q = index.len() / batch;
        let d = xv.data();
        let mut out = Vec::with_capacity(batch * q * c);
        for b in 0..batch {
            for &src in &index[b * q..(b + 1) * q] {
                if src >= n {
                    return Err(Error::Index {
                        op: "gather_rows",
                        index: src,
                        extent: n,
                    });
                }
                out.extend_from_slice(&d[(b * n + src) * c..(b * n + src + 1) * c]);
            }
        }
        Ok(self.push(
            Tensor {
                shape: vec![batch, q, c],
                data: out,
            },
            Op::Gather {
                x,
                index: index.to_vec(),
            },
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshape(shape)?;
        Ok(self.push(t, Op::Reshape(x)))
    }

    /// Per-channel normalization over every leading axis of `x` (channels
    /// last), followed by `gamma * xhat + beta` and an optional ReLU.
    /// Training mode returns the observed batch statistics.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mode: BnMode<'_, T>,
        relu: bool,
    ) -> Result<(Var, Option<BatchStats<T>>)> {
        let xv = self.value(x);
        let c = *xv.shape().last().ok_or_else(|| Error::arg("batch_norm on a scalar"))?;
        let (gv, bv) = (self.value(gamma), self.value(beta));
        if gv.shape() != [c] || bv.shape() != [c] {
            return Err(Error::Dimension {
                op: "batch_norm",
                lhs: xv.shape().to_vec(),
                rhs: gv.shape().to_vec(),
            });
        }
        let rows = xv.numel() / c;
        let d = xv.data();
        let (mean, inv_std, stats, train) = match mode {
            BnMode::Train { eps } => {
                let mut mean = vec![T::zero(); c];
                for row in d.chunks_exact(c) {
                    mean.iter_mut().zip(row).for_each(|(m, &v)| *m += v);
                }
                let r = T::of(rows as f64);
                mean.iter_mut().for_each(|m| *m /= r);
                let mut var = vec![T::zero(); c];
                for row in d.chunks_exact(c) {
                    for ch in 0..c {
                        let dv = row[ch] - mean[ch];
                        var[ch] += dv * dv;
                    }
                }
                var.iter_mut().for_each(|v| *v /= r);
                let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
                let stats = BatchStats {
                    mean: mean.clone(),
                    var,
                    count: rows,
                };
                (mean, inv_std, Some(stats), true)
            }
            BnMode::Eval {
                running_mean,
                running_var,
                eps,
            } => {
                if running_mean.len() != c || running_var.len() != c {
                    return Err(Error::Dimension {
                        op: "batch_norm(running)",
                        lhs: vec![c],
                        rhs: vec![running_mean.len()],
                    });
                }
                let inv_std: Vec<T> = running_var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
                (running_mean.to_vec(), inv_std, None, false)
            }
        };
        let (gd, bd) = (gv.data(), bv.data());
        let mut out = vec![T::zero(); xv.numel()];
        for (orow, xrow) in out.chunks_exact_mut(c).zip(d.chunks_exact(c)) {
            for ch in 0..c {
                let y = gd[ch] * (xrow[ch] - mean[ch]) * inv_std[ch] + bd[ch];
                orow[ch] = if relu && y < T::zero() { T::zero() } else { y };
            }
        }
        let shape = xv.shape().to_vec();
        let var = self.push(
            Tensor { shape, data: out },
            Op::BatchNorm {
                x,
                gamma,
                beta,
                mean,
                inv_std,
                train,
                relu,
            },
        );
        Ok((var, stats))
    }

    /// `y[.., c] = x[.., c] * scale[c] + shift[c]`.
    pub fn channel_affine(&mut self, x: Var, scale: Var, shift: Var) -> Result<Var> {
        let xv = self.value(x);
        let c = *xv
            .shape()
            .last()
            .ok_or_else(|| Error::arg("channel_affine on a scalar"))?;
        let (sv, bv) = (self.value(scale), self.value(shift));
        if sv.shape() != [c] || bv.shape() != [c] {
            return Err(Error::Dimension {
                op: "channel_affine",
                lhs: xv.shape().to_vec(),
                rhs: sv.shape().to_vec(),
            });
        }
        let (sd, bd) = (sv.data(), bv.data());
        let mut data = xv.data().to_vec();
        for row in data.chunks_exact_mut(c) {
            for ((v, &s), &b) in row.iter_mut().zip(sd).zip(bd) {
                *v = *v * s + b;
            }
        }
        let shape = xv.shape().to_vec();
        Ok(self.push(Tensor { shape, data }, Op::ChannelAffine { x, scale, shift }))
    }

    /// Multiplies by a fixed mask (already scaled by `1 / keep_prob`).
    pub fn dropout(&mut self, x: Var, mask: Vec<T>) -> Result<Var> {
        let xv = self.value(x);
        if mask.len() != xv.numel() {
            return Err(Error::Dimension {
                op: "dropout",
                lhs: xv.shape().to_vec(),
                rhs: vec![mask.len()],
            });
        }
        let data = xv.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let shape = xv.shape().to_vec();
        Ok(self.push(Tensor { shape, data }, Op::Dropout { x, mask }))
    }

    /// Mean over the batch of the cross-entropy between `softmax(logits)` and
    /// the smoothed target `(1 - s) * onehot + s / C`.
    pub fn label_smoothed_ce(&mut self, logits: Var, labels: &[usize], smoothing: T) -> Result<Var> {
        let lv = self.value(logits);
        if lv.rank() != 2 || lv.shape()[0] != labels.len() {
            return Err(Error::Dimension {
                op: "label_smoothed_ce",
                lhs: lv.shape().to_vec(),
                rhs: vec![labels.len()],
            });
        }
        if !(smoothing >= T::zero() && smoothing < T::one()) {
            return Err(Error::arg(format!("label smoothing {smoothing} outside [0, 1)")));
        }
        let (batch, classes) = (lv.shape()[0], lv.shape()[1]);
        let off = smoothing / T::of(classes as f64);
        let mut probs = vec![T::zero(); batch * classes];
        let mut target = vec![off; batch * classes];
        let mut loss = T::zero();
        for (b, &label) in labels.iter().enumerate() {
            if label >= classes {
                return Err(Error::Index {
                    op: "label_smoothed_ce",
                    index: label,
                    extent: classes,
                });
            }
            let row = &lv.data()[b * classes..(b + 1) * classes];
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = row.iter().map(|&z| (z - max).exp()).sum::<T>().ln() + max;
            target[b * classes + label] += T::one() - smoothing;
            for j in 0..classes {
                let logp = row[j] - lse;
                probs[b * classes + j] = logp.exp();
                loss -= target[b * classes + j] * logp;
            }
        }
        loss /= T::of(batch as f64);
        Ok(self.push(Tensor::scalar(loss), Op::SoftmaxCe { logits, probs, target }))
    }
}
