use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::NamedTensor;
use crate::tensor::{Float, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.05,
        }
    }
}

/// First and second moment buffers, one pair per parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
    pub step: u64,
}

impl<T: Float> AdamState<T> {
    pub fn new(params: &[NamedTensor<T>]) -> Self {
        let zeros = || params.iter().map(|p| vec![T::zero(); p.value.numel()]).collect();
        Self {
            m: zeros(),
            v: zeros(),
            step: 0,
        }
    }
}

/// One AdamW update: `p -= lr * wd * p`, then the bias-corrected Adam step.
/// A missing gradient counts as zero. Nothing is modified when any gradient
/// is non-finite.
pub fn adamw_step<T: Float>(
    params: &mut [NamedTensor<T>],
    grads: &[Option<Tensor<T>>],
    state: &mut AdamState<T>,
    lr: f64,
    cfg: &AdamWConfig,
) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(Error::Dimension {
            op: "adamw_step",
            lhs: vec![params.len()],
            rhs: vec![grads.len(), state.m.len()],
        });
    }
    for ((p, g), m) in params.iter().zip(grads).zip(&state.m) {
        if m.len() != p.value.numel() {
            return Err(Error::Dimension {
                op: "adamw_step state",
                lhs: p.value.shape().to_vec(),
                rhs: vec![m.len()],
            });
        }
        if let Some(g) = g {
            if g.shape() != p.value.shape() {
                return Err(Error::Dimension {
                    op: "adamw_step gradient",
                    lhs: p.value.shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
            if !g.all_finite() {
                return Err(Error::numeric(format!("non-finite gradient for parameter {}", p.name)));
            }
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    let (b1, b2) = (T::of(cfg.beta1), T::of(cfg.beta2));
    let (one_b1, one_b2) = (T::of(1.0 - cfg.beta1), T::of(1.0 - cfg.beta2));
    let decay = T::of(1.0 - lr * cfg.weight_decay);
    let (c1, c2) = (T::of(c1), T::of(c2));
    let (lr_t, eps) = (T::of(lr), T::of(cfg.eps));
    for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        let pd = p.value.data_mut();
        match g {
            Some(g) => {
                for (((w, &gi), mi), vi) in pd.iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                    *w *= decay;
                    *mi = b1 * *mi + one_b1 * gi;
                    *vi = b2 * *vi + one_b2 * gi * gi;
                    let mhat = *mi / c1;
                    let vhat = *vi / c2;
                    *w -= lr_t * mhat / (vhat.sqrt() + eps);
                }
            }
            None => {
                for ((w, mi), vi) in pd.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()) {
                    *w *= decay;
                    *mi = b1 * *mi;
                    *vi = b2 * *vi;
                    *w -= lr_t * (*mi / c1) / ((*vi / c2).sqrt() + eps);
                }
            }
        }
    }
    Ok(())
}

/// `lr_final + (lr_init - lr_final) (1 + cos(pi t / T)) / 2`.
pub fn cosine_lr(t: f64, total: f64, lr_init: f64, lr_final: f64) -> f64 {
    let t = t.clamp(0.0, total);
    let phase = if total > 0.0 { t / total } else { 1.0 };
    lr_final + (lr_init - lr_final) * (1.0 + (std::f64::consts::PI * phase).cos()) / 2.0
}
