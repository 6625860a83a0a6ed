//! Forward building blocks recorded on a [`Graph`]. Every learnable handle is
//! a graph [`Var`]; batch normalization is routed through [`NormState`],
//! which either uses batch statistics (collecting them) or stored running
//! statistics.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dualnorm::{dualnorm_apply, AffineVars, DualNormFlags, StatsMode};
use crate::error::{Error, Result};
use crate::geometry::{gather_groups_var, GroupIndex, Point, SeedRule};
use crate::network::config::StageConfig;
use crate::tensor::{BatchStats, BnMode, Float, Graph, Tensor, Var};

pub const BN_EPS: f64 = 1e-5;

/// Fully connected layer followed by batch normalization.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FcBn<H> {
    pub weight: H,
    pub bias: Option<H>,
    pub gamma: H,
    pub beta: H,
    /// Index of this normalization's running statistics.
    pub slot: usize,
}

impl<H: Copy> FcBn<H> {
    pub fn map<U>(&self, f: &impl Fn(H) -> U) -> FcBn<U> {
        FcBn {
            weight: f(self.weight),
            bias: self.bias.map(f),
            gamma: f(self.gamma),
            beta: f(self.beta),
            slot: self.slot,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BnRunning<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Float> BnRunning<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: vec![T::zero(); channels],
            var: vec![T::one(); channels],
        }
    }

    /// `running = (1 - momentum) running + momentum batch`, with the
    /// unbiased batch variance.
    pub fn update(&mut self, stats: &BatchStats<T>, momentum: f64) {
        let mo = T::of(momentum);
        let keep = T::one() - mo;
        let n = stats.count as f64;
        let unbias = T::of(if n > 1.0 { n / (n - 1.0) } else { 1.0 });
        for (r, &m) in self.mean.iter_mut().zip(&stats.mean) {
            *r = keep * *r + mo * m;
        }
        for (r, &v) in self.var.iter_mut().zip(&stats.var) {
            *r = keep * *r + mo * v * unbias;
        }
    }
}

/// Batch-normalization mode for one forward pass.
pub struct NormState<'a, T: Float> {
    running: Option<&'a [BnRunning<T>]>,
    eps: T,
    /// `(slot, stats)` for every normalization run with batch statistics.
    pub observed: Vec<(usize, BatchStats<T>)>,
}

impl<'a, T: Float> NormState<'a, T> {
    pub fn train() -> Self {
        Self {
            running: None,
            eps: T::of(BN_EPS),
            observed: Vec::new(),
        }
    }

    pub fn eval(running: &'a [BnRunning<T>]) -> Self {
        Self {
            running: Some(running),
            eps: T::of(BN_EPS),
            observed: Vec::new(),
        }
    }

    pub fn is_train(&self) -> bool {
        self.running.is_none()
    }

    fn normalize(&mut self, g: &mut Graph<T>, x: Var, gamma: Var, beta: Var, slot: usize, relu: bool) -> Result<Var> {
        let mode = match self.running {
            None => BnMode::Train { eps: self.eps },
            Some(r) => {
                let r = r.get(slot).ok_or(Error::Index {
                    op: "batch_norm slot",
                    index: slot,
                    extent: r.len(),
                })?;
                BnMode::Eval {
                    running_mean: &r.mean,
                    running_var: &r.var,
                    eps: self.eps,
                }
            }
        };
        let (y, stats) = g.batch_norm(x, gamma, beta, mode, relu)?;
        if let Some(s) = stats {
            self.observed.push((slot, s));
        }
        Ok(y)
    }
}

pub fn fc_bn<T: Float>(
    g: &mut Graph<T>,
    x: Var,
    unit: &FcBn<Var>,
    norm: &mut NormState<'_, T>,
    relu: bool,
) -> Result<Var> {
    let h = g.fully_connected(x, unit.weight, unit.bias)?;
    norm.normalize(g, h, unit.gamma, unit.beta, unit.slot, relu)
}

/// `relu(BN(FC_last(... relu(BN(FC_1(x))) ...)) + x)`. Two units give the
/// bottleneck block, three the inverted block.
pub fn residual_block<T: Float>(
    g: &mut Graph<T>,
    x: Var,
    units: &[FcBn<Var>],
    norm: &mut NormState<'_, T>,
) -> Result<Var> {
    let Some((last, inner)) = units.split_last() else {
        return Err(Error::arg("residual block without layers"));
    };
    let mut h = x;
    for u in inner {
        h = fc_bn(g, h, u, norm, true)?;
    }
    let h = fc_bn(g, h, last, norm, false)?;
    if g.shape(h) != g.shape(x) {
        return Err(Error::Dimension {
            op: "residual_block",
            lhs: g.shape(x).to_vec(),
            rhs: g.shape(h).to_vec(),
        });
    }
    let sum = g.add(h, x)?;
    Ok(g.relu(sum))
}

/// Squeeze-expand (or expand-squeeze) residual block with two layers.
pub fn c_resblock<T: Float>(
    g: &mut Graph<T>,
    x: Var,
    units: &[FcBn<Var>; 2],
    norm: &mut NormState<'_, T>,
) -> Result<Var> {
    residual_block(g, x, units, norm)
}

/// Expand, transform, squeeze.
pub fn inv_resblock<T: Float>(
    g: &mut Graph<T>,
    x: Var,
    units: &[FcBn<Var>; 3],
    norm: &mut NormState<'_, T>,
) -> Result<Var> {
    residual_block(g, x, units, norm)
}

/// Packs clouds of equal size into a `[batch, n, 3]` tensor.
pub fn coords_tensor<T: Float>(clouds: &[Vec<Point>]) -> Result<Tensor<T>> {
    let n = clouds.first().map_or(0, Vec::len);
    if n == 0 || clouds.iter().any(|c| c.len() != n) {
        return Err(Error::arg("a batch needs nonempty clouds of equal size"));
    }
    let data = clouds
        .iter()
        .flat_map(|c| c.iter().flat_map(|p| p.iter().map(|&v| T::of(v))))
        .collect();
    Tensor::new(vec![clouds.len(), n, 3], data)
}

/// Per-point lift from coordinates to `embed_dim` channels.
pub fn embedding_forward<T: Float>(
    g: &mut Graph<T>,
    coords: Var,
    unit: &FcBn<Var>,
    norm: &mut NormState<'_, T>,
) -> Result<Var> {
    fc_bn(g, coords, unit, norm, true)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StageParams<H> {
    pub pn_alpha: H,
    pub pn_beta: H,
    pub rpn_alpha: H,
    pub rpn_beta: H,
    pub lift: FcBn<H>,
    pub pre: Vec<Vec<FcBn<H>>>,
    pub post: Vec<Vec<FcBn<H>>>,
}

impl<H: Copy> StageParams<H> {
    pub fn map<U>(&self, f: &impl Fn(H) -> U) -> StageParams<U> {
        let blocks = |b: &Vec<Vec<FcBn<H>>>| -> Vec<Vec<FcBn<U>>> {
            b.iter().map(|units| units.iter().map(|u| u.map(f)).collect()).collect()
        };
        StageParams {
            pn_alpha: f(self.pn_alpha),
            pn_beta: f(self.pn_beta),
            rpn_alpha: f(self.rpn_alpha),
            rpn_beta: f(self.rpn_beta),
            lift: self.lift.map(f),
            pre: blocks(&self.pre),
            post: blocks(&self.post),
        }
    }
}

/// Normalization settings shared by every stage.
#[derive(Clone, Copy, Debug)]
pub struct StageMode {
    pub stats: StatsMode,
    pub flags: DualNormFlags,
    pub seed: SeedRule,
    pub dualnorm_eps: f64,
}

pub struct StageOutput {
    /// Sampled coordinates per cloud.
    pub coords: Vec<Vec<Point>>,
    /// `[batch, m, channels_out]`.
    pub features: Var,
    /// PN standard deviation of this stage, when PN is active.
    pub pn_sigma: Option<Var>,
}

/// Sampling and grouping, DualNorm, channel lift, blocks over every
/// neighbor, max over neighbors, blocks over every sampled point.
#[allow(clippy::too_many_arguments)]
pub fn stage_forward<T: Float>(
    g: &mut Graph<T>,
    coords: &[Vec<Point>],
    features: Var,
    stage: &StageConfig,
    params: &StageParams<Var>,
    mode: &StageMode,
    norm: &mut NormState<'_, T>,
) -> Result<StageOutput> {
    let groups = coords
        .iter()
        .map(|c| GroupIndex::build(c, stage.points_out, stage.k, mode.seed))
        .collect::<Result<Vec<_>>>()?;
    stage_forward_grouped(g, coords, &groups, features, params, mode, norm)
}

/// [`stage_forward`] with precomputed group indices.
pub fn stage_forward_grouped<T: Float>(
    g: &mut Graph<T>,
    coords: &[Vec<Point>],
    groups: &[GroupIndex],
    features: Var,
    params: &StageParams<Var>,
    mode: &StageMode,
    norm: &mut NormState<'_, T>,
) -> Result<StageOutput> {
    let (x_s, x_g) = gather_groups_var(g, features, groups)?;
    let eps = T::of(mode.dualnorm_eps);
    let pn = AffineVars {
        alpha: params.pn_alpha,
        beta: params.pn_beta,
        eps,
    };
    let rpn = AffineVars {
        alpha: params.rpn_alpha,
        beta: params.rpn_beta,
        eps,
    };
    let dn = dualnorm_apply(g, x_s, x_g, &pn, &rpn, mode.stats, mode.flags)?;
    let mut x = fc_bn(g, dn.features, &params.lift, norm, true)?;
    for units in &params.pre {
        x = residual_block(g, x, units, norm)?;
    }
    x = g.max_pool_axis(x, 2)?;
    for units in &params.post {
        x = residual_block(g, x, units, norm)?;
    }
    let sampled = coords
        .iter()
        .zip(groups)
        .map(|(c, gi)| gi.sample_indices.iter().map(|&i| c[i]).collect())
        .collect();
    Ok(StageOutput {
        coords: sampled,
        features: x,
        pn_sigma: dn.pn_sigma,
    })
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HeadParams<H> {
    pub hidden: Vec<FcBn<H>>,
    pub out_weight: H,
    pub out_bias: H,
}

impl<H: Copy> HeadParams<H> {
    pub fn map<U>(&self, f: &impl Fn(H) -> U) -> HeadParams<U> {
        HeadParams {
            hidden: self.hidden.iter().map(|u| u.map(f)).collect(),
            out_weight: f(self.out_weight),
            out_bias: f(self.out_bias),
        }
    }
}

/// Inverted dropout masks drawn from a seeded stream.
pub struct DropoutSource {
    pub rate: f64,
    rng: ChaCha8Rng,
}

impl DropoutSource {
    pub fn new(rate: f64, seed: u64) -> Self {
        Self {
            rate,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn mask<T: Float>(&mut self, len: usize) -> Vec<T> {
        let keep = 1.0 - self.rate;
        let scale = T::of(1.0 / keep);
        (0..len)
            .map(|_| {
                if self.rng.random::<f64>() < keep {
                    scale
                } else {
                    T::zero()
                }
            })
            .collect()
    }
}

/// Max over points, hidden FC+BN+ReLU(+dropout) layers, then the output
/// layer. Returns un-normalized `[batch, classes]` logits.
pub fn classify<T: Float>(
    g: &mut Graph<T>,
    features: Var,
    params: &HeadParams<Var>,
    mut dropout: Option<&mut DropoutSource>,
    norm: &mut NormState<'_, T>,
) -> Result<Var> {
    let mut x = g.max_pool_axis(features, 1)?;
    for unit in &params.hidden {
        x = fc_bn(g, x, unit, norm, true)?;
        if let Some(d) = dropout.as_deref_mut() {
            if d.rate > 0.0 {
                let mask = d.mask(g.value(x).numel());
                x = g.dropout(x, mask)?;
            }
        }
    }
    g.fully_connected(x, params.out_weight, Some(params.out_bias))
}
