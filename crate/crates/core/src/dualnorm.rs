//! DualNorm: point normalization (PN) of the grouped neighbors toward their
//! sampled anchor, reverse point normalization (RPN) of the anchor toward its
//! neighbors, and the standard-deviation change diagnostic.
//!
//! All functions work on batched graph values:
//!
//! * `x_s`: sampled points, `[batch, m, 1, d]`
//! * `x_g`: grouped points, `[batch, m, k, d]`
//!
//! Global statistics are taken per cloud (over `m`, `k` and `d`), never
//! across the batch.
//!
//! | statistic | Local                          | Global                         |
//! |-----------|--------------------------------|--------------------------------|
//! | PN mean   | `x_s`                          | mean of `x_s` over `m, d`      |
//! | PN std    | RMS over `k` of `x_g - mu_s`   | RMS over `m, k, d`             |
//! | RPN mean  | mean of `x_g` over `k`         | mean of `x_g` over `m, k, d`   |
//! | RPN std   | `sqrt(abs(x_s - mu_g) + eps)`  | RMS over `m, d` of `x_s - mu_g`|
//!
//! Both normalizations finish with `alpha * (x - mu) / (sigma + eps) + beta`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Float, Graph, Tensor, Var};

pub const DEFAULT_EPS: f64 = 1e-5;

const CLOUD_AXES: [usize; 3] = [1, 2, 3];
const NEIGHBOR_AXIS: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scope {
    Local,
    Global,
}

/// Which scope the mean and the standard deviation use. The four
/// combinations are named by their initials, e.g. `LMGS` is local mean with
/// global standard deviation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct StatsMode {
    pub mean: Scope,
    pub std: Scope,
}

impl StatsMode {
    pub const LMGS: Self = Self {
        mean: Scope::Local,
        std: Scope::Global,
    };
    pub const LMLS: Self = Self {
        mean: Scope::Local,
        std: Scope::Local,
    };
    pub const GMLS: Self = Self {
        mean: Scope::Global,
        std: Scope::Local,
    };
    pub const GMGS: Self = Self {
        mean: Scope::Global,
        std: Scope::Global,
    };

    pub const ALL: [Self; 4] = [Self::LMGS, Self::LMLS, Self::GMLS, Self::GMGS];

    pub fn name(self) -> &'static str {
        match (self.mean, self.std) {
            (Scope::Local, Scope::Global) => "LMGS",
            (Scope::Local, Scope::Local) => "LMLS",
            (Scope::Global, Scope::Local) => "GMLS",
            (Scope::Global, Scope::Global) => "GMGS",
        }
    }
}

impl Default for StatsMode {
    fn default() -> Self {
        Self::LMGS
    }
}

impl fmt::Display for StatsMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StatsMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "LMGS" => Ok(Self::LMGS),
            "LMLS" => Ok(Self::LMLS),
            "GMLS" => Ok(Self::GMLS),
            "GMGS" => Ok(Self::GMGS),
            other => Err(Error::config(format!(
                "unknown stats mode {other:?} (expected LMGS, LMLS, GMLS or GMGS)"
            ))),
        }
    }
}

impl Serialize for StatsMode {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for StatsMode {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Learnable scale and shift of one normalization. `alpha` starts at 1 and
/// `beta` at 0. Both have one entry per channel, or a single shared entry.
#[derive(Clone, Debug, PartialEq)]
pub struct NormAffine<T> {
    pub alpha: Tensor<T>,
    pub beta: Tensor<T>,
    pub eps: T,
}

impl<T: Float> NormAffine<T> {
    pub fn identity(channels: usize) -> Self {
        Self {
            alpha: Tensor::full(&[channels], T::one()),
            beta: Tensor::zeros(&[channels]),
            eps: T::of(DEFAULT_EPS),
        }
    }

    /// One scale and one shift shared by every channel.
    pub fn scalar() -> Self {
        Self::identity(1)
    }
}

/// Graph handles of a [`NormAffine`].
#[derive(Clone, Copy, Debug)]
pub struct AffineVars<T> {
    pub alpha: Var,
    pub beta: Var,
    pub eps: T,
}

impl<T: Float> AffineVars<T> {
    pub fn record(g: &mut Graph<T>, affine: &NormAffine<T>) -> Self {
        Self {
            alpha: g.param(affine.alpha.clone()),
            beta: g.param(affine.beta.clone()),
            eps: affine.eps,
        }
    }
}

fn check_finite<T: Float>(g: &Graph<T>, v: Var, what: &str) -> Result<()> {
    if g.value(v).all_finite() {
        Ok(())
    } else {
        Err(Error::numeric(format!("non-finite entry in {what}")))
    }
}

fn check_pair<T: Float>(g: &Graph<T>, x_s: Var, x_g: Var) -> Result<()> {
    let (s, gs) = (g.shape(x_s), g.shape(x_g));
    let ok = s.len() == 4 && gs.len() == 4 && s[0] == gs[0] && s[1] == gs[1] && s[2] == 1 && s[3] == gs[3];
    if ok {
        Ok(())
    } else {
        Err(Error::Dimension {
            op: "dualnorm",
            lhs: s.to_vec(),
            rhs: gs.to_vec(),
        })
    }
}

/// Scale-and-shift of a normalized value. Per-channel affines use the fused
/// channel op; a single shared entry broadcasts.
fn scale_shift<T: Float>(g: &mut Graph<T>, z: Var, affine: &AffineVars<T>) -> Result<Var> {
    let channels = *g.shape(z).last().expect("rank 4");
    let width = g.value(affine.alpha).numel();
    if width == channels && g.shape(affine.alpha).len() == 1 {
        return g.channel_affine(z, affine.alpha, affine.beta);
    }
    if width != 1 || g.value(affine.beta).numel() != 1 {
        return Err(Error::Dimension {
            op: "dualnorm affine",
            lhs: vec![channels],
            rhs: g.shape(affine.alpha).to_vec(),
        });
    }
    let rank = g.shape(z).len();
    let ones = vec![1; rank];
    let a = g.reshape(affine.alpha, &ones)?;
    let b = g.reshape(affine.beta, &ones)?;
    let scaled = g.mul(z, a)?;
    g.add(scaled, b)
}

/// PN mean: the anchor itself (Local) or the per-cloud mean of all anchors
/// over points and channels (Global).
pub fn mean_for_pn<T: Float>(g: &mut Graph<T>, x_s: Var, scope: Scope) -> Result<Var> {
    match scope {
        Scope::Local => Ok(x_s),
        Scope::Global => g.reduce_mean(x_s, &CLOUD_AXES),
    }
}

/// PN standard deviation of the deviations `x_g - mu_s`. Returns
/// `(sigma, deviations)`.
pub fn std_for_pn<T: Float>(g: &mut Graph<T>, x_g: Var, mu_s: Var, scope: Scope) -> Result<(Var, Var)> {
    let dev = g.sub(x_g, mu_s)?;
    let sigma = match scope {
        Scope::Local => g.rms(dev, &[NEIGHBOR_AXIS])?,
        Scope::Global => g.rms(dev, &CLOUD_AXES)?,
    };
    Ok((sigma, dev))
}

/// Intermediate values of one PN application.
#[derive(Clone, Copy, Debug)]
pub struct PnParts {
    pub output: Var,
    pub sigma: Var,
    pub deviations: Var,
}

/// `alpha * (x_g - mu_s) / (sigma + eps) + beta` over the grouped points.
pub fn point_normalize<T: Float>(
    g: &mut Graph<T>,
    x_g: Var,
    x_s: Var,
    affine: &AffineVars<T>,
    mode: StatsMode,
) -> Result<Var> {
    Ok(point_normalize_parts(g, x_g, x_s, affine, mode)?.output)
}

pub fn point_normalize_parts<T: Float>(
    g: &mut Graph<T>,
    x_g: Var,
    x_s: Var,
    affine: &AffineVars<T>,
    mode: StatsMode,
) -> Result<PnParts> {
    check_pair(g, x_s, x_g)?;
    check_finite(g, x_g, "grouped points")?;
    check_finite(g, x_s, "sampled points")?;
    let mu = mean_for_pn(g, x_s, mode.mean)?;
    let (sigma, dev) = std_for_pn(g, x_g, mu, mode.std)?;
    let denom = g.add_scalar(sigma, affine.eps);
    let z = g.div(dev, denom)?;
    let output = scale_shift(g, z, affine)?;
    Ok(PnParts {
        output,
        sigma,
        deviations: dev,
    })
}

/// RPN mean: neighbor average per anchor (Local) or per-cloud mean of all
/// grouped values (Global).
pub fn mean_for_rpn<T: Float>(g: &mut Graph<T>, x_g: Var, scope: Scope) -> Result<Var> {
    match scope {
        Scope::Local => g.reduce_mean(x_g, &[NEIGHBOR_AXIS]),
        Scope::Global => g.reduce_mean(x_g, &CLOUD_AXES),
    }
}

/// RPN standard deviation. Local: `sqrt(|x_s - mu_g| + eps)` elementwise;
/// Global: per-cloud RMS of `x_s - mu_g`. Returns `(sigma, deviations)`.
pub fn std_for_rpn<T: Float>(g: &mut Graph<T>, x_s: Var, mu_g: Var, scope: Scope, eps: T) -> Result<(Var, Var)> {
    let dev = g.sub(x_s, mu_g)?;
    let sigma = match scope {
        Scope::Local => {
            let a = g.abs(dev);
            let a = g.add_scalar(a, eps);
            g.sqrt(a)
        }
        Scope::Global => g.rms(dev, &CLOUD_AXES)?,
    };
    Ok((sigma, dev))
}

/// `alpha * (x_s - mu_g) / (sigma + eps) + beta` over the sampled points.
/// Output keeps the `[batch, m, 1, d]` layout.
pub fn reverse_point_normalize<T: Float>(
    g: &mut Graph<T>,
    x_s: Var,
    x_g: Var,
    affine: &AffineVars<T>,
    mode: StatsMode,
) -> Result<Var> {
    check_pair(g, x_s, x_g)?;
    check_finite(g, x_g, "grouped points")?;
    check_finite(g, x_s, "sampled points")?;
    let mu = mean_for_rpn(g, x_g, mode.mean)?;
    let (sigma, dev) = std_for_rpn(g, x_s, mu, mode.std, affine.eps)?;
    let denom = g.add_scalar(sigma, affine.eps);
    let z = g.div(dev, denom)?;
    scale_shift(g, z, affine)
}

/// Which halves of DualNorm are active.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DualNormFlags {
    pub point_norm: bool,
    pub reverse_point_norm: bool,
}

impl Default for DualNormFlags {
    fn default() -> Self {
        Self {
            point_norm: true,
            reverse_point_norm: true,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct DualNormOutput {
    /// `[batch, m, k, 2d]`: normalized neighbors, then the normalized anchor
    /// repeated over `k`.
    pub features: Var,
    /// PN standard deviation, when PN is active.
    pub pn_sigma: Option<Var>,
}

/// PN and RPN both read the raw `x_s`/`x_g`; their outputs are concatenated
/// along channels. A disabled half passes its raw input through.
pub fn dualnorm_apply<T: Float>(
    g: &mut Graph<T>,
    x_s: Var,
    x_g: Var,
    pn: &AffineVars<T>,
    rpn: &AffineVars<T>,
    mode: StatsMode,
    flags: DualNormFlags,
) -> Result<DualNormOutput> {
    check_pair(g, x_s, x_g)?;
    let k = g.shape(x_g)[2];
    let (grouped, pn_sigma) = if flags.point_norm {
        let parts = point_normalize_parts(g, x_g, x_s, pn, mode)?;
        (parts.output, Some(parts.sigma))
    } else {
        (x_g, None)
    };
    let sampled = if flags.reverse_point_norm {
        reverse_point_normalize(g, x_s, x_g, rpn, mode)?
    } else {
        x_s
    };
    let sampled = g.expand(sampled, 2, k)?;
    let features = g.concat(&[grouped, sampled], 3)?;
    Ok(DualNormOutput { features, pn_sigma })
}

/// Whether PN widens or tightens the neighborhood spread.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    /// `sigma1 < alpha`: the ratio exceeds 1 and neighbors spread out.
    PullApart,
    /// `sigma1 > alpha`: the ratio is below 1 and neighbors contract.
    PushTogether,
    Neutral,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeltaReport {
    pub sigma1: f64,
    pub alpha: f64,
    /// `alpha / sigma1`.
    pub delta: f64,
    /// `alpha / (sigma1 + eps)`, the exact ratio with the stabilizer kept.
    pub delta_eps: f64,
    /// `std(after) / std(before)` measured on the data, when available.
    pub measured_ratio: Option<f64>,
    pub regime: Regime,
    /// Set when `sigma1 == 0` (a constant group).
    pub degenerate: bool,
}

impl DeltaReport {
    /// `delta` and the measured ratio agree within `rel_tol`.
    pub fn consistent(&self, rel_tol: f64) -> bool {
        match self.measured_ratio {
            Some(r) if self.delta.is_finite() && self.delta != 0.0 => (r / self.delta - 1.0).abs() <= rel_tol,
            Some(r) => r == self.delta,
            None => false,
        }
    }
}

/// Classifies a scale `alpha` against the PN standard deviation `sigma1`.
pub fn delta_for(alpha: f64, sigma1: f64, eps: f64) -> DeltaReport {
    let degenerate = sigma1 == 0.0;
    let delta = alpha / sigma1;
    let tie = (alpha - sigma1).abs() <= 1e-12 * alpha.abs().max(sigma1.abs());
    let regime = if tie {
        Regime::Neutral
    } else if sigma1 < alpha {
        Regime::PullApart
    } else {
        Regime::PushTogether
    };
    DeltaReport {
        sigma1,
        alpha,
        delta,
        delta_eps: alpha / (sigma1 + eps),
        measured_ratio: None,
        regime,
        degenerate,
    }
}

/// Population standard deviation of a flat slice.
pub fn population_std(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt()
}

/// Delta report with the measured spread ratio. `before` holds the PN
/// deviations `x_g - mu_s` and `after` holds `x_hat_g - beta`; both spreads
/// are population standard deviations over every element.
pub fn delta_report(before: &[f64], after: &[f64], alpha: f64, sigma1: f64, eps: f64) -> Result<DeltaReport> {
    if before.len() != after.len() || before.is_empty() {
        return Err(Error::Dimension {
            op: "delta_report",
            lhs: vec![before.len()],
            rhs: vec![after.len()],
        });
    }
    let mut report = delta_for(alpha, sigma1, eps);
    let sb = population_std(before);
    report.measured_ratio = (sb > 0.0).then(|| population_std(after) / sb);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, v).unwrap()
    }

    #[test]
    fn mode_names_round_trip() {
        for m in StatsMode::ALL {
            assert_eq!(m.name().parse::<StatsMode>().unwrap(), m);
        }
        assert!("LMXS".parse::<StatsMode>().is_err());
    }

    #[test]
    fn local_pn_mean_is_anchor() {
        let mut g = Graph::<f64>::new();
        let xs = g.input(t(&[1, 2, 1, 2], &[1., 3., 5., 7.]));
        let mu = mean_for_pn(&mut g, xs, Scope::Local).unwrap();
        assert_eq!(mu, xs);
        let mu = mean_for_pn(&mut g, xs, Scope::Global).unwrap();
        assert_eq!(g.value(mu).data(), &[4.0]);
    }

    #[test]
    fn local_pn_std_hand_case() {
        // one sample, k = 2, d = 1: neighbors {0, 2}, anchor 1
        let mut g = Graph::<f64>::new();
        let xs = g.input(t(&[1, 1, 1, 1], &[1.0]));
        let xg = g.input(t(&[1, 1, 2, 1], &[0.0, 2.0]));
        let (s, _) = std_for_pn(&mut g, xg, xs, Scope::Local).unwrap();
        assert_eq!(g.value(s).data(), &[1.0]);
    }

    #[test]
    fn rpn_hand_cases() {
        let mut g = Graph::<f64>::new();
        let xg = g.input(t(&[1, 1, 2, 1], &[1.0, 3.0]));
        let mu = mean_for_rpn(&mut g, xg, Scope::Local).unwrap();
        assert_eq!(g.value(mu).data(), &[2.0]);

        let xs = g.input(t(&[1, 1, 1, 1], &[3.0]));
        let (s, _) = std_for_rpn(&mut g, xs, mu, Scope::Local, DEFAULT_EPS).unwrap();
        assert!((g.value(s).item() - (1.0f64 + 1e-5).sqrt()).abs() < 1e-15);

        let affine = NormAffine::<f64>::identity(1);
        let av = AffineVars::record(&mut g, &affine);
        let out = reverse_point_normalize(&mut g, xs, xg, &av, StatsMode::LMLS).unwrap();
        let expected = 1.0 / ((1.0f64 + 1e-5).sqrt() + 1e-5);
        assert!((g.value(out).item() - expected).abs() < 1e-15);
        assert!((expected - 0.99998).abs() < 1e-5);
    }

    #[test]
    fn rpn_zero_distance_sigma_is_sqrt_eps() {
        let mut g = Graph::<f64>::new();
        let xs = g.input(t(&[1, 1, 1, 1], &[2.0]));
        let xg = g.input(t(&[1, 1, 2, 1], &[1.0, 3.0]));
        let mu = mean_for_rpn(&mut g, xg, Scope::Local).unwrap();
        let (s, _) = std_for_rpn(&mut g, xs, mu, Scope::Local, DEFAULT_EPS).unwrap();
        assert!((g.value(s).item() - 3.162_277_66e-3).abs() < 1e-10);
    }

    #[test]
    fn zero_alpha_yields_beta() {
        let mut g = Graph::<f64>::new();
        let xs = g.input(t(&[1, 2, 1, 1], &[0.5, -1.0]));
        let xg = g.input(t(&[1, 2, 2, 1], &[0.1, 0.7, -2.0, 3.0]));
        let mut affine = NormAffine::<f64>::identity(1);
        affine.alpha = t(&[1], &[0.0]);
        affine.beta = t(&[1], &[5.0]);
        let av = AffineVars::record(&mut g, &affine);
        for mode in StatsMode::ALL {
            let pn = point_normalize(&mut g, xg, xs, &av, mode).unwrap();
            assert!(g.value(pn).data().iter().all(|&v| v == 5.0));
            let rpn = reverse_point_normalize(&mut g, xs, xg, &av, mode).unwrap();
            assert!(g.value(rpn).data().iter().all(|&v| v == 5.0));
        }
    }

    #[test]
    fn neighbors_equal_anchor_give_zeros() {
        let mut g = Graph::<f64>::new();
        let xs = g.input(t(&[1, 1, 1, 2], &[1.0, -2.0]));
        let xg = g.input(t(&[1, 1, 3, 2], &[1.0, -2.0, 1.0, -2.0, 1.0, -2.0]));
        let av = AffineVars::record(&mut g, &NormAffine::identity(2));
        let pn = point_normalize(&mut g, xg, xs, &av, StatsMode::LMGS).unwrap();
        assert!(g.value(pn).data().iter().all(|&v| v == 0.0));
        let rpn = reverse_point_normalize(&mut g, xs, xg, &av, StatsMode::LMLS).unwrap();
        assert!(g.value(rpn).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn non_finite_input_is_rejected() {
        let mut g = Graph::<f64>::new();
        let xs = g.input(t(&[1, 1, 1, 1], &[f64::NAN]));
        let xg = g.input(t(&[1, 1, 1, 1], &[0.0]));
        let av = AffineVars::record(&mut g, &NormAffine::identity(1));
        assert!(matches!(
            point_normalize(&mut g, xg, xs, &av, StatsMode::LMGS),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn dualnorm_channel_layout_and_ablations() {
        let mut g = Graph::<f64>::new();
        let xs = g.input(t(&[1, 1, 1, 2], &[1.0, 2.0]));
        let xg = g.input(t(&[1, 1, 2, 2], &[0.0, 1.0, 4.0, 2.0]));
        let pn = AffineVars::record(&mut g, &NormAffine::identity(2));
        let rpn = AffineVars::record(&mut g, &NormAffine::identity(2));
        let both = dualnorm_apply(&mut g, xs, xg, &pn, &rpn, StatsMode::LMGS, DualNormFlags::default()).unwrap();
        assert_eq!(g.shape(both.features), &[1, 1, 2, 4]);

        let no_rpn = DualNormFlags {
            point_norm: true,
            reverse_point_norm: false,
        };
        let out = dualnorm_apply(&mut g, xs, xg, &pn, &rpn, StatsMode::LMGS, no_rpn).unwrap();
        let v = g.value(out.features);
        // raw anchor repeated over k in the last two channels
        assert_eq!(&v.data()[2..4], &[1.0, 2.0]);
        assert_eq!(&v.data()[6..8], &[1.0, 2.0]);

        let no_pn = DualNormFlags {
            point_norm: false,
            reverse_point_norm: true,
        };
        let out = dualnorm_apply(&mut g, xs, xg, &pn, &rpn, StatsMode::LMGS, no_pn).unwrap();
        let v = g.value(out.features);
        assert_eq!(&v.data()[0..2], &[0.0, 1.0]);
        assert_eq!(&v.data()[4..6], &[4.0, 2.0]);
        assert!(out.pn_sigma.is_none());
    }

    #[test]
    fn delta_regimes() {
        let r = delta_for(2.0, 2.0, DEFAULT_EPS);
        assert_eq!(r.regime, Regime::Neutral);
        assert_eq!(r.delta, 1.0);
        let r = delta_for(1.0, 2.0, DEFAULT_EPS);
        assert_eq!(r.delta, 0.5);
        assert_eq!(r.regime, Regime::PushTogether);
        let r = delta_for(3.0, 1.5, DEFAULT_EPS);
        assert_eq!(r.regime, Regime::PullApart);
        assert!(r.delta > 1.0);
        let r = delta_for(1.0, 0.0, DEFAULT_EPS);
        assert!(r.degenerate);
    }
}
