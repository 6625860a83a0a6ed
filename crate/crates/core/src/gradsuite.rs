//! Registered finite-difference checks: one case per differentiable op,
//! DualNorm end to end in every statistics mode, and a two-cloud micro
//! network.
//!
//! Each case draws its inputs from a seed and reduces the op output with a
//! fixed random weighting, so every output coordinate contributes a distinct
//! slope. Sampling and grouping indices are computed from coordinates only;
//! they are frozen per probe because parameters never move them.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::dualnorm::{dualnorm_apply, AffineVars, DualNormFlags, Scope, StatsMode, DEFAULT_EPS};
use crate::error::Result;
use crate::geometry::{Point, SeedRule};
use crate::network::{ModelConfig, Phase, PointNormNet, StageConfig};
use crate::tensor::gradcheck::{grad_check_many, GradCheckConfig, GradCheckReport};
use crate::tensor::{BnMode, Graph, Tensor, Var};

type CaseFn = fn(u64, &GradCheckConfig) -> Result<GradCheckReport>;

#[derive(Clone, Copy)]
pub struct GradCase {
    pub name: &'static str,
    pub run: CaseFn,
}

#[derive(Clone, Debug, Serialize)]
pub struct CaseOutcome {
    pub name: String,
    pub seeds: usize,
    pub max_rel_err: f64,
    pub worst_seed: u64,
    pub checked: usize,
    pub skipped: usize,
    pub passed: bool,
}

fn rng_for(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ 0x6772_6164)
}

fn uniform(rng: &mut impl Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    let v: Vec<f64> = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::from_f64(shape, &v).unwrap()
}

/// Magnitudes in `[lo, hi)` with random sign, keeping clear of zero.
fn signed(rng: &mut impl Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    let v: Vec<f64> = (0..n)
        .map(|_| {
            let m = rng.random_range(lo..hi);
            if rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::from_f64(shape, &v).unwrap()
}

/// `sum(y * w)` for a fixed weighting `w` derived from `seed`.
fn project(g: &mut Graph<f64>, y: Var, seed: u64) -> Result<Var> {
    let mut rng = rng_for(seed ^ 0x7072_6f6a);
    let w = uniform(&mut rng, g.shape(y), -1.0, 1.0);
    let w = g.input(w);
    let p = g.mul(y, w)?;
    Ok(g.sum(p))
}

fn check(
    seed: u64,
    cfg: &GradCheckConfig,
    inputs: Vec<Tensor<f64>>,
    f: impl Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
) -> Result<GradCheckReport> {
    grad_check_many(
        |g, v| {
            let y = f(g, v)?;
            project(g, y, seed)
        },
        &inputs,
        cfg,
    )
}

macro_rules! case {
    ($name:literal, |$seed:ident, $cfg:ident| $body:expr) => {
        GradCase {
            name: $name,
            run: |$seed, $cfg| $body,
        }
    };
}

fn binary_case(
    seed: u64,
    cfg: &GradCheckConfig,
    b_shape: &[usize],
    op: fn(&mut Graph<f64>, Var, Var) -> Result<Var>,
    positive_b: bool,
) -> Result<GradCheckReport> {
    let mut rng = rng_for(seed);
    let a = uniform(&mut rng, &[2, 3, 2], -1.0, 1.0);
    let b = if positive_b {
        uniform(&mut rng, b_shape, 0.5, 1.5)
    } else {
        uniform(&mut rng, b_shape, -1.0, 1.0)
    };
    check(seed, cfg, vec![a, b], |g, v| op(g, v[0], v[1]))
}

/// Finite differences are unreliable within a few steps of a hinge, so
/// kinked cases draw inputs until every hinge argument keeps this distance.
const HINGE_CLEARANCE: f64 = 0.05;

fn bn_clear_of_hinge(x: &[f64], gamma: &[f64], beta: &[f64], c: usize) -> bool {
    let rows = x.len() / c;
    (0..c).all(|j| {
        let col: Vec<f64> = (0..rows).map(|r| x[r * c + j]).collect();
        let mean = col.iter().sum::<f64>() / rows as f64;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / rows as f64;
        col.iter()
            .all(|v| (gamma[j] * (v - mean) / (var + 1e-5).sqrt() + beta[j]).abs() >= HINGE_CLEARANCE)
    })
}

/// Local-std reverse normalization takes `sqrt(|x_s - mean|)`; keep the
/// centers away from the mean they are compared with.
fn rpn_clear_of_hinge(x_s: &[f64], x_g: &[f64], mode: StatsMode, (b, m, k, d): (usize, usize, usize, usize)) -> bool {
    if mode.std == Scope::Global {
        return true;
    }
    let per = m * k * d;
    (0..b * m * d).all(|i| {
        let (bi, rest) = (i / (m * d), i % (m * d));
        let (mi, di) = (rest / d, rest % d);
        let mean = match mode.mean {
            Scope::Local => (0..k).map(|ki| x_g[bi * per + (mi * k + ki) * d + di]).sum::<f64>() / k as f64,
            Scope::Global => x_g[bi * per..(bi + 1) * per].iter().sum::<f64>() / per as f64,
        };
        (x_s[i] - mean).abs() >= HINGE_CLEARANCE
    })
}

fn bn_case(seed: u64, cfg: &GradCheckConfig, train: bool, relu: bool) -> Result<GradCheckReport> {
    let mut rng = rng_for(seed);
    let (mut x, mut gamma, mut beta);
    loop {
        x = uniform(&mut rng, &[2, 3, 3], -1.5, 1.5);
        gamma = uniform(&mut rng, &[3], 0.5, 1.5);
        beta = uniform(&mut rng, &[3], -0.5, 0.5);
        if !relu || !train || bn_clear_of_hinge(x.data(), gamma.data(), beta.data(), 3) {
            break;
        }
    }
    let mean: Vec<f64> = (0..3).map(|_| rng.random_range(-0.3..0.3)).collect();
    let var: Vec<f64> = (0..3).map(|_| rng.random_range(0.5..1.5)).collect();
    check(seed, cfg, vec![x, gamma, beta], |g, v| {
        let mode = if train {
            BnMode::Train { eps: 1e-5 }
        } else {
            BnMode::Eval {
                running_mean: &mean,
                running_var: &var,
                eps: 1e-5,
            }
        };
        Ok(g.batch_norm(v[0], v[1], v[2], mode, relu)?.0)
    })
}

/// One case per differentiable op, plus the broadcasting and mode variants
/// that take separate backward paths.
pub fn op_cases() -> Vec<GradCase> {
    vec![
        case!("add", |s, c| binary_case(s, c, &[2, 3, 2], Graph::add, false)),
        case!("add_broadcast", |s, c| binary_case(s, c, &[1, 3, 1], Graph::add, false)),
        case!("sub", |s, c| binary_case(s, c, &[2, 3, 2], Graph::sub, false)),
        case!("sub_broadcast", |s, c| binary_case(s, c, &[2, 1, 2], Graph::sub, false)),
        case!("mul", |s, c| binary_case(s, c, &[2, 3, 2], Graph::mul, false)),
        case!("mul_broadcast", |s, c| binary_case(s, c, &[1, 1, 2], Graph::mul, false)),
        case!("div", |s, c| binary_case(s, c, &[2, 3, 2], Graph::div, true)),
        case!("div_broadcast", |s, c| binary_case(s, c, &[2, 3, 1], Graph::div, true)),
        case!("add_scalar", |s, c| {
            let x = uniform(&mut rng_for(s), &[3, 2], -1.0, 1.0);
            check(s, c, vec![x], |g, v| Ok(g.add_scalar(v[0], 0.7)))
        }),
        case!("mul_scalar", |s, c| {
            let x = uniform(&mut rng_for(s), &[3, 2], -1.0, 1.0);
            check(s, c, vec![x], |g, v| Ok(g.mul_scalar(v[0], -1.3)))
        }),
        case!("sqrt", |s, c| {
            let x = uniform(&mut rng_for(s), &[3, 2], 0.3, 2.0);
            check(s, c, vec![x], |g, v| Ok(g.sqrt(v[0])))
        }),
        case!("abs", |s, c| {
            let x = signed(&mut rng_for(s), &[3, 2], 0.1, 1.0);
            check(s, c, vec![x], |g, v| Ok(g.abs(v[0])))
        }),
        case!("relu", |s, c| {
            let x = signed(&mut rng_for(s), &[3, 2], 0.1, 1.0);
            check(s, c, vec![x], |g, v| Ok(g.relu(v[0])))
        }),
        case!("fully_connected", |s, c| {
            let mut rng = rng_for(s);
            let x = uniform(&mut rng, &[2, 3, 4], -1.0, 1.0);
            let w = uniform(&mut rng, &[4, 3], -1.0, 1.0);
            let b = uniform(&mut rng, &[3], -1.0, 1.0);
            check(s, c, vec![x, w, b], |g, v| g.fully_connected(v[0], v[1], Some(v[2])))
        }),
        case!("fully_connected_no_bias", |s, c| {
            let mut rng = rng_for(s);
            let x = uniform(&mut rng, &[5, 3], -1.0, 1.0);
            let w = uniform(&mut rng, &[3, 2], -1.0, 1.0);
            check(s, c, vec![x, w], |g, v| g.fully_connected(v[0], v[1], None))
        }),
        case!("max_pool_axis", |s, c| {
            let x = uniform(&mut rng_for(s), &[2, 4, 3], -1.0, 1.0);
            check(s, c, vec![x], |g, v| g.max_pool_axis(v[0], 1))
        }),
        case!("reduce_mean", |s, c| {
            let x = uniform(&mut rng_for(s), &[2, 3, 2], -1.0, 1.0);
            check(s, c, vec![x], |g, v| g.reduce_mean(v[0], &[0, 2]))
        }),
        case!("rms", |s, c| {
            let x = uniform(&mut rng_for(s), &[2, 3, 2], -1.0, 1.0);
            check(s, c, vec![x], |g, v| g.rms(v[0], &[1]))
        }),
        case!("reduce_mean_std", |s, c| {
            let x = uniform(&mut rng_for(s), &[2, 3, 4], -1.0, 1.0);
            check(s, c, vec![x], |g, v| {
                let (m, sd) = g.reduce_mean_std(v[0], &[1, 2])?;
                let m2 = g.mul_scalar(m, 0.5);
                g.add(m2, sd)
            })
        }),
        case!("sum", |s, c| {
            let x = uniform(&mut rng_for(s), &[2, 3], -1.0, 1.0);
            check(s, c, vec![x], |g, v| {
                let sq = g.mul(v[0], v[0])?;
                Ok(g.sum(sq))
            })
        }),
        case!("concat", |s, c| {
            let mut rng = rng_for(s);
            let a = uniform(&mut rng, &[2, 2, 3], -1.0, 1.0);
            let b = uniform(&mut rng, &[2, 2, 1], -1.0, 1.0);
            check(s, c, vec![a, b], |g, v| g.concat(&[v[0], v[1]], 2))
        }),
        case!("expand", |s, c| {
            let x = uniform(&mut rng_for(s), &[2, 1, 3], -1.0, 1.0);
            check(s, c, vec![x], |g, v| g.expand(v[0], 1, 4))
        }),
        case!("gather_rows", |s, c| {
            let mut rng = rng_for(s);
            let x = uniform(&mut rng, &[2, 5, 3], -1.0, 1.0);
            let index: Vec<usize> = (0..2 * 6).map(|_| rng.random_range(0..5)).collect();
            check(s, c, vec![x], move |g, v| g.gather_rows(v[0], &index))
        }),
        case!("reshape", |s, c| {
            let x = uniform(&mut rng_for(s), &[2, 6], -1.0, 1.0);
            check(s, c, vec![x], |g, v| g.reshape(v[0], &[3, 2, 2]))
        }),
        case!("batch_norm_train", |s, c| bn_case(s, c, true, false)),
        case!("batch_norm_train_relu", |s, c| bn_case(s, c, true, true)),
        case!("batch_norm_eval", |s, c| bn_case(s, c, false, false)),
        case!("channel_affine", |s, c| {
            let mut rng = rng_for(s);
            let x = uniform(&mut rng, &[2, 3, 4], -1.0, 1.0);
            let a = uniform(&mut rng, &[4], -1.5, 1.5);
            let b = uniform(&mut rng, &[4], -1.0, 1.0);
            check(s, c, vec![x, a, b], |g, v| g.channel_affine(v[0], v[1], v[2]))
        }),
        case!("dropout", |s, c| {
            let mut rng = rng_for(s);
            let x = uniform(&mut rng, &[3, 4], -1.0, 1.0);
            let mask: Vec<f64> = (0..12).map(|_| if rng.random_bool(0.5) { 2.0 } else { 0.0 }).collect();
            check(s, c, vec![x], move |g, v| g.dropout(v[0], mask.clone()))
        }),
        case!("label_smoothed_ce", |s, c| {
            let mut rng = rng_for(s);
            let logits = uniform(&mut rng, &[3, 4], -2.0, 2.0);
            let labels: Vec<usize> = (0..3).map(|_| rng.random_range(0..4)).collect();
            // scalar output: the projection is a plain rescaling
            check(s, c, vec![logits], move |g, v| g.label_smoothed_ce(v[0], &labels, 0.2))
        }),
    ]
}

/// Distinct op kinds covered by [`op_cases`].
pub const REGISTERED_OPS: usize = 23;

/// `(name, mode, flags)` for every statistics mode with both halves, PN
/// alone and RPN alone.
pub fn dualnorm_variants() -> Vec<(String, StatsMode, DualNormFlags)> {
    let mut out = Vec::new();
    for mode in StatsMode::ALL {
        for (tag, pn, rpn) in [("dual", true, true), ("pn", true, false), ("rpn", false, true)] {
            out.push((
                format!("dualnorm_{}_{tag}", mode.name()),
                mode,
                DualNormFlags {
                    point_norm: pn,
                    reverse_point_norm: rpn,
                },
            ));
        }
    }
    out
}

/// End-to-end check of DualNorm with respect to `x_s`, `x_g` and all four
/// affine tensors.
pub fn dualnorm_check(
    seed: u64,
    mode: StatsMode,
    flags: DualNormFlags,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport> {
    let mut rng = rng_for(seed);
    let (b, m, k, d) = (2, 3, 4, 2);
    let (mut x_s, mut x_g);
    loop {
        x_s = uniform(&mut rng, &[b, m, 1, d], -1.0, 1.0);
        x_g = uniform(&mut rng, &[b, m, k, d], -1.0, 1.0);
        if !flags.reverse_point_norm || rpn_clear_of_hinge(x_s.data(), x_g.data(), mode, (b, m, k, d)) {
            break;
        }
    }
    let affine: Vec<Tensor<f64>> = (0..4)
        .map(|i| {
            if i % 2 == 0 {
                uniform(&mut rng, &[d], 0.5, 1.5)
            } else {
                uniform(&mut rng, &[d], -0.5, 0.5)
            }
        })
        .collect();
    let mut inputs = vec![x_s, x_g];
    inputs.extend(affine);
    check(seed, cfg, inputs, move |g, v| {
        let pn = AffineVars {
            alpha: v[2],
            beta: v[3],
            eps: DEFAULT_EPS,
        };
        let rpn = AffineVars {
            alpha: v[4],
            beta: v[5],
            eps: DEFAULT_EPS,
        };
        Ok(dualnorm_apply(g, v[0], v[1], &pn, &rpn, mode, flags)?.features)
    })
}

/// A one-stage network on two 8-point clouds with two classes.
pub fn micro_config() -> ModelConfig {
    let mut c = ModelConfig::tiny(2, 8);
    c.embed_dim = 4;
    c.stages = vec![StageConfig {
        points_out: 4,
        k: 3,
        channels_in: 4,
        channels_out: 4,
        pre_blocks: 1,
        post_blocks: 1,
    }];
    c.bottleneck_ratio = 0.5;
    c.head_widths = vec![4];
    c.dropout = 0.0;
    c.fps_seed = SeedRule::FarthestFromCentroid;
    c
}

/// Gradient of the training loss of the micro network with respect to
/// every parameter, with batch statistics in the normalizations.
pub fn micro_model_check(seed: u64, cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let net = PointNormNet::<f64>::new(micro_config(), seed)?;
    let mut rng = rng_for(seed ^ 0x6d69_6372);
    let clouds: Vec<Vec<Point>> = (0..2)
        .map(|_| {
            (0..8)
                .map(|_| std::array::from_fn(|_| rng.random_range(-1.0..1.0)))
                .collect()
        })
        .collect();
    let labels = vec![0usize, 1];
    let inputs: Vec<Tensor<f64>> = net.params().iter().map(|p| p.value.clone()).collect();
    grad_check_many(
        |g, vars| {
            let pass = net.forward_with(g, vars, &clouds, Phase::Train { dropout_seed: 0 })?;
            g.label_smoothed_ce(pass.logits, &labels, 0.2)
        },
        &inputs,
        cfg,
    )
}

/// Runs `f` for seeds `0..seeds` and folds the reports.
pub fn over_seeds(name: &str, seeds: u64, f: impl Fn(u64) -> Result<GradCheckReport>) -> Result<CaseOutcome> {
    let mut out = CaseOutcome {
        name: name.to_string(),
        seeds: seeds as usize,
        max_rel_err: 0.0,
        worst_seed: 0,
        checked: 0,
        skipped: 0,
        passed: true,
    };
    for s in 0..seeds {
        let r = f(s)?;
        out.checked += r.checked;
        out.skipped += r.skipped.len();
        out.passed &= r.passed;
        if r.max_rel_err > out.max_rel_err {
            out.max_rel_err = r.max_rel_err;
            out.worst_seed = s;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registered_op_count_matches() {
        let mut kinds: Vec<&str> = op_cases()
            .iter()
            .map(|c| {
                let n = c.name;
                for suffix in ["_broadcast", "_no_bias", "_train_relu", "_train", "_eval"] {
                    if let Some(stem) = n.strip_suffix(suffix) {
                        return stem;
                    }
                }
                n
            })
            .collect();
        kinds.dedup();
        assert_eq!(kinds.len(), REGISTERED_OPS);
    }

    #[test]
    fn every_case_passes_one_seed() {
        let cfg = GradCheckConfig::default();
        for c in op_cases() {
            let r = (c.run)(0, &cfg).unwrap();
            assert!(r.passed, "{}: {}", c.name, r.max_rel_err);
            assert!(r.checked > 0, "{}", c.name);
        }
    }

    #[test]
    fn dualnorm_lmgs_passes() {
        let r = dualnorm_check(
            1,
            StatsMode::LMGS,
            DualNormFlags::default(),
            &GradCheckConfig::default(),
        )
        .unwrap();
        assert!(r.passed, "{}", r.max_rel_err);
    }
}
