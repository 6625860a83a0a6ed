//! Central finite-difference verification of autodiff gradients.
//!
//! For every input coordinate the check evaluates `f(x + h)`, `f(x)` and
//! `f(x - h)`. The numeric derivative is `(f(x+h) - f(x-h)) / 2h`; the error
//! metric is `|auto - numeric| / max(|auto|, |numeric|, floor)`.
//!
//! Coordinates where the one-sided slopes disagree sharply (a kink such as a
//! max tie or a ReLU hinge inside the probe interval) are reported as skipped
//! rather than compared, since the derivative is not defined there.

use super::{Float, Graph, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    pub step: f64,
    pub tol: f64,
    /// Denominator floor of the relative error.
    pub floor: f64,
    /// A coordinate is skipped when `|f(x+h) - 2f(x) + f(x-h)| / h`
    /// exceeds `kink_tol * max(1, |numeric|)`.
    pub kink_tol: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-4,
            tol: 1e-4,
            floor: 1e-3,
            kink_tol: 1e-2,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// `(input, coordinate)` of the worst error.
    pub worst: Option<(usize, usize)>,
    pub checked: usize,
    /// `(input, coordinate)` pairs skipped as non-differentiable.
    pub skipped: Vec<(usize, usize)>,
    pub passed: bool,
}

/// Checks the gradient of a scalar-valued `f` with respect to one input.
pub fn grad_check<F>(f: F, x: &Tensor<f64>, cfg: &GradCheckConfig) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, Var) -> Result<Var>,
{
    grad_check_many(|g, vars| f(g, vars[0]), std::slice::from_ref(x), cfg)
}

/// Checks the gradient of a scalar-valued `f` with respect to every input.
pub fn grad_check_many<F>(f: F, inputs: &[Tensor<f64>], cfg: &GradCheckConfig) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    if cfg.step.is_nan() || cfg.step <= 0.0 {
        return Err(Error::arg(format!("finite-difference step {} must be > 0", cfg.step)));
    }
    let mut graph = Graph::<f64>::new();
    let vars: Vec<Var> = inputs.iter().map(|t| graph.param(t.clone())).collect();
    let loss = f(&mut graph, &vars)?;
    let f0 = scalar_of(&graph, loss)?;
    if !f0.is_finite() {
        return Err(Error::numeric("non-finite value at the unperturbed point"));
    }
    graph.backward(loss)?;
    let auto: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| match graph.grad(v) {
            Some(g) => g.data().to_vec(),
            None => vec![0.0; t.numel()],
        })
        .collect();
    drop(graph);

    let eval = |which: usize, coord: usize, delta: f64| -> Result<f64> {
        let mut g = Graph::<f64>::new();
        let vars: Vec<Var> = inputs
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let mut t = t.clone();
                if i == which {
                    t.data_mut()[coord] += delta;
                }
                g.param(t)
            })
            .collect();
        let out = f(&mut g, &vars)?;
        let v = scalar_of(&g, out)?;
        if !v.is_finite() {
            return Err(Error::numeric(format!(
                "non-finite value probing input {which} coordinate {coord}"
            )));
        }
        Ok(v)
    };

    let h = cfg.step;
    let mut report = GradCheckReport::default();
    for (which, grads) in auto.iter().enumerate() {
        for (coord, &a) in grads.iter().enumerate() {
            let fp = eval(which, coord, h)?;
            let fm = eval(which, coord, -h)?;
            let numeric = (fp - fm) / (2.0 * h);
            let curvature = (fp - 2.0 * f0 + fm).abs() / h;
            if curvature > cfg.kink_tol * numeric.abs().max(1.0) {
                report.skipped.push((which, coord));
                continue;
            }
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(cfg.floor);
            report.checked += 1;
            if err > report.max_rel_err || report.worst.is_none() {
                report.max_rel_err = err;
                report.worst = Some((which, coord));
            }
        }
    }
    report.passed = report.max_rel_err <= cfg.tol;
    Ok(report)
}

fn scalar_of<T: Float>(g: &Graph<T>, v: Var) -> Result<f64> {
    let t = g.value(v);
    if t.numel() != 1 {
        return Err(Error::Contract(format!(
            "gradient check needs a scalar function, got shape {:?}",
            t.shape()
        )));
    }
    Ok(t.item().as_f64())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_sum_is_exact() {
        let x = Tensor::from_f64(&[3], &[0.3, -1.2, 4.0]).unwrap();
        let r = grad_check(|g, v| Ok(g.sum(v)), &x, &GradCheckConfig::default()).unwrap();
        assert!(r.passed);
        assert!(r.max_rel_err < 1e-10, "{}", r.max_rel_err);
        assert!(r.skipped.is_empty());
    }

    #[test]
    fn max_tie_is_skipped() {
        // Two equal entries: the max is not differentiable at the probe point.
        let x = Tensor::from_f64(&[2], &[1.0, 1.0]).unwrap();
        let r = grad_check(|g, v| g.max_pool_axis(v, 0), &x, &GradCheckConfig::default()).unwrap();
        assert_eq!(r.skipped.len(), 2);
        assert_eq!(r.checked, 0);
    }

    #[test]
    fn non_finite_is_a_numeric_error() {
        let x = Tensor::from_f64(&[1], &[0.0]).unwrap();
        let err = grad_check(
            |g, v| {
                let s = g.sqrt(v);
                Ok(g.sum(s))
            },
            &x,
            &GradCheckConfig::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Numeric(_)));
    }

    #[test]
    fn rejects_non_positive_step() {
        let x = Tensor::from_f64(&[1], &[1.0]).unwrap();
        let cfg = GradCheckConfig {
            step: 0.0,
            ..Default::default()
        };
        assert!(grad_check(|g, v| Ok(g.sum(v)), &x, &cfg).is_err());
    }
}
