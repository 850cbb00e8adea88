//! Damped least squares with a central-difference Jacobian.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::par::{self, Execution};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LmOptions {
    pub max_iters: usize,
    /// Relative merit improvement over `window` iterations below which the
    /// run is considered converged.
    pub tol: f64,
    pub window: usize,
    pub initial_damping: f64,
    #[serde(skip)]
    pub exec: Execution,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self {
            max_iters: 500,
            tol: 1e-6,
            window: 5,
            initial_damping: 1e-3,
            exec: Execution::Parallel,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub merit: f64,
    pub damping: f64,
    pub max_violation: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmResult {
    pub x: Vec<f64>,
    pub merit: f64,
    pub iterations: usize,
    pub converged: bool,
    pub log: Vec<IterationRecord>,
}

pub fn sum_squares(r: &[f64]) -> f64 {
    r.iter().map(|v| v * v).sum()
}

/// Central-difference Jacobian; column `j` uses step `steps[j]`.
pub fn jacobian<F>(f: &F, x: &[f64], steps: &[f64], exec: Execution) -> DMatrix<f64>
where
    F: Fn(&[f64]) -> Vec<f64> + Sync,
{
    let cols = par::map_range(exec, x.len(), |j| {
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[j] += steps[j];
        xm[j] -= steps[j];
        let (rp, rm) = (f(&xp), f(&xm));
        rp.iter().zip(&rm).map(|(a, b)| (a - b) / (2.0 * steps[j])).collect::<Vec<_>>()
    });
    let m = cols.first().map_or(0, |c| c.len());
    DMatrix::from_fn(m, x.len(), |i, j| cols[j][i])
}

/// Minimizes `Σ f(x)²`. Accepted steps never increase the merit.
pub fn minimize<F, V>(f: &F, x0: &[f64], steps: &[f64], violation: &V, opts: &LmOptions) -> LmResult
where
    F: Fn(&[f64]) -> Vec<f64> + Sync,
    V: Fn(&[f64]) -> f64,
{
    let mut x = x0.to_vec();
    let mut r = f(&x);
    let mut merit = sum_squares(&r);
    let mut lambda = opts.initial_damping;
    let mut log = vec![IterationRecord {
        iteration: 0,
        merit,
        damping: lambda,
        max_violation: violation(&x),
    }];
    let mut history = vec![merit];
    if x.is_empty() {
        return LmResult {
            x,
            merit,
            iterations: 0,
            converged: true,
            log,
        };
    }

    for it in 1..=opts.max_iters {
        let j = jacobian(f, &x, steps, opts.exec);
        let jt = j.transpose();
        let jtj = &jt * &j;
        let g = &jt * DVector::from_column_slice(&r);
        let mut improved = false;
        for _ in 0..12 {
            let mut a = jtj.clone();
            for k in 0..x.len() {
                let d = jtj[(k, k)].max(1e-12);
                a[(k, k)] += lambda * d;
            }
            let Some(delta) = a.cholesky().map(|c| c.solve(&(-&g))) else {
                lambda *= 10.0;
                continue;
            };
            let trial: Vec<f64> = x.iter().zip(delta.iter()).map(|(a, b)| a + b).collect();
            let rt = f(&trial);
            let mt = sum_squares(&rt);
            if mt.is_finite() && mt < merit {
                x = trial;
                r = rt;
                merit = mt;
                lambda = (lambda / 3.0).max(1e-12);
                improved = true;
                break;
            }
            lambda *= 4.0;
        }
        log.push(IterationRecord {
            iteration: it,
            merit,
            damping: lambda,
            max_violation: violation(&x),
        });
        history.push(merit);
        if !improved || merit <= f64::MIN_POSITIVE {
            return LmResult {
                x,
                merit,
                iterations: it,
                converged: true,
                log,
            };
        }
        if history.len() > opts.window {
            let old = history[history.len() - 1 - opts.window];
            if (old - merit) <= opts.tol * old {
                return LmResult {
                    x,
                    merit,
                    iterations: it,
                    converged: true,
                    log,
                };
            }
        }
    }
    LmResult {
        x,
        merit,
        iterations: opts.max_iters,
        converged: false,
        log,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn rosenbrock_minimum() {
        let f = |x: &[f64]| vec![10.0 * (x[1] - x[0] * x[0]), 1.0 - x[0]];
        let res = minimize(&f, &[-1.2, 1.0], &[1e-6, 1e-6], &|_: &[f64]| 0.0, &LmOptions {
            tol: 1e-12,
            ..Default::default()
        });
        assert!(res.converged);
        assert_abs_diff_eq!(res.x[0], 1.0, epsilon = 1e-5);
        assert_abs_diff_eq!(res.x[1], 1.0, epsilon = 1e-5);
    }

    #[test]
    fn accepted_merits_never_increase() {
        let f = |x: &[f64]| vec![x[0].sin() + 0.3 * x[1], (x[0] * x[1]).cos() - 0.2, x[1] - 2.0];
        let res = minimize(&f, &[2.0, -1.0], &[1e-6; 2], &|_: &[f64]| 0.0, &LmOptions::default());
        assert!(res.log.windows(2).all(|w| w[1].merit <= w[0].merit));
    }

    #[test]
    fn curve_fit_exponential() {
        let ts: Vec<f64> = (0..20).map(|i| i as f64 * 0.25).collect();
        let ys: Vec<f64> = ts.iter().map(|t| 2.5 * (-0.7 * t).exp()).collect();
        let f = |p: &[f64]| ts.iter().zip(&ys).map(|(t, y)| p[0] * (-p[1] * t).exp() - y).collect::<Vec<_>>();
        let res = minimize(&f, &[1.0, 0.1], &[1e-7; 2], &|_: &[f64]| 0.0, &LmOptions::default());
        assert_abs_diff_eq!(res.x[0], 2.5, epsilon = 1e-6);
        assert_abs_diff_eq!(res.x[1], 0.7, epsilon = 1e-6);
    }

    #[test]
    fn iteration_cap_reports_not_converged() {
        let f = |x: &[f64]| vec![10.0 * (x[1] - x[0] * x[0]), 1.0 - x[0]];
        let res = minimize(&f, &[-1.2, 1.0], &[1e-6; 2], &|_: &[f64]| 0.0, &LmOptions {
            max_iters: 2,
            tol: 0.0,
            ..Default::default()
        });
        assert!(!res.converged);
        assert_eq!(res.iterations, 2);
    }

    #[test]
    fn jacobian_matches_analytic() {
        let f = |x: &[f64]| vec![x[0] * x[0] * x[1], x[1].exp()];
        let j = jacobian(&f, &[1.5, 0.3], &[1e-5; 2], Execution::Sequential);
        assert_abs_diff_eq!(j[(0, 0)], 2.0 * 1.5 * 0.3, epsilon = 1e-8);
        assert_abs_diff_eq!(j[(0, 1)], 2.25, epsilon = 1e-8);
        assert_abs_diff_eq!(j[(1, 1)], 0.3f64.exp(), epsilon = 1e-8);
    }
}
