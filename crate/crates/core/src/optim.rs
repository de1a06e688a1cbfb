//! Quasi-Newton maximization with finite-difference derivatives.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BfgsConfig {
    pub max_iter: usize,
    /// Stop when the objective improves by less than this for two iterations in a row.
    pub f_tol: f64,
    /// Stop when every |∂f/∂x_i| falls below this.
    pub g_tol: f64,
    /// Relative finite-difference step.
    pub fd_step: f64,
}

impl Default for BfgsConfig {
    fn default() -> Self {
        BfgsConfig { max_iter: 200, f_tol: 1e-6, g_tol: 1e-4, fd_step: 1e-5 }
    }
}

#[derive(Debug, Clone)]
pub struct BfgsResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub grad: Vec<f64>,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
}

fn step_for(x: f64, rel: f64) -> f64 {
    rel * x.abs().max(1.0)
}

/// Central-difference gradient plus the diagonal second differences that
/// come for free from the same evaluations.
pub fn gradient<F: FnMut(&[f64]) -> f64>(f: &mut F, x: &[f64], fx: f64, rel: f64) -> (Vec<f64>, Vec<f64>) {
    let n = x.len();
    let mut g = vec![0.0; n];
    let mut d2 = vec![0.0; n];
    let mut xp = x.to_vec();
    for i in 0..n {
        let h = step_for(x[i], rel);
        xp[i] = x[i] + h;
        let fp = f(&xp);
        xp[i] = x[i] - h;
        let fm = f(&xp);
        xp[i] = x[i];
        g[i] = (fp - fm) / (2.0 * h);
        d2[i] = (fp - 2.0 * fx + fm) / (h * h);
    }
    (g, d2)
}

/// Finite-difference Hessian.
pub fn hessian<F: FnMut(&[f64]) -> f64>(f: &mut F, x: &[f64], rel: f64) -> DMatrix<f64> {
    let n = x.len();
    let f0 = f(x);
    let hs: Vec<f64> = x.iter().map(|v| step_for(*v, rel)).collect();
    let mut out = DMatrix::zeros(n, n);
    let mut xp = x.to_vec();
    for i in 0..n {
        xp[i] = x[i] + hs[i];
        let fp = f(&xp);
        xp[i] = x[i] - hs[i];
        let fm = f(&xp);
        xp[i] = x[i];
        out[(i, i)] = (fp - 2.0 * f0 + fm) / (hs[i] * hs[i]);
    }
    for i in 0..n {
        for j in 0..i {
            let mut e = |si: f64, sj: f64| {
                xp[i] = x[i] + si * hs[i];
                xp[j] = x[j] + sj * hs[j];
                let v = f(&xp);
                xp[i] = x[i];
                xp[j] = x[j];
                v
            };
            let v = (e(1.0, 1.0) - e(1.0, -1.0) - e(-1.0, 1.0) + e(-1.0, -1.0)) / (4.0 * hs[i] * hs[j]);
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    out
}

/// Maximizes `f`. Non-finite values are treated as infeasible and the line
/// search backs off from them.
pub fn maximize<F: FnMut(&[f64]) -> f64>(mut f: F, x0: &[f64], cfg: &BfgsConfig) -> BfgsResult {
    let n = x0.len();
    let mut evals = 0usize;
    let mut obj = |x: &[f64]| {
        evals += 1;
        let v = f(x);
        if v.is_finite() {
            -v
        } else {
            f64::INFINITY
        }
    };
    let mut x = DVector::from_column_slice(x0);
    let mut fx = obj(x.as_slice());
    let (g0, d2) = gradient(&mut obj, x.as_slice(), fx, cfg.fd_step);
    let mut g = DVector::from_vec(g0);
    let diag_h = |d2: &[f64]| {
        DMatrix::from_diagonal(&DVector::from_iterator(
            n,
            d2.iter().map(|v| if v.is_finite() && *v > 1e-8 { 1.0 / v } else { 1.0 }),
        ))
    };
    let mut h_inv = diag_h(&d2);
    let mut converged = false;
    let mut small = 0;
    let mut iter = 0;
    while iter < cfg.max_iter {
        iter += 1;
        if g.amax() < cfg.g_tol {
            converged = true;
            break;
        }
        let mut p = -(&h_inv * &g);
        let mut slope = g.dot(&p);
        if !(slope < 0.0) {
            h_inv = DMatrix::identity(n, n);
            p = -&g;
            slope = g.dot(&p);
        }
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let xn = &x + &p * t;
            let fnew = obj(xn.as_slice());
            if fnew.is_finite() && fnew <= fx + 1e-4 * t * slope {
                accepted = Some((xn, fnew));
                break;
            }
            // quadratic backtrack when the value is usable
            let tn = if fnew.is_finite() {
                let denom = 2.0 * (fnew - fx - slope * t);
                if denom > 0.0 {
                    (-slope * t * t / denom).clamp(0.1 * t, 0.5 * t)
                } else {
                    0.5 * t
                }
            } else {
                0.25 * t
            };
            t = tn;
        }
        let Some((xn, fnew)) = accepted else {
            log::debug!("line search failed at iteration {iter}");
            break;
        };
        let (gn, d2) = gradient(&mut obj, xn.as_slice(), fnew, cfg.fd_step);
        let gn = DVector::from_vec(gn);
        let s = &xn - &x;
        let y = &gn - &g;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            let rho = 1.0 / sy;
            let i = DMatrix::<f64>::identity(n, n);
            let a = &i - &s * y.transpose() * rho;
            let b = &i - &y * s.transpose() * rho;
            h_inv = &a * &h_inv * &b + &s * s.transpose() * rho;
        } else {
            h_inv = diag_h(&d2);
        }
        let df = fx - fnew;
        x = xn;
        fx = fnew;
        g = gn;
        log::debug!("bfgs iter {iter}: f = {:.8}, |g| = {:.3e}", -fx, g.amax());
        if df < cfg.f_tol {
            small += 1;
            if small >= 2 {
                converged = true;
                break;
            }
        } else {
            small = 0;
        }
    }
    BfgsResult {
        x: x.iter().copied().collect(),
        f: -fx,
        grad: g.iter().map(|v| -v).collect(),
        iterations: iter,
        evaluations: evals,
        converged,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rosenbrock() {
        let f = |x: &[f64]| -((1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2));
        let r = maximize(f, &[-1.2, 1.0], &BfgsConfig { max_iter: 500, f_tol: 1e-14, g_tol: 1e-7, fd_step: 1e-6 });
        assert!(r.converged);
        assert!((r.x[0] - 1.0).abs() < 1e-4 && (r.x[1] - 1.0).abs() < 1e-4, "{:?}", r.x);
    }

    #[test]
    fn quadratic_hessian() {
        let mut f = |x: &[f64]| -(2.0 * x[0] * x[0] + x[0] * x[1] + 3.0 * x[1] * x[1]);
        let h = hessian(&mut f, &[0.3, -0.2], 1e-4);
        assert!((h[(0, 0)] + 4.0).abs() < 1e-6);
        assert!((h[(0, 1)] + 1.0).abs() < 1e-6);
        assert!((h[(1, 1)] + 6.0).abs() < 1e-6);
    }

    #[test]
    fn infeasible_region_is_avoided() {
        // maximum of ln x − x at x = 1, undefined for x ≤ 0
        let f = |x: &[f64]| if x[0] > 0.0 { x[0].ln() - x[0] } else { f64::NAN };
        let r = maximize(f, &[5.0], &BfgsConfig::default());
        assert!((r.x[0] - 1.0).abs() < 1e-3);
    }
}
