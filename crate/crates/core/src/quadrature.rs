//! Gauss-Hermite and Gauss-Laguerre rules.
//!
//! Nodes start from the Golub-Welsch eigenvalues and are polished by Newton
//! on the three-term recurrence. Weights come from the recurrence as well,
//! since eigenvector components lose all relative accuracy for the tiny
//! Laguerre weights that the e^x compensation later multiplies back up.

use nalgebra::{DMatrix, SymmetricEigen};
use std::f64::consts::PI;

fn jacobi_eigenvalues(diag: &[f64], off: &[f64]) -> Vec<f64> {
    let n = diag.len();
    let mut m = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        m[(i, i)] = diag[i];
        if i + 1 < n {
            m[(i, i + 1)] = off[i];
            m[(i + 1, i)] = off[i];
        }
    }
    let mut ev: Vec<f64> = SymmetricEigen::new(m).eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
    ev
}

/// Rule for ∫ e^{−x²} f(x) dx over the real line.
#[derive(Debug, Clone)]
pub struct GaussHermite {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussHermite {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "need at least one node");
        let off: Vec<f64> = (1..n).map(|i| (i as f64 / 2.0).sqrt()).collect();
        let guesses = jacobi_eigenvalues(&vec![0.0; n], &off);
        let mut nodes = Vec::with_capacity(n);
        let mut weights = Vec::with_capacity(n);
        for mut x in guesses {
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = hermite_orthonormal(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() <= 1e-15 * x.abs().max(1.0) {
                    let (_, d) = hermite_orthonormal(n, x);
                    dp = d;
                    break;
                }
            }
            nodes.push(x);
            weights.push(2.0 / (dp * dp));
        }
        GaussHermite { nodes, weights }
    }

    /// E[f(Z)] for Z ~ N(0,1), via the √2 change of variables.
    pub fn expect_normal<F: FnMut(f64) -> f64>(&self, mut f: F) -> f64 {
        let mut s = 0.0;
        for (x, w) in self.nodes.iter().zip(&self.weights) {
            s += w * f(std::f64::consts::SQRT_2 * x);
        }
        s / PI.sqrt()
    }

    /// Standard-normal nodes and probability weights, dropping nodes whose
    /// probability mass is below `tol`.
    pub fn normal_rule(&self, tol: f64) -> (Vec<f64>, Vec<f64>) {
        let mut z = Vec::new();
        let mut p = Vec::new();
        for (x, w) in self.nodes.iter().zip(&self.weights) {
            let q = w / PI.sqrt();
            if q >= tol {
                z.push(std::f64::consts::SQRT_2 * x);
                p.push(q);
            }
        }
        (z, p)
    }
}

// Orthonormal Hermite polynomial p_n(x) (weight e^{−x²}) and its derivative.
fn hermite_orthonormal(n: usize, x: f64) -> (f64, f64) {
    let mut p1 = PI.powf(-0.25);
    let mut p2 = 0.0;
    for j in 0..n {
        let p3 = p2;
        p2 = p1;
        let jf = j as f64;
        p1 = x * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
    }
    (p1, (2.0 * n as f64).sqrt() * p2)
}

/// Rule for ∫_0^∞ e^{−x} f(x) dx, with compensated weights w·e^{x} for
/// integrating functions that do not carry the exponential weight.
#[derive(Debug, Clone)]
pub struct GaussLaguerre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    pub compensated: Vec<f64>,
}

impl GaussLaguerre {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "need at least one node");
        let diag: Vec<f64> = (0..n).map(|i| 2.0 * i as f64 + 1.0).collect();
        let off: Vec<f64> = (1..n).map(|i| i as f64).collect();
        let guesses = jacobi_eigenvalues(&diag, &off);
        let mut nodes = Vec::with_capacity(n);
        let mut weights = Vec::with_capacity(n);
        let mut compensated = Vec::with_capacity(n);
        for mut x in guesses {
            for _ in 0..100 {
                let (l, d) = laguerre(n, x);
                let dx = l / d;
                x -= dx;
                if dx.abs() <= 1e-15 * x.abs().max(1.0) {
                    break;
                }
            }
            let (_, d) = laguerre(n, x);
            // w = 1/(x L_n'(x)²), in logs to keep the compensated weight accurate
            let lw = -x.ln() - 2.0 * d.abs().ln();
            nodes.push(x);
            weights.push(lw.exp());
            compensated.push((lw + x).exp());
        }
        GaussLaguerre { nodes, weights, compensated }
    }

    /// ∫_0^∞ f(x) dx ≈ Σ w_i e^{x_i} f(x_i).
    pub fn integrate<F: FnMut(f64) -> f64>(&self, mut f: F) -> f64 {
        self.nodes.iter().zip(&self.compensated).map(|(x, w)| w * f(*x)).sum()
    }
}

// L_n(x) and L_n'(x) from the three-term recurrence.
fn laguerre(n: usize, x: f64) -> (f64, f64) {
    let mut l0 = 1.0;
    let mut l1 = 1.0 - x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 1..n {
        let kf = k as f64;
        let l2 = ((2.0 * kf + 1.0 - x) * l1 - kf * l0) / (kf + 1.0);
        l0 = l1;
        l1 = l2;
    }
    let nf = n as f64;
    (l1, nf * (l1 - l0) / x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hermite_moments() {
        for &n in &[1usize, 2, 8, 32, 64] {
            let gh = GaussHermite::new(n);
            let s0: f64 = gh.weights.iter().sum();
            assert!((s0 - PI.sqrt()).abs() < 1e-13, "n={n}");
            if n >= 2 {
                assert!((gh.expect_normal(|z| z * z) - 1.0).abs() < 1e-13);
                assert!(gh.expect_normal(|z| z).abs() < 1e-13);
            }
            if n >= 4 {
                assert!((gh.expect_normal(|z| z.powi(4)) - 3.0).abs() < 1e-12);
            }
        }
        let gh = GaussHermite::new(32);
        assert!((gh.expect_normal(|z| z.powi(8)) - 105.0).abs() < 1e-10);
        assert!((gh.expect_normal(|z| (0.3 * z).exp()) - (0.045f64).exp()).abs() < 1e-14);
    }

    #[test]
    fn laguerre_moments() {
        for &n in &[2usize, 8, 32, 64] {
            let gl = GaussLaguerre::new(n);
            let s0: f64 = gl.weights.iter().sum();
            assert!((s0 - 1.0).abs() < 1e-13, "n={n}");
            let mut fact = 1.0;
            for k in 1..(2 * n).min(12) {
                fact *= k as f64;
                let m: f64 = gl.nodes.iter().zip(&gl.weights).map(|(x, w)| w * x.powi(k as i32)).sum();
                assert!((m / fact - 1.0).abs() < 1e-11, "n={n} k={k}");
            }
        }
    }

    #[test]
    fn laguerre_compensated_integral() {
        let gl = GaussLaguerre::new(32);
        // ∫ 1/(1+x)² = 1 and ∫ e^{-x/2} = 2
        assert!((gl.integrate(|x| (-0.5 * x).exp()) - 2.0).abs() < 1e-12);
        assert!((gl.integrate(|x| (-x * x).exp()) - PI.sqrt() / 2.0).abs() < 1e-6);
        assert!(gl.compensated.iter().all(|w| w.is_finite() && *w > 0.0));
    }

    #[test]
    fn pruned_normal_rule() {
        let gh = GaussHermite::new(32);
        let (z, p) = gh.normal_rule(1e-18);
        assert!(z.len() < 32);
        let s: f64 = p.iter().sum();
        assert!((s - 1.0).abs() < 1e-15);
    }
}
