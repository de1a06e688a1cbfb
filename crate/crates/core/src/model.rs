//! Parameter and state types, the physical GARCH recursion and the
//! physical/risk-neutral parameter maps.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};

/// Variance floor applied during filtering (daily variance units).
pub const H_FLOOR: f64 = 1e-12;

/// Heston-Nandi GARCH parameters under the physical measure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalParams {
    pub omega: f64,
    pub beta: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub lambda: f64,
    /// Daily risk-free rate.
    pub r: f64,
}

/// Variance-risk-ratio dynamics and pricing-error parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub theta: f64,
    pub zeta: f64,
    pub sigma: f64,
    pub sigma_e: f64,
    pub rho: f64,
}

impl PhysicalParams {
    pub fn validate(&self) -> Result<()> {
        let all = [self.omega, self.beta, self.alpha, self.gamma, self.lambda, self.r];
        if all.iter().any(|v| !v.is_finite()) {
            return domain("non-finite physical parameter");
        }
        if self.alpha <= 0.0 {
            return domain(format!("alpha must be positive, got {}", self.alpha));
        }
        if self.omega < 0.0 || self.beta < 0.0 {
            return domain("omega and beta must be non-negative");
        }
        Ok(())
    }

    /// π^P = β + αγ².
    pub fn persistence(&self) -> f64 {
        self.beta + self.alpha * self.gamma * self.gamma
    }

    /// β̃ = β + α(γ+λ)², the risk-neutral persistence used by the VIX formula.
    pub fn beta_tilde(&self) -> f64 {
        let g = self.gamma + self.lambda;
        self.beta + self.alpha * g * g
    }

    /// Exact risk-neutral persistence at a constant η: β + α(γ+λ+½(η−1))².
    pub fn q_persistence(&self, eta: f64) -> f64 {
        let g = self.gamma + self.lambda + 0.5 * (eta - 1.0);
        self.beta + self.alpha * g * g
    }

    /// Unconditional physical variance (ω+α)/(1−β−αγ²).
    pub fn unconditional_variance(&self) -> Result<f64> {
        let p = self.persistence();
        if p >= 1.0 {
            return domain(format!("non-stationary: persistence {p} >= 1"));
        }
        let v = (self.omega + self.alpha) / (1.0 - p);
        if v <= 0.0 {
            return domain("unconditional variance is not positive");
        }
        Ok(v)
    }

    /// Standardized shock z_t = (R_t − r − (λ−½)h_t)/√h_t.
    pub fn shock(&self, ret: f64, h: f64) -> f64 {
        (ret - self.r - (self.lambda - 0.5) * h) / h.sqrt()
    }

    /// h_{t+1} = ω + βh_t + α(z_t − γ√h_t)².
    pub fn next_variance(&self, h: f64, z: f64) -> f64 {
        let u = z - self.gamma * h.sqrt();
        self.omega + self.beta * h + self.alpha * u * u
    }
}

impl KernelParams {
    pub fn validate(&self) -> Result<()> {
        let all = [self.theta, self.zeta, self.sigma, self.sigma_e, self.rho];
        if all.iter().any(|v| !v.is_finite()) {
            return domain("non-finite kernel parameter");
        }
        if self.theta.abs() >= 1.0 {
            return domain(format!("|theta| must be < 1, got {}", self.theta));
        }
        if self.zeta <= 0.0 {
            return domain("zeta must be positive");
        }
        if self.sigma < 0.0 {
            return domain("sigma must be non-negative");
        }
        if self.sigma_e <= 0.0 {
            return domain("sigma_e must be positive");
        }
        if self.rho >= 1.0 {
            return domain("rho must be < 1");
        }
        Ok(())
    }

    /// Checks that Ω_n is positive definite for panels up to `n_max`.
    pub fn validate_panel(&self, n_max: usize) -> Result<()> {
        self.validate()?;
        if n_max > 1 && self.rho <= -1.0 / (n_max as f64 - 1.0) {
            return domain(format!("rho {} not admissible for panels of size {n_max}", self.rho));
        }
        Ok(())
    }

    /// Constant-η kernel (σ = 0, θ irrelevant).
    pub fn constant(eta: f64, sigma_e: f64, rho: f64) -> Self {
        KernelParams { theta: 0.0, zeta: eta, sigma: 0.0, sigma_e, rho }
    }
}

/// Per-day filtered state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterState {
    pub h_next: f64,
    pub eta: f64,
    pub h_star_next: f64,
    pub score: f64,
    pub z: f64,
}

impl FilterState {
    pub fn new(h_next: f64, eta: f64, score: f64, z: f64) -> Result<Self> {
        if !(h_next > 0.0) || !(eta > 0.0) {
            return domain("h_next and eta must be positive");
        }
        Ok(FilterState { h_next, eta, h_star_next: eta * h_next, score, z })
    }
}

/// Risk-neutral GARCH coefficients for one day.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QDayParams {
    pub omega_star: f64,
    pub beta_star: f64,
    pub alpha_star: f64,
    pub gamma_star: f64,
}

/// Pricing-kernel loadings (ξ_t, φ_t).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelCoeffs {
    pub xi: f64,
    pub phi: f64,
}

/// Output of [`filter_physical_variance`]: `h` has one more entry than `z`.
#[derive(Debug, Clone, PartialEq)]
pub struct VariancePath {
    pub h: Vec<f64>,
    pub z: Vec<f64>,
    /// Days on which the variance hit [`H_FLOOR`].
    pub floored: Vec<usize>,
}

pub fn filter_physical_variance(
    params: &PhysicalParams,
    returns: &[f64],
    h_init: f64,
) -> Result<VariancePath> {
    params.validate()?;
    if !(h_init > 0.0) || !h_init.is_finite() {
        return domain(format!("h_init must be positive, got {h_init}"));
    }
    let mut h = Vec::with_capacity(returns.len() + 1);
    let mut z = Vec::with_capacity(returns.len());
    let mut floored = Vec::new();
    h.push(h_init);
    let mut ht = h_init;
    for (day, &ret) in returns.iter().enumerate() {
        if !ret.is_finite() {
            return Err(Error::Filter { day, reason: format!("non-finite return {ret}") });
        }
        let zt = params.shock(ret, ht);
        let mut hn = params.next_variance(ht, zt);
        if !hn.is_finite() {
            return Err(Error::Filter { day, reason: "variance not finite".into() });
        }
        if hn < H_FLOOR {
            floored.push(day);
            hn = H_FLOOR;
        }
        z.push(zt);
        h.push(hn);
        ht = hn;
    }
    Ok(VariancePath { h, z, floored })
}

pub fn q_day_params(params: &PhysicalParams, eta_t: f64, eta_prev: f64) -> Result<QDayParams> {
    if !(eta_t > 0.0) || !(eta_prev > 0.0) {
        return domain(format!("eta must be positive, got ({eta_t}, {eta_prev})"));
    }
    Ok(q_day_params_unchecked(params, eta_t, eta_prev))
}

#[inline]
pub(crate) fn q_day_params_unchecked(p: &PhysicalParams, eta_t: f64, eta_prev: f64) -> QDayParams {
    QDayParams {
        omega_star: p.omega * eta_t,
        beta_star: p.beta * eta_t / eta_prev,
        alpha_star: p.alpha * eta_t * eta_prev,
        gamma_star: (p.gamma + p.lambda - 0.5) / eta_t + 0.5,
    }
}

pub fn kernel_coeffs(params: &PhysicalParams, eta_t: f64) -> Result<KernelCoeffs> {
    if !(params.alpha > 0.0) {
        return domain("alpha must be positive for the eta/xi map");
    }
    if !(eta_t > 0.0) {
        return domain(format!("eta must be positive, got {eta_t}"));
    }
    let xi = (eta_t - 1.0) / (2.0 * params.alpha * eta_t);
    let phi = (eta_t - 1.0) * (params.gamma - 0.5) / eta_t - params.lambda / eta_t;
    Ok(KernelCoeffs { xi, phi })
}

/// Inverse of the ξ map: η = 1/(1 − 2αξ).
pub fn eta_from_xi(params: &PhysicalParams, xi: f64) -> Result<f64> {
    let d = 1.0 - 2.0 * params.alpha * xi;
    if d <= 0.0 {
        return domain("xi too large: implied eta is not positive");
    }
    Ok(1.0 / d)
}

/// −λ(R−r) + ξα(R−r)²/h_t, without the κ₀ + κ₁h_t terms.
pub fn log_kernel_quadratic(params: &PhysicalParams, xi: f64, h_t: f64, excess_return: f64) -> Result<f64> {
    if !(h_t > 0.0) {
        return domain("h_t must be positive");
    }
    let x = excess_return;
    Ok(-params.lambda * x + xi * params.alpha * x * x / h_t)
}

/// Risk-neutral news impact curve.
pub fn news_impact_curve(params: &PhysicalParams, eta_t: f64, eta_prev: f64, h_star_t: f64, z_star: f64) -> f64 {
    let a = params.alpha;
    a * eta_t * eta_prev * z_star * z_star - 2.0 * a * params.gamma * eta_t * h_star_t.sqrt() * z_star
}

/// Maps a physical shock to its risk-neutral counterpart given h_t and the η in force.
pub fn z_star_from_z(params: &PhysicalParams, z: f64, h: f64, eta: f64) -> f64 {
    (z + (params.lambda + 0.5 * eta - 0.5) * h.sqrt()) / eta.sqrt()
}

pub fn z_from_z_star(params: &PhysicalParams, z_star: f64, h: f64, eta: f64) -> f64 {
    eta.sqrt() * z_star - (params.lambda + 0.5 * eta - 0.5) * h.sqrt()
}

/// Physical variance next day given a risk-neutral shock.
pub fn next_variance_q(params: &PhysicalParams, h: f64, eta_prev: f64, z_star: f64) -> f64 {
    params.next_variance(h, z_from_z_star(params, z_star, h, eta_prev))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;

    #[test]
    fn preset_persistence() {
        let p = presets::shng_opt().0;
        assert!((p.persistence() - 0.955).abs() < 5e-4);
        assert!((p.beta_tilde() - 0.962).abs() < 5e-4);
    }

    #[test]
    fn zero_shock_step() {
        let p = presets::shng_opt().0;
        let h1 = 1.2e-4;
        let ret = p.r + (p.lambda - 0.5) * h1;
        let path = filter_physical_variance(&p, &[ret], h1).unwrap();
        assert!(path.z[0].abs() < 1e-12, "{}", path.z[0]);
        let want = p.omega + p.beta * h1 + p.alpha * p.gamma * p.gamma * h1;
        assert!((path.h[1] - want).abs() < 1e-18, "{} {want}", path.h[1]);
    }

    #[test]
    fn degenerate_params_rejected() {
        let p = PhysicalParams { omega: 0.0, beta: 0.0, alpha: 0.0, gamma: 0.0, lambda: 0.0, r: 0.0 };
        assert!(filter_physical_variance(&p, &[0.01], 1e-4).is_err());
    }

    #[test]
    fn non_finite_return_names_day() {
        let p = presets::shng_opt().0;
        match filter_physical_variance(&p, &[0.0, f64::NAN], 1e-4) {
            Err(Error::Filter { day, .. }) => assert_eq!(day, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn q_params_identities() {
        let p = presets::shng_opt().0;
        let q = q_day_params(&p, 1.0, 1.0).unwrap();
        assert_eq!(q.omega_star, p.omega);
        assert_eq!(q.beta_star, p.beta);
        assert_eq!(q.alpha_star, p.alpha);
        assert!((q.gamma_star - (p.gamma + p.lambda)).abs() < 1e-12);

        let eta = 1.094;
        let q = q_day_params(&p, eta, eta).unwrap();
        assert_eq!(q.beta_star, p.beta);
        assert!((q.alpha_star - p.alpha * eta * eta).abs() < 1e-22);
        // exact Q persistence differs from β̃ only through ½(η−1)
        let exact = q.beta_star + q.alpha_star * q.gamma_star * q.gamma_star;
        assert!((exact - p.q_persistence(eta)).abs() < 1e-12);
        assert!((exact - 0.963).abs() < 1e-3);
        assert!(q_day_params(&p, 0.0, 1.0).is_err());
    }

    #[test]
    fn kernel_round_trip() {
        let p = presets::shng_opt().0;
        let k = kernel_coeffs(&p, 1.0).unwrap();
        assert_eq!(k.xi, 0.0);
        assert_eq!(k.phi, -p.lambda);
        let k = kernel_coeffs(&p, 1.094).unwrap();
        assert!((k.xi - 7484.0).abs() / 7484.0 < 1e-3);
        assert!((eta_from_xi(&p, k.xi).unwrap() - 1.094).abs() < 1e-12);
        let big = kernel_coeffs(&p, 1e12).unwrap();
        assert!((big.xi * 2.0 * p.alpha - 1.0).abs() < 1e-9);
        let mut p0 = p;
        p0.alpha = 0.0;
        assert!(kernel_coeffs(&p0, 1.1).is_err());
    }

    #[test]
    fn xi_sign_law() {
        let p = presets::shng_opt().0;
        for &eta in &[0.1, 0.73, 0.999, 1.0, 1.001, 1.69, 5.0] {
            let xi = kernel_coeffs(&p, eta).unwrap().xi;
            assert_eq!(xi.partial_cmp(&0.0), eta.partial_cmp(&1.0));
        }
    }

    #[test]
    fn log_kernel_shape() {
        let p = presets::shng_opt().0;
        let h = 1e-4;
        assert_eq!(log_kernel_quadratic(&p, 0.0, h, 0.0).unwrap(), 0.0);
        let f = |xi: f64, x: f64| log_kernel_quadratic(&p, xi, h, x).unwrap();
        for &xi in &[5000.0, -5000.0] {
            let d2 = f(xi, 0.01) - 2.0 * f(xi, 0.0) + f(xi, -0.01);
            assert_eq!(d2.signum(), xi.signum());
            let x = 0.013;
            assert!(((f(xi, -x) - f(xi, x)) - 2.0 * p.lambda * x).abs() < 1e-14);
        }
    }

    #[test]
    fn news_impact_asymmetry() {
        let p = presets::shng_opt().0;
        let hs = 1.3e-4;
        assert_eq!(news_impact_curve(&p, 1.2, 1.1, hs, 0.0), 0.0);
        for &eta in &[0.73, 1.69] {
            let z = 1.7;
            let lhs = news_impact_curve(&p, eta, eta, hs, -z) - news_impact_curve(&p, eta, eta, hs, z);
            let rhs = 4.0 * p.alpha * p.gamma * eta * hs.sqrt() * z;
            assert!((lhs - rhs).abs() < 1e-15);
        }
        // the left arm is steeper at the high η quantile
        let lo = news_impact_curve(&p, 0.73, 0.73, hs, -2.0);
        let hi = news_impact_curve(&p, 1.69, 1.69, hs, -2.0);
        assert!(hi > lo);
    }

    #[test]
    fn measure_change_moments() {
        // reweight physical normal draws by the pricing kernel; z* must be standard under Q
        let p = presets::shng_opt().0;
        let gh = crate::quadrature::GaussHermite::new(64);
        for &(h, eta) in &[(1e-4, 1.3), (4e-4, 0.73), (2e-5, 1.09)] {
            let xi = kernel_coeffs(&p, eta).unwrap().xi;
            let w = |z: f64| {
                let x = (p.lambda - 0.5) * h + h.sqrt() * z;
                log_kernel_quadratic(&p, xi, h, x).unwrap().exp()
            };
            let norm = gh.expect_normal(w);
            let m1 = gh.expect_normal(|z| w(z) * z_star_from_z(&p, z, h, eta)) / norm;
            let m2 = gh.expect_normal(|z| w(z) * z_star_from_z(&p, z, h, eta).powi(2)) / norm;
            assert!(m1.abs() < 1e-12, "mean {m1}");
            assert!((m2 - 1.0).abs() < 1e-12, "var {m2}");
        }
    }
}
