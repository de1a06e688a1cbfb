//! Score-driven dynamics of η: price sensitivities, Fisher scaling under Q,
//! the scaled score and the AR(1) update. Also the equicorrelation algebra
//! shared with the likelihood.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::model::{next_variance_q, z_from_z_star, KernelParams, PhysicalParams};
use crate::pricing::{
    compensated_vol, dpsi_deta, expected_path_derivative, full_expected_path, price_call_stochastic_with,
    EuropeanCall, FourierRule, MaturitySlice, SliceGrid,
};
use crate::quadrature::GaussHermite;
use crate::vix::{annualizer, vix_terms_closed, vix_terms_deta, VixTerms, VIX_DAYS};

/// Lower bound applied to η after each update.
pub const ETA_FLOOR: f64 = 0.05;

// ---- equicorrelation ----

/// Ω_n = (1−ρ)I + ρ ιι′ through its projections onto span(ι) and its complement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Equicorr {
    pub n: usize,
    pub rho: f64,
}

impl Equicorr {
    pub fn new(n: usize, rho: f64) -> Result<Self> {
        if n == 0 {
            return domain("panel size must be positive");
        }
        let e = Equicorr { n, rho };
        if !(e.common_eigen() > 0.0) || (n > 1 && !(1.0 - rho > 0.0)) {
            return domain(format!("rho {rho} does not give a positive definite matrix for n = {n}"));
        }
        Ok(e)
    }

    /// Eigenvalue on span(ι): nρ + 1 − ρ.
    pub fn common_eigen(&self) -> f64 {
        self.n as f64 * self.rho + 1.0 - self.rho
    }

    pub fn log_det(&self) -> f64 {
        let mut v = self.common_eigen().ln();
        if self.n > 1 {
            v += (self.n as f64 - 1.0) * (1.0 - self.rho).ln();
        }
        v
    }

    pub fn det(&self) -> f64 {
        self.common_eigen() * (1.0 - self.rho).powi(self.n as i32 - 1)
    }

    /// x′Ω⁻¹y.
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        let n = self.n as f64;
        let sx: f64 = x.iter().sum();
        let sy: f64 = y.iter().sum();
        let xy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
        let common = sx * sy / n;
        let mut v = common / self.common_eigen();
        if self.n > 1 {
            v += (xy - common) / (1.0 - self.rho);
        }
        v
    }

    pub fn quad_form(&self, x: &[f64]) -> f64 {
        self.bilinear(x, x)
    }

    pub fn dense(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.n, |i, j| if i == j { 1.0 } else { self.rho })
    }

    pub fn dense_inverse(&self) -> DMatrix<f64> {
        let p = DMatrix::from_element(self.n, self.n, 1.0 / self.n as f64);
        let q = DMatrix::identity(self.n, self.n) - &p;
        let mut inv = p / self.common_eigen();
        if self.n > 1 {
            inv += q / (1.0 - self.rho);
        }
        inv
    }
}

/// Orthonormal complement of ι/√n: the n×(n−1) Helmert sub-basis.
pub fn helmert_basis(n: usize) -> DMatrix<f64> {
    let mut h = DMatrix::zeros(n, n.saturating_sub(1));
    for k in 1..n {
        let norm = ((k * (k + 1)) as f64).sqrt();
        for i in 0..k {
            h[(i, k - 1)] = 1.0 / norm;
        }
        h[(k, k - 1)] = -(k as f64) / norm;
    }
    h
}

/// V = ι′e/√n and W = ι⊥′e.
pub fn projection_components(e: &[f64]) -> (f64, Vec<f64>) {
    let n = e.len();
    let v = e.iter().sum::<f64>() / (n as f64).sqrt();
    let h = helmert_basis(n);
    let w = h.transpose() * DVector::from_column_slice(e);
    (v, w.iter().copied().collect())
}

/// D_n with D_n vech(A) = vec(A) for symmetric A (column-major vec/vech).
pub fn duplication_matrix(n: usize) -> DMatrix<f64> {
    let m = n * (n + 1) / 2;
    let mut d = DMatrix::zeros(n * n, m);
    for j in 0..n {
        for i in j..n {
            let col = j * n - j * (j + 1) / 2 + i;
            d[(j * n + i, col)] = 1.0;
            d[(i * n + j, col)] = 1.0;
        }
    }
    d
}

pub fn vech(a: &DMatrix<f64>) -> DVector<f64> {
    let n = a.nrows();
    let mut v = Vec::with_capacity(n * (n + 1) / 2);
    for j in 0..n {
        for i in j..n {
            v.push(a[(i, j)]);
        }
    }
    DVector::from_vec(v)
}

pub fn vec(a: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(a.as_slice())
}

// ---- score ----

/// ∇_t = e′Ω⁻¹g/σ_e².
pub fn score_gradient(errors: &[f64], grads: &[f64], kp: &KernelParams) -> Result<f64> {
    if errors.len() != grads.len() {
        return Err(Error::Dimension { expected: errors.len(), got: grads.len() });
    }
    if errors.is_empty() {
        return Ok(0.0);
    }
    let om = Equicorr::new(errors.len(), kp.rho)?;
    Ok(om.bilinear(errors, grads) / (kp.sigma_e * kp.sigma_e))
}

/// g′Ω⁻¹g/σ_e² for one realisation of the sensitivities.
pub fn information_quadratic(grads: &[f64], kp: &KernelParams) -> Result<f64> {
    if grads.is_empty() {
        return Ok(0.0);
    }
    let om = Equicorr::new(grads.len(), kp.rho)?;
    Ok(om.quad_form(grads) / (kp.sigma_e * kp.sigma_e))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreUpdate {
    pub score: f64,
    pub eta_next: f64,
    pub floored: bool,
}

pub fn scaled_score_and_update(kp: &KernelParams, prev_eta: f64, grad: f64, fisher: f64) -> Result<ScoreUpdate> {
    scaled_score_and_update_floor(kp, prev_eta, grad, fisher, ETA_FLOOR)
}

pub fn scaled_score_and_update_floor(
    kp: &KernelParams,
    prev_eta: f64,
    grad: f64,
    fisher: f64,
    floor: f64,
) -> Result<ScoreUpdate> {
    if !(fisher > 0.0) {
        return domain(format!("Fisher information must be positive, got {fisher}"));
    }
    let s = grad / fisher.sqrt();
    let raw = kp.theta * prev_eta + (1.0 - kp.theta) * kp.zeta + kp.sigma * s;
    let floored = raw < floor;
    Ok(ScoreUpdate { score: s, eta_next: if floored { floor } else { raw }, floored })
}

/// AR(1) step without a score (empty panel days).
pub fn ar1_step(kp: &KernelParams, prev_eta: f64) -> f64 {
    kp.theta * prev_eta + (1.0 - kp.theta) * kp.zeta
}

// ---- instruments and sensitivities ----

/// A derivative observed on a given day.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Instrument {
    /// VIX at horizon `m` trading days, in index points.
    Vix { m: usize },
    /// Call quoted as 100·C/vega with a fixed per-quote vega.
    Call { call: EuropeanCall, vega: f64 },
}

/// Option sensitivity backend.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum SensitivityBackend {
    /// Central differences with one Richardson step.
    #[default]
    FiniteDifference,
    /// Forward-mode derivative of the MGF recursion.
    Analytic,
}

/// ∂(100·C/vega)/∂η_t with h_{t+1} = h*/η_t held fixed.
#[allow(clippy::too_many_arguments)]
pub fn doption_deta(
    pp: &PhysicalParams,
    kp: &KernelParams,
    call: &EuropeanCall,
    vega: f64,
    eta_t: f64,
    h_star_next: f64,
    sigma2: f64,
    backend: SensitivityBackend,
) -> Result<f64> {
    doption_deta_step(pp, kp, call, vega, eta_t, h_star_next, sigma2, backend, 1e-3 * eta_t)
}

/// [`doption_deta`] with an explicit base finite-difference step.
#[allow(clippy::too_many_arguments)]
pub fn doption_deta_step(
    pp: &PhysicalParams,
    kp: &KernelParams,
    call: &EuropeanCall,
    vega: f64,
    eta_t: f64,
    h_star_next: f64,
    sigma2: f64,
    backend: SensitivityBackend,
    step: f64,
) -> Result<f64> {
    if !(vega > 0.0) {
        return domain("vega must be positive");
    }
    if !(eta_t > 0.0) || !(h_star_next > 0.0) {
        return domain("eta and h* must be positive");
    }
    let h_next = h_star_next / eta_t;
    let rule = FourierRule::standard();
    let m = call.maturity_days;
    let base = compensated_vol(pp, kp, eta_t, h_star_next, m, sigma2)?;
    let scale = rule.scale(m, base.h_tilde);
    let dc = match backend {
        SensitivityBackend::FiniteDifference => {
            if !(step > 0.0) || step >= eta_t {
                return Err(Error::Sensitivity(format!("bad step {step}")));
            }
            let f = |e: f64| price_call_stochastic_with(pp, kp, call, e, e * h_next, sigma2, rule, Some(scale));
            let central = |h: f64| -> Result<f64> { Ok((f(eta_t + h)? - f(eta_t - h)?) / (2.0 * h)) };
            let d1 = central(step)?;
            let d2 = central(0.5 * step)?;
            let d = (4.0 * d2 - d1) / 3.0;
            if !d.is_finite() {
                return Err(Error::Sensitivity("non-finite difference quotient".into()));
            }
            d
        }
        SensitivityBackend::Analytic => {
            let mut p = *pp;
            p.r = call.rate;
            let path = full_expected_path(kp, eta_t, m);
            let dpath = expected_path_derivative(kp, m);
            let sl = MaturitySlice::build(&p, &path, Some(&dpath), m, scale, rule)?;
            let dh = h_next + dpsi_deta(pp, kp, eta_t, m, sigma2)?;
            sl.price_and_derivative(call.log_moneyness(), base.h_tilde, dh).1 * call.spot
        }
    };
    Ok(100.0 * dc / vega)
}

/// Day-level pricer: risk-neutral coefficients for the day's instruments are
/// built once for (η_t, parameters) and then evaluated at any h_{t+1}.
pub struct DayPricer<'a> {
    pp: PhysicalParams,
    kp: KernelParams,
    eta_t: f64,
    sigma2: f64,
    instruments: &'a [Instrument],
    vix_terms: Vec<(usize, VixTerms, f64, f64)>,
    slices: Vec<(usize, MaturitySlice, VixTerms, f64, f64)>,
}

impl<'a> DayPricer<'a> {
    /// `h_ref` fixes the Fourier scale for every later evaluation.
    pub fn new(
        pp: &PhysicalParams,
        kp: &KernelParams,
        eta_t: f64,
        h_ref: f64,
        instruments: &'a [Instrument],
        rule: &FourierRule,
        with_derivative: bool,
    ) -> Result<Self> {
        let sigma2 = kp.sigma * kp.sigma;
        let mut vix_terms: Vec<(usize, VixTerms, f64, f64)> = Vec::new();
        let mut slices: Vec<(usize, MaturitySlice, VixTerms, f64, f64)> = Vec::new();
        for ins in instruments {
            match ins {
                Instrument::Vix { m } => {
                    if vix_terms.iter().all(|(mm, ..)| mm != m) {
                        let t = vix_terms_closed(pp, kp, eta_t, *m)?;
                        let (da1, da3) = vix_terms_deta(pp, kp, eta_t, *m, &t);
                        vix_terms.push((*m, t, da1, da3));
                    }
                }
                Instrument::Call { call, .. } => {
                    let m = call.maturity_days;
                    if slices.iter().all(|(mm, ..)| *mm != m) {
                        let t = vix_terms_closed(pp, kp, eta_t, m)?;
                        let psi = t.a2 * sigma2 / t.a3;
                        let (_, da3) = vix_terms_deta(pp, kp, eta_t, m, &t);
                        let dpsi = -t.a2 * sigma2 * da3 / (t.a3 * t.a3);
                        let scale = rule.scale(m, eta_t * h_ref + psi);
                        let mut p = *pp;
                        p.r = call.rate;
                        let path = full_expected_path(kp, eta_t, m);
                        let dpath = with_derivative.then(|| expected_path_derivative(kp, m));
                        let sl = MaturitySlice::build(&p, &path, dpath.as_deref(), m, scale, rule)?;
                        slices.push((m, sl, t, psi, dpsi));
                    }
                }
            }
        }
        Ok(DayPricer { pp: *pp, kp: *kp, eta_t, sigma2, instruments, vix_terms, slices })
    }

    /// Same as [`DayPricer::new`] with option slices interpolated from
    /// per-maturity η grids. Every call maturity needs a grid.
    pub fn from_grids(
        pp: &PhysicalParams,
        kp: &KernelParams,
        eta_t: f64,
        instruments: &'a [Instrument],
        grids: &mut [SliceGrid],
    ) -> Result<Self> {
        let sigma2 = kp.sigma * kp.sigma;
        let mut vix_terms: Vec<(usize, VixTerms, f64, f64)> = Vec::new();
        let mut slices: Vec<(usize, MaturitySlice, VixTerms, f64, f64)> = Vec::new();
        for ins in instruments {
            match ins {
                Instrument::Vix { m } => {
                    if vix_terms.iter().all(|(mm, ..)| mm != m) {
                        let t = vix_terms_closed(pp, kp, eta_t, *m)?;
                        let (da1, da3) = vix_terms_deta(pp, kp, eta_t, *m, &t);
                        vix_terms.push((*m, t, da1, da3));
                    }
                }
                Instrument::Call { call, .. } => {
                    let m = call.maturity_days;
                    if slices.iter().all(|(mm, ..)| *mm != m) {
                        let t = vix_terms_closed(pp, kp, eta_t, m)?;
                        let psi = t.a2 * sigma2 / t.a3;
                        let (_, da3) = vix_terms_deta(pp, kp, eta_t, m, &t);
                        let dpsi = -t.a2 * sigma2 * da3 / (t.a3 * t.a3);
                        let grid = grids
                            .iter_mut()
                            .find(|g| g.m == m)
                            .ok_or_else(|| Error::Pricing(format!("no η grid for maturity {m}")))?;
                        slices.push((m, grid.slice(eta_t)?, t, psi, dpsi));
                    }
                }
            }
        }
        Ok(DayPricer { pp: *pp, kp: *kp, eta_t, sigma2, instruments, vix_terms, slices })
    }

    pub fn instruments(&self) -> &[Instrument] {
        self.instruments
    }

    /// Model prices X^m at h_{t+1}.
    pub fn prices(&self, h_next: f64, out: &mut Vec<f64>) -> Result<()> {
        out.clear();
        let hs = self.eta_t * h_next;
        for ins in self.instruments {
            match ins {
                Instrument::Vix { m } => {
                    let (_, t, ..) = self.vix_terms.iter().find(|(mm, ..)| mm == m).unwrap();
                    let v = t.a1 + t.a2 * self.sigma2 + t.a3 * hs;
                    if !(v > 0.0) {
                        return Err(Error::Pricing(format!("VIX radicand {v} not positive")));
                    }
                    out.push(annualizer() * (v / *m as f64).sqrt());
                }
                Instrument::Call { call, vega } => {
                    let (_, sl, _, psi, _) = self.slices.iter().find(|(mm, ..)| *mm == call.maturity_days).unwrap();
                    let c = sl.price(call.log_moneyness(), hs + psi).call * call.spot;
                    out.push(100.0 * c / vega);
                }
            }
        }
        Ok(())
    }

    /// Model prices and ∂X^m/∂η_t at h_{t+1} (requires `with_derivative`).
    pub fn prices_and_grads(&self, h_next: f64, x: &mut Vec<f64>, g: &mut Vec<f64>) -> Result<()> {
        x.clear();
        g.clear();
        let hs = self.eta_t * h_next;
        for ins in self.instruments {
            match ins {
                Instrument::Vix { m } => {
                    let (_, t, da1, da3) = self.vix_terms.iter().find(|(mm, ..)| mm == m).unwrap();
                    let mf = *m as f64;
                    let v = (t.a1 + t.a2 * self.sigma2 + t.a3 * hs) / mf;
                    if !(v > 0.0) {
                        return Err(Error::Pricing(format!("VIX radicand {v} not positive")));
                    }
                    let dv = (da1 + da3 * hs + t.a3 * h_next) / mf;
                    x.push(annualizer() * v.sqrt());
                    g.push(annualizer() * dv / (2.0 * v.sqrt()));
                }
                Instrument::Call { call, vega } => {
                    let (_, sl, _, psi, dpsi) =
                        self.slices.iter().find(|(mm, ..)| *mm == call.maturity_days).unwrap();
                    let (c, dc) = sl.price_and_derivative(call.log_moneyness(), hs + psi, h_next + dpsi);
                    x.push(100.0 * c * call.spot / vega);
                    g.push(100.0 * dc * call.spot / vega);
                }
            }
        }
        Ok(())
    }

    pub fn eta(&self) -> f64 {
        self.eta_t
    }

    pub fn params(&self) -> (&PhysicalParams, &KernelParams) {
        (&self.pp, &self.kp)
    }
}

/// Conditioning information for the Fisher expectation over the day-t shock.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FisherContext {
    /// Physical variance h_t of the day whose return is integrated out.
    pub h_t: f64,
    /// η_{t−1}, the ratio in force for day t's return.
    pub eta_prev: f64,
}

/// Standard-normal quadrature over the day-t shock.
#[derive(Debug, Clone)]
pub struct ShockRule {
    pub z: Vec<f64>,
    pub p: Vec<f64>,
}

impl ShockRule {
    /// Gauss-Hermite with `n` nodes, dropping nodes of probability below `prune`.
    pub fn new(n: usize, prune: f64) -> Self {
        let (z, p) = GaussHermite::new(n).normal_rule(prune);
        ShockRule { z, p }
    }

    pub fn standard() -> &'static ShockRule {
        static R: std::sync::OnceLock<ShockRule> = std::sync::OnceLock::new();
        R.get_or_init(|| ShockRule::new(32, 1e-14))
    }
}

/// E^Q[g′Ω⁻¹g]/σ_e² with g rebuilt at each quadrature node of z*_t.
pub fn fisher_information(pricer: &DayPricer, ctx: &FisherContext, rule: &ShockRule) -> Result<f64> {
    fisher_under(pricer, ctx, rule, Measure::Q)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Measure {
    P,
    Q,
}

/// Fisher information with the shock integrated under P or Q.
pub fn fisher_under(pricer: &DayPricer, ctx: &FisherContext, rule: &ShockRule, measure: Measure) -> Result<f64> {
    let (pp, kp) = pricer.params();
    let mut x = Vec::new();
    let mut g = Vec::new();
    let mut acc = 0.0;
    let mut any = false;
    for (z, p) in rule.z.iter().zip(&rule.p) {
        let hn = match measure {
            Measure::Q => next_variance_q(pp, ctx.h_t, ctx.eta_prev, *z),
            Measure::P => pp.next_variance(ctx.h_t, *z),
        };
        pricer.prices_and_grads(hn.max(crate::model::H_FLOOR), &mut x, &mut g)?;
        any |= g.iter().any(|v| *v != 0.0);
        acc += p * information_quadratic(&g, kp)?;
    }
    if !any || !(acc > 0.0) {
        return Err(Error::DegenerateInformation);
    }
    Ok(acc)
}

/// Convenience: the day's sensitivity vector at a given h_{t+1}.
pub fn day_grads(pricer: &DayPricer, h_next: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut x = Vec::new();
    let mut g = Vec::new();
    pricer.prices_and_grads(h_next, &mut x, &mut g)?;
    Ok((x, g))
}

/// Q-shock to P-shock helper re-exported for simulation code.
pub fn physical_shock(pp: &PhysicalParams, z_star: f64, h: f64, eta_prev: f64) -> f64 {
    z_from_z_star(pp, z_star, h, eta_prev)
}

/// VIX instrument at the standard 21-day horizon.
pub fn vix_instrument() -> Instrument {
    Instrument::Vix { m: VIX_DAYS }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;
    use crate::pricing::{bs_implied_vol, bs_vega, price_call_stochastic};
    use crate::vix::dvix_deta;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-300)
    }

    #[test]
    fn equicorr_identities() {
        for n in 1..=12 {
            for &rho in &[-0.05, 0.0, 0.148, 0.5] {
                let e = Equicorr::new(n, rho).unwrap();
                let dense = e.dense();
                let det = dense.clone().determinant();
                assert!(rel(e.det(), det) < 1e-10, "n={n} rho={rho}");
                let inv = dense.clone().try_inverse().unwrap();
                assert!((inv - e.dense_inverse()).abs().max() < 1e-12);
            }
        }
    }

    #[test]
    fn helmert_is_orthonormal_complement() {
        for n in 1..=8 {
            let h = helmert_basis(n);
            let hh = h.transpose() * &h;
            assert!((hh - DMatrix::identity(n - 1, n - 1)).abs().max() < 1e-14);
            let ones = DVector::from_element(n, 1.0);
            assert!((h.transpose() * ones).abs().max() < 1e-14);
        }
    }

    #[test]
    fn duplication_property() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for n in 1..=6 {
            let a = DMatrix::from_fn(n, n, |_, _| rng.random::<f64>());
            let s = &a + a.transpose();
            let d = duplication_matrix(n);
            assert_eq!((d * vech(&s) - vec(&s)).abs().max(), 0.0);
        }
    }

    #[test]
    fn gradient_special_cases() {
        let k = presets::shng_opt().1;
        assert_eq!(score_gradient(&[0.0; 4], &[1.0, 2.0, 3.0, 4.0], &k).unwrap(), 0.0);
        let g = score_gradient(&[0.7], &[2.0], &k).unwrap();
        assert!(rel(g, 0.7 * 2.0 / (k.sigma_e * k.sigma_e)) < 1e-15);
        let mut k0 = k;
        k0.rho = 0.0;
        let e = [0.3, -0.2, 1.1, 0.5, -0.7, 0.05];
        let gr = [1.0, 2.0, -0.5, 0.3, 0.9, 1.5];
        let want: f64 = e.iter().zip(&gr).map(|(a, b)| a * b).sum::<f64>() / (k.sigma_e * k.sigma_e);
        assert!(rel(score_gradient(&e, &gr, &k0).unwrap(), want) < 1e-14);
        assert!(score_gradient(&e, &gr[..3], &k).is_err());
        // matches the dense form
        let om = Equicorr::new(6, k.rho).unwrap().dense().try_inverse().unwrap();
        let dense = (DVector::from_row_slice(&e).transpose() * om * DVector::from_row_slice(&gr))[0] / (k.sigma_e * k.sigma_e);
        assert!(rel(score_gradient(&e, &gr, &k).unwrap(), dense) < 1e-12);
    }

    #[test]
    fn update_reverts_without_news() {
        let k = presets::shng_opt().1;
        let u = scaled_score_and_update(&k, 1.69, 0.0, 2.0).unwrap();
        assert_eq!(u.score, 0.0);
        assert!(rel(u.eta_next, k.theta * 1.69 + (1.0 - k.theta) * k.zeta) < 1e-15);
        assert!(scaled_score_and_update(&k, 1.0, 1.0, 0.0).is_err());
        let u = scaled_score_and_update(&k, 0.06, -1e4, 1.0).unwrap();
        assert!(u.floored && u.eta_next == ETA_FLOOR);
    }

    fn atm_call(m: usize) -> (EuropeanCall, f64) {
        let call = EuropeanCall { spot: 100.0, strike: 100.0, maturity_days: m, rate: 1e-4 };
        (call, bs_vega(&call, 0.18))
    }

    #[test]
    fn option_sensitivity_backends_agree() {
        let (p, k) = presets::shng_opt();
        let s2 = k.sigma * k.sigma;
        let hs = 1.1 * 1.3e-4;
        for &m in &[21usize, 63, 126] {
            let (call, vega) = atm_call(m);
            let fd = doption_deta(&p, &k, &call, vega, 1.1, hs, s2, SensitivityBackend::FiniteDifference).unwrap();
            let an = doption_deta(&p, &k, &call, vega, 1.1, hs, s2, SensitivityBackend::Analytic).unwrap();
            assert!(rel(an, fd) < 1e-5, "m={m} {an} {fd}");
            assert!(an > 0.0);
        }
    }

    #[test]
    fn option_sensitivity_fades_in_the_money() {
        let (p, k) = presets::shng_opt();
        let sens = |strike: f64| {
            let call = EuropeanCall { spot: 100.0, strike, maturity_days: 21, rate: 1e-4 };
            doption_deta(&p, &k, &call, 1.0, 1.1, 1.4e-4, 0.0, SensitivityBackend::FiniteDifference).unwrap()
        };
        let (atm, itm) = (sens(100.0), sens(85.0));
        assert!(atm > 0.0 && itm > 0.0);
        assert!(itm < 0.25 * atm, "{itm} vs {atm}");
    }

    #[test]
    fn day_pricer_matches_standalone() {
        let (p, k) = presets::shng_opt();
        let s2 = k.sigma * k.sigma;
        let eta = 1.2;
        let h = 1.25e-4;
        let (c1, v1) = atm_call(42);
        let c2 = EuropeanCall { strike: 92.0, ..c1 };
        let ins = [vix_instrument(), Instrument::Call { call: c1, vega: v1 }, Instrument::Call { call: c2, vega: 30.0 }];
        let dp = DayPricer::new(&p, &k, eta, h, &ins, FourierRule::standard(), true).unwrap();
        let (x, g) = day_grads(&dp, h).unwrap();
        let vix = crate::vix::vix_price(&p, &k, eta, eta * h, 21, s2).unwrap().value;
        assert!(rel(x[0], vix) < 1e-14);
        assert!(rel(g[0], dvix_deta(&p, &k, eta, h, 21, s2).unwrap()) < 1e-12);
        let c = price_call_stochastic(&p, &k, &c2, eta, eta * h, s2).unwrap();
        assert!(rel(x[2], 100.0 * c / 30.0) < 1e-12);
        let fd = doption_deta(&p, &k, &c2, 30.0, eta, eta * h, s2, SensitivityBackend::FiniteDifference).unwrap();
        assert!(rel(g[2], fd) < 1e-5);
        let iv = bs_implied_vol(c, &c2).unwrap();
        assert!(iv > 0.05 && iv < 0.6);
    }

    #[test]
    fn fisher_single_instrument_and_mc() {
        let (p, k) = presets::shng_vix();
        let ins = [vix_instrument()];
        let ctx = FisherContext { h_t: 1.2e-4, eta_prev: 1.25 };
        let eta = 1.3;
        let dp = DayPricer::new(&p, &k, eta, 1.2e-4, &ins, FourierRule::standard(), true).unwrap();
        let f = fisher_information(&dp, &ctx, ShockRule::standard()).unwrap();
        let s2 = k.sigma * k.sigma;
        let quad = GaussHermite::new(64).expect_normal(|z| {
            let hn = next_variance_q(&p, ctx.h_t, ctx.eta_prev, z);
            dvix_deta(&p, &k, eta, hn, 21, s2).unwrap().powi(2)
        }) / (k.sigma_e * k.sigma_e);
        assert!(rel(f, quad) < 1e-10);
        // Monte Carlo of ∇² including the pricing error
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 200_000;
        let (mut s, mut s2m) = (0.0, 0.0);
        for _ in 0..n {
            let z: f64 = rng.sample(rand_distr::StandardNormal);
            let e: f64 = rng.sample::<f64, _>(rand_distr::StandardNormal) * k.sigma_e;
            let hn = next_variance_q(&p, ctx.h_t, ctx.eta_prev, z);
            let g = dvix_deta(&p, &k, eta, hn, 21, s2).unwrap();
            let v = (e * g / (k.sigma_e * k.sigma_e)).powi(2);
            s += v;
            s2m += v * v;
        }
        let mean = s / n as f64;
        let se = ((s2m / n as f64 - mean * mean) / n as f64).sqrt();
        assert!((mean - f).abs() < 3.0 * se, "{mean} {f} {se}");
    }

    #[test]
    fn fisher_constant_grads() {
        // one day of the horizon: only the h* channel, grads = A·h/(2√h*), vary with h
        let (p, k) = presets::shng_opt();
        let ins = [vix_instrument(), vix_instrument()];
        let dp = DayPricer::new(&p, &k, 1.1, 1e-4, &ins, FourierRule::standard(), true).unwrap();
        let (_, g) = day_grads(&dp, 1e-4).unwrap();
        let q = information_quadratic(&g, &k).unwrap();
        let e = Equicorr::new(2, k.rho).unwrap();
        assert!(rel(q, g[0] * g[0] * e.quad_form(&[1.0, 1.0]) / (k.sigma_e * k.sigma_e)) < 1e-14);
    }

    #[test]
    fn fd_step_halving_stable() {
        let (p, k) = presets::shng_opt();
        let (call, vega) = atm_call(63);
        let s2 = k.sigma * k.sigma;
        let hs = k.zeta * p.unconditional_variance().unwrap();
        let fd = SensitivityBackend::FiniteDifference;
        let a = doption_deta_step(&p, &k, &call, vega, k.zeta, hs, s2, fd, 2e-3).unwrap();
        let b = doption_deta_step(&p, &k, &call, vega, k.zeta, hs, s2, fd, 1e-3).unwrap();
        assert!(rel(a, b) < 1e-6, "{a} {b}");
    }
}
