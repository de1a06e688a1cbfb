//! Affine MGF of cumulative risk-neutral returns, Fourier call pricing and
//! Black-Scholes helpers.
//!
//! Paths are indexed from the current day: `path[0] = η_t`, `path[j] = η_{t+j}`.
//! Day t+j of the recursion uses the pair (η_{t+j}, η_{t+j−1}), and the
//! leverage term uses γ* of the previous day.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::OnceLock;

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{domain, Error, Result};
use crate::model::{KernelParams, PhysicalParams};
use crate::quadrature::GaussLaguerre;
use crate::vix::{vix_terms_closed, vix_terms_deta, VixTerms};

/// Default scale constant: φ = κ x / √(M h̃*).
pub const DEFAULT_KAPPA: f64 = 0.3;
/// Default Gauss-Laguerre node count.
pub const DEFAULT_NODES: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EuropeanCall {
    pub spot: f64,
    pub strike: f64,
    pub maturity_days: usize,
    /// Daily risk-free rate.
    pub rate: f64,
}

impl EuropeanCall {
    pub fn validate(&self) -> Result<()> {
        if !(self.spot > 0.0) || !(self.strike > 0.0) {
            return domain("spot and strike must be positive");
        }
        if self.maturity_days == 0 {
            return domain("maturity must be at least one day");
        }
        Ok(())
    }

    pub fn log_moneyness(&self) -> f64 {
        (self.strike / self.spot).ln()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MgfCoeffs {
    pub a_coef: C64,
    pub b_coef: C64,
    pub maturity_index: usize,
    pub eta_path: Vec<f64>,
}

impl MgfCoeffs {
    /// g*(s) = exp(𝒜 + ℬ h*_{t+1}).
    pub fn mgf(&self, h_star_next: f64) -> C64 {
        (self.a_coef + self.b_coef * h_star_next).exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompensatedVol {
    pub h_star: f64,
    pub psi: f64,
    pub h_tilde: f64,
}

/// Fourier integration settings.
#[derive(Debug, Clone)]
pub struct FourierRule {
    pub laguerre: GaussLaguerre,
    pub kappa: f64,
}

impl FourierRule {
    pub fn new(nodes: usize, kappa: f64) -> Self {
        FourierRule { laguerre: GaussLaguerre::new(nodes), kappa }
    }

    /// Shared default rule (32 nodes).
    pub fn standard() -> &'static FourierRule {
        static RULE: OnceLock<FourierRule> = OnceLock::new();
        RULE.get_or_init(|| FourierRule::new(DEFAULT_NODES, DEFAULT_KAPPA))
    }

    pub fn scale(&self, m: usize, h_tilde: f64) -> f64 {
        self.kappa / (m as f64 * h_tilde).sqrt()
    }
}

/// Entries j = 1..=M of ζ + θ^j(η_t − ζ).
pub fn expected_eta_path(kp: &KernelParams, eta_t: f64, m: usize) -> Vec<f64> {
    let d = eta_t - kp.zeta;
    let mut out = Vec::with_capacity(m);
    let mut tj = 1.0;
    for _ in 0..m {
        tj *= kp.theta;
        out.push(kp.zeta + tj * d);
    }
    out
}

/// η_t followed by the expected path, the layout the recursion consumes.
pub fn full_expected_path(kp: &KernelParams, eta_t: f64, m: usize) -> Vec<f64> {
    let mut p = Vec::with_capacity(m + 1);
    p.push(eta_t);
    p.extend(expected_eta_path(kp, eta_t, m));
    p
}

/// dη_{t+j}/dη_t = θ^j for the expected path.
pub fn expected_path_derivative(kp: &KernelParams, m: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(m + 1);
    let mut tj = 1.0;
    for _ in 0..=m {
        out.push(tj);
        tj *= kp.theta;
    }
    out
}

#[derive(Debug, Clone, Copy)]
struct Coef {
    a: C64,
    b: C64,
    da: C64,
    db: C64,
}

// Backward recursion. With `dpath` the derivative along the path direction
// is carried in forward mode.
fn recurse(pp: &PhysicalParams, path: &[f64], dpath: Option<&[f64]>, s: C64, m: usize) -> Result<Coef> {
    let r = pp.r;
    let lev = pp.gamma + pp.lambda - 0.5;
    let mut a = s * r;
    let mut b = 0.5 * (s * s - s);
    let mut da = C64::new(0.0, 0.0);
    let mut db = C64::new(0.0, 0.0);
    for j in (1..m).rev() {
        let (e1, e0) = (path[j], path[j - 1]);
        let ws = pp.omega * e1;
        let bs = pp.beta * e1 / e0;
        let al = pp.alpha * e1 * e0;
        let c = lev / e0 + 0.5;
        let den = 1.0 - 2.0 * al * b;
        if den.norm() < 1e-300 {
            return Err(Error::RecursionSingular { step: m - j, value: den.re });
        }
        let inv = 1.0 / den;
        let sc = s - c;
        let t = 0.5 * sc * sc * inv;
        if let Some(dp) = dpath {
            let (d1, d0) = (dp[j], dp[j - 1]);
            let dws = pp.omega * d1;
            let dbs = pp.beta * (d1 * e0 - e1 * d0) / (e0 * e0);
            let dal = pp.alpha * (d1 * e0 + e1 * d0);
            let dc = -lev * d0 / (e0 * e0);
            let dden = -2.0 * (dal * b + al * db);
            let dt = -sc * dc * inv - t * dden * inv;
            let na = da + db * ws + b * dws - 0.5 * dden * inv;
            let nb = s * dc - c * dc + dbs * b + bs * db + dt;
            da = na;
            db = nb;
        }
        a = a + s * r + b * ws - 0.5 * den.ln();
        b = s * (c - 0.5) - 0.5 * c * c + bs * b + t;
    }
    Ok(Coef { a, b, da, db })
}

fn check_path(path: &[f64], m: usize) -> Result<()> {
    if m == 0 {
        return domain("maturity must be at least one day");
    }
    if path.len() < m {
        return Err(Error::Dimension { expected: m, got: path.len() });
    }
    if path[..m].iter().any(|e| !(*e > 0.0)) {
        return domain("eta path must be positive");
    }
    Ok(())
}

/// 𝒜 and ℬ at horizon M for a path starting at η_t (`eta_path[0]`).
pub fn mgf_coeffs(pp: &PhysicalParams, eta_path: &[f64], s: C64, m: usize) -> Result<MgfCoeffs> {
    check_path(eta_path, m)?;
    let c = recurse(pp, eta_path, None, s, m)?;
    Ok(MgfCoeffs { a_coef: c.a, b_coef: c.b, maturity_index: m, eta_path: eta_path[..m].to_vec() })
}

#[derive(Debug, Clone, Copy)]
struct SliceNode {
    phi: f64,
    w: f64,
    p1: Coef,
    p2: Coef,
}

/// Pre-computed Fourier coefficients for one maturity and one η-path, so
/// that prices at many (moneyness, h̃*) pairs cost only exponentials.
#[derive(Debug, Clone)]
pub struct MaturitySlice {
    pub m: usize,
    pub scale: f64,
    pub rate: f64,
    nodes: Vec<SliceNode>,
}

/// Call price per unit spot with its P₁, P₂ components.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlicePrice {
    pub call: f64,
    pub p1: f64,
    pub p2: f64,
}

impl MaturitySlice {
    pub fn build(
        pp: &PhysicalParams,
        path: &[f64],
        dpath: Option<&[f64]>,
        m: usize,
        scale: f64,
        rule: &FourierRule,
    ) -> Result<Self> {
        check_path(path, m)?;
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(Error::Pricing(format!("invalid Fourier scale {scale}")));
        }
        let gl = &rule.laguerre;
        let mut nodes = Vec::with_capacity(gl.nodes.len());
        for (x, w) in gl.nodes.iter().zip(&gl.compensated) {
            let phi = scale * x;
            let s2 = C64::new(0.0, phi);
            let s1 = C64::new(1.0, phi);
            let p1 = recurse(pp, path, dpath, s1, m)?;
            let p2 = recurse(pp, path, dpath, s2, m)?;
            nodes.push(SliceNode { phi, w: w * scale, p1, p2 });
        }
        Ok(MaturitySlice { m, scale, rate: pp.r, nodes })
    }

    fn integrals(&self, k: f64, h: f64) -> (f64, f64) {
        let mut i1 = 0.0;
        let mut i2 = 0.0;
        for n in &self.nodes {
            let rot = C64::new(0.0, -n.phi * k);
            let g1 = (n.p1.a + n.p1.b * h + rot).exp();
            let g2 = (n.p2.a + n.p2.b * h + rot).exp();
            // Re[z/(iφ)] = Im z / φ
            i1 += n.w * g1.im / n.phi;
            i2 += n.w * g2.im / n.phi;
        }
        (i1, i2)
    }

    /// Price per unit spot at log-moneyness k = ln(K/S) and variance h̃*.
    pub fn price(&self, k: f64, h_tilde: f64) -> SlicePrice {
        let disc = (-self.rate * self.m as f64).exp();
        let (i1, i2) = self.integrals(k, h_tilde);
        let p1 = 0.5 + disc * i1 / PI;
        let p2 = 0.5 + i2 / PI;
        SlicePrice { call: p1 - k.exp() * disc * p2, p1, p2 }
    }

    /// Price per unit spot and its derivative along the path direction,
    /// given dh̃*/dη. Requires a slice built with `dpath`.
    pub fn price_and_derivative(&self, k: f64, h_tilde: f64, dh_tilde: f64) -> (f64, f64) {
        let disc = (-self.rate * self.m as f64).exp();
        let (mut i1, mut i2, mut d1, mut d2) = (0.0, 0.0, 0.0, 0.0);
        for n in &self.nodes {
            let rot = C64::new(0.0, -n.phi * k);
            let g1 = (n.p1.a + n.p1.b * h_tilde + rot).exp();
            let g2 = (n.p2.a + n.p2.b * h_tilde + rot).exp();
            let dg1 = g1 * (n.p1.da + n.p1.db * h_tilde + n.p1.b * dh_tilde);
            let dg2 = g2 * (n.p2.da + n.p2.db * h_tilde + n.p2.b * dh_tilde);
            let wp = n.w / n.phi;
            i1 += wp * g1.im;
            i2 += wp * g2.im;
            d1 += wp * dg1.im;
            d2 += wp * dg2.im;
        }
        let p1 = 0.5 + disc * i1 / PI;
        let p2 = 0.5 + i2 / PI;
        let call = p1 - k.exp() * disc * p2;
        let dcall = disc * d1 / PI - k.exp() * disc * d2 / PI;
        (call, dcall)
    }
}

/// Slices for one maturity tabulated lazily on a uniform η grid, with cubic
/// Hermite interpolation of the recursion coefficients between grid points.
/// The Fourier scale is fixed for the whole grid.
#[derive(Debug, Clone)]
pub struct SliceGrid {
    pp: PhysicalParams,
    kp: KernelParams,
    pub m: usize,
    pub scale: f64,
    pub step: f64,
    rule: FourierRule,
    cells: HashMap<i64, Vec<SliceNode>>,
}

impl SliceGrid {
    pub fn new(pp: &PhysicalParams, kp: &KernelParams, m: usize, scale: f64, step: f64, rule: &FourierRule) -> Self {
        SliceGrid { pp: *pp, kp: *kp, m, scale, step, rule: rule.clone(), cells: HashMap::new() }
    }

    fn node(&mut self, k: i64) -> Result<&Vec<SliceNode>> {
        if !self.cells.contains_key(&k) {
            let eta = k as f64 * self.step;
            if !(eta > 0.0) {
                return domain(format!("η grid point {eta} not positive"));
            }
            let path = full_expected_path(&self.kp, eta, self.m);
            let dpath = expected_path_derivative(&self.kp, self.m);
            let sl = MaturitySlice::build(&self.pp, &path, Some(&dpath), self.m, self.scale, &self.rule)?;
            self.cells.insert(k, sl.nodes);
        }
        Ok(&self.cells[&k])
    }

    /// Number of tabulated grid points.
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Interpolated slice at η, carrying dη-derivatives of the interpolant.
    pub fn slice(&mut self, eta: f64) -> Result<MaturitySlice> {
        let u = eta / self.step;
        let k0 = u.floor() as i64;
        let t = u - k0 as f64;
        let d = self.step;
        let n0 = self.node(k0)?.clone();
        let n1 = self.node(k0 + 1)?;
        let (h00, h10, h01, h11) = (
            (2.0 * t - 3.0) * t * t + 1.0,
            ((t - 2.0) * t + 1.0) * t,
            (3.0 - 2.0 * t) * t * t,
            (t - 1.0) * t * t,
        );
        let (g00, g10, g01, g11) =
            (6.0 * t * (t - 1.0) / d, (3.0 * t - 4.0) * t + 1.0, 6.0 * t * (1.0 - t) / d, (3.0 * t - 2.0) * t);
        let herm = |f0: C64, df0: C64, f1: C64, df1: C64| {
            (f0 * h00 + df0 * (d * h10) + f1 * h01 + df1 * (d * h11), f0 * g00 + df0 * g10 + f1 * g01 + df1 * g11)
        };
        let interp = |c0: &Coef, c1: &Coef| {
            // a carries a sum of principal logs; align its branch with c0
            let guess = c0.a.im + 0.5 * d * (c0.da.im + c1.da.im);
            let turns = ((guess - c1.a.im) / (2.0 * PI)).round();
            let a1 = c1.a + C64::new(0.0, 2.0 * PI * turns);
            let (a, da) = herm(c0.a, c0.da, a1, c1.da);
            let (b, db) = herm(c0.b, c0.db, c1.b, c1.db);
            Coef { a, b, da, db }
        };
        let nodes = n0
            .iter()
            .zip(n1)
            .map(|(x0, x1)| SliceNode { phi: x0.phi, w: x0.w, p1: interp(&x0.p1, &x1.p1), p2: interp(&x0.p2, &x1.p2) })
            .collect();
        Ok(MaturitySlice { m: self.m, scale: self.scale, rate: self.pp.r, nodes })
    }
}

/// Call price under a predetermined path (`eta_path[0] = η_t`).
pub fn price_call_predetermined(
    pp: &PhysicalParams,
    call: &EuropeanCall,
    eta_path: &[f64],
    h_star_next: f64,
) -> Result<f64> {
    Ok(price_call_detail(pp, call, eta_path, h_star_next, FourierRule::standard())?.call * call.spot)
}

/// Per-unit-spot price with P₁, P₂, using an explicit rule.
pub fn price_call_detail(
    pp: &PhysicalParams,
    call: &EuropeanCall,
    eta_path: &[f64],
    h_star_next: f64,
    rule: &FourierRule,
) -> Result<SlicePrice> {
    call.validate()?;
    if !(h_star_next > 0.0) {
        return domain("h* must be positive");
    }
    let m = call.maturity_days;
    let mut p = *pp;
    p.r = call.rate;
    let slice = MaturitySlice::build(&p, eta_path, None, m, rule.scale(m, h_star_next), rule)?;
    let out = slice.price(call.log_moneyness(), h_star_next);
    if !out.call.is_finite() {
        return Err(Error::Pricing("Fourier integral did not converge; increase node count".into()));
    }
    Ok(out)
}

pub fn compensation_psi(terms: &VixTerms, sigma2: f64, _m: usize) -> Result<f64> {
    if !(terms.a3 > 0.0) {
        return domain(format!("a3 must be positive, got {}", terms.a3));
    }
    Ok(terms.a2 * sigma2 / terms.a3)
}

/// h̃* = h* + ψ at horizon M.
pub fn compensated_vol(
    pp: &PhysicalParams,
    kp: &KernelParams,
    eta_t: f64,
    h_star_next: f64,
    m: usize,
    sigma2: f64,
) -> Result<CompensatedVol> {
    let t = vix_terms_closed(pp, kp, eta_t, m)?;
    let psi = compensation_psi(&t, sigma2, m)?;
    Ok(CompensatedVol { h_star: h_star_next, psi, h_tilde: h_star_next + psi })
}

/// dψ/dη_t.
pub fn dpsi_deta(pp: &PhysicalParams, kp: &KernelParams, eta_t: f64, m: usize, sigma2: f64) -> Result<f64> {
    let t = vix_terms_closed(pp, kp, eta_t, m)?;
    let (_, da3) = vix_terms_deta(pp, kp, eta_t, m, &t);
    Ok(-t.a2 * sigma2 * da3 / (t.a3 * t.a3))
}

/// Price at the expected η-path with certainty-equivalent variance h* + ψ.
pub fn price_call_stochastic(
    pp: &PhysicalParams,
    kp: &KernelParams,
    call: &EuropeanCall,
    eta_t: f64,
    h_star_next: f64,
    sigma2: f64,
) -> Result<f64> {
    let m = call.maturity_days;
    let cv = compensated_vol(pp, kp, eta_t, h_star_next, m, sigma2)?;
    let path = full_expected_path(kp, eta_t, m);
    price_call_predetermined(pp, call, &path, cv.h_tilde)
}

/// Same as [`price_call_stochastic`] with an explicit rule and Fourier scale.
#[allow(clippy::too_many_arguments)]
pub fn price_call_stochastic_with(
    pp: &PhysicalParams,
    kp: &KernelParams,
    call: &EuropeanCall,
    eta_t: f64,
    h_star_next: f64,
    sigma2: f64,
    rule: &FourierRule,
    scale: Option<f64>,
) -> Result<f64> {
    call.validate()?;
    let m = call.maturity_days;
    let cv = compensated_vol(pp, kp, eta_t, h_star_next, m, sigma2)?;
    let path = full_expected_path(kp, eta_t, m);
    let mut p = *pp;
    p.r = call.rate;
    let sc = scale.unwrap_or_else(|| rule.scale(m, cv.h_tilde));
    let slice = MaturitySlice::build(&p, &path, None, m, sc, rule)?;
    Ok(slice.price(call.log_moneyness(), cv.h_tilde).call * call.spot)
}

// ---- Black-Scholes ----

pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

fn year_fraction(m: usize) -> f64 {
    m as f64 / 252.0
}

/// Black-Scholes call with annualized volatility `iv`.
pub fn bs_price(call: &EuropeanCall, iv: f64) -> f64 {
    let t = year_fraction(call.maturity_days);
    let r = call.rate * 252.0;
    let sd = iv * t.sqrt();
    let df = (-r * t).exp();
    if sd <= 0.0 {
        return (call.spot - call.strike * df).max(0.0);
    }
    let d1 = ((call.spot / call.strike).ln() + r * t) / sd + 0.5 * sd;
    let d2 = d1 - sd;
    call.spot * norm_cdf(d1) - call.strike * df * norm_cdf(d2)
}

/// ∂C/∂σ for annualized σ.
pub fn bs_vega(call: &EuropeanCall, iv: f64) -> f64 {
    let t = year_fraction(call.maturity_days);
    let r = call.rate * 252.0;
    let sd = iv * t.sqrt();
    if sd <= 0.0 {
        return 0.0;
    }
    let d1 = ((call.spot / call.strike).ln() + r * t) / sd + 0.5 * sd;
    call.spot * norm_pdf(d1) * t.sqrt()
}

/// Black-Scholes call delta.
pub fn bs_delta(call: &EuropeanCall, iv: f64) -> f64 {
    let t = year_fraction(call.maturity_days);
    let r = call.rate * 252.0;
    let sd = iv * t.sqrt();
    if sd <= 0.0 {
        return if call.spot > call.strike * (-r * t).exp() { 1.0 } else { 0.0 };
    }
    norm_cdf(((call.spot / call.strike).ln() + r * t) / sd + 0.5 * sd)
}

/// Implied annualized volatility by safeguarded Newton iteration.
pub fn bs_implied_vol(price: f64, call: &EuropeanCall) -> Result<f64> {
    call.validate()?;
    let t = year_fraction(call.maturity_days);
    let df = (-call.rate * 252.0 * t).exp();
    let lower = (call.spot - call.strike * df).max(0.0);
    if !(price > lower) || !(price < call.spot) {
        return Err(Error::Inversion(format!("price {price} outside ({lower}, {})", call.spot)));
    }
    let (mut lo, mut hi) = (1e-8, 20.0);
    if bs_price(call, hi) < price {
        return Err(Error::Inversion("price requires volatility above 2000%".into()));
    }
    let mut x = (2.0 * PI / t).sqrt() * price / call.spot;
    x = x.clamp(0.01, 5.0);
    for _ in 0..200 {
        let f = bs_price(call, x) - price;
        if f > 0.0 {
            hi = x;
        } else {
            lo = x;
        }
        let v = bs_vega(call, x);
        let mut nx = if v > 0.0 { x - f / v } else { 0.5 * (lo + hi) };
        if !(nx > lo && nx < hi) {
            nx = 0.5 * (lo + hi);
        }
        if (nx - x).abs() < 1e-14 * x.max(1e-3) || hi - lo < 1e-15 {
            return Ok(nx);
        }
        x = nx;
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs()
    }

    #[test]
    fn expected_path_shape() {
        let (_, k) = presets::shng_opt();
        let p = expected_eta_path(&k, k.zeta, 10);
        assert!(p.iter().all(|e| (e - k.zeta).abs() < 1e-15));
        let mut k0 = k;
        k0.theta = 0.0;
        assert!(expected_eta_path(&k0, 1.7, 5).iter().all(|e| *e == k0.zeta));
        let p = expected_eta_path(&k, 0.73, 21);
        assert!(p.windows(2).all(|w| w[1] > w[0]));
        let want = 1.094 + 0.996f64.powi(21) * (0.73 - 1.094);
        assert!((p[20] - want).abs() < 1e-15);
    }

    #[test]
    fn mgf_at_zero_and_one() {
        let (p, k) = presets::shng_opt();
        let path = full_expected_path(&k, 1.5, 63);
        let c = mgf_coeffs(&p, &path, C64::new(0.0, 0.0), 63).unwrap();
        assert_eq!(c.a_coef, C64::new(0.0, 0.0));
        assert_eq!(c.b_coef, C64::new(0.0, 0.0));
        let c = mgf_coeffs(&p, &path, C64::new(1.0, 0.0), 63).unwrap();
        let g = c.mgf(1.7e-4);
        assert!((g.re - (p.r * 63.0).exp()).abs() < 1e-12 && g.im.abs() < 1e-14);
    }

    #[test]
    fn black_scholes_nesting() {
        let h = 1.1e-4;
        let eta = 1.3;
        let pp = PhysicalParams { omega: h, beta: 0.0, alpha: 0.0, gamma: 0.0, lambda: 0.0, r: 1e-4 };
        for &m in &[5usize, 21, 63, 126] {
            for &kk in &[0.85, 1.0, 1.1] {
                let call = EuropeanCall { spot: 100.0, strike: 100.0 * kk, maturity_days: m, rate: pp.r };
                let path = vec![eta; m + 1];
                let c = price_call_predetermined(&pp, &call, &path, eta * h).unwrap();
                let bs = bs_price(&call, (eta * h * 252.0).sqrt());
                assert!(rel(c, bs) < 1e-4, "m={m} k={kk} {c} {bs}");
            }
        }
    }

    #[test]
    fn slice_derivative_matches_fd() {
        let (p, k) = presets::shng_opt();
        let m = 63;
        let eta = 1.3;
        let h_next = 1.2e-4;
        let rule = FourierRule::standard();
        let scale = rule.scale(m, eta * h_next);
        let dpath = expected_path_derivative(&k, m);
        let path = full_expected_path(&k, eta, m);
        let sl = MaturitySlice::build(&p, &path, Some(&dpath), m, scale, rule).unwrap();
        let (c, dc) = sl.price_and_derivative(0.02, eta * h_next, h_next);
        let f = |e: f64| {
            let path = full_expected_path(&k, e, m);
            MaturitySlice::build(&p, &path, None, m, scale, rule).unwrap().price(0.02, e * h_next).call
        };
        let st = 1e-4;
        let fd = (f(eta + st) - f(eta - st)) / (2.0 * st);
        assert!(rel(c, f(eta)) < 1e-14);
        assert!(rel(dc, fd) < 1e-7, "{dc} {fd}");
    }

    #[test]
    fn implied_vol_round_trip() {
        for &m in &[10usize, 63, 126] {
            for &kk in &[0.8, 1.0, 1.2] {
                let call = EuropeanCall { spot: 100.0, strike: 100.0 * kk, maturity_days: m, rate: 1e-4 };
                for &s in &[0.08, 0.2, 0.6] {
                    let p = bs_price(&call, s);
                    let intrinsic = (call.spot - call.strike * (-call.rate * m as f64).exp()).max(0.0);
                    if p < 1e-10 || p - intrinsic < 1e-6 {
                        continue;
                    }
                    let iv = bs_implied_vol(p, &call).unwrap();
                    assert!((iv - s).abs() < 1e-8, "{m} {kk} {s} {iv}");
                    assert!(bs_vega(&call, s) >= 0.0);
                }
            }
        }
        let call = EuropeanCall { spot: 100.0, strike: 100.0, maturity_days: 5, rate: 0.0 };
        let p = bs_price(&call, 0.15);
        let approx = p * (2.0 * PI / (5.0 / 252.0)).sqrt() / 100.0;
        assert!(rel(approx, bs_implied_vol(p, &call).unwrap()) < 5e-3);
        assert!(bs_implied_vol(101.0, &call).is_err());
    }
}
