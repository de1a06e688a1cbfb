//! Closed-form VIX under AR(1) variance risk ratio dynamics.
//!
//! The closed form is written in terms of divided differences of
//! g(x) = Σ_{i=1}^{M−1} x^i so that coincident arguments (θ = β̃, β̃ = 1, ...)
//! need no special casing beyond the divided difference itself.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::model::{KernelParams, PhysicalParams};

/// Annualization factor A = 100√252.
pub fn annualizer() -> f64 {
    100.0 * 252f64.sqrt()
}

/// Trading days in the VIX horizon.
pub const VIX_DAYS: usize = 21;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VixTerms {
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
    pub beta_tilde: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VixQuote {
    pub value: f64,
    pub maturity_days: usize,
    pub annualizer: f64,
}

/// g(x) = Σ_{i=1}^{n} x^i.
pub fn geom(x: f64, n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    if (1.0 - x).abs() < 1e-3 {
        let mut s = 0.0;
        let mut p = 1.0;
        for _ in 0..n {
            p *= x;
            s += p;
        }
        return s;
    }
    x * (1.0 - x.powi(n as i32)) / (1.0 - x)
}

/// g'(x) = Σ_{i=1}^{n} i x^{i−1}.
pub fn geom_prime(x: f64, n: usize) -> f64 {
    let mut s = 0.0;
    let mut p = 1.0;
    for i in 1..=n {
        s += i as f64 * p;
        p *= x;
    }
    s
}

/// Divided difference S(x,y) = (g(x) − g(y))/(x − y) with g'(x) at x = y.
pub fn divided_diff(x: f64, y: f64, n: usize) -> f64 {
    let scale = x.abs().max(y.abs()).max(1.0);
    if x == y {
        return geom_prime(x, n);
    }
    if (x - y).abs() < 0.05 * scale {
        // Σ_i (x^i − y^i)/(x − y) = Σ_i Σ_{m<i} x^m y^{i−1−m}
        let mut h = 1.0;
        let mut s = 0.0;
        let mut yp = 1.0;
        for _ in 0..n {
            s += h;
            yp *= y;
            h = x * h + yp;
        }
        return s;
    }
    (geom(x, n) - geom(y, n)) / (x - y)
}

/// (E[η_{t+k}], E[(η_{t+k}−ζ)²]).
pub fn ar1_moments(kp: &KernelParams, eta_t: f64, k: usize) -> Result<(f64, f64)> {
    if kp.theta.abs() >= 1.0 {
        return domain("|theta| must be < 1");
    }
    let d = eta_t - kp.zeta;
    let tk = kp.theta.powi(k as i32);
    let t2k = tk * tk;
    let var = kp.sigma * kp.sigma * (1.0 - t2k) / (1.0 - kp.theta * kp.theta);
    Ok((kp.zeta + tk * d, t2k * d * d + var))
}

pub fn vix_terms_closed(pp: &PhysicalParams, kp: &KernelParams, eta_t: f64, m: usize) -> Result<VixTerms> {
    vix_terms_with_persistence(pp, kp, eta_t, m, pp.beta_tilde())
}

/// Closed-form terms with β̃ replaced by an arbitrary persistence `b`.
pub fn vix_terms_with_persistence(
    pp: &PhysicalParams,
    kp: &KernelParams,
    eta_t: f64,
    m: usize,
    b: f64,
) -> Result<VixTerms> {
    check_inputs(kp, eta_t, m)?;
    let (a1, a2, a3) = closed_parts(pp, kp, eta_t, m, b);
    Ok(VixTerms { a1, a2, a3, beta_tilde: b })
}

fn check_inputs(kp: &KernelParams, eta_t: f64, m: usize) -> Result<()> {
    if m == 0 {
        return domain("maturity must be at least one day");
    }
    if !(eta_t > 0.0) {
        return domain(format!("eta must be positive, got {eta_t}"));
    }
    if kp.theta.abs() >= 1.0 {
        return domain("|theta| must be < 1");
    }
    Ok(())
}

fn closed_parts(pp: &PhysicalParams, kp: &KernelParams, eta: f64, m: usize, b: f64) -> (f64, f64, f64) {
    let n = m - 1;
    let (w, a, z, th) = (pp.omega, pp.alpha, kp.zeta, kp.theta);
    let d = eta - z;
    let s = |x: f64, y: f64| divided_diff(x, y, n);
    let bt = b * th;
    let cross = th * s(th * th, bt);
    let a1 = (w + a * z) * d * th * s(th, bt) + z * (w + a * z) * s(1.0, b) + a * z * d * s(th, b) + a * d * d * cross;
    let a2 = a * th * (s(1.0, bt) - s(th * th, bt)) / (1.0 - th * th);
    let a3 = (z * (1.0 + geom(b, n)) + d * (1.0 + geom(bt, n))) / eta;
    (a1, a2, a3)
}

/// Direct evaluation of the double sum, used as the oracle for the closed form.
pub fn vix_terms_bruteforce(pp: &PhysicalParams, kp: &KernelParams, eta_t: f64, m: usize) -> Result<VixTerms> {
    check_inputs(kp, eta_t, m)?;
    let b = pp.beta_tilde();
    let (z, th) = (kp.zeta, kp.theta);
    let d = eta_t - z;
    let mean = |k: usize| z + th.powi(k as i32) * d;
    // E[η_k²] split into its σ-free part and the σ² coefficient
    let sq = |k: usize| {
        let t2 = th.powi(2 * k as i32);
        let mut v = 0.0;
        let mut p = 1.0;
        for _ in 0..k {
            v += p;
            p *= th * th;
        }
        let mu = mean(k);
        (t2 * d * d + 2.0 * z * mu - z * z, v)
    };
    // E[η_j η_l] for j ≥ l, as (σ-free, σ² coefficient)
    let cross = |j: usize, l: usize| {
        let tj = th.powi((j - l) as i32);
        let (s0, s2) = sq(l);
        (tj * s0 + z * (1.0 - tj) * mean(l), tj * s2)
    };
    let mut a1 = 0.0;
    let mut a2 = 0.0;
    for k in 2..=m {
        for i in 2..=k {
            let w = b.powi((k - i) as i32);
            let (c0, c2) = cross(k - 1, i - 2);
            a1 += w * (pp.omega * mean(k - 1) + pp.alpha * c0);
            a2 += w * pp.alpha * c2;
        }
    }
    let mut a3 = 0.0;
    for k in 1..=m {
        a3 += b.powi((k - 1) as i32) * mean(k - 1) / eta_t;
    }
    Ok(VixTerms { a1, a2, a3, beta_tilde: b })
}

/// VIX from already computed terms.
pub fn vix_from_terms(t: &VixTerms, h_star_next: f64, m: usize, sigma2: f64) -> Result<f64> {
    let v = t.a1 + t.a2 * sigma2 + t.a3 * h_star_next;
    if !(v >= 0.0) {
        return Err(Error::Pricing(format!("negative VIX radicand {v}")));
    }
    Ok(annualizer() * (v / m as f64).sqrt())
}

pub fn vix_price(
    pp: &PhysicalParams,
    kp: &KernelParams,
    eta_t: f64,
    h_star_next: f64,
    m: usize,
    sigma2: f64,
) -> Result<VixQuote> {
    let t = vix_terms_closed(pp, kp, eta_t, m)?;
    Ok(VixQuote { value: vix_from_terms(&t, h_star_next, m, sigma2)?, maturity_days: m, annualizer: annualizer() })
}

/// VIX values at the two persistence endpoints implied by η ∈ [η_L, η_H],
/// evaluated at the current state (η_t, h*_{t+1}).
#[allow(clippy::too_many_arguments)]
pub fn delta_bound(
    pp: &PhysicalParams,
    kp: &KernelParams,
    eta_t: f64,
    eta_low: f64,
    eta_high: f64,
    h_star_next: f64,
    m: usize,
    sigma2: f64,
) -> Result<(f64, f64)> {
    if !(eta_low > 0.0) || eta_high < eta_low {
        return domain("need 0 < eta_low <= eta_high");
    }
    let lo = delta_at(pp, kp, eta_t, pp.q_persistence(eta_low), h_star_next, m, sigma2)?;
    let hi = delta_at(pp, kp, eta_t, pp.q_persistence(eta_high), h_star_next, m, sigma2)?;
    Ok((lo, hi))
}

/// δ(x): VIX evaluated at state η_t with persistence x in place of β̃.
pub fn delta_at(
    pp: &PhysicalParams,
    kp: &KernelParams,
    eta_t: f64,
    persistence: f64,
    h_star_next: f64,
    m: usize,
    sigma2: f64,
) -> Result<f64> {
    let t = vix_terms_with_persistence(pp, kp, eta_t, m, persistence)?;
    vix_from_terms(&t, h_star_next, m, sigma2)
}

/// ∂VIX/∂η_t holding h_{t+1} fixed (h* = η_t h_{t+1}).
pub fn dvix_deta(pp: &PhysicalParams, kp: &KernelParams, eta_t: f64, h_next: f64, m: usize, sigma2: f64) -> Result<f64> {
    let t = vix_terms_closed(pp, kp, eta_t, m)?;
    let h_star = eta_t * h_next;
    let v = (t.a1 + t.a2 * sigma2 + t.a3 * h_star) / m as f64;
    if !(v > 0.0) {
        return Err(Error::Pricing(format!("VIX radicand {v} not positive")));
    }
    let (da1, da3) = vix_terms_deta(pp, kp, eta_t, m, &t);
    let dv = (da1 + da3 * h_star + t.a3 * h_next) / m as f64;
    Ok(annualizer() * dv / (2.0 * v.sqrt()))
}

/// (∂a₁/∂η_t, ∂a₃/∂η_t).
pub fn vix_terms_deta(pp: &PhysicalParams, kp: &KernelParams, eta_t: f64, m: usize, t: &VixTerms) -> (f64, f64) {
    let n = m - 1;
    let b = t.beta_tilde;
    let (w, a, z, th) = (pp.omega, pp.alpha, kp.zeta, kp.theta);
    let d = eta_t - z;
    let s = |x: f64, y: f64| divided_diff(x, y, n);
    let bt = b * th;
    let da1 = (w + a * z) * th * s(th, bt) + a * z * s(th, b) + 2.0 * a * d * th * s(th * th, bt);
    let da3 = ((1.0 + geom(bt, n)) - t.a3) / eta_t;
    (da1, da3)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-300)
    }

    #[test]
    fn single_day_terms() {
        let (p, k) = presets::shng_opt();
        let t = vix_terms_closed(&p, &k, 1.3, 1).unwrap();
        assert_eq!((t.a1, t.a2, t.a3), (0.0, 0.0, 1.0));
        let q = vix_price(&p, &k, 1.3, 1.5e-4, 1, 0.01).unwrap();
        assert!(rel(q.value, annualizer() * 1.5e-4f64.sqrt()) < 1e-14);
    }

    #[test]
    fn two_day_hand_expansion() {
        let (p, k) = presets::shng_opt();
        let eta = 1.4;
        let t = vix_terms_bruteforce(&p, &k, eta, 2).unwrap();
        let b = p.beta_tilde();
        let e1 = k.zeta + k.theta * (eta - k.zeta);
        assert!(rel(t.a3, 1.0 + b * e1 / eta) < 1e-14);
        // k=2,i=2: ωE[η_1] + αE[η_1 η_0] = ωE[η_1] + α η E[η_1]
        assert!(rel(t.a1, p.omega * e1 + p.alpha * eta * e1) < 1e-14);
        assert_eq!(t.a2, 0.0);
    }

    #[test]
    fn closed_matches_bruteforce_at_presets() {
        for (p, k) in [presets::shng_opt(), presets::shng_vix(), presets::shng_vix_opt()] {
            for &eta in &presets::ETA_QUANTILES {
                for &m in &[1usize, 2, 21, 63, 126] {
                    let c = vix_terms_closed(&p, &k, eta, m).unwrap();
                    let b = vix_terms_bruteforce(&p, &k, eta, m).unwrap();
                    assert!(rel(c.a1, b.a1) < 1e-10 || (c.a1 - b.a1).abs() < 1e-18, "a1 {c:?} {b:?}");
                    assert!(rel(c.a2, b.a2) < 1e-10 || (c.a2 - b.a2).abs() < 1e-18, "a2 {c:?} {b:?}");
                    assert!(rel(c.a3, b.a3) < 1e-10, "a3 {c:?} {b:?}");
                }
            }
        }
    }

    #[test]
    fn singular_branches() {
        let (mut p, mut k) = presets::shng_opt();
        // θ = β̃ exactly
        k.theta = p.beta_tilde();
        let c = vix_terms_closed(&p, &k, 1.5, 63).unwrap();
        let b = vix_terms_bruteforce(&p, &k, 1.5, 63).unwrap();
        assert!(rel(c.a1, b.a1) < 1e-10 && rel(c.a2, b.a2) < 1e-10 && rel(c.a3, b.a3) < 1e-10);
        // β̃ = 1
        p.beta = 1.0 - p.alpha * (p.gamma + p.lambda).powi(2);
        k.theta = 0.9;
        let c = vix_terms_closed(&p, &k, 0.8, 42).unwrap();
        let b = vix_terms_bruteforce(&p, &k, 0.8, 42).unwrap();
        assert!(rel(c.a1, b.a1) < 1e-10 && rel(c.a2, b.a2) < 1e-10 && rel(c.a3, b.a3) < 1e-10);
        // θ = 0: i.i.d. η
        k.theta = 0.0;
        let c = vix_terms_closed(&p, &k, 0.8, 42).unwrap();
        let b = vix_terms_bruteforce(&p, &k, 0.8, 42).unwrap();
        assert!(rel(c.a1, b.a1) < 1e-10 && rel(c.a3, b.a3) < 1e-10);
        let want = 1.0 + geom(p.beta_tilde(), 41) * k.zeta / 0.8;
        assert!(rel(c.a3, want) < 1e-12);
    }

    #[test]
    fn constant_eta_reduction() {
        let (p, mut k) = presets::shng_opt();
        k.sigma = 0.0;
        let t = vix_terms_closed(&p, &k, k.zeta, 21).unwrap();
        let h = 1.4e-4;
        let v = vix_price(&p, &k, k.zeta, h, 21, 0.0).unwrap().value;
        let want = annualizer() * ((t.a1 + t.a3 * h) / 21.0).sqrt();
        assert!(rel(v, want) < 1e-15);
    }

    #[test]
    fn monotone_in_inputs() {
        let (p, k) = presets::shng_opt();
        let s2 = k.sigma * k.sigma;
        let v = |h: f64, s: f64| vix_price(&p, &k, 1.2, h, 63, s).unwrap().value;
        assert!(v(2e-4, s2) > v(1e-4, s2));
        assert!(v(1e-4, 2.0 * s2) > v(1e-4, s2));
        for &eta in &[0.3, 0.73, 1.09, 1.69, 3.0] {
            for &m in &[3usize, 21, 126] {
                assert!(vix_terms_closed(&p, &k, eta, m).unwrap().a2 > 0.0);
            }
        }
    }

    #[test]
    fn bound_properties() {
        let (p, k) = presets::shng_opt();
        let h = 1.4e-4;
        let (lo, hi) = delta_bound(&p, &k, 1.2, 1.2, 1.2, h, 21, 0.0).unwrap();
        assert_eq!(lo, hi);
        let (lo1, hi1) = delta_bound(&p, &k, 1.1, 0.9, 1.3, h, 21, 0.0).unwrap();
        let (lo2, hi2) = delta_bound(&p, &k, 1.1, 0.73, 1.69, h, 21, 0.0).unwrap();
        assert!(lo2 <= lo1 && hi2 >= hi1);
        assert!((hi2 - lo2) / lo2 < 0.01);
    }

    #[test]
    fn dvix_matches_fd() {
        let (p, k) = presets::shng_vix();
        let s2 = k.sigma * k.sigma;
        let h_next = p.unconditional_variance().unwrap();
        for &eta in &[0.73, k.zeta, 1.69] {
            let an = dvix_deta(&p, &k, eta, h_next, 21, s2).unwrap();
            let st = 1e-5 * eta;
            let f = |e: f64| vix_price(&p, &k, e, e * h_next, 21, s2).unwrap().value;
            let fd = (f(eta + st) - f(eta - st)) / (2.0 * st);
            assert!(rel(an, fd) < 1e-6, "{an} {fd}");
            assert!(an > 0.0);
        }
        let mut k0 = k;
        k0.sigma = 0.0;
        let an = dvix_deta(&p, &k0, 1.1, h_next, 1, 0.0).unwrap();
        let want = annualizer() * h_next / (2.0 * (1.1 * h_next).sqrt());
        assert!(rel(an, want) < 1e-13);
    }

    #[test]
    fn ar1_moment_edges() {
        let (_, k) = presets::shng_opt();
        let (m, s) = ar1_moments(&k, 1.69, 0).unwrap();
        assert_eq!(m, 1.69);
        assert!((s - (1.69 - k.zeta).powi(2)).abs() < 1e-15);
        let mut k0 = k;
        k0.sigma = 0.0;
        let (_, s) = ar1_moments(&k0, 1.69, 21).unwrap();
        assert!(rel(s, k.theta.powi(42) * (1.69 - k.zeta).powi(2)) < 1e-14);
        k0.theta = 1.0;
        assert!(ar1_moments(&k0, 1.0, 3).is_err());
    }
}
