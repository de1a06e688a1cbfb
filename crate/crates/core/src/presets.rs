//! Reference parameter sets (ω = 0 imposed in estimation).
//!
//! No risk-free rate comes with them; [`DEFAULT_RATE`] is used throughout. Constant-η columns carry θ = 0 and σ = 0.

use crate::model::{KernelParams, PhysicalParams};

/// Daily risk-free rate used by the presets.
pub const DEFAULT_RATE: f64 = 1e-4;

/// η quantiles (10%, 50%, 70%, 90%) of the filtered variance risk ratio.
pub const ETA_QUANTILES: [f64; 4] = [0.73, 1.09, 1.30, 1.69];

fn pp(beta: f64, alpha: f64, gamma: f64, lambda: f64) -> PhysicalParams {
    PhysicalParams { omega: 0.0, beta, alpha, gamma, lambda, r: DEFAULT_RATE }
}

pub fn shng_vix() -> (PhysicalParams, KernelParams) {
    (
        pp(0.805, 4.140e-6, 193.29, 2.390),
        KernelParams { theta: 0.983, zeta: 1.299, sigma: 0.089, sigma_e: 1.007, rho: 0.0 },
    )
}

pub fn shng_opt() -> (PhysicalParams, KernelParams) {
    (
        pp(0.507, 5.740e-6, 279.41, 2.193),
        KernelParams { theta: 0.996, zeta: 1.094, sigma: 0.042, sigma_e: 1.892, rho: 0.148 },
    )
}

pub fn shng_vix_opt() -> (PhysicalParams, KernelParams) {
    (
        pp(0.529, 5.404e-6, 281.02, 2.299),
        KernelParams { theta: 0.994, zeta: 1.126, sigma: 0.049, sigma_e: 1.860, rho: 0.173 },
    )
}

pub fn hng_vix() -> (PhysicalParams, KernelParams) {
    (pp(0.812, 1.216e-6, 381.20, 2.502), KernelParams::constant(1.466, 3.715, 0.0))
}

pub fn hng_opt() -> (PhysicalParams, KernelParams) {
    (pp(0.631, 1.429e-6, 499.99, 2.280), KernelParams::constant(1.227, 4.084, 0.0))
}

pub fn hng_vix_opt() -> (PhysicalParams, KernelParams) {
    (pp(0.656, 1.373e-6, 491.51, 2.291), KernelParams::constant(1.256, 4.056, 0.0))
}

/// Looks up a preset by its column label, e.g. `"SHNG[Opt]"`.
pub fn by_name(name: &str) -> Option<(PhysicalParams, KernelParams)> {
    let key: String = name.to_ascii_lowercase().chars().filter(|c| c.is_ascii_alphanumeric()).collect();
    match key.as_str() {
        "shngvix" => Some(shng_vix()),
        "shngopt" => Some(shng_opt()),
        "shngvixopt" => Some(shng_vix_opt()),
        "hngvix" => Some(hng_vix()),
        "hngopt" => Some(hng_opt()),
        "hngvixopt" => Some(hng_vix_opt()),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preset_persistence() {
        // π^P to three decimals
        for (f, want) in [(shng_vix as fn() -> _, 0.960), (shng_opt, 0.955), (shng_vix_opt, 0.956), (hng_opt, 0.988)] {
            let (p, _) = f();
            assert!((p.persistence() - want).abs() < 1e-3, "{} vs {want}", p.persistence());
        }
        assert!(by_name("SHNG[VIX+Opt]").is_some());
        assert!(by_name("nope").is_none());
    }
}
