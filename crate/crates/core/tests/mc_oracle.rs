use shng::mc::{
    density_compare, density_mass, fourier_density, kernel_density, linspace, mc_option_price, simulate,
    simulate_terminal, EtaMode, SimConfig, SimState,
};
use shng::pricing::{price_call_predetermined, EuropeanCall, FourierRule};
use shng::presets;

#[test]
fn fourier_density_matches_simulated_returns() {
    let (pp, mut kp) = presets::shng_opt();
    kp.sigma = 0.0;
    let eta = 1.3;
    let m = 21;
    let h = pp.unconditional_variance().unwrap();
    let mut cfg = SimConfig::new(100_000, m, 11);
    cfg.eta_mode = EtaMode::Constant(eta);
    let t = simulate_terminal(&cfg, &pp, &kp, &SimState { h_next: h, eta }).unwrap();

    let sd = (m as f64 * eta * h).sqrt();
    let grid = linspace(-7.0 * sd, 5.0 * sd, 241);
    let f = fourier_density(&pp, &vec![eta; m + 1], eta * h, m, &grid, &FourierRule::new(64, 0.3)).unwrap();
    assert!((density_mass(&grid, &f) - 1.0).abs() < 1e-3);
    let kde = kernel_density(&t.log_return, &grid).unwrap();
    let d = density_compare(&grid, &f, &kde.density).unwrap();
    assert!(d.l1 < 0.04, "L1 {}", d.l1);
}

#[test]
fn predetermined_price_matches_constant_eta_simulation() {
    let (pp, mut kp) = presets::shng_opt();
    kp.sigma = 0.0;
    let eta = 1.09;
    let m = 63;
    let h = pp.unconditional_variance().unwrap();
    let mut cfg = SimConfig::new(100_000, m, 12);
    cfg.eta_mode = EtaMode::Constant(eta);
    let s0 = SimState { h_next: h, eta };
    for k in [95.0, 100.0, 105.0] {
        let call = EuropeanCall { spot: 100.0, strike: k, maturity_days: m, rate: pp.r };
        let est = mc_option_price(&cfg, &pp, &kp, &call, &s0).unwrap();
        let c = price_call_predetermined(&pp, &call, &vec![eta; m + 1], eta * h).unwrap();
        assert!((c - est.value).abs() < (3.0 * est.se).max(0.005 * est.value), "K {k}: {c} vs {} ({})", est.value, est.se);
    }
}

#[test]
fn simulation_repeats_and_seeds_differ() {
    let (pp, kp) = presets::shng_vix_opt();
    let s0 = SimState { h_next: 1.2e-4, eta: 1.1 };
    let a = simulate(&SimConfig::new(500, 30, 5), &pp, &kp, &s0).unwrap();
    let b = simulate(&SimConfig::new(500, 30, 5), &pp, &kp, &s0).unwrap();
    let c = simulate(&SimConfig::new(500, 30, 6), &pp, &kp, &s0).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.returns, c.returns);
}
