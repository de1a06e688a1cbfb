//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Criteria listed in `KNOWN_FAILING` are implemented at their stated
//! tolerance and fail here: 4 and 5 on this model, 9 on its fixed seed.
//! See the README. Any other failure makes the target exit non-zero.

use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use shng::estimation::{
    acf, error_series, fit_mle, loglik_day, loglik_day_dense, DataConfig, FilterConfig, FitConfig, ModelSpec,
    Variant,
};
use shng::io::{execute, Command, RunConfig};
use shng::mc::{
    mc_martingale_gap, simulate, simulate_panel_data, simulate_terminal, EtaMode, Measure, PanelConfig, SimConfig,
    SimState,
};
use shng::pricing::{
    bs_price, bs_vega, compensated_vol, full_expected_path, mgf_coeffs, price_call_predetermined,
    price_call_stochastic, EuropeanCall,
};
use shng::score::{doption_deta_step, Equicorr, SensitivityBackend};
use shng::vix::{dvix_deta, vix_from_terms, vix_price, vix_terms_bruteforce, vix_terms_closed};
use shng::{presets, KernelParams, PhysicalParams};

const KNOWN_FAILING: [usize; 3] = [4, 5, 9];

struct Outcome {
    pass: bool,
    detail: String,
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn c1_vix_closed_form() -> Outcome {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    let mut n = 0;
    while n < 1000 {
        let alpha = rng.random_range(1e-7..1e-5);
        let gamma = rng.random_range(0.0..500.0);
        let lambda = rng.random_range(-1.0..5.0);
        let room = 1.0 - alpha * gamma * gamma;
        if room <= 0.05 {
            continue;
        }
        let beta = rng.random_range(0.0..room);
        let pp = PhysicalParams { omega: rng.random_range(0.0..1e-6), beta, alpha, gamma, lambda, r: 1e-4 };
        let kp = KernelParams {
            theta: rng.random_range(0.0..0.999),
            zeta: rng.random_range(0.5..2.0),
            sigma: rng.random_range(0.0..0.2),
            sigma_e: 1.0,
            rho: 0.0,
        };
        let eta = rng.random_range(0.2..3.0);
        if pp.q_persistence(eta) >= 1.0 || pp.q_persistence(kp.zeta) >= 1.0 {
            continue;
        }
        let hs = rng.random_range(2e-5..5e-4);
        let s2 = kp.sigma * kp.sigma;
        for m in [1usize, 2, 21, 63, 126] {
            let a = vix_from_terms(&vix_terms_closed(&pp, &kp, eta, m).unwrap(), hs, m, s2).unwrap();
            let b = vix_from_terms(&vix_terms_bruteforce(&pp, &kp, eta, m).unwrap(), hs, m, s2).unwrap();
            worst = worst.max(rel(a, b));
        }
        n += 1;
    }
    let secs = t0.elapsed().as_secs_f64();
    Outcome {
        pass: worst < 1e-10 && secs < 10.0,
        detail: format!("{n} draws x 5 maturities, max rel diff {worst:.2e}, {secs:.1} s"),
    }
}

fn c2_martingale() -> Outcome {
    let mut ok = true;
    let mut worst_mgf: f64 = 0.0;
    let mut worst_z: f64 = 0.0;
    let mut slowest: f64 = 0.0;
    let mut configs = 0;
    for (name, (pp, kp)) in [("SHNG[Opt]", presets::shng_opt()), ("SHNG[VIX]", presets::shng_vix()), ("HNG[Opt]", presets::hng_opt())] {
        let h = pp.unconditional_variance().unwrap();
        for &eta in &[0.73, 1.69] {
            for &m in &[21usize, 63, 126] {
                let path = full_expected_path(&kp, eta, m);
                let g = mgf_coeffs(&pp, &path, num_complex::Complex64::new(1.0, 0.0), m).unwrap().mgf(eta * h);
                worst_mgf = worst_mgf.max(rel(g.re, (pp.r * m as f64).exp())).max(g.im.abs());
                for mode in [EtaMode::Ar1Gaussian, EtaMode::Constant(eta)] {
                    let t0 = Instant::now();
                    let mut cfg = SimConfig::new(100_000, m, 200 + configs);
                    cfg.eta_mode = mode;
                    let gap = mc_martingale_gap(&cfg, &pp, &kp, &SimState { h_next: h, eta }).unwrap();
                    let secs = t0.elapsed().as_secs_f64();
                    slowest = slowest.max(secs);
                    let z = gap.value / gap.se;
                    worst_z = worst_z.max(z.abs());
                    if z.abs() >= 3.0 || secs >= 60.0 {
                        ok = false;
                        println!("    {name} eta {eta} M {m}: z = {z:.2}, {secs:.1} s");
                    }
                    configs += 1;
                }
            }
        }
    }
    Outcome {
        pass: ok && worst_mgf < 1e-12,
        detail: format!(
            "|g*(1)e^(-rM) - 1| <= {worst_mgf:.1e}; {configs} MC configs at 100k paths, max |gap|/SE {worst_z:.2}, slowest {slowest:.1} s"
        ),
    }
}

fn c3_black_scholes() -> Outcome {
    let h = 1.1e-4;
    let eta = 1.3;
    let pp = PhysicalParams { omega: h, beta: 0.0, alpha: 0.0, gamma: 0.0, lambda: 0.0, r: 1e-4 };
    let mut worst: f64 = 0.0;
    for &m in &[10usize, 21, 63, 126, 252] {
        for &k in &[90.0, 95.0, 100.0, 105.0, 110.0] {
            let call = EuropeanCall { spot: 100.0, strike: k, maturity_days: m, rate: pp.r };
            let path = vec![eta; m + 1];
            let c = price_call_predetermined(&pp, &call, &path, eta * h).unwrap();
            let bs = bs_price(&call, (eta * h * 252.0).sqrt());
            worst = worst.max(rel(c, bs));
        }
    }
    Outcome { pass: worst < 1e-4, detail: format!("5x5 grid, max rel error {worst:.2e}") }
}

fn c4_approximation() -> Outcome {
    let t0 = Instant::now();
    let (pp, kp) = presets::shng_opt();
    let h = pp.unconditional_variance().unwrap();
    let m = 63;
    let s2 = kp.sigma * kp.sigma;
    let strikes = [90.0, 95.0, 100.0, 105.0, 110.0];
    let mut fails = 0;
    let mut worst = (0.0, 0.0, 0.0);
    for (i, &eta) in presets::ETA_QUANTILES.iter().enumerate() {
        let cfg = SimConfig::new(100_000, m, 400 + i as u64);
        let t = simulate_terminal(&cfg, &pp, &kp, &SimState { h_next: h, eta }).unwrap();
        let disc = (-pp.r * m as f64).exp();
        for &k in &strikes {
            let pay: Vec<f64> = t.log_return.iter().map(|lr| disc * (100.0 * lr.exp() - k).max(0.0)).collect();
            let (mc, se) = shng::mc::mean_se(&pay, cfg.antithetic);
            let call = EuropeanCall { spot: 100.0, strike: k, maturity_days: m, rate: pp.r };
            let a = price_call_stochastic(&pp, &kp, &call, eta, eta * h, s2).unwrap();
            let tol = (3.0 * se).max(0.005 * mc);
            let ratio = (a - mc).abs() / tol;
            if ratio > 1.0 {
                fails += 1;
                println!("    eta {eta} K {k}: approx {a:.4}, MC {mc:.4} (SE {se:.4}), rel {:+.2}%", 100.0 * (a - mc) / mc);
            }
            if ratio > worst.0 {
                worst = (ratio, eta, k);
            }
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    Outcome {
        pass: fails == 0 && secs < 300.0,
        detail: format!(
            "{fails}/20 prices outside max(3 SE, 0.5%); worst {:.2}x tolerance at eta {} K {}; {secs:.1} s",
            worst.0, worst.1, worst.2
        ),
    }
}

fn c5_decomposition() -> Outcome {
    let (pp, kp) = presets::shng_opt();
    let h = pp.unconditional_variance().unwrap();
    let eta = kp.zeta;
    let hs = eta * h;
    let s2 = kp.sigma * kp.sigma;
    let share = |m: usize| {
        let t = vix_terms_closed(&pp, &kp, eta, m).unwrap();
        t.a2 * s2 / (t.a1 + t.a2 * s2 + t.a3 * hs)
    };
    let psi = |m: usize| compensated_vol(&pp, &kp, eta, hs, m, s2).unwrap().psi / hs;
    let checks = [
        ("a2 share M=21", share(21), 0.013),
        ("a2 share M=126", share(126), 0.061),
        ("psi/h* M=21", psi(21), 0.015),
        ("psi/h* M=126", psi(126), 0.49),
    ];
    let mut pass = true;
    let parts: Vec<String> = checks
        .iter()
        .map(|(n, v, want)| {
            let ok = rel(*v, *want) <= 0.3;
            pass &= ok;
            format!("{n} {:.2}% vs {:.1}% ({})", 100.0 * v, 100.0 * want, if ok { "ok" } else { "off" })
        })
        .collect();
    Outcome { pass, detail: parts.join("; ") }
}

fn c6_scores() -> Outcome {
    let mut worst_vix: f64 = 0.0;
    let mut worst_opt: f64 = 0.0;
    for (pp, kp) in [presets::shng_vix(), presets::shng_opt()] {
        let s2 = kp.sigma * kp.sigma;
        let hbar = pp.unconditional_variance().unwrap();
        for &eta in &[0.5, 0.73, 1.09, 1.3, 1.69, 2.5] {
            for &hm in &[0.5, 1.0, 2.0] {
                let h = hm * hbar;
                for &m in &[21usize, 63, 126] {
                    let an = dvix_deta(&pp, &kp, eta, h, m, s2).unwrap();
                    let st = 1e-5 * eta;
                    let f = |e: f64| vix_price(&pp, &kp, e, e * h, m, s2).unwrap().value;
                    let fd = (f(eta + st) - f(eta - st)) / (2.0 * st);
                    worst_vix = worst_vix.max(rel(an, fd));
                }
                for &m in &[21usize, 63, 126] {
                    for &k in &[95.0, 100.0, 105.0] {
                        let call = EuropeanCall { spot: 100.0, strike: k, maturity_days: m, rate: pp.r };
                        let vega = bs_vega(&call, 0.2);
                        let fd = SensitivityBackend::FiniteDifference;
                        let a = doption_deta_step(&pp, &kp, &call, vega, eta, eta * h, s2, fd, 2e-3).unwrap();
                        let b = doption_deta_step(&pp, &kp, &call, vega, eta, eta * h, s2, fd, 1e-3).unwrap();
                        worst_opt = worst_opt.max(rel(a, b));
                    }
                }
            }
        }
    }
    Outcome {
        pass: worst_vix < 1e-6 && worst_opt < 1e-6,
        detail: format!("dVIX/deta vs FD max rel {worst_vix:.2e}; option FD step halving max rel {worst_opt:.2e}"),
    }
}

fn c7_fisher() -> Outcome {
    let (pp, kp) = presets::shng_vix();
    let spec = ModelSpec::new(Variant::Shng, DataConfig::Vix, pp, kp);
    let fc = FilterConfig::default();
    let mut s = Vec::with_capacity(250_000);
    for path in 0..500u64 {
        let pc = PanelConfig { days: 500, seed: 7_000 + path, maturities: vec![], measure: Measure::Q, ..Default::default() };
        s.extend(simulate_panel_data(&spec, &pc, &fc).unwrap().scores);
    }
    let n = s.len() as f64;
    let mean = s.iter().sum::<f64>() / n;
    let var = s.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let tol = 3.0 / n.sqrt();
    Outcome {
        pass: (var - 1.0).abs() < tol,
        detail: format!("var(s) = {var:.5} over {} scores, tolerance 1 +/- {tol:.4} (T = all scores)", s.len()),
    }
}

fn c8_equicorrelation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst_ll: f64 = 0.0;
    let mut worst_alg: f64 = 0.0;
    for n in 1..=12usize {
        let lo = if n > 1 { -1.0 / (n as f64 - 1.0) } else { -0.9 };
        for _ in 0..50 {
            let rho = rng.random_range((lo + 1e-3)..0.95);
            let kp = KernelParams { theta: 0.9, zeta: 1.0, sigma: 0.1, sigma_e: rng.random_range(0.5..3.0), rho };
            let e: Vec<f64> = (0..n).map(|_| rng.random_range(-4.0..4.0)).collect();
            let a = loglik_day(&e, &kp).unwrap();
            let b = loglik_day_dense(&e, &kp).unwrap();
            worst_ll = worst_ll.max((a - b).abs());
            let q = Equicorr::new(n, rho).unwrap();
            let d = q.dense();
            worst_alg = worst_alg.max(rel(q.det(), d.clone().determinant()));
            let inv = d.try_inverse().unwrap();
            worst_alg = worst_alg.max((inv - q.dense_inverse()).abs().max());
        }
    }
    Outcome {
        pass: worst_ll < 1e-10 && worst_alg < 1e-10,
        detail: format!("max |ll fast - dense| {worst_ll:.1e}; det/inverse max diff {worst_alg:.1e}"),
    }
}

fn c9_c10_recovery() -> (Outcome, Outcome) {
    let t0 = Instant::now();
    let (pp, kp) = presets::shng_opt();
    let truth = ModelSpec::new(Variant::Shng, DataConfig::Opt, pp, kp);
    let fc = FilterConfig::default();
    let data = simulate_panel_data(&truth, &PanelConfig { days: 2000, seed: 2024, ..Default::default() }, &fc).unwrap();
    let mut start = truth;
    start.pp.beta *= 0.9;
    start.pp.alpha *= 1.2;
    start.pp.gamma *= 0.9;
    start.pp.lambda *= 1.2;
    start.kp.theta = 0.99;
    start.kp.zeta *= 1.1;
    start.kp.sigma *= 0.8;
    start.kp.sigma_e *= 1.1;
    start.kp.rho = 0.1;
    let cfg = FitConfig::default();
    let shng = fit_mle(&start, &data.days, &cfg).unwrap();
    let (hp, hk) = presets::hng_opt();
    let hng_start = ModelSpec::new(Variant::Hng, DataConfig::Opt, hp, KernelParams { rho: 0.1, ..hk });
    let hng = fit_mle(&hng_start, &data.days, &cfg).unwrap();

    let mut worst_z: f64 = 0.0;
    let mut missing = 0;
    let mut lines = Vec::new();
    for e in &shng.estimates {
        let tv = e.param.get(&truth);
        match e.se {
            Some(se) => {
                let z = (e.value - tv) / se;
                worst_z = worst_z.max(z.abs());
                lines.push(format!("{} {z:+.2}", e.param.name()));
            }
            None => missing += 1,
        }
    }
    println!("    z-scores: {}", lines.join(", "));
    let nested_ok = shng.objective >= hng.objective;
    let c9 = Outcome {
        pass: worst_z < 3.0 && missing == 0 && shng.converged && nested_ok,
        detail: format!(
            "{} params, max |z| {worst_z:.2}, converged {}; ll SHNG {:.2} >= HNG {:.2}: {nested_ok}; {:.0} s",
            shng.estimates.len(),
            shng.converged,
            shng.objective,
            hng.objective,
            t0.elapsed().as_secs_f64()
        ),
    };
    let burn = fc.burn_in;
    let lag1 = |r: &shng::estimation::LikelihoodReport| acf(&error_series(r, burn).1, 1)[0];
    let (a_shng, a_hng) = (lag1(&shng.report), lag1(&hng.report));
    let c10 = Outcome {
        pass: a_hng > 0.5 && a_shng < 0.25,
        detail: format!("lag-1 ACF of daily mean option error: HNG fit {a_hng:.3} (> 0.5), SHNG fit {a_shng:.3} (< 0.25)"),
    };
    (c9, c10)
}

fn c11_determinism() -> Outcome {
    let (pp, kp) = presets::shng_opt();
    let mut cfg = SimConfig::new(2_000, 21, 99);
    cfg.measure = Measure::Q;
    let s0 = SimState { h_next: 1.3e-4, eta: 1.2 };
    let same_paths = simulate(&cfg, &pp, &kp, &s0).unwrap() == simulate(&cfg, &pp, &kp, &s0).unwrap();

    let text = r#"
seed = 5
[model]
variant = "shng"
data = "vix-opt"
preset = "SHNG[VIX+Opt]"
[synthetic]
days = 120
[estimation]
evaluate_only = true
[simulation]
n_paths = 2000
horizon_days = 21
"#;
    let run = RunConfig::from_toml(text).unwrap();
    let root = tempfile::tempdir().unwrap();
    let mut identical = true;
    let mut files = 0;
    for cmd in [Command::Simulate, Command::Fit] {
        let a = root.path().join(format!("{}-a", cmd.name()));
        let b = root.path().join(format!("{}-b", cmd.name()));
        execute(cmd, &run, &a).unwrap();
        execute(cmd, &run, &b).unwrap();
        for entry in std::fs::read_dir(&a).unwrap() {
            let p = entry.unwrap().path();
            let name = p.file_name().unwrap();
            identical &= std::fs::read(&p).unwrap() == std::fs::read(b.join(name)).unwrap();
            files += 1;
        }
    }
    Outcome {
        pass: same_paths && identical,
        detail: format!("repeated MC panels equal: {same_paths}; {files} output files byte-identical: {identical}"),
    }
}

fn main() -> ExitCode {
    if std::env::args().any(|a| a == "--list") {
        return ExitCode::SUCCESS;
    }
    let t0 = Instant::now();
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    let mut record = |n: usize, name: &'static str, o: Outcome| {
        println!("criterion {n:>2} {}: {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((n, name, o));
    };
    record(1, "VIX closed form vs double sum", c1_vix_closed_form());
    record(2, "martingale identity and MC martingale", c2_martingale());
    record(3, "Black-Scholes nesting", c3_black_scholes());
    record(4, "stochastic-eta approximation vs MC", c4_approximation());
    record(5, "variance decomposition at unconditional state", c5_decomposition());
    record(6, "score derivatives", c6_scores());
    record(7, "Fisher normalization", c7_fisher());
    record(8, "equicorrelation algebra", c8_equicorrelation());
    let (c9, c10) = c9_c10_recovery();
    record(9, "parameter recovery", c9);
    record(10, "pricing-error autocorrelation", c10);
    record(11, "determinism", c11_determinism());

    let passed = results.iter().filter(|r| r.2.pass).count();
    println!("{passed}/{} criteria pass ({:.0} s)", results.len(), t0.elapsed().as_secs_f64());
    let unexpected: Vec<usize> =
        results.iter().filter(|r| !r.2.pass && !KNOWN_FAILING.contains(&r.0)).map(|r| r.0).collect();
    if unexpected.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("unexpected failures: {unexpected:?}");
        ExitCode::FAILURE
    }
}
