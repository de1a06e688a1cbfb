//! Monte Carlo oracle: martingale gap, VIX and call prices against the
//! closed forms, and moments of cumulative returns.

use shng::mc::{mc_martingale_gap, mc_option_price, mc_vix, term_structure_moments, Leverage, SimConfig, SimState};
use shng::pricing::{price_call_stochastic, EuropeanCall};
use shng::presets;
use shng::vix::vix_price;

fn main() -> shng::Result<()> {
    let (pp, kp) = presets::shng_vix_opt();
    let h = pp.unconditional_variance()?;
    let s2 = kp.sigma * kp.sigma;
    let s0 = SimState { h_next: h, eta: 1.3 };
    let m = 63;
    let cfg = SimConfig::new(50_000, m, 1);

    let gap = mc_martingale_gap(&cfg, &pp, &kp, &s0)?;
    println!("E[S_T]e^(-rM)/S_t - 1 = {:.2e} (SE {:.1e})", gap.value, gap.se);

    let approx = SimConfig { leverage: Leverage::Approx, ..cfg.clone() };
    let v = mc_vix(&approx, &pp, &kp, &s0)?;
    let closed = vix_price(&pp, &kp, s0.eta, s0.eta * h, m, s2)?.value;
    println!("{m}-day VIX: closed form {closed:.4}, MC {:.4} (SE {:.4})", v.vix.value, v.vix.se);

    for k in [95.0, 100.0, 105.0] {
        let call = EuropeanCall { spot: 100.0, strike: k, maturity_days: m, rate: pp.r };
        let mc = mc_option_price(&cfg, &pp, &kp, &call, &s0)?;
        let c = price_call_stochastic(&pp, &kp, &call, s0.eta, s0.eta * h, s2)?;
        println!("K {k}: approximation {c:.4}, MC {:.4} (SE {:.4})", mc.value, mc.se);
    }

    println!("{:>4} {:>10} {:>8} {:>8}", "M", "variance", "skew", "kurt");
    for p in term_structure_moments(&SimConfig::new(20_000, 1, 2), &pp, &kp, 1.3, h, 126)?.iter().step_by(21) {
        println!("{:>4} {:>10.3e} {:>8.3} {:>8.3}", p.horizon, p.variance, p.skewness, p.kurtosis);
    }
    Ok(())
}
