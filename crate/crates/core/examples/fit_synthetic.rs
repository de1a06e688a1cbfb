//! Maximum likelihood on a simulated option panel, started away from the
//! truth, with sandwich standard errors. Takes a few minutes.

use shng::estimation::{fit_mle, DataConfig, FitConfig, ModelSpec, Variant};
use shng::mc::{simulate_panel_data, PanelConfig};
use shng::presets;

fn main() -> shng::Result<()> {
    let (pp, kp) = presets::shng_opt();
    let truth = ModelSpec::new(Variant::Shng, DataConfig::Opt, pp, kp);
    let cfg = FitConfig::default();
    let panel = simulate_panel_data(&truth, &PanelConfig { days: 400, seed: 9, ..Default::default() }, &cfg.filter)?;

    let mut start = truth;
    start.pp.gamma *= 0.9;
    start.kp.zeta *= 1.1;
    start.kp.sigma *= 0.8;
    start.kp.rho = 0.1;
    let fit = fit_mle(&start, &panel.days, &cfg)?;

    println!("ll {:.3} after {} iterations, converged {}", fit.objective, fit.iterations, fit.converged);
    println!("{:>8} {:>13} {:>11} {:>13}", "param", "estimate", "se", "truth");
    for e in &fit.estimates {
        let se = e.se.map_or("-".to_string(), |s| format!("{s:.3e}"));
        println!("{:>8} {:>13.5e} {:>11} {:>13.5e}", e.param.name(), e.value, se, e.param.get(&truth));
    }
    Ok(())
}
