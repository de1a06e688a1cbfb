//! Filters η_t through a simulated VIX and option panel and summarises the
//! scaled scores.

use shng::estimation::{filter_sequence, DataConfig, FilterConfig, ModelSpec, Variant};
use shng::mc::{simulate_panel_data, PanelConfig};
use shng::presets;

fn main() -> shng::Result<()> {
    let (pp, kp) = presets::shng_vix_opt();
    let spec = ModelSpec::new(Variant::Shng, DataConfig::VixOpt, pp, kp);
    let fc = FilterConfig::default();
    let panel = simulate_panel_data(&spec, &PanelConfig { days: 500, seed: 3, ..Default::default() }, &fc)?;
    let rep = filter_sequence(&spec, &panel.days, &fc)?;

    println!("ll: returns {:.2}, VIX {:.2}, options {:.2}, total {:.2}", rep.ll_returns, rep.ll_vix, rep.ll_opt, rep.ll_total);
    let s: Vec<f64> = rep.days.iter().map(|d| d.score).collect();
    let mean = s.iter().sum::<f64>() / s.len() as f64;
    let var = s.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (s.len() - 1) as f64;
    println!("scores: mean {mean:.3}, variance {var:.3}, eta floor hits {}", rep.eta_floor_hits);

    let err: f64 = rep.days.iter().zip(&panel.eta).map(|(d, e)| (d.eta - e).abs()).sum::<f64>() / s.len() as f64;
    println!("mean |filtered eta - true eta| {err:.2e} (same parameters, so the paths coincide)");
    println!("{:>5} {:>8} {:>11} {:>8}", "t", "eta", "h", "score");
    for t in (0..rep.days.len()).step_by(50) {
        let d = &rep.days[t];
        println!("{t:>5} {:>8.4} {:>11.4e} {:>8.3}", d.eta, d.h, d.score);
    }
    Ok(())
}
