//! VIX term structure across η states, with the closed form checked
//! against the double sum and the η-sensitivity band.

use shng::presets;
use shng::vix::{delta_bound, dvix_deta, vix_from_terms, vix_price, vix_terms_bruteforce, vix_terms_closed};

fn main() -> shng::Result<()> {
    let (pp, kp) = presets::shng_vix();
    let s2 = kp.sigma * kp.sigma;
    let h = pp.unconditional_variance()?;

    println!("{:>6} {:>5} {:>9} {:>10} {:>12}", "eta", "M", "VIX", "dVIX/deta", "closed-brute");
    for &eta in &presets::ETA_QUANTILES {
        for m in [1, 21, 63, 126] {
            let v = vix_price(&pp, &kp, eta, eta * h, m, s2)?.value;
            let d = dvix_deta(&pp, &kp, eta, h, m, s2)?;
            let brute = vix_from_terms(&vix_terms_bruteforce(&pp, &kp, eta, m)?, eta * h, m, s2)?;
            println!("{eta:>6.2} {m:>5} {v:>9.4} {d:>10.4} {:>12.1e}", v - brute);
        }
    }

    let t = vix_terms_closed(&pp, &kp, kp.zeta, 21)?;
    println!("\n21-day terms at eta = zeta: a1 {:.3e}, a2 {:.3e}, a3 {:.4}", t.a1, t.a2, t.a3);
    let (lo, hi) = delta_bound(&pp, &kp, kp.zeta, 0.73, 1.69, kp.zeta * h, 21, s2)?;
    println!("VIX at the persistence of eta = 0.73 and 1.69: {lo:.3} .. {hi:.3}");
    Ok(())
}
