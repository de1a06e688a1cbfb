//! Call prices and implied volatilities under a stochastic η, next to the
//! predetermined-path price and Black-Scholes.

use shng::pricing::{
    bs_implied_vol, bs_price, compensated_vol, full_expected_path, price_call_predetermined, price_call_stochastic,
    EuropeanCall,
};
use shng::presets;

fn main() -> shng::Result<()> {
    let (pp, kp) = presets::shng_opt();
    let h = pp.unconditional_variance()?;
    let s2 = kp.sigma * kp.sigma;
    let eta = 1.3;
    let hs = eta * h;

    for m in [21, 63, 126] {
        let cv = compensated_vol(&pp, &kp, eta, hs, m, s2)?;
        println!("M = {m}: h* {:.3e}, psi {:.3e}", cv.h_star, cv.psi);
        println!("{:>7} {:>9} {:>9} {:>7} {:>9}", "K", "C", "C(path)", "IV", "BS(IV0)");
        let path = full_expected_path(&kp, eta, m);
        for k in [90.0, 95.0, 100.0, 105.0, 110.0] {
            let call = EuropeanCall { spot: 100.0, strike: k, maturity_days: m, rate: pp.r };
            let c = price_call_stochastic(&pp, &kp, &call, eta, hs, s2)?;
            let cp = price_call_predetermined(&pp, &call, &path, hs)?;
            let iv = bs_implied_vol(c, &call)?;
            let bs = bs_price(&call, (hs * 252.0).sqrt());
            println!("{k:>7.1} {c:>9.4} {cp:>9.4} {:>7.2} {bs:>9.4}", 100.0 * iv);
        }
    }
    Ok(())
}
