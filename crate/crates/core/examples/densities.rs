//! Density of the 21-day log return: Fourier inversion along the expected
//! η path against a kernel estimate from simulated paths.

use shng::mc::{density_compare, density_mass, fourier_density, kernel_density, linspace, simulate_terminal, SimConfig, SimState};
use shng::pricing::{compensated_vol, full_expected_path, FourierRule};
use shng::presets;

fn main() -> shng::Result<()> {
    let (pp, kp) = presets::shng_opt();
    let h = pp.unconditional_variance()?;
    let m = 21;
    let rule = FourierRule::new(64, 0.3);
    for eta in [0.73, 1.69] {
        let cv = compensated_vol(&pp, &kp, eta, eta * h, m, kp.sigma * kp.sigma)?;
        let sd = (m as f64 * cv.h_tilde).sqrt();
        let grid = linspace(-7.0 * sd, 5.0 * sd, 201);
        let f = fourier_density(&pp, &full_expected_path(&kp, eta, m), cv.h_tilde, m, &grid, &rule)?;
        let t = simulate_terminal(&SimConfig::new(100_000, m, 4), &pp, &kp, &SimState { h_next: h, eta })?;
        let kde = kernel_density(&t.log_return, &grid)?;
        let d = density_compare(&grid, &f, &kde.density)?;
        println!(
            "eta {eta}: mass {:.4}, L1 {:.4}, sup {:.3}; MC skew {:.3}, kurt {:.3}",
            density_mass(&grid, &f),
            d.l1,
            d.sup,
            kde.skewness,
            kde.kurtosis
        );
    }
    Ok(())
}
