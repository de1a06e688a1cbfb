//! Monte Carlo under P and Q: paths with constant, predetermined or AR(1)
//! η, option and VIX oracles, return-density and moment term structures,
//! and a generator of synthetic return/VIX/option panels.
//!
//! Every antithetic pair draws from its own ChaCha stream, so results do
//! not depend on the thread count. Reductions run sequentially over
//! per-path outputs in path order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::estimation::{day_panel, DataConfig, DayEval, DayObs, Engine, FilterConfig, ModelSpec, OptionObs, Variant};
use crate::model::{KernelParams, PhysicalParams, H_FLOOR};
use crate::pricing::{bs_delta, bs_implied_vol, bs_vega, mgf_coeffs, EuropeanCall, FourierRule};
use crate::score::{physical_shock, score_gradient, Equicorr, FisherContext, ETA_FLOOR};
use crate::vix::annualizer;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Measure {
    P,
    Q,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EtaMode {
    Constant(f64),
    /// η_{t+j} for j = 0, 1, ...; the last value is held beyond the end.
    Predetermined(Vec<f64>),
    /// η_{t+1} = θη_t + (1−θ)ζ + σε with ε ~ N(0,1) independent of returns.
    Ar1Gaussian,
    /// As `Ar1Gaussian` with ε resampled from a score sample.
    Ar1EmpiricalScore { scores: Vec<f64>, standardize: bool },
}

/// How the risk-neutral shock enters the physical variance update. Returns
/// always follow the exact risk-neutral law.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Leverage {
    /// z = √η z* − (λ + ½η − ½)√h.
    Exact,
    /// z = √η z* − λ√h, dropping the ½(η−1) term. The closed-form VIX is
    /// exact in expectation under this update.
    Approx,
}

/// Handling of a simulated η below the floor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FloorPolicy {
    Clamp,
    Reflect,
    /// Redraw ε (up to 100 times, then clamp).
    Reject,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n_paths: usize,
    pub horizon_days: usize,
    pub seed: u64,
    pub measure: Measure,
    pub eta_mode: EtaMode,
    pub leverage: Leverage,
    pub antithetic: bool,
    pub floor: FloorPolicy,
    pub eta_floor: f64,
}

impl SimConfig {
    pub fn new(n_paths: usize, horizon_days: usize, seed: u64) -> Self {
        SimConfig {
            n_paths,
            horizon_days,
            seed,
            measure: Measure::Q,
            eta_mode: EtaMode::Ar1Gaussian,
            leverage: Leverage::Exact,
            antithetic: true,
            floor: FloorPolicy::Clamp,
            eta_floor: ETA_FLOOR,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_paths == 0 || self.horizon_days == 0 {
            return domain("need at least one path and one day");
        }
        if self.antithetic && self.n_paths % 2 == 1 {
            return domain("antithetic sampling needs an even path count");
        }
        match &self.eta_mode {
            EtaMode::Constant(e) if !(*e > 0.0) => domain("constant eta must be positive"),
            EtaMode::Predetermined(p) if p.is_empty() || p.iter().any(|v| !(*v > 0.0)) => {
                domain("predetermined eta path must be non-empty and positive")
            }
            EtaMode::Ar1EmpiricalScore { scores, .. } if scores.len() < 2 => domain("score sample too small"),
            _ => Ok(()),
        }
    }
}

/// Time-t information: h_{t+1} and η_t.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimState {
    pub h_next: f64,
    pub eta: f64,
}

/// Full paths, day-major per path. Entry j of each vector is day t+1+j;
/// `eta[j]` is the η in force for that day's return.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimPanel {
    pub returns: Vec<Vec<f64>>,
    pub h: Vec<Vec<f64>>,
    pub h_star: Vec<Vec<f64>>,
    pub eta: Vec<Vec<f64>>,
    pub floor_events: usize,
}

struct EpsSource {
    sample: Option<Vec<f64>>,
}

impl EpsSource {
    fn new(mode: &EtaMode) -> Self {
        match mode {
            EtaMode::Ar1EmpiricalScore { scores, standardize } => {
                let mut v = scores.clone();
                if *standardize {
                    let n = v.len() as f64;
                    let m = v.iter().sum::<f64>() / n;
                    let sd = (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
                    v.iter_mut().for_each(|x| *x = (*x - m) / sd);
                }
                EpsSource { sample: Some(v) }
            }
            _ => EpsSource { sample: None },
        }
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> f64 {
        match &self.sample {
            Some(v) => v[rng.random_range(0..v.len())],
            None => rng.sample(StandardNormal),
        }
    }
}

// One path; `visit(j, ret, h, h_star, eta)` sees each day. Returns floor events.
#[allow(clippy::too_many_arguments)]
fn run_path<F: FnMut(usize, f64, f64, f64, f64)>(
    cfg: &SimConfig,
    pp: &PhysicalParams,
    kp: &KernelParams,
    s0: &SimState,
    eps: &EpsSource,
    rng: &mut ChaCha8Rng,
    sign: f64,
    mut visit: F,
) -> usize {
    let mut h = s0.h_next;
    let mut eta = s0.eta;
    let mut events = 0;
    for j in 0..cfg.horizon_days {
        let e = sign * rng.sample::<f64, _>(StandardNormal);
        let sh = h.sqrt();
        let (z, z_var) = match cfg.measure {
            Measure::P => (e, e),
            Measure::Q => {
                let z = eta.sqrt() * e - (pp.lambda + 0.5 * eta - 0.5) * sh;
                match cfg.leverage {
                    Leverage::Exact => (z, z),
                    Leverage::Approx => (z, eta.sqrt() * e - pp.lambda * sh),
                }
            }
        };
        let ret = pp.r + (pp.lambda - 0.5) * h + sh * z;
        visit(j, ret, h, eta * h, eta);
        h = pp.next_variance(h, z_var).max(H_FLOOR);
        eta = match &cfg.eta_mode {
            EtaMode::Constant(v) => *v,
            EtaMode::Predetermined(p) => p[(j + 1).min(p.len() - 1)],
            EtaMode::Ar1Gaussian | EtaMode::Ar1EmpiricalScore { .. } => {
                let base = kp.theta * eta + (1.0 - kp.theta) * kp.zeta;
                let mut next = base + kp.sigma * sign * eps.draw(rng);
                if next < cfg.eta_floor {
                    events += 1;
                    next = match cfg.floor {
                        FloorPolicy::Clamp => cfg.eta_floor,
                        FloorPolicy::Reflect => (2.0 * cfg.eta_floor - next).max(cfg.eta_floor),
                        FloorPolicy::Reject => {
                            let mut v = cfg.eta_floor;
                            for _ in 0..100 {
                                let c = base + kp.sigma * eps.draw(rng);
                                if c >= cfg.eta_floor {
                                    v = c;
                                    break;
                                }
                            }
                            v
                        }
                    };
                }
                next
            }
        };
    }
    events
}

fn pair_rng(seed: u64, pair: usize) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(pair as u64);
    r
}

/// Runs `f` over every path, in parallel over antithetic pairs, and returns
/// the outputs in path order.
fn map_paths<T, F>(cfg: &SimConfig, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(&mut ChaCha8Rng, f64) -> T + Sync,
{
    let per = if cfg.antithetic { 2 } else { 1 };
    let groups = cfg.n_paths / per;
    let nested: Vec<Vec<T>> = (0..groups)
        .into_par_iter()
        .map(|g| {
            let mut out = Vec::with_capacity(per);
            for k in 0..per {
                // the antithetic partner replays the same stream
                let mut rng = pair_rng(cfg.seed, g);
                out.push(f(&mut rng, if k == 0 { 1.0 } else { -1.0 }));
            }
            out
        })
        .collect();
    nested.into_iter().flatten().collect()
}

/// Stores full paths; meant for modest path counts.
pub fn simulate(cfg: &SimConfig, pp: &PhysicalParams, kp: &KernelParams, s0: &SimState) -> Result<SimPanel> {
    cfg.validate()?;
    pp.validate()?;
    let eps = EpsSource::new(&cfg.eta_mode);
    let m = cfg.horizon_days;
    let paths = map_paths(cfg, |rng, sign| {
        let mut r = vec![0.0; m];
        let mut h = vec![0.0; m];
        let mut hs = vec![0.0; m];
        let mut e = vec![0.0; m];
        let ev = run_path(cfg, pp, kp, s0, &eps, rng, sign, |j, ret, hh, hstar, eta| {
            r[j] = ret;
            h[j] = hh;
            hs[j] = hstar;
            e[j] = eta;
        });
        (r, h, hs, e, ev)
    });
    let mut panel =
        SimPanel { returns: Vec::new(), h: Vec::new(), h_star: Vec::new(), eta: Vec::new(), floor_events: 0 };
    for (r, h, hs, e, ev) in paths {
        panel.returns.push(r);
        panel.h.push(h);
        panel.h_star.push(hs);
        panel.eta.push(e);
        panel.floor_events += ev;
    }
    Ok(panel)
}

/// Per-path cumulative log return and Σ h* over the horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct TerminalSample {
    pub log_return: Vec<f64>,
    pub sum_h_star: Vec<f64>,
    pub floor_events: usize,
}

pub fn simulate_terminal(
    cfg: &SimConfig,
    pp: &PhysicalParams,
    kp: &KernelParams,
    s0: &SimState,
) -> Result<TerminalSample> {
    cfg.validate()?;
    pp.validate()?;
    let eps = EpsSource::new(&cfg.eta_mode);
    let out = map_paths(cfg, |rng, sign| {
        let mut lr = 0.0;
        let mut sh = 0.0;
        let ev = run_path(cfg, pp, kp, s0, &eps, rng, sign, |_, ret, _, hs, _| {
            lr += ret;
            sh += hs;
        });
        (lr, sh, ev)
    });
    let mut t = TerminalSample { log_return: Vec::new(), sum_h_star: Vec::new(), floor_events: 0 };
    for (a, b, c) in out {
        t.log_return.push(a);
        t.sum_h_star.push(b);
        t.floor_events += c;
    }
    Ok(t)
}

/// Mean and standard error; antithetic pairs are averaged first.
pub fn mean_se(x: &[f64], antithetic: bool) -> (f64, f64) {
    let units: Vec<f64> = if antithetic { x.chunks(2).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect() } else { x.to_vec() };
    let n = units.len() as f64;
    let mean = pairwise_sum(&units) / n;
    if units.len() < 2 {
        return (mean, f64::NAN);
    }
    let dev: Vec<f64> = units.iter().map(|v| (v - mean).powi(2)).collect();
    let var = pairwise_sum(&dev) / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Pairwise summation.
pub fn pairwise_sum(x: &[f64]) -> f64 {
    if x.len() <= 16 {
        return x.iter().sum();
    }
    let (a, b) = x.split_at(x.len() / 2);
    pairwise_sum(a) + pairwise_sum(b)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub value: f64,
    pub se: f64,
}

/// e^{−rM}E[max(S_T − K, 0)] with M = the call's maturity.
pub fn mc_option_price(
    cfg: &SimConfig,
    pp: &PhysicalParams,
    kp: &KernelParams,
    call: &EuropeanCall,
    s0: &SimState,
) -> Result<McEstimate> {
    call.validate()?;
    if cfg.measure != Measure::Q {
        return domain("option prices need the risk-neutral measure");
    }
    let mut c = cfg.clone();
    c.horizon_days = call.maturity_days;
    let mut p = *pp;
    p.r = call.rate;
    let t = simulate_terminal(&c, &p, kp, s0)?;
    let disc = (-call.rate * call.maturity_days as f64).exp();
    let pay: Vec<f64> = t.log_return.iter().map(|lr| disc * (call.spot * lr.exp() - call.strike).max(0.0)).collect();
    let (value, se) = mean_se(&pay, cfg.antithetic);
    Ok(McEstimate { value, se })
}

/// e^{−rM}E[S_T]/S − 1.
pub fn mc_martingale_gap(cfg: &SimConfig, pp: &PhysicalParams, kp: &KernelParams, s0: &SimState) -> Result<McEstimate> {
    let t = simulate_terminal(cfg, pp, kp, s0)?;
    let disc = (-pp.r * cfg.horizon_days as f64).exp();
    let v: Vec<f64> = t.log_return.iter().map(|lr| disc * lr.exp() - 1.0).collect();
    let (value, se) = mean_se(&v, cfg.antithetic);
    Ok(McEstimate { value, se })
}

/// E[Σ_{k=1}^{M} h*_{t+k}] and the implied VIX-style level A√(E/M).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McVix {
    pub sum_h_star: McEstimate,
    pub vix: McEstimate,
}

pub fn mc_vix(cfg: &SimConfig, pp: &PhysicalParams, kp: &KernelParams, s0: &SimState) -> Result<McVix> {
    let t = simulate_terminal(cfg, pp, kp, s0)?;
    let (m, se) = mean_se(&t.sum_h_star, cfg.antithetic);
    let mf = cfg.horizon_days as f64;
    let v = annualizer() * (m / mf).sqrt();
    let dv = annualizer() * se / (2.0 * (m * mf).sqrt());
    Ok(McVix { sum_h_star: McEstimate { value: m, se }, vix: McEstimate { value: v, se: dv } })
}

// ---- moments and densities ----

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentPoint {
    pub horizon: usize,
    pub mean: f64,
    pub variance: f64,
    pub skewness: f64,
    pub skewness_se: f64,
    pub kurtosis: f64,
    pub kurtosis_se: f64,
}

#[derive(Clone, Copy, Default)]
struct PowerSums([f64; 5]);

impl PowerSums {
    fn add(&mut self, x: f64) {
        let x2 = x * x;
        self.0[0] += 1.0;
        self.0[1] += x;
        self.0[2] += x2;
        self.0[3] += x2 * x;
        self.0[4] += x2 * x2;
    }
    fn minus(&self, o: &PowerSums) -> PowerSums {
        let mut r = *self;
        for i in 0..5 {
            r.0[i] -= o.0[i];
        }
        r
    }
    fn plus(&mut self, o: &PowerSums) {
        for i in 0..5 {
            self.0[i] += o.0[i];
        }
    }
    // mean, variance, skewness, kurtosis from raw sums
    fn moments(&self) -> (f64, f64, f64, f64) {
        let n = self.0[0];
        let m1 = self.0[1] / n;
        let r2 = self.0[2] / n;
        let r3 = self.0[3] / n;
        let r4 = self.0[4] / n;
        let c2 = r2 - m1 * m1;
        let c3 = r3 - 3.0 * m1 * r2 + 2.0 * m1.powi(3);
        let c4 = r4 - 4.0 * m1 * r3 + 6.0 * m1 * m1 * r2 - 3.0 * m1.powi(4);
        (m1, c2, c3 / c2.powf(1.5), c4 / (c2 * c2))
    }
}

/// Number of delete-a-group jackknife groups.
pub const JACKKNIFE_GROUPS: usize = 50;

/// Skewness and kurtosis of cumulative log returns for horizons 1..=max_days
/// at a starting η level, with delete-a-group jackknife standard errors.
/// Raw power sums are accumulated around a per-horizon centre to limit
/// cancellation.
pub fn term_structure_moments(
    cfg: &SimConfig,
    pp: &PhysicalParams,
    kp: &KernelParams,
    eta_level: f64,
    h_next: f64,
    max_days: usize,
) -> Result<Vec<MomentPoint>> {
    let mut c = cfg.clone();
    c.horizon_days = max_days;
    c.validate()?;
    let s0 = SimState { h_next, eta: eta_level };
    let eps = EpsSource::new(&c.eta_mode);
    let centre: Vec<f64> = (1..=max_days).map(|k| k as f64 * (pp.r - 0.5 * eta_level * h_next)).collect();
    let paths = map_paths(&c, |rng, sign| {
        let mut cum = vec![0.0; max_days];
        let mut acc = 0.0;
        run_path(&c, pp, kp, &s0, &eps, rng, sign, |j, ret, _, _, _| {
            acc += ret;
            cum[j] = acc - centre[j];
        });
        cum
    });
    let g = JACKKNIFE_GROUPS.min(paths.len());
    let per = if c.antithetic { 2 } else { 1 };
    let units = paths.len() / per;
    let mut groups = vec![vec![PowerSums::default(); max_days]; g];
    for (i, p) in paths.iter().enumerate() {
        let grp = (i / per) * g / units;
        for (j, x) in p.iter().enumerate() {
            groups[grp][j].add(*x);
        }
    }
    let mut out = Vec::with_capacity(max_days);
    for j in 0..max_days {
        let mut tot = PowerSums::default();
        for gr in &groups {
            tot.plus(&gr[j]);
        }
        let (m, v, s, k) = tot.moments();
        let loo: Vec<(f64, f64)> = groups
            .iter()
            .map(|gr| {
                let (_, _, s, k) = tot.minus(&gr[j]).moments();
                (s, k)
            })
            .collect();
        let gf = g as f64;
        let jk = |vals: Vec<f64>| {
            let mean = vals.iter().sum::<f64>() / gf;
            ((gf - 1.0) / gf * vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>()).sqrt()
        };
        out.push(MomentPoint {
            horizon: j + 1,
            mean: m + centre[j],
            variance: v,
            skewness: s,
            skewness_se: jk(loo.iter().map(|x| x.0).collect()),
            kurtosis: k,
            kurtosis_se: jk(loo.iter().map(|x| x.1).collect()),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityEstimate {
    pub grid: Vec<f64>,
    pub density: Vec<f64>,
    pub mean: f64,
    pub variance: f64,
    pub skewness: f64,
    pub kurtosis: f64,
}

fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    x.windows(2).zip(y.windows(2)).map(|(a, b)| 0.5 * (a[1] - a[0]) * (b[0] + b[1])).sum()
}

/// Evenly spaced grid.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

/// Gaussian kernel density with Silverman's bandwidth.
pub fn kernel_density(sample: &[f64], grid: &[f64]) -> Result<DensityEstimate> {
    if sample.len() < 2 || grid.len() < 2 {
        return domain("kernel density needs at least two points and two grid nodes");
    }
    let mut ps = PowerSums::default();
    sample.iter().for_each(|x| ps.add(*x));
    let (mean, var, skew, kurt) = ps.moments();
    let n = sample.len() as f64;
    let bw = 1.06 * var.sqrt() * n.powf(-0.2);
    let norm = 1.0 / (n * bw * (2.0 * std::f64::consts::PI).sqrt());
    let density: Vec<f64> = grid
        .par_iter()
        .map(|g| sample.iter().map(|x| (-0.5 * ((g - x) / bw).powi(2)).exp()).sum::<f64>() * norm)
        .collect();
    Ok(DensityEstimate { grid: grid.to_vec(), density, mean, variance: var, skewness: skew, kurtosis: kurt })
}

/// Density of ln(S_T/S_t) under a predetermined path at h̃*, by Fourier
/// inversion of g*(iφ) with Gauss-Laguerre nodes.
pub fn fourier_density(
    pp: &PhysicalParams,
    eta_path: &[f64],
    h_tilde: f64,
    m: usize,
    grid: &[f64],
    rule: &FourierRule,
) -> Result<Vec<f64>> {
    let scale = rule.scale(m, h_tilde);
    let mut coefs = Vec::with_capacity(rule.laguerre.nodes.len());
    for (x, w) in rule.laguerre.nodes.iter().zip(&rule.laguerre.compensated) {
        let phi = scale * x;
        let g = mgf_coeffs(pp, eta_path, num_complex::Complex64::new(0.0, phi), m)?.mgf(h_tilde);
        coefs.push((phi, w * scale, g));
    }
    Ok(grid
        .iter()
        .map(|y| {
            coefs
                .iter()
                .map(|(phi, w, g)| w * (g * num_complex::Complex64::new(0.0, -phi * y).exp()).re)
                .sum::<f64>()
                / std::f64::consts::PI
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensityDistance {
    pub sup: f64,
    pub l1: f64,
}

/// Sup-norm and L1 (trapezoid) distance between two densities on a grid.
pub fn density_compare(grid: &[f64], a: &[f64], b: &[f64]) -> Result<DensityDistance> {
    if a.len() != grid.len() || b.len() != grid.len() {
        return Err(Error::Dimension { expected: grid.len(), got: a.len().min(b.len()) });
    }
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| (x - y).abs()).collect();
    Ok(DensityDistance { sup: diff.iter().cloned().fold(0.0, f64::max), l1: trapezoid(grid, &diff) })
}

/// ∫ f over the grid.
pub fn density_mass(grid: &[f64], f: &[f64]) -> f64 {
    trapezoid(grid, f)
}

// ---- synthetic panels ----

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PanelConfig {
    pub days: usize,
    pub seed: u64,
    /// One option per maturity (trading days) each day.
    pub maturities: Vec<usize>,
    /// Strikes at K = S·exp(u·√(M h*_{t+1})) with u uniform on this range.
    pub moneyness: (f64, f64),
    pub spot: f64,
    /// Calendar days per trading day when reporting DTM.
    pub calendar_ratio: f64,
    /// Measure of the return shocks. Under Q the shock z*_t is drawn and
    /// mapped to the physical shock with η_{t−1}.
    pub measure: Measure,
}

impl Default for PanelConfig {
    fn default() -> Self {
        PanelConfig {
            days: 500,
            seed: 1,
            maturities: vec![21, 42, 63, 84, 105, 126],
            moneyness: (-1.5, 1.0),
            spot: 100.0,
            calendar_ratio: 365.0 / 252.0,
            measure: Measure::P,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticPanel {
    pub days: Vec<DayObs>,
    /// True η_t and h_t per day.
    pub eta: Vec<f64>,
    pub h: Vec<f64>,
    pub scores: Vec<f64>,
}

/// Simulates returns under P together with a VIX and an option panel whose
/// observations carry equicorrelated Gaussian errors. For a score-driven
/// spec, η follows the score of the errors on the panel the spec uses, so
/// the output is a draw from the model the filter assumes.
pub fn simulate_panel_data(spec: &ModelSpec, pc: &PanelConfig, fc: &FilterConfig) -> Result<SyntheticPanel> {
    spec.validate()?;
    let pp = spec.pp;
    let kp = spec.kp;
    let n_inst = pc.maturities.len() + 1;
    kp.validate_panel(n_inst)?;
    let mut engine = Engine::new(&pp, &kp, fc, &pc.maturities)?;
    let mut rng = ChaCha8Rng::seed_from_u64(pc.seed);
    let om = Equicorr::new(n_inst, kp.rho)?;
    let score_driven = spec.variant == Variant::Shng && kp.sigma > 0.0;
    let mut h = fc.h_init.map_or_else(|| pp.unconditional_variance(), Ok)?;
    let mut eta = fc.eta_init.unwrap_or(kp.zeta);
    let mut eta_prev = eta;
    let mut spot = pc.spot;
    let mut out = SyntheticPanel { days: Vec::new(), eta: Vec::new(), h: Vec::new(), scores: Vec::new() };
    let mut ev = DayEval::default();
    let mut unit = Vec::new();
    for t in 0..pc.days {
        let fail = |e: Error| Error::Filter { day: t, reason: e.to_string() };
        let draw: f64 = rng.sample(StandardNormal);
        let z = match pc.measure {
            Measure::P => draw,
            Measure::Q => physical_shock(&pp, draw, h, eta_prev),
        };
        let ret = pp.r + (pp.lambda - 0.5) * h + h.sqrt() * z;
        spot *= ret.exp();
        let h_next = pp.next_variance(h, z).max(H_FLOOR);
        // strikes and vegas from noise-free model prices
        let mut calls = Vec::with_capacity(pc.maturities.len());
        for &m in &pc.maturities {
            let u = rng.random_range(pc.moneyness.0..pc.moneyness.1);
            let strike = spot * (u * (m as f64 * eta * h_next).sqrt()).exp();
            calls.push(EuropeanCall { spot, strike, maturity_days: m, rate: pp.r });
        }
        let probe: Vec<_> =
            calls.iter().map(|c| crate::score::Instrument::Call { call: *c, vega: 100.0 }).collect();
        if !probe.is_empty() {
            engine.evaluate(eta, h_next, &probe, None, &mut ev).map_err(fail)?;
        }
        let mut options = Vec::with_capacity(calls.len());
        for (c, price) in calls.iter().zip(&ev.model) {
            let iv = bs_implied_vol(*price, c).map_err(fail)?;
            let vega = bs_vega(c, iv);
            let dtm = (c.maturity_days as f64 * pc.calendar_ratio).round() as u32;
            options.push(OptionObs { call: *c, vega, price: *price, delta: bs_delta(c, iv), dtm });
        }
        // equicorrelated errors: √(1−ρ) u_i + √ρ u_0
        unit.clear();
        let common: f64 = rng.sample(StandardNormal);
        for _ in 0..n_inst {
            let u: f64 = rng.sample(StandardNormal);
            let v = if kp.rho >= 0.0 {
                (1.0 - kp.rho).sqrt() * u + kp.rho.sqrt() * common
            } else {
                u
            };
            unit.push(kp.sigma_e * v);
        }
        if kp.rho < 0.0 {
            // Cholesky for negative ρ
            let l = om.dense().cholesky().ok_or_else(|| Error::Domain("rho not admissible".into()))?;
            let v = l.l() * nalgebra::DVector::from_column_slice(&unit);
            unit.copy_from_slice(v.as_slice());
        }
        let mut day = DayObs { ret, vix: None, options };
        let full = DayObs { vix: Some(0.0), ..day.clone() };
        let (ins_all, _, _) = day_panel(&full, DataConfig::VixOpt, fc.vix_horizon);
        engine.evaluate(eta, h_next, &ins_all, None, &mut ev).map_err(fail)?;
        day.vix = Some(ev.model[0] + unit[0]);
        for (i, o) in day.options.iter_mut().enumerate() {
            let x = ev.model[i + 1] + unit[i + 1];
            o.price = x * o.vega / 100.0;
            if let Ok(iv) = bs_implied_vol(o.price, &o.call) {
                o.delta = bs_delta(&o.call, iv);
            }
        }
        let mut s = 0.0;
        let mut eta_next = kp.theta * eta + (1.0 - kp.theta) * kp.zeta;
        if score_driven {
            let (ins, obs, _) = day_panel(&day, spec.data, fc.vix_horizon);
            if !ins.is_empty() {
                let f = engine
                    .evaluate(eta, h_next, &ins, Some(FisherContext { h_t: h, eta_prev }), &mut ev)
                    .map_err(fail)?
                    .unwrap_or(0.0);
                let e: Vec<f64> = obs.iter().zip(&ev.model).map(|(o, m)| o - m).collect();
                let g = score_gradient(&e, &ev.grads, &kp).map_err(fail)?;
                s = g / f.sqrt();
                eta_next += kp.sigma * s;
            }
        }
        out.days.push(day);
        out.eta.push(eta);
        out.h.push(h);
        out.scores.push(s);
        eta_prev = eta;
        eta = eta_next.max(fc.eta_floor);
        h = h_next;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;

    #[test]
    fn seeded_runs_repeat() {
        let (p, k) = presets::shng_opt();
        let cfg = SimConfig::new(64, 10, 7);
        let s0 = SimState { h_next: 1.2e-4, eta: 1.1 };
        let a = simulate(&cfg, &p, &k, &s0).unwrap();
        let b = simulate(&cfg, &p, &k, &s0).unwrap();
        assert_eq!(a, b);
        let c = simulate(&SimConfig { seed: 8, ..cfg }, &p, &k, &s0).unwrap();
        assert_ne!(a.returns, c.returns);
    }

    #[test]
    fn iid_returns_variance() {
        let p = PhysicalParams { omega: 1e-4, beta: 0.0, alpha: 1e-12, gamma: 0.0, lambda: 0.0, r: 0.0 };
        let k = KernelParams::constant(1.0, 1.0, 0.0);
        let mut cfg = SimConfig::new(20_000, 21, 3);
        cfg.measure = Measure::P;
        cfg.eta_mode = EtaMode::Constant(1.0);
        let t = simulate_terminal(&cfg, &p, &k, &SimState { h_next: 1e-4, eta: 1.0 }).unwrap();
        let n = t.log_return.len() as f64;
        let m = t.log_return.iter().sum::<f64>() / n;
        let v = t.log_return.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
        // antithetic pairs make the sample mean exact; the variance is not
        assert!((v / 21e-4 - 1.0).abs() < 0.05, "{v}");
    }

    #[test]
    fn density_distance_of_identical_inputs() {
        let g = linspace(-1.0, 1.0, 11);
        let f = vec![0.5; 11];
        let d = density_compare(&g, &f, &f).unwrap();
        assert_eq!(d.sup, 0.0);
        assert_eq!(d.l1, 0.0);
        assert!(density_compare(&g, &f[..3], &f).is_err());
    }
}
