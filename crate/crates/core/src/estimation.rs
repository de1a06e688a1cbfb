//! Joint likelihood of returns and derivative prices, sequential filtering
//! of (h_t, η_t), maximum-likelihood fitting and pricing-error summaries.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::model::{filter_physical_variance, KernelParams, PhysicalParams, VariancePath, H_FLOOR};
use crate::optim::{self, BfgsConfig};
use crate::pricing::{bs_implied_vol, EuropeanCall, FourierRule, SliceGrid, DEFAULT_KAPPA, DEFAULT_NODES};
use crate::score::{
    ar1_step, fisher_information, score_gradient, DayPricer, Equicorr, FisherContext, Instrument, ShockRule,
    ETA_FLOOR,
};
use crate::vix::VIX_DAYS;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Constant η = ζ.
    Hng,
    /// Score-driven η.
    Shng,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataConfig {
    Vix,
    Opt,
    VixOpt,
}

impl DataConfig {
    pub fn uses_vix(self) -> bool {
        matches!(self, DataConfig::Vix | DataConfig::VixOpt)
    }

    pub fn uses_options(self) -> bool {
        matches!(self, DataConfig::Opt | DataConfig::VixOpt)
    }

    pub fn label(self) -> &'static str {
        match self {
            DataConfig::Vix => "VIX",
            DataConfig::Opt => "Opt",
            DataConfig::VixOpt => "VIX+Opt",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub variant: Variant,
    pub data: DataConfig,
    pub pp: PhysicalParams,
    pub kp: KernelParams,
}

impl ModelSpec {
    /// HNG specs get σ = 0 and θ = 0 so that η_t ≡ ζ.
    pub fn new(variant: Variant, data: DataConfig, pp: PhysicalParams, mut kp: KernelParams) -> Self {
        if variant == Variant::Hng {
            kp.sigma = 0.0;
            kp.theta = 0.0;
        }
        ModelSpec { variant, data, pp, kp }
    }

    pub fn label(&self) -> String {
        let v = match self.variant {
            Variant::Hng => "HNG",
            Variant::Shng => "SHNG",
        };
        format!("{v}[{}]", self.data.label())
    }

    pub fn validate(&self) -> Result<()> {
        self.pp.validate()?;
        self.kp.validate()?;
        if self.pp.persistence() >= 1.0 {
            return domain(format!("persistence {} >= 1", self.pp.persistence()));
        }
        Ok(())
    }
}

// ---- data ----

/// One option quote converted to a call.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptionObs {
    /// Maturity in trading days.
    pub call: EuropeanCall,
    /// Black-Scholes vega at the observed implied volatility.
    pub vega: f64,
    /// Observed call price in index points.
    pub price: f64,
    /// Black-Scholes delta of the call.
    pub delta: f64,
    /// Calendar days to maturity.
    pub dtm: u32,
}

impl OptionObs {
    /// Observation in the likelihood's units: 100·C/vega.
    pub fn observed_x(&self) -> f64 {
        100.0 * self.price / self.vega
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DayObs {
    /// Daily log return.
    pub ret: f64,
    /// VIX in index points.
    pub vix: Option<f64>,
    pub options: Vec<OptionObs>,
}

fn max_panel(data: &[DayObs], cfg: DataConfig) -> usize {
    data.iter()
        .map(|d| {
            let v = usize::from(cfg.uses_vix() && d.vix.is_some());
            v + if cfg.uses_options() { d.options.len() } else { 0 }
        })
        .max()
        .unwrap_or(0)
}

fn maturities(data: &[DayObs], cfg: DataConfig) -> Vec<usize> {
    let mut m: Vec<usize> = Vec::new();
    if cfg.uses_options() {
        for d in data {
            for o in &d.options {
                m.push(o.call.maturity_days);
            }
        }
    }
    m.sort_unstable();
    m.dedup();
    m
}

/// Instruments and observations for one day; the VIX, when used, comes first.
pub fn day_panel(day: &DayObs, cfg: DataConfig, vix_m: usize) -> (Vec<Instrument>, Vec<f64>, bool) {
    let mut ins = Vec::new();
    let mut obs = Vec::new();
    let mut has_vix = false;
    if cfg.uses_vix() {
        if let Some(v) = day.vix {
            ins.push(Instrument::Vix { m: vix_m });
            obs.push(v);
            has_vix = true;
        }
    }
    if cfg.uses_options() {
        for o in &day.options {
            ins.push(Instrument::Call { call: o.call, vega: o.vega });
            obs.push(o.observed_x());
        }
    }
    (ins, obs, has_vix)
}

// ---- filter configuration and output ----

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    /// h_1; the unconditional variance when absent.
    pub h_init: Option<f64>,
    /// η_1; ζ when absent.
    pub eta_init: Option<f64>,
    pub eta_floor: f64,
    pub fourier_nodes: usize,
    pub fourier_kappa: f64,
    /// Spacing of the interpolation grid in η; exact per-day slices when absent.
    pub grid_step: Option<f64>,
    pub shock_nodes: usize,
    pub shock_prune: f64,
    /// Days excluded from RMSE tables (still part of the likelihood).
    pub burn_in: usize,
    pub vix_horizon: usize,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            h_init: None,
            eta_init: None,
            eta_floor: ETA_FLOOR,
            fourier_nodes: DEFAULT_NODES,
            fourier_kappa: DEFAULT_KAPPA,
            grid_step: Some(0.02),
            shock_nodes: 32,
            shock_prune: 1e-14,
            burn_in: 63,
            vix_horizon: VIX_DAYS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayRecord {
    /// h_t, the variance of day t's return.
    pub h: f64,
    pub h_next: f64,
    /// η_t, used to price day t's instruments.
    pub eta: f64,
    pub h_star_next: f64,
    pub z: f64,
    /// ∇_t.
    pub grad: f64,
    pub fisher: f64,
    /// s_t = ∇_t/√fisher.
    pub score: f64,
    pub ll_ret: f64,
    pub ll_vix: f64,
    pub ll_opt: f64,
    pub has_vix: bool,
    pub observed: Vec<f64>,
    pub model: Vec<f64>,
    /// The update to η_{t+1} hit the floor.
    pub eta_floored: bool,
}

impl DayRecord {
    pub fn ll(&self) -> f64 {
        self.ll_ret + self.ll_vix + self.ll_opt
    }

    pub fn errors(&self) -> Vec<f64> {
        self.observed.iter().zip(&self.model).map(|(o, m)| o - m).collect()
    }

    pub fn vix_error(&self) -> Option<f64> {
        self.has_vix.then(|| self.observed[0] - self.model[0])
    }

    pub fn option_observed(&self) -> &[f64] {
        let k = usize::from(self.has_vix);
        &self.observed[k..]
    }

    pub fn option_model(&self) -> &[f64] {
        let k = usize::from(self.has_vix);
        &self.model[k..]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LikelihoodReport {
    pub ll_returns: f64,
    pub ll_vix: f64,
    pub ll_opt: f64,
    pub ll_derivatives: f64,
    pub ll_total: f64,
    pub days: Vec<DayRecord>,
    pub eta_floor_hits: usize,
    pub h_floor_hits: usize,
}

// ---- likelihood pieces ----

/// Gaussian return log-likelihood and the filtered variance path.
pub fn loglik_returns(pp: &PhysicalParams, returns: &[f64], h_init: f64) -> Result<(f64, VariancePath)> {
    let path = filter_physical_variance(pp, returns, h_init)?;
    let ll = path.z.iter().zip(&path.h).map(|(z, h)| -0.5 * (LN_2PI + h.ln() + z * z)).sum();
    Ok((ll, path))
}

/// One day's pricing-error log-likelihood through the projections onto ι
/// and its complement.
pub fn loglik_day(errors: &[f64], kp: &KernelParams) -> Result<f64> {
    let n = errors.len();
    if n == 0 {
        return Ok(0.0);
    }
    let om = Equicorr::new(n, kp.rho)?;
    let s2 = kp.sigma_e * kp.sigma_e;
    let nf = n as f64;
    let sum: f64 = errors.iter().sum();
    let ss: f64 = errors.iter().map(|e| e * e).sum();
    let v2 = sum * sum / nf;
    let w2 = (ss - v2).max(0.0);
    let mut quad = v2 / om.common_eigen();
    if n > 1 {
        quad += w2 / (1.0 - kp.rho);
    }
    Ok(-0.5 * (nf * (LN_2PI + s2.ln()) + om.log_det() + quad / s2))
}

/// The same quantity with a dense covariance matrix.
pub fn loglik_day_dense(errors: &[f64], kp: &KernelParams) -> Result<f64> {
    let n = errors.len();
    if n == 0 {
        return Ok(0.0);
    }
    let s2 = kp.sigma_e * kp.sigma_e;
    let cov = DMatrix::from_fn(n, n, |i, j| if i == j { s2 } else { s2 * kp.rho });
    let chol = cov
        .cholesky()
        .ok_or_else(|| Error::Domain(format!("covariance not positive definite for rho {}", kp.rho)))?;
    let e = DVector::from_column_slice(errors);
    let sol = chol.solve(&e);
    let logdet = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    Ok(-0.5 * (n as f64 * LN_2PI + logdet + e.dot(&sol)))
}

/// Sum of daily pricing-error log-likelihoods; empty days contribute zero.
pub fn loglik_derivatives(kp: &KernelParams, errors_by_day: &[Vec<f64>]) -> Result<f64> {
    let n_max = errors_by_day.iter().map(|e| e.len()).max().unwrap_or(0);
    kp.validate_panel(n_max)?;
    errors_by_day.iter().map(|e| loglik_day(e, kp)).sum()
}

// ---- pricing engine ----

/// Prices, sensitivities and Fisher information for one parameter vector.
pub struct Engine {
    pp: PhysicalParams,
    kp: KernelParams,
    rule: FourierRule,
    shock: ShockRule,
    grids: Vec<SliceGrid>,
    use_grid: bool,
}

/// Model values for one day.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DayEval {
    pub model: Vec<f64>,
    pub grads: Vec<f64>,
}

impl Engine {
    pub fn new(pp: &PhysicalParams, kp: &KernelParams, cfg: &FilterConfig, maturities: &[usize]) -> Result<Self> {
        let rule = FourierRule::new(cfg.fourier_nodes, cfg.fourier_kappa);
        let shock = ShockRule::new(cfg.shock_nodes, cfg.shock_prune);
        let mut grids = Vec::new();
        if let Some(step) = cfg.grid_step {
            if !(step > 0.0) {
                return Err(Error::Config(format!("grid step must be positive, got {step}")));
            }
            let h_ref = kp.zeta * pp.unconditional_variance()?;
            for &m in maturities {
                grids.push(SliceGrid::new(pp, kp, m, rule.scale(m, h_ref), step, &rule));
            }
        }
        Ok(Engine { pp: *pp, kp: *kp, rule, shock, grids, use_grid: cfg.grid_step.is_some() })
    }

    fn pricer<'a>(&mut self, eta: f64, h_next: f64, ins: &'a [Instrument]) -> Result<DayPricer<'a>> {
        let rate_ok = ins.iter().all(|i| match i {
            Instrument::Call { call, .. } => call.rate == self.pp.r,
            Instrument::Vix { .. } => true,
        });
        if self.use_grid && rate_ok {
            DayPricer::from_grids(&self.pp, &self.kp, eta, ins, &mut self.grids)
        } else {
            DayPricer::new(&self.pp, &self.kp, eta, h_next, ins, &self.rule, true)
        }
    }

    /// Model prices at (η_t, h_{t+1}); with `fisher` also ∂X/∂η_t and the
    /// Fisher information over day t's risk-neutral shock.
    pub fn evaluate(
        &mut self,
        eta: f64,
        h_next: f64,
        ins: &[Instrument],
        fisher: Option<FisherContext>,
        out: &mut DayEval,
    ) -> Result<Option<f64>> {
        let pricer = self.pricer(eta, h_next, ins)?;
        match fisher {
            None => {
                pricer.prices(h_next, &mut out.model)?;
                out.grads.clear();
                Ok(None)
            }
            Some(ctx) => {
                pricer.prices_and_grads(h_next, &mut out.model, &mut out.grads)?;
                Ok(Some(fisher_information(&pricer, &ctx, &self.shock)?))
            }
        }
    }

    /// Tabulated grid points across maturities.
    pub fn grid_points(&self) -> usize {
        self.grids.iter().map(|g| g.len()).sum()
    }
}

/// Runs the filter over the sample: for each day the return updates h, the
/// instruments are priced at (η_t, h_{t+1}), and their errors drive s_t and
/// η_{t+1}. η_t depends on returns through R_t and prices through X_{t−1}.
pub fn filter_sequence(spec: &ModelSpec, data: &[DayObs], cfg: &FilterConfig) -> Result<LikelihoodReport> {
    spec.validate()?;
    let pp = &spec.pp;
    let kp = &spec.kp;
    kp.validate_panel(max_panel(data, spec.data))?;
    let score_driven = spec.variant == Variant::Shng && kp.sigma > 0.0;
    let mut engine = Engine::new(pp, kp, cfg, &maturities(data, spec.data))?;
    let mut h = match cfg.h_init {
        Some(v) => v,
        None => pp.unconditional_variance()?,
    };
    let mut eta = cfg.eta_init.unwrap_or(kp.zeta);
    if !(h > 0.0) || !(eta > 0.0) {
        return domain("initial h and eta must be positive");
    }
    let mut eta_prev = eta;
    let mut days = Vec::with_capacity(data.len());
    let (mut llr, mut llv, mut llo) = (0.0, 0.0, 0.0);
    let mut eta_hits = 0;
    let mut h_hits = 0;
    let mut ev = DayEval::default();
    let vix_kp = KernelParams { rho: 0.0, ..*kp };
    for (t, day) in data.iter().enumerate() {
        let fail = |e: Error| Error::Filter { day: t, reason: e.to_string() };
        if !day.ret.is_finite() {
            return Err(Error::Filter { day: t, reason: format!("non-finite return {}", day.ret) });
        }
        let z = pp.shock(day.ret, h);
        let ll_ret = -0.5 * (LN_2PI + h.ln() + z * z);
        let mut h_next = pp.next_variance(h, z);
        if !h_next.is_finite() {
            return Err(Error::Filter { day: t, reason: "variance not finite".into() });
        }
        if h_next < H_FLOOR {
            h_next = H_FLOOR;
            h_hits += 1;
        }
        let (ins, obs, has_vix) = day_panel(day, spec.data, cfg.vix_horizon);
        let mut rec = DayRecord {
            h,
            h_next,
            eta,
            h_star_next: eta * h_next,
            z,
            grad: 0.0,
            fisher: 0.0,
            score: 0.0,
            ll_ret,
            ll_vix: 0.0,
            ll_opt: 0.0,
            has_vix,
            observed: obs,
            model: Vec::new(),
            eta_floored: false,
        };
        let mut eta_next = ar1_step(kp, eta);
        if !ins.is_empty() {
            let ctx = score_driven.then_some(FisherContext { h_t: h, eta_prev });
            let fisher = engine.evaluate(eta, h_next, &ins, ctx, &mut ev).map_err(fail)?;
            rec.model = ev.model.clone();
            let e = rec.errors();
            if e.iter().any(|v| !v.is_finite()) {
                return Err(Error::Filter { day: t, reason: "non-finite pricing error".into() });
            }
            let joint = loglik_day(&e, kp).map_err(fail)?;
            if has_vix {
                rec.ll_vix = loglik_day(&e[..1], &vix_kp).map_err(fail)?;
                rec.ll_opt = joint - rec.ll_vix;
            } else {
                rec.ll_opt = joint;
            }
            if let Some(f) = fisher {
                rec.grad = score_gradient(&e, &ev.grads, kp).map_err(fail)?;
                rec.fisher = f;
                rec.score = rec.grad / f.sqrt();
                eta_next += kp.sigma * rec.score;
            }
        }
        if eta_next < cfg.eta_floor {
            eta_next = cfg.eta_floor;
            rec.eta_floored = true;
            eta_hits += 1;
        }
        llr += rec.ll_ret;
        llv += rec.ll_vix;
        llo += rec.ll_opt;
        days.push(rec);
        eta_prev = eta;
        eta = eta_next;
        h = h_next;
    }
    if eta_hits > 0 {
        log::debug!("{}: eta floor hit on {eta_hits} days", spec.label());
    }
    let ll_derivatives = llv + llo;
    Ok(LikelihoodReport {
        ll_returns: llr,
        ll_vix: llv,
        ll_opt: llo,
        ll_derivatives,
        ll_total: llr + ll_derivatives,
        days,
        eta_floor_hits: eta_hits,
        h_floor_hits: h_hits,
    })
}

// ---- parameters and transforms ----

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Param {
    Omega,
    Beta,
    Alpha,
    Gamma,
    Lambda,
    Theta,
    Zeta,
    Sigma,
    SigmaE,
    Rho,
}

impl Param {
    pub fn name(self) -> &'static str {
        match self {
            Param::Omega => "omega",
            Param::Beta => "beta",
            Param::Alpha => "alpha",
            Param::Gamma => "gamma",
            Param::Lambda => "lambda",
            Param::Theta => "theta",
            Param::Zeta => "zeta",
            Param::Sigma => "sigma",
            Param::SigmaE => "sigma_e",
            Param::Rho => "rho",
        }
    }

    pub fn get(self, s: &ModelSpec) -> f64 {
        match self {
            Param::Omega => s.pp.omega,
            Param::Beta => s.pp.beta,
            Param::Alpha => s.pp.alpha,
            Param::Gamma => s.pp.gamma,
            Param::Lambda => s.pp.lambda,
            Param::Theta => s.kp.theta,
            Param::Zeta => s.kp.zeta,
            Param::Sigma => s.kp.sigma,
            Param::SigmaE => s.kp.sigma_e,
            Param::Rho => s.kp.rho,
        }
    }

    fn set(self, s: &mut ModelSpec, v: f64) {
        match self {
            Param::Omega => s.pp.omega = v,
            Param::Beta => s.pp.beta = v,
            Param::Alpha => s.pp.alpha = v,
            Param::Gamma => s.pp.gamma = v,
            Param::Lambda => s.pp.lambda = v,
            Param::Theta => s.kp.theta = v,
            Param::Zeta => s.kp.zeta = v,
            Param::Sigma => s.kp.sigma = v,
            Param::SigmaE => s.kp.sigma_e = v,
            Param::Rho => s.kp.rho = v,
        }
    }
}

/// Which part of the likelihood a fit maximizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FitStage {
    Joint,
    /// Physical parameters from returns alone.
    ReturnsOnly,
    /// Kernel parameters with the physical ones held fixed.
    DerivativesOnly,
}

pub fn free_params(spec: &ModelSpec, stage: FitStage, free_omega: bool, n_max: usize) -> Vec<Param> {
    let mut out = Vec::new();
    if stage != FitStage::DerivativesOnly {
        if free_omega {
            out.push(Param::Omega);
        }
        out.extend([Param::Beta, Param::Alpha, Param::Gamma, Param::Lambda]);
    }
    if stage != FitStage::ReturnsOnly {
        if spec.variant == Variant::Shng {
            out.extend([Param::Theta, Param::Zeta, Param::Sigma]);
        } else {
            out.push(Param::Zeta);
        }
        out.push(Param::SigmaE);
        if n_max > 1 {
            out.push(Param::Rho);
        }
    }
    out
}

fn logistic(u: f64) -> f64 {
    1.0 / (1.0 + (-u).exp())
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn rho_lower(n_max: usize) -> f64 {
    if n_max > 1 {
        -1.0 / (n_max as f64 - 1.0)
    } else {
        -1.0
    }
}

/// Unconstrained coordinates: logs for scales, logistic maps for θ, ρ and
/// β's share of 1 − αγ².
pub fn encode(spec: &ModelSpec, params: &[Param], n_max: usize) -> Result<Vec<f64>> {
    let mut u = Vec::with_capacity(params.len());
    for &p in params {
        let v = p.get(spec);
        let x = match p {
            Param::Omega | Param::Alpha | Param::Zeta | Param::Sigma | Param::SigmaE => {
                if !(v > 0.0) {
                    return domain(format!("{} must be positive to start a fit, got {v}", p.name()));
                }
                v.ln()
            }
            Param::Gamma | Param::Lambda => v,
            Param::Beta => {
                let room = 1.0 - spec.pp.alpha * spec.pp.gamma * spec.pp.gamma;
                let share = v / room;
                if !(room > 0.0) || !(share > 0.0 && share < 1.0) {
                    return domain(format!("beta {v} outside the stationary region"));
                }
                logit(share)
            }
            Param::Theta => logit(0.5 * (v + 1.0)),
            Param::Rho => {
                let lo = rho_lower(n_max);
                logit((v - lo) / (1.0 - lo))
            }
        };
        if !x.is_finite() {
            return domain(format!("{} = {v} is on the boundary", p.name()));
        }
        u.push(x);
    }
    Ok(u)
}

pub fn decode(base: &ModelSpec, params: &[Param], u: &[f64], n_max: usize) -> ModelSpec {
    let mut s = *base;
    let mut beta_u = None;
    for (&p, &x) in params.iter().zip(u) {
        let v = match p {
            Param::Omega | Param::Alpha | Param::Zeta | Param::Sigma | Param::SigmaE => x.exp(),
            Param::Gamma | Param::Lambda => x,
            Param::Beta => {
                beta_u = Some(x);
                continue;
            }
            Param::Theta => 2.0 * logistic(x) - 1.0,
            Param::Rho => {
                let lo = rho_lower(n_max);
                lo + (1.0 - lo) * logistic(x)
            }
        };
        p.set(&mut s, v);
    }
    if let Some(x) = beta_u {
        let room = 1.0 - s.pp.alpha * s.pp.gamma * s.pp.gamma;
        s.pp.beta = room * logistic(x);
    }
    s
}

// ---- fitting ----

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub bfgs: BfgsConfig,
    pub filter: FilterConfig,
    pub stage: FitStage,
    pub free_omega: bool,
    pub standard_errors: bool,
    /// Relative step of the finite-difference Hessian and per-day scores.
    pub se_step: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            bfgs: BfgsConfig::default(),
            filter: FilterConfig::default(),
            stage: FitStage::Joint,
            free_omega: false,
            standard_errors: true,
            se_step: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEstimate {
    pub param: Param,
    pub value: f64,
    /// Robust (sandwich) standard error.
    pub se: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitResult {
    pub spec: ModelSpec,
    /// Value of the maximized objective.
    pub objective: f64,
    pub estimates: Vec<ParamEstimate>,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    pub report: LikelihoodReport,
}

impl FitResult {
    pub fn estimate(&self, p: Param) -> Option<&ParamEstimate> {
        self.estimates.iter().find(|e| e.param == p)
    }
}

fn stage_value(spec: &ModelSpec, data: &[DayObs], cfg: &FilterConfig, stage: FitStage) -> Result<f64> {
    match stage {
        FitStage::ReturnsOnly => {
            spec.validate()?;
            let h0 = match cfg.h_init {
                Some(v) => v,
                None => spec.pp.unconditional_variance()?,
            };
            let rets: Vec<f64> = data.iter().map(|d| d.ret).collect();
            Ok(loglik_returns(&spec.pp, &rets, h0)?.0)
        }
        FitStage::Joint => Ok(filter_sequence(spec, data, cfg)?.ll_total),
        FitStage::DerivativesOnly => Ok(filter_sequence(spec, data, cfg)?.ll_derivatives),
    }
}

fn stage_days(spec: &ModelSpec, data: &[DayObs], cfg: &FilterConfig, stage: FitStage) -> Result<Vec<f64>> {
    let rep = filter_sequence(spec, data, cfg)?;
    Ok(rep
        .days
        .iter()
        .map(|d| match stage {
            FitStage::ReturnsOnly => d.ll_ret,
            FitStage::Joint => d.ll(),
            FitStage::DerivativesOnly => d.ll_vix + d.ll_opt,
        })
        .collect())
}

/// Maximum likelihood from `start`. The free parameters follow the variant,
/// data configuration and stage; everything else stays at its start value.
pub fn fit_mle(start: &ModelSpec, data: &[DayObs], cfg: &FitConfig) -> Result<FitResult> {
    if data.is_empty() {
        return Err(Error::Data("no observations".into()));
    }
    let mut start = ModelSpec::new(start.variant, start.data, start.pp, start.kp);
    let n_max = max_panel(data, start.data);
    if start.variant == Variant::Shng && start.kp.sigma <= 0.0 {
        start.kp.sigma = 1e-3;
    }
    if n_max <= 1 {
        start.kp.rho = 0.0;
    }
    let params = free_params(&start, cfg.stage, cfg.free_omega, n_max);
    let u0 = encode(&start, &params, n_max)?;
    let fc = &cfg.filter;
    let objective = |u: &[f64]| {
        let s = decode(&start, &params, u, n_max);
        stage_value(&s, data, fc, cfg.stage).unwrap_or(f64::NAN)
    };
    let f0 = objective(&u0);
    if !f0.is_finite() {
        stage_value(&start, data, fc, cfg.stage)?;
        return domain("objective is not finite at the starting point");
    }
    let res = optim::maximize(objective, &u0, &cfg.bfgs);
    if !res.converged {
        log::warn!(
            "{}: optimizer stopped after {} iterations without meeting tolerances (ll {})",
            start.label(),
            res.iterations,
            res.f
        );
    }
    let spec = decode(&start, &params, &res.x, n_max);
    let se = if cfg.standard_errors {
        match sandwich(&start, &params, &res.x, n_max, data, cfg) {
            Ok(v) => Some(v),
            Err(e) => {
                log::warn!("standard errors unavailable: {e}");
                None
            }
        }
    } else {
        None
    };
    let estimates = params
        .iter()
        .enumerate()
        .map(|(i, &p)| ParamEstimate { param: p, value: p.get(&spec), se: se.as_ref().and_then(|v| v[i]) })
        .collect();
    let report = filter_sequence(&spec, data, fc)?;
    Ok(FitResult {
        spec,
        objective: res.f,
        estimates,
        iterations: res.iterations,
        evaluations: res.evaluations,
        converged: res.converged,
        report,
    })
}

/// Sandwich H⁻¹(Σ s_t s_t′)H⁻¹ in the unconstrained coordinates, mapped to
/// natural parameters by the delta method.
fn sandwich(
    base: &ModelSpec,
    params: &[Param],
    u: &[f64],
    n_max: usize,
    data: &[DayObs],
    cfg: &FitConfig,
) -> Result<Vec<Option<f64>>> {
    let k = params.len();
    let fc = &cfg.filter;
    let mut f = |x: &[f64]| stage_value(&decode(base, params, x, n_max), data, fc, cfg.stage).unwrap_or(f64::NAN);
    let h = optim::hessian(&mut f, u, cfg.se_step);
    if h.iter().any(|v| !v.is_finite()) {
        return Err(Error::Consistency("Hessian has non-finite entries".into()));
    }
    let t = data.len();
    let mut scores = DMatrix::<f64>::zeros(t, k);
    let mut x = u.to_vec();
    for i in 0..k {
        let step = cfg.se_step * u[i].abs().max(1.0);
        x[i] = u[i] + step;
        let up = stage_days(&decode(base, params, &x, n_max), data, fc, cfg.stage)?;
        x[i] = u[i] - step;
        let dn = stage_days(&decode(base, params, &x, n_max), data, fc, cfg.stage)?;
        x[i] = u[i];
        for d in 0..t {
            scores[(d, i)] = (up[d] - dn[d]) / (2.0 * step);
        }
    }
    let opg = scores.transpose() * &scores;
    let neg_h = -h;
    let hinv = neg_h.clone().try_inverse().ok_or_else(|| Error::Consistency("singular Hessian".into()))?;
    let cov_u = &hinv * opg * &hinv;
    // Jacobian of natural parameters with respect to u
    let mut jac = DMatrix::<f64>::zeros(k, k);
    for i in 0..k {
        let step = 1e-6 * u[i].abs().max(1.0);
        let mut xp = u.to_vec();
        xp[i] += step;
        let mut xm = u.to_vec();
        xm[i] -= step;
        let sp = decode(base, params, &xp, n_max);
        let sm = decode(base, params, &xm, n_max);
        for (r, &p) in params.iter().enumerate() {
            jac[(r, i)] = (p.get(&sp) - p.get(&sm)) / (2.0 * step);
        }
    }
    let cov = &jac * cov_u * jac.transpose();
    Ok((0..k).map(|i| (cov[(i, i)] > 0.0).then(|| cov[(i, i)].sqrt())).collect())
}

/// Returns-only fit of the physical parameters followed by a fit of the
/// kernel parameters with those held fixed. The report and objective are
/// for the joint likelihood at the final point; standard errors are the
/// per-stage ones.
pub fn fit_two_stage(start: &ModelSpec, data: &[DayObs], cfg: &FitConfig) -> Result<FitResult> {
    let s1 = fit_mle(start, data, &FitConfig { stage: FitStage::ReturnsOnly, ..cfg.clone() })?;
    let mut s2 = fit_mle(&s1.spec, data, &FitConfig { stage: FitStage::DerivativesOnly, ..cfg.clone() })?;
    let mut est = s1.estimates;
    est.append(&mut s2.estimates);
    Ok(FitResult {
        objective: s2.report.ll_total,
        estimates: est,
        iterations: s1.iterations + s2.iterations,
        evaluations: s1.evaluations + s2.evaluations,
        converged: s1.converged && s2.converged,
        ..s2
    })
}

// ---- error summaries ----

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmseRow {
    pub label: String,
    /// Absent when the partition is empty.
    pub rmse: Option<f64>,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmseReport {
    /// VIX RMSE in index points.
    pub vix: RmseRow,
    /// Implied-volatility RMSE in volatility points (decimal × 100).
    pub iv: RmseRow,
    pub by_delta: Vec<RmseRow>,
    pub by_dtm: Vec<RmseRow>,
    pub by_vix: Vec<RmseRow>,
    /// Options whose model or observed price had no implied volatility.
    pub iv_failures: usize,
}

struct Acc {
    label: String,
    ss: f64,
    n: usize,
}

impl Acc {
    fn new(label: impl Into<String>) -> Self {
        Acc { label: label.into(), ss: 0.0, n: 0 }
    }
    fn add(&mut self, e: f64) {
        self.ss += e * e;
        self.n += 1;
    }
    fn row(&self, scale: f64) -> RmseRow {
        RmseRow {
            label: self.label.clone(),
            rmse: (self.n > 0).then(|| (self.ss / self.n as f64).sqrt() * scale),
            count: self.n,
        }
    }
}

pub const DELTA_EDGES: [f64; 5] = [0.3, 0.4, 0.5, 0.6, 0.7];
pub const DTM_EDGES: [f64; 5] = [30.0, 60.0, 90.0, 120.0, 150.0];
pub const VIX_EDGES: [f64; 5] = [15.0, 20.0, 25.0, 30.0, 35.0];

/// Labels of the buckets cut by `edges`.
pub fn bucket_labels(name: &str, edges: &[f64]) -> Vec<String> {
    let mut out = vec![format!("{name}<{}", edges[0])];
    for w in edges.windows(2) {
        out.push(format!("{}<={name}<{}", w[0], w[1]));
    }
    out.push(format!("{}<={name}", edges[edges.len() - 1]));
    out
}

/// Index of the bucket holding `x`.
pub fn bucket(x: f64, edges: &[f64]) -> usize {
    edges.iter().take_while(|e| x >= **e).count()
}

/// VIX and implied-volatility RMSEs, overall and by delta, calendar DTM and
/// VIX level. Days before `skip` are left out.
pub fn rmse_report(report: &LikelihoodReport, data: &[DayObs], skip: usize) -> RmseReport {
    rmse_report_between(report, data, skip, report.days.len())
}

/// As [`rmse_report`] over days `from..to`.
pub fn rmse_report_between(report: &LikelihoodReport, data: &[DayObs], from: usize, to: usize) -> RmseReport {
    let mut vix = Acc::new("VIX");
    let mut iv = Acc::new("All options");
    let mut by_delta: Vec<Acc> = bucket_labels("Delta", &DELTA_EDGES).into_iter().map(Acc::new).collect();
    let mut by_dtm: Vec<Acc> = bucket_labels("DTM", &DTM_EDGES).into_iter().map(Acc::new).collect();
    let mut by_vix: Vec<Acc> = bucket_labels("VIX", &VIX_EDGES).into_iter().map(Acc::new).collect();
    let mut failures = 0;
    for (rec, day) in report.days.iter().zip(data).take(to).skip(from) {
        if let Some(e) = rec.vix_error() {
            vix.add(e);
        }
        let models = rec.option_model();
        if models.is_empty() {
            continue;
        }
        for (o, xm) in day.options.iter().zip(models) {
            let model_price = xm * o.vega / 100.0;
            let (Ok(iv_m), Ok(iv_o)) = (bs_implied_vol(model_price, &o.call), bs_implied_vol(o.price, &o.call)) else {
                failures += 1;
                continue;
            };
            let e = iv_m - iv_o;
            iv.add(e);
            by_delta[bucket(o.delta, &DELTA_EDGES)].add(e);
            by_dtm[bucket(o.dtm as f64, &DTM_EDGES)].add(e);
            if let Some(v) = day.vix {
                by_vix[bucket(v, &VIX_EDGES)].add(e);
            }
        }
    }
    RmseReport {
        vix: vix.row(1.0),
        iv: iv.row(100.0),
        by_delta: by_delta.iter().map(|a| a.row(100.0)).collect(),
        by_dtm: by_dtm.iter().map(|a| a.row(100.0)).collect(),
        by_vix: by_vix.iter().map(|a| a.row(100.0)).collect(),
        iv_failures: failures,
    }
}

/// Sample autocorrelations at lags 1..=max_lag.
pub fn acf(x: &[f64], max_lag: usize) -> Vec<f64> {
    let n = x.len();
    if n < 2 {
        return vec![f64::NAN; max_lag];
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let c0: f64 = x.iter().map(|v| (v - mean).powi(2)).sum();
    (1..=max_lag)
        .map(|k| {
            if k >= n || c0 == 0.0 {
                return f64::NAN;
            }
            x.iter().zip(&x[k..]).map(|(a, b)| (a - mean) * (b - mean)).sum::<f64>() / c0
        })
        .collect()
}

/// Daily VIX errors and daily mean option errors after `skip`, on days
/// where they exist.
pub fn error_series(report: &LikelihoodReport, skip: usize) -> (Vec<f64>, Vec<f64>) {
    let mut v = Vec::new();
    let mut o = Vec::new();
    for rec in report.days.iter().skip(skip) {
        if let Some(e) = rec.vix_error() {
            v.push(e);
        }
        let k = usize::from(rec.has_vix);
        if rec.observed.len() > k {
            let e: f64 = rec.observed[k..].iter().zip(&rec.model[k..]).map(|(a, b)| a - b).sum();
            o.push(e / (rec.observed.len() - k) as f64);
        }
    }
    (v, o)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;

    #[test]
    fn one_day_unit_variance() {
        let pp = PhysicalParams { omega: 0.0, beta: 0.5, alpha: 1e-6, gamma: 10.0, lambda: 2.0, r: 1e-4 };
        let ret = pp.r + (pp.lambda - 0.5) * 1.0;
        let (ll, _) = loglik_returns(&pp, &[ret], 1.0).unwrap();
        assert!((ll + 0.5 * LN_2PI).abs() < 1e-14);
    }

    #[test]
    fn fast_matches_dense() {
        let e = [0.3, -1.2, 2.0, 0.1, -0.7, 1.1];
        for rho in [-0.15, 0.0, 0.148, 0.5] {
            let kp = KernelParams { theta: 0.9, zeta: 1.1, sigma: 0.05, sigma_e: 1.9, rho };
            for n in 1..=6 {
                let a = loglik_day(&e[..n], &kp).unwrap();
                let b = loglik_day_dense(&e[..n], &kp).unwrap();
                assert!((a - b).abs() < 1e-10, "n={n} rho={rho}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn transforms_round_trip() {
        let (pp, kp) = presets::shng_opt();
        let s = ModelSpec::new(Variant::Shng, DataConfig::VixOpt, pp, kp);
        let ps = free_params(&s, FitStage::Joint, true, 7);
        let mut s2 = s;
        s2.pp.omega = 1e-7;
        let u = encode(&s2, &ps, 7).unwrap();
        let back = decode(&s2, &ps, &u, 7);
        for p in ps {
            let (a, b) = (p.get(&s2), p.get(&back));
            assert!((a - b).abs() <= 1e-12 * a.abs().max(1e-12), "{p:?}: {a} vs {b}");
        }
    }

    #[test]
    fn buckets() {
        assert_eq!(bucket(0.29, &DELTA_EDGES), 0);
        assert_eq!(bucket(0.3, &DELTA_EDGES), 1);
        assert_eq!(bucket(0.95, &DELTA_EDGES), 5);
        assert_eq!(bucket_labels("DTM", &DTM_EDGES)[5], "150<=DTM");
    }

    #[test]
    fn acf_of_alternating_series() {
        let x: Vec<f64> = (0..100).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        assert!((acf(&x, 1)[0] + 0.99).abs() < 1e-12);
    }
}
