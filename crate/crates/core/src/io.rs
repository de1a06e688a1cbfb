//! Delimited-file ingestion, option panel preprocessing and batch runs.
//!
//! Every file written here starts with a `# shng-<kind> schema_version=N`
//! line. Readers skip lines starting with `#`, so written data files can be
//! ingested again.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::estimation::{
    acf, bucket, bucket_labels, error_series, filter_sequence, fit_mle, fit_two_stage, loglik_day,
    loglik_derivatives, rmse_report_between, DataConfig, DayEval, DayObs, Engine, FilterConfig, FitConfig,
    FitStage, LikelihoodReport, ModelSpec, OptionObs, RmseReport, Variant, DELTA_EDGES, DTM_EDGES, VIX_EDGES,
};
use crate::mc::{
    density_compare, fourier_density, kernel_density, linspace, mc_martingale_gap, mc_option_price, mc_vix,
    simulate, simulate_panel_data, simulate_terminal, term_structure_moments, EtaMode, Leverage, Measure,
    PanelConfig, SimConfig, SimState,
};
use crate::model::{KernelParams, PhysicalParams};
use crate::presets;
use crate::pricing::{
    bs_delta, bs_implied_vol, bs_price, bs_vega, compensated_vol, full_expected_path, price_call_stochastic,
    EuropeanCall, FourierRule,
};
use crate::score::{Equicorr, FisherContext};
use crate::vix::{vix_price, vix_terms_closed};

pub const SCHEMA_VERSION: u32 = 1;

/// Environment variable holding the worker thread count.
pub const THREADS_ENV: &str = "SHNG_THREADS";

pub fn header_line(kind: &str) -> String {
    format!("# shng-{kind} schema_version={SCHEMA_VERSION}")
}

// ---- schema ----

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReturnsSchema {
    pub date: String,
    /// Daily log return.
    pub ret: String,
    /// Index level; needed when option quotes are ingested.
    pub close: String,
}

impl Default for ReturnsSchema {
    fn default() -> Self {
        ReturnsSchema { date: "date".into(), ret: "ret".into(), close: "close".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VixSchema {
    pub date: String,
    pub vix: String,
}

impl Default for VixSchema {
    fn default() -> Self {
        VixSchema { date: "date".into(), vix: "vix".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptionSchema {
    pub date: String,
    pub strike: String,
    /// Calendar days to maturity.
    pub dtm: String,
    pub price: String,
    /// Call/put flag column.
    pub kind: String,
    pub volume: String,
    /// Optional; computed from the implied volatility when the column is absent.
    pub delta: String,
    pub call_flag: String,
    pub put_flag: String,
}

impl Default for OptionSchema {
    fn default() -> Self {
        OptionSchema {
            date: "date".into(),
            strike: "strike".into(),
            dtm: "dtm".into(),
            price: "price".into(),
            kind: "cp".into(),
            volume: "volume".into(),
            delta: "delta".into(),
            call_flag: "C".into(),
            put_flag: "P".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SchemaConfig {
    pub delimiter: char,
    /// Unparseable rows tolerated before ingestion fails.
    pub max_errors: usize,
    pub returns: ReturnsSchema,
    pub vix: VixSchema,
    pub options: OptionSchema,
}

impl Default for SchemaConfig {
    fn default() -> Self {
        SchemaConfig {
            delimiter: ',',
            max_errors: 10,
            returns: ReturnsSchema::default(),
            vix: VixSchema::default(),
            options: OptionSchema::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataPaths {
    pub returns: PathBuf,
    #[serde(default)]
    pub vix: Option<PathBuf>,
    #[serde(default)]
    pub options: Option<PathBuf>,
}

// ---- ingestion ----

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptionQuote {
    pub date: String,
    pub strike: f64,
    /// Calendar days to maturity.
    pub maturity_days: u32,
    pub price: f64,
    pub is_call: bool,
    pub volume: f64,
    pub bs_delta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawDay {
    pub date: String,
    pub ret: f64,
    pub close: Option<f64>,
    pub vix: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowError {
    pub file: String,
    pub line: u64,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Gaps {
    /// Return dates with no VIX value (when a VIX file is given).
    pub missing_vix: Vec<String>,
    /// VIX or quote dates with no return row; these rows are ignored.
    pub unmatched_vix: usize,
    pub unmatched_quotes: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Ingested {
    pub days: Vec<RawDay>,
    pub quotes: Vec<OptionQuote>,
    pub errors: Vec<RowError>,
    pub gaps: Gaps,
}

struct Table {
    name: String,
    headers: Vec<String>,
    rows: Vec<(u64, csv::StringRecord)>,
}

impl Table {
    fn column(&self, name: &str) -> Result<usize> {
        self.headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Data(format!("{}: missing column '{name}'", self.name)))
    }

    fn optional(&self, name: &str) -> Option<usize> {
        self.headers.iter().position(|h| h == name)
    }
}

fn read_table(path: &Path, delim: char, errors: &mut Vec<RowError>) -> Result<Table> {
    let name = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|e| Error::Data(format!("{name}: {e}")))?;
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(delim as u8)
        .comment(Some(b'#'))
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers: Vec<String> = if text.lines().all(|l| l.trim().is_empty() || l.starts_with('#')) {
        Vec::new()
    } else {
        rdr.headers()?.iter().map(str::to_string).collect()
    };
    let mut rows = Vec::new();
    if !headers.is_empty() {
        for rec in rdr.records() {
            match rec {
                Ok(r) => rows.push((r.position().map_or(0, |p| p.line()), r)),
                Err(e) => errors.push(RowError {
                    file: name.clone(),
                    line: e.position().map_or(0, |p| p.line()),
                    message: e.to_string(),
                }),
            }
        }
    }
    Ok(Table { name, headers, rows })
}

fn field<'a>(rec: &'a csv::StringRecord, i: usize, what: &str) -> std::result::Result<&'a str, String> {
    rec.get(i).filter(|s| !s.is_empty()).ok_or_else(|| format!("missing {what}"))
}

fn number(rec: &csv::StringRecord, i: usize, what: &str) -> std::result::Result<f64, String> {
    let s = field(rec, i, what)?;
    let v: f64 = s.parse().map_err(|_| format!("bad {what} '{s}'"))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("non-finite {what}"))
    }
}

/// Reads returns, optional VIX and optional option quotes, aligned on the
/// return dates. Rows that fail to parse, duplicate dates and quotes that
/// violate basic sanity are collected in `errors`; ingestion fails once
/// their number exceeds the schema's error budget.
pub fn ingest(paths: &DataPaths, schema: &SchemaConfig) -> Result<Ingested> {
    let mut errors = Vec::new();
    let push = |errors: &mut Vec<RowError>, t: &Table, line: u64, message: String| {
        errors.push(RowError { file: t.name.clone(), line, message });
    };

    let rt = read_table(&paths.returns, schema.delimiter, &mut errors)?;
    let (cd, cr) = (rt.column(&schema.returns.date)?, rt.column(&schema.returns.ret)?);
    let cc = rt.optional(&schema.returns.close);
    let mut days: Vec<RawDay> = Vec::with_capacity(rt.rows.len());
    let mut index: BTreeMap<String, usize> = BTreeMap::new();
    for (line, rec) in &rt.rows {
        let parsed = (|| {
            let date = field(rec, cd, "date")?.to_string();
            let ret = number(rec, cr, "return")?;
            let close = match cc {
                Some(i) => Some(number(rec, i, "close")?).filter(|v| *v > 0.0).ok_or("non-positive close")?,
                None => return Ok((date, ret, None)),
            };
            Ok::<_, String>((date, ret, Some(close)))
        })();
        match parsed {
            Ok((date, ret, close)) => {
                if index.contains_key(&date) {
                    push(&mut errors, &rt, *line, format!("duplicate date {date}"));
                    continue;
                }
                index.insert(date.clone(), days.len());
                days.push(RawDay { date, ret, close, vix: None });
            }
            Err(m) => push(&mut errors, &rt, *line, m),
        }
    }

    let mut gaps = Gaps::default();
    if let Some(p) = &paths.vix {
        let vt = read_table(p, schema.delimiter, &mut errors)?;
        if !vt.headers.is_empty() {
            let (cd, cv) = (vt.column(&schema.vix.date)?, vt.column(&schema.vix.vix)?);
            let mut seen = HashSet::new();
            for (line, rec) in &vt.rows {
                let parsed = (|| Ok::<_, String>((field(rec, cd, "date")?.to_string(), number(rec, cv, "vix")?)))();
                match parsed {
                    Ok((date, v)) => {
                        if !seen.insert(date.clone()) {
                            push(&mut errors, &vt, *line, format!("duplicate date {date}"));
                        } else if !(v > 0.0) {
                            push(&mut errors, &vt, *line, format!("non-positive VIX {v}"));
                        } else if let Some(&i) = index.get(&date) {
                            days[i].vix = Some(v);
                        } else {
                            gaps.unmatched_vix += 1;
                        }
                    }
                    Err(m) => push(&mut errors, &vt, *line, m),
                }
            }
        }
        gaps.missing_vix = days.iter().filter(|d| d.vix.is_none()).map(|d| d.date.clone()).collect();
    }

    let mut quotes = Vec::new();
    if let Some(p) = &paths.options {
        let ot = read_table(p, schema.delimiter, &mut errors)?;
        if !ot.headers.is_empty() {
            let s = &schema.options;
            let cols = (
                ot.column(&s.date)?,
                ot.column(&s.strike)?,
                ot.column(&s.dtm)?,
                ot.column(&s.price)?,
                ot.column(&s.kind)?,
                ot.column(&s.volume)?,
            );
            let cdelta = ot.optional(&s.delta);
            for (line, rec) in &ot.rows {
                let parsed = (|| {
                    let date = field(rec, cols.0, "date")?.to_string();
                    let strike = number(rec, cols.1, "strike")?;
                    let dtm = number(rec, cols.2, "dtm")?;
                    let price = number(rec, cols.3, "price")?;
                    let flag = field(rec, cols.4, "call/put flag")?;
                    let is_call = if flag.eq_ignore_ascii_case(&s.call_flag) {
                        true
                    } else if flag.eq_ignore_ascii_case(&s.put_flag) {
                        false
                    } else {
                        return Err(format!("unknown call/put flag '{flag}'"));
                    };
                    let volume = number(rec, cols.5, "volume")?;
                    let delta = match cdelta {
                        Some(i) if rec.get(i).is_some_and(|v| !v.is_empty()) => Some(number(rec, i, "delta")?),
                        _ => None,
                    };
                    if !(strike > 0.0) || !(price > 0.0) {
                        return Err("strike and price must be positive".into());
                    }
                    if dtm < 0.0 || dtm.fract() != 0.0 {
                        return Err(format!("bad days to maturity {dtm}"));
                    }
                    Ok(OptionQuote {
                        date,
                        strike,
                        maturity_days: dtm as u32,
                        price,
                        is_call,
                        volume,
                        bs_delta: delta,
                    })
                })();
                match parsed {
                    Ok(q) if index.contains_key(&q.date) => quotes.push(q),
                    Ok(_) => gaps.unmatched_quotes += 1,
                    Err(m) => push(&mut errors, &ot, *line, m),
                }
            }
            if !quotes.is_empty() && cc.is_none() {
                return Err(Error::Data(format!("{}: option quotes need a '{}' column", rt.name, schema.returns.close)));
            }
        }
    }

    if errors.len() > schema.max_errors {
        let first: Vec<String> =
            errors.iter().take(5).map(|e| format!("{}:{}: {}", e.file, e.line, e.message)).collect();
        return Err(Error::Data(format!(
            "{} bad rows exceed the error budget of {}; first: {}",
            errors.len(),
            schema.max_errors,
            first.join("; ")
        )));
    }
    for e in &errors {
        log::warn!("{}:{}: {}", e.file, e.line, e.message);
    }
    Ok(Ingested { days, quotes, errors, gaps })
}

// ---- preprocessing ----

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DayUnit {
    Calendar,
    Trading,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessConfig {
    /// Daily risk-free rate.
    pub rate: f64,
    pub dtm_min: u32,
    pub dtm_max: u32,
    /// Unit of `dtm_min`; `dtm_max` is always calendar days.
    pub dtm_min_unit: DayUnit,
    /// Trading days per calendar day.
    pub trading_per_calendar: f64,
    /// Bucket targets in trading days. Bucket k takes maturities in
    /// (targets[k−1], targets[k]].
    pub targets: Vec<usize>,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            rate: presets::DEFAULT_RATE,
            dtm_min: 14,
            dtm_max: 183,
            dtm_min_unit: DayUnit::Calendar,
            trading_per_calendar: 252.0 / 365.0,
            targets: vec![21, 42, 63, 84, 105, 126],
        }
    }
}

impl PreprocessConfig {
    pub fn trading_days(&self, dtm: u32) -> usize {
        (dtm as f64 * self.trading_per_calendar).round() as usize
    }

    fn maturity_ok(&self, dtm: u32) -> bool {
        let lower = match self.dtm_min_unit {
            DayUnit::Calendar => dtm >= self.dtm_min,
            DayUnit::Trading => self.trading_days(dtm) >= self.dtm_min as usize,
        };
        lower && dtm <= self.dtm_max
    }

    pub fn bucket_of(&self, m: usize) -> Option<usize> {
        if m == 0 {
            return None;
        }
        self.targets.iter().position(|t| m <= *t)
    }
}

/// Put to call through put-call parity; `m` in trading days, `r` daily.
pub fn parity_call(put: f64, spot: f64, strike: f64, r: f64, m: usize) -> f64 {
    put + spot - strike * (-r * m as f64).exp()
}

pub fn parity_put(call: f64, spot: f64, strike: f64, r: f64, m: usize) -> f64 {
    call - spot + strike * (-r * m as f64).exp()
}

/// Whether a call price lies strictly inside max(S − Ke^{−rm}, 0) < C < S.
pub fn in_arbitrage_band(call: f64, spot: f64, strike: f64, r: f64, m: usize) -> bool {
    let lower = (spot - strike * (-r * m as f64).exp()).max(0.0);
    call > lower && call < spot
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectedQuote {
    pub quote: OptionQuote,
    pub bucket: usize,
    /// Trading days to maturity.
    pub maturity: usize,
    pub call_price: f64,
    pub iv: f64,
    pub vega: f64,
    pub call_delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DailyPanel {
    pub date: String,
    pub ret: f64,
    pub spot: Option<f64>,
    pub vix: Option<f64>,
    /// At most one quote per bucket, in bucket order.
    pub quotes: Vec<SelectedQuote>,
    /// 100/vega per selected quote.
    pub vega_weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DropCounts {
    pub in_the_money: usize,
    pub no_volume: usize,
    pub maturity: usize,
    pub arbitrage: usize,
    pub implied_vol: usize,
    pub unselected: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Preprocessed {
    pub panels: Vec<DailyPanel>,
    pub dropped: DropCounts,
}

impl Preprocessed {
    pub fn day_obs(&self, rate: f64) -> Vec<DayObs> {
        to_day_obs(&self.panels, rate)
    }
}

/// Ordering used inside a bucket: higher volume, then |Δ − 0.5| smaller,
/// then lower strike, then earlier input row.
fn better(a: &SelectedQuote, b: &SelectedQuote) -> bool {
    if a.quote.volume != b.quote.volume {
        return a.quote.volume > b.quote.volume;
    }
    let (da, db) = ((a.call_delta - 0.5).abs(), (b.call_delta - 0.5).abs());
    if da != db {
        return da < db;
    }
    a.quote.strike < b.quote.strike
}

/// Out-of-the-money filter, parity conversion of puts, maturity filter and
/// most-liquid selection per maturity bucket.
pub fn preprocess(data: &Ingested, cfg: &PreprocessConfig) -> Result<Preprocessed> {
    if cfg.targets.windows(2).any(|w| w[0] >= w[1]) || cfg.targets.is_empty() {
        return Err(Error::Config("bucket targets must be increasing".into()));
    }
    let mut by_date: BTreeMap<&str, Vec<&OptionQuote>> = BTreeMap::new();
    for q in &data.quotes {
        by_date.entry(q.date.as_str()).or_default().push(q);
    }
    let mut dropped = DropCounts::default();
    let mut panels = Vec::with_capacity(data.days.len());
    for day in &data.days {
        let mut best: Vec<Option<SelectedQuote>> = vec![None; cfg.targets.len()];
        let quotes = by_date.get(day.date.as_str()).map(Vec::as_slice).unwrap_or(&[]);
        for q in quotes {
            let Some(spot) = day.close else {
                return Err(Error::Data(format!("{}: quotes without an index level", day.date)));
            };
            let otm = if q.is_call { q.strike >= spot } else { q.strike < spot };
            if !otm {
                dropped.in_the_money += 1;
                continue;
            }
            if !(q.volume > 0.0) {
                dropped.no_volume += 1;
                continue;
            }
            let m = cfg.trading_days(q.maturity_days);
            let Some(b) = cfg.bucket_of(m).filter(|_| cfg.maturity_ok(q.maturity_days)) else {
                dropped.maturity += 1;
                continue;
            };
            let c = if q.is_call { q.price } else { parity_call(q.price, spot, q.strike, cfg.rate, m) };
            if !in_arbitrage_band(c, spot, q.strike, cfg.rate, m) {
                log::info!("{}: K={} DTM={} dropped, price {c} outside no-arbitrage band", q.date, q.strike, q.maturity_days);
                dropped.arbitrage += 1;
                continue;
            }
            let call = EuropeanCall { spot, strike: q.strike, maturity_days: m, rate: cfg.rate };
            let Ok(iv) = bs_implied_vol(c, &call) else {
                dropped.implied_vol += 1;
                continue;
            };
            let vega = bs_vega(&call, iv);
            if !(vega > 0.0) {
                dropped.implied_vol += 1;
                continue;
            }
            let call_delta = match q.bs_delta {
                Some(d) if q.is_call => d,
                Some(d) => 1.0 + d,
                None => bs_delta(&call, iv),
            };
            let cand = SelectedQuote { quote: (*q).clone(), bucket: b, maturity: m, call_price: c, iv, vega, call_delta };
            match &best[b] {
                Some(cur) if !better(&cand, cur) => dropped.unselected += 1,
                Some(_) => {
                    dropped.unselected += 1;
                    best[b] = Some(cand);
                }
                None => best[b] = Some(cand),
            }
        }
        let quotes: Vec<SelectedQuote> = best.into_iter().flatten().collect();
        let vega_weights = quotes.iter().map(|q| 100.0 / q.vega).collect();
        panels.push(DailyPanel {
            date: day.date.clone(),
            ret: day.ret,
            spot: day.close,
            vix: day.vix,
            quotes,
            vega_weights,
        });
    }
    Ok(Preprocessed { panels, dropped })
}

pub fn to_day_obs(panels: &[DailyPanel], rate: f64) -> Vec<DayObs> {
    panels
        .iter()
        .map(|p| DayObs {
            ret: p.ret,
            vix: p.vix,
            options: p
                .quotes
                .iter()
                .map(|q| OptionObs {
                    call: EuropeanCall {
                        spot: p.spot.unwrap_or(f64::NAN),
                        strike: q.quote.strike,
                        maturity_days: q.maturity,
                        rate,
                    },
                    vega: q.vega,
                    price: q.call_price,
                    delta: q.call_delta,
                    dtm: q.quote.maturity_days,
                })
                .collect(),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescribeRow {
    pub group: String,
    pub label: String,
    pub count: usize,
    pub mean_price: Option<f64>,
    /// Mean implied volatility, decimal × 100.
    pub mean_iv: Option<f64>,
}

/// Counts, mean call price and mean implied volatility of the selected
/// quotes by delta, calendar DTM and VIX level.
pub fn describe(panels: &[DailyPanel]) -> Vec<DescribeRow> {
    let groups: [(&str, &[f64]); 3] = [("Delta", &DELTA_EDGES), ("DTM", &DTM_EDGES), ("VIX", &VIX_EDGES)];
    let mut out = Vec::new();
    for (g, edges) in groups {
        let labels = bucket_labels(g, edges);
        let mut acc = vec![(0usize, 0.0, 0.0); labels.len()];
        for p in panels {
            for q in &p.quotes {
                let x = match g {
                    "Delta" => q.call_delta,
                    "DTM" => q.quote.maturity_days as f64,
                    _ => match p.vix {
                        Some(v) => v,
                        None => continue,
                    },
                };
                let a = &mut acc[bucket(x, edges)];
                a.0 += 1;
                a.1 += q.call_price;
                a.2 += q.iv;
            }
        }
        for (label, (n, sp, si)) in labels.into_iter().zip(acc) {
            let mean = |s: f64| (n > 0).then(|| s / n as f64);
            out.push(DescribeRow {
                group: g.into(),
                label,
                count: n,
                mean_price: mean(sp),
                mean_iv: mean(si).map(|v| 100.0 * v),
            });
        }
    }
    let n: usize = panels.iter().map(|p| p.quotes.len()).sum();
    let (sp, si) = panels.iter().flat_map(|p| &p.quotes).fold((0.0, 0.0), |a, q| (a.0 + q.call_price, a.1 + q.iv));
    out.push(DescribeRow {
        group: "All".into(),
        label: "All".into(),
        count: n,
        mean_price: (n > 0).then(|| sp / n as f64),
        mean_iv: (n > 0).then(|| 100.0 * si / n as f64),
    });
    out
}

// ---- output ----

/// Writes a delimited file with a schema header line and returns its path.
pub fn write_table(dir: &Path, name: &str, kind: &str, columns: &[&str], rows: &[Vec<String>]) -> Result<PathBuf> {
    let path = dir.join(name);
    let mut f = BufWriter::new(File::create(&path)?);
    writeln!(f, "{}", header_line(kind))?;
    {
        let mut w = csv::Writer::from_writer(&mut f);
        w.write_record(columns)?;
        for r in rows {
            w.write_record(r)?;
        }
        w.flush()?;
    }
    f.flush()?;
    Ok(path)
}

fn num(x: f64) -> String {
    format!("{x}")
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

/// Per-day state path of a filter run.
pub fn state_rows(report: &LikelihoodReport, dates: &[String]) -> Vec<Vec<String>> {
    report
        .days
        .iter()
        .enumerate()
        .map(|(t, d)| {
            vec![
                dates.get(t).cloned().unwrap_or_else(|| t.to_string()),
                num(d.eta),
                num(d.h),
                num(d.h_next),
                num(d.h_star_next),
                num(d.z),
                num(d.score),
                num(d.fisher),
                num(d.ll_ret),
                num(d.ll_vix),
                num(d.ll_opt),
            ]
        })
        .collect()
}

pub const STATE_COLUMNS: [&str; 11] =
    ["date", "eta", "h", "h_next", "h_star_next", "z", "score", "fisher", "ll_ret", "ll_vix", "ll_opt"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StatePoint {
    pub eta: f64,
    pub h: f64,
}

pub fn read_state_path(path: &Path) -> Result<Vec<StatePoint>> {
    let mut errors = Vec::new();
    let t = read_table(path, ',', &mut errors)?;
    if let Some(e) = errors.first() {
        return Err(Error::Data(format!("{}:{}: {}", e.file, e.line, e.message)));
    }
    let (ce, ch) = (t.column("eta")?, t.column("h")?);
    t.rows
        .iter()
        .map(|(line, r)| {
            let get = |i, w| number(r, i, w).map_err(|m| Error::Data(format!("{}:{line}: {m}", t.name)));
            Ok(StatePoint { eta: get(ce, "eta")?, h: get(ch, "h")? })
        })
        .collect()
}

/// Log-likelihood of `data` with the state (η_t, h_t) taken from a stored
/// path instead of being filtered.
pub fn loglik_from_states(spec: &ModelSpec, data: &[DayObs], states: &[StatePoint], cfg: &FilterConfig) -> Result<f64> {
    if states.len() != data.len() {
        return Err(Error::Dimension { expected: data.len(), got: states.len() });
    }
    let mats: Vec<usize> = {
        let mut m: Vec<usize> = data.iter().flat_map(|d| d.options.iter().map(|o| o.call.maturity_days)).collect();
        m.sort_unstable();
        m.dedup();
        if spec.data.uses_options() {
            m
        } else {
            Vec::new()
        }
    };
    let mut engine = Engine::new(&spec.pp, &spec.kp, cfg, &mats)?;
    let mut ev = DayEval::default();
    let mut ll = 0.0;
    for (t, (day, st)) in data.iter().zip(states).enumerate() {
        let z = spec.pp.shock(day.ret, st.h);
        ll += -0.5 * ((2.0 * std::f64::consts::PI).ln() + st.h.ln() + z * z);
        let h_next = spec.pp.next_variance(st.h, z).max(crate::model::H_FLOOR);
        let (ins, obs, _) = crate::estimation::day_panel(day, spec.data, cfg.vix_horizon);
        if ins.is_empty() {
            continue;
        }
        engine
            .evaluate(st.eta, h_next, &ins, None::<FisherContext>, &mut ev)
            .map_err(|e| Error::Filter { day: t, reason: e.to_string() })?;
        let e: Vec<f64> = obs.iter().zip(&ev.model).map(|(o, m)| o - m).collect();
        ll += loglik_day(&e, &spec.kp)?;
    }
    Ok(ll)
}

// ---- run configuration ----

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSection {
    pub variant: Variant,
    pub data: DataConfig,
    /// Preset label such as "SHNG[Opt]"; explicit tables override it.
    #[serde(default)]
    pub preset: Option<String>,
    #[serde(default)]
    pub physical: Option<PhysicalParams>,
    #[serde(default)]
    pub kernel: Option<KernelParams>,
}

impl ModelSection {
    pub fn spec(&self) -> Result<ModelSpec> {
        let base = match &self.preset {
            Some(p) => Some(presets::by_name(p).ok_or_else(|| Error::Config(format!("unknown preset '{p}'")))?),
            None => None,
        };
        let pp = self.physical.or(base.map(|b| b.0)).ok_or_else(|| Error::Config("no physical parameters".into()))?;
        let kp = self.kernel.or(base.map(|b| b.1)).ok_or_else(|| Error::Config("no kernel parameters".into()))?;
        let spec = ModelSpec::new(self.variant, self.data, pp, kp);
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSection {
    #[serde(flatten)]
    pub paths: DataPaths,
    #[serde(default)]
    pub schema: SchemaConfig,
    #[serde(default)]
    pub preprocess: PreprocessConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSection {
    pub days: usize,
    /// Generating model; defaults to the `[model]` section.
    pub preset: Option<String>,
    pub variant: Option<Variant>,
    pub panel: PanelConfig,
}

impl Default for SyntheticSection {
    fn default() -> Self {
        SyntheticSection { days: 500, preset: None, variant: None, panel: PanelConfig::default() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimationSection {
    /// Skip the optimizer and evaluate at the starting parameters.
    pub evaluate_only: bool,
    /// Fit the return parameters first, then the rest.
    pub two_stage: bool,
    /// Number of leading days used for estimation; the rest is out of sample.
    pub split: Option<usize>,
    pub acf_lags: usize,
    pub fit: FitConfig,
}

impl Default for EstimationSection {
    fn default() -> Self {
        EstimationSection { evaluate_only: false, two_stage: false, split: None, acf_lags: 20, fit: FitConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PricingSection {
    pub eta: Option<f64>,
    /// h_{t+1}; defaults to the unconditional variance.
    pub h_next: Option<f64>,
    pub spot: f64,
    pub strikes: Vec<f64>,
    /// Trading days.
    pub maturities: Vec<usize>,
    pub nodes: usize,
    pub kappa: f64,
}

impl Default for PricingSection {
    fn default() -> Self {
        PricingSection {
            eta: None,
            h_next: None,
            spot: 100.0,
            strikes: vec![90.0, 95.0, 100.0, 105.0, 110.0],
            maturities: vec![21, 42, 63, 126],
            nodes: 32,
            kappa: crate::pricing::DEFAULT_KAPPA,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulationSection {
    pub n_paths: usize,
    pub horizon_days: usize,
    pub measure: Measure,
    pub eta_mode: EtaMode,
    pub leverage: Leverage,
    pub antithetic: bool,
    pub eta: Option<f64>,
    pub h_next: Option<f64>,
    /// Path-level output is limited to this many paths.
    pub write_paths: usize,
    /// Also write a synthetic data panel in the ingestion format.
    pub panel: bool,
    /// Optional score sample (one value per line) for `ar1-empirical-score`.
    pub score_file: Option<PathBuf>,
}

impl Default for SimulationSection {
    fn default() -> Self {
        SimulationSection {
            n_paths: 10_000,
            horizon_days: 63,
            measure: Measure::Q,
            eta_mode: EtaMode::Ar1Gaussian,
            leverage: Leverage::Exact,
            antithetic: true,
            eta: None,
            h_next: None,
            write_paths: 20,
            panel: true,
            score_file: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ValidateSection {
    pub n_paths: usize,
    pub maturities: Vec<usize>,
}

impl Default for ValidateSection {
    fn default() -> Self {
        ValidateSection { n_paths: 20_000, maturities: vec![21, 63, 126] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReportSection {
    /// Maturities of the variance decomposition table.
    pub maturities: Vec<usize>,
    pub moment_paths: usize,
    pub moment_days: usize,
    pub density_paths: usize,
    pub density_days: usize,
    pub density_points: usize,
}

impl Default for ReportSection {
    fn default() -> Self {
        ReportSection {
            maturities: vec![21, 42, 63, 84, 105, 126],
            moment_paths: 20_000,
            moment_days: 126,
            density_paths: 20_000,
            density_days: 63,
            density_points: 201,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub output: Option<PathBuf>,
    pub model: ModelSection,
    #[serde(default)]
    pub data: Option<DataSection>,
    #[serde(default)]
    pub synthetic: Option<SyntheticSection>,
    #[serde(default)]
    pub estimation: EstimationSection,
    #[serde(default)]
    pub pricing: PricingSection,
    #[serde(default)]
    pub simulation: SimulationSection,
    #[serde(default)]
    pub validate: ValidateSection,
    #[serde(default)]
    pub report: ReportSection,
}

fn default_seed() -> u64 {
    1
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Loads a config; relative data paths are taken relative to its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(d) = &mut cfg.data {
            fix(&mut d.paths.returns);
            d.paths.vix.as_mut().map(fix);
            d.paths.options.as_mut().map(fix);
        }
        cfg.simulation.score_file.as_mut().map(fix);
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// SHA-256 of the effective configuration.
    pub fn hash(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_toml()?.as_bytes())))
    }
}

// ---- commands ----

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Fit,
    Price,
    Simulate,
    Validate,
    Report,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Fit => "fit",
            Command::Price => "price",
            Command::Simulate => "simulate",
            Command::Validate => "validate",
            Command::Report => "report",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    /// File name and SHA-256 of each artifact.
    pub files: Vec<(String, String)>,
}

/// Data used by a run, with dates.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub dates: Vec<String>,
    pub days: Vec<DayObs>,
    pub panels: Option<Vec<DailyPanel>>,
    /// Filled for synthetic data.
    pub true_eta: Option<Vec<f64>>,
}

fn synthetic_spec(cfg: &RunConfig, s: &SyntheticSection) -> Result<ModelSpec> {
    let mut m = cfg.model.clone();
    if let Some(p) = &s.preset {
        m.preset = Some(p.clone());
        m.physical = None;
        m.kernel = None;
    }
    if let Some(v) = s.variant {
        m.variant = v;
    }
    m.spec()
}

/// Reads and preprocesses the configured files, or simulates a panel when
/// only a `[synthetic]` section is given.
pub fn load_dataset(cfg: &RunConfig) -> Result<Dataset> {
    if let Some(d) = &cfg.data {
        let ing = ingest(&d.paths, &d.schema)?;
        let pre = preprocess(&ing, &d.preprocess)?;
        log::info!("preprocessing dropped {:?}", pre.dropped);
        return Ok(Dataset {
            dates: pre.panels.iter().map(|p| p.date.clone()).collect(),
            days: pre.day_obs(d.preprocess.rate),
            panels: Some(pre.panels),
            true_eta: None,
        });
    }
    if let Some(s) = &cfg.synthetic {
        let spec = synthetic_spec(cfg, s)?;
        let pc = PanelConfig { days: s.days, seed: cfg.seed, ..s.panel.clone() };
        let sim = simulate_panel_data(&spec, &pc, &cfg.estimation.fit.filter)?;
        return Ok(Dataset {
            dates: (0..sim.days.len()).map(|t| format!("{t:05}")).collect(),
            days: sim.days,
            panels: None,
            true_eta: Some(sim.eta),
        });
    }
    Err(Error::Config("need a [data] or [synthetic] section".into()))
}

struct Out {
    dir: PathBuf,
    files: Vec<PathBuf>,
}

impl Out {
    fn table(&mut self, name: &str, kind: &str, columns: &[&str], rows: &[Vec<String>]) -> Result<()> {
        self.files.push(write_table(&self.dir, name, kind, columns, rows)?);
        Ok(())
    }
}

/// Runs one command and writes its artifacts plus `manifest.csv` and the
/// effective `config.toml` into `out_dir`.
pub fn execute(cmd: Command, cfg: &RunConfig, out_dir: &Path) -> Result<Manifest> {
    std::fs::create_dir_all(out_dir)?;
    let mut out = Out { dir: out_dir.to_path_buf(), files: Vec::new() };
    match cmd {
        Command::Fit => run_fit(cfg, &mut out)?,
        Command::Price => run_price(cfg, &mut out)?,
        Command::Simulate => run_simulate(cfg, &mut out)?,
        Command::Validate => run_validate(cfg, &mut out)?,
        Command::Report => run_report(cfg, &mut out)?,
    }
    let cfg_path = out_dir.join("config.toml");
    std::fs::write(&cfg_path, format!("{}\n{}", header_line("config"), cfg.to_toml()?))?;
    out.files.push(cfg_path);
    let mut files = Vec::new();
    for f in &out.files {
        let bytes = std::fs::read(f)?;
        let name = f.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        files.push((name, hex::encode(Sha256::digest(&bytes))));
    }
    let manifest = Manifest { command: cmd.name().into(), config_hash: cfg.hash()?, seed: cfg.seed, files };
    let mut rows = vec![
        vec!["command".into(), manifest.command.clone()],
        vec!["config_sha256".into(), manifest.config_hash.clone()],
        vec!["seed".into(), manifest.seed.to_string()],
        vec!["library_version".into(), env!("CARGO_PKG_VERSION").into()],
    ];
    for (n, h) in &manifest.files {
        rows.push(vec![format!("file:{n}"), h.clone()]);
    }
    write_table(out_dir, "manifest.csv", "manifest", &["key", "value"], &rows)?;
    Ok(manifest)
}

/// Fit followed by the report, into one directory.
pub fn run(config_file: &Path) -> Result<Manifest> {
    let cfg = RunConfig::load(config_file)?;
    let dir = cfg.output.clone().unwrap_or_else(|| PathBuf::from("out"));
    execute(Command::Fit, &cfg, &dir)?;
    execute(Command::Report, &cfg, &dir.join("report"))
}

fn rmse_rows(tag: &str, r: &RmseReport) -> Vec<Vec<String>> {
    let mut rows = Vec::new();
    let mut add = |group: &str, row: &crate::estimation::RmseRow| {
        rows.push(vec![tag.into(), group.into(), row.label.clone(), opt(row.rmse), row.count.to_string()]);
    };
    add("VIX", &r.vix);
    add("IV", &r.iv);
    r.by_delta.iter().for_each(|x| add("Delta", x));
    r.by_dtm.iter().for_each(|x| add("DTM", x));
    r.by_vix.iter().for_each(|x| add("VIX level", x));
    rows
}

/// σ_e maximizing the derivative likelihood for fixed ρ and fixed errors.
pub fn refit_sigma_e(kp: &KernelParams, errors_by_day: &[Vec<f64>]) -> Result<f64> {
    let mut q = 0.0;
    let mut n = 0usize;
    for e in errors_by_day.iter().filter(|e| !e.is_empty()) {
        q += Equicorr::new(e.len(), kp.rho)?.quad_form(e);
        n += e.len();
    }
    if n == 0 {
        return Err(Error::Data("no pricing errors".into()));
    }
    Ok((q / n as f64).sqrt())
}

fn run_fit(cfg: &RunConfig, out: &mut Out) -> Result<()> {
    let start = cfg.model.spec()?;
    let data = load_dataset(cfg)?;
    let est = &cfg.estimation;
    let n = data.days.len();
    let split = est.split.unwrap_or(n).min(n);
    if split == 0 {
        return Err(Error::Config("estimation sample is empty".into()));
    }
    let fit_cfg = &est.fit;
    let (spec, estimates, meta) = if est.evaluate_only {
        (start, Vec::new(), vec![])
    } else {
        let f = if est.two_stage && fit_cfg.stage == FitStage::Joint {
            fit_two_stage(&start, &data.days[..split], fit_cfg)?
        } else {
            fit_mle(&start, &data.days[..split], fit_cfg)?
        };
        let meta = vec![
            ("iterations", f.iterations as f64),
            ("evaluations", f.evaluations as f64),
            ("converged", f64::from(u8::from(f.converged))),
            ("objective", f.objective),
        ];
        (f.spec, f.estimates, meta)
    };
    let report = filter_sequence(&spec, &data.days, &fit_cfg.filter)?;

    let mut rows = Vec::new();
    for e in &estimates {
        rows.push(vec![e.param.name().into(), num(e.value), opt(e.se)]);
    }
    if estimates.is_empty() {
        for p in crate::estimation::free_params(&spec, FitStage::Joint, true, 2) {
            rows.push(vec![p.name().into(), num(p.get(&spec)), String::new()]);
        }
    }
    out.table("params.csv", "params", &["param", "value", "se"], &rows)?;

    let in_ll = |from: usize, to: usize| {
        let d = &report.days[from..to];
        (
            d.iter().map(|x| x.ll_ret).sum::<f64>(),
            d.iter().map(|x| x.ll_vix).sum::<f64>(),
            d.iter().map(|x| x.ll_opt).sum::<f64>(),
        )
    };
    let mut ll_rows = Vec::new();
    let mut add_ll = |sample: &str, from: usize, to: usize| -> Result<()> {
        let (r, v, o) = in_ll(from, to);
        ll_rows.push(vec![sample.into(), "in-sample-sigma_e".into(), num(r), num(v), num(o), num(r + v + o), String::new()]);
        if sample == "out-of-sample" {
            let errs: Vec<Vec<f64>> = report.days[from..to].iter().map(|d| d.errors()).collect();
            if errs.iter().any(|e| !e.is_empty()) {
                let se = refit_sigma_e(&spec.kp, &errs)?;
                let kp = KernelParams { sigma_e: se, ..spec.kp };
                let d = loglik_derivatives(&kp, &errs)?;
                ll_rows.push(vec![sample.into(), "refitted-sigma_e".into(), num(r), String::new(), String::new(), num(r + d), num(se)]);
            }
        }
        Ok(())
    };
    add_ll("in-sample", 0, split)?;
    if split < n {
        add_ll("out-of-sample", split, n)?;
    }
    for (k, v) in &meta {
        ll_rows.push(vec!["fit".into(), (*k).into(), num(*v), String::new(), String::new(), String::new(), String::new()]);
    }
    out.table(
        "loglik.csv",
        "loglik",
        &["sample", "convention", "ll_returns", "ll_vix", "ll_opt", "ll_total", "sigma_e"],
        &ll_rows,
    )?;

    let mut st = state_rows(&report, &data.dates);
    let mut cols = STATE_COLUMNS.to_vec();
    if let Some(te) = &data.true_eta {
        cols.push("eta_true");
        for (r, v) in st.iter_mut().zip(te) {
            r.push(num(*v));
        }
    }
    out.table("states.csv", "states", &cols, &st)?;

    let burn = fit_cfg.filter.burn_in.min(split);
    let mut rm = rmse_rows("in-sample", &rmse_report_between(&report, &data.days, burn, split));
    if split < n {
        rm.extend(rmse_rows("out-of-sample", &rmse_report_between(&report, &data.days, split, n)));
    }
    out.table("rmse.csv", "rmse", &["sample", "group", "bucket", "rmse", "count"], &rm)?;

    let (ve, oe) = error_series(&report, burn);
    let (va, oa) = (acf(&ve, est.acf_lags), acf(&oe, est.acf_lags));
    let rows: Vec<Vec<String>> = (0..est.acf_lags)
        .map(|k| vec![(k + 1).to_string(), if ve.is_empty() { String::new() } else { num(va[k]) }, if oe.is_empty() { String::new() } else { num(oa[k]) }])
        .collect();
    out.table("acf.csv", "acf", &["lag", "vix_error", "option_error"], &rows)?;

    let mut dec = decomposition_rows(&spec, &cfg.report.maturities, None)?;
    dec.extend(decomposition_rows(&spec, &cfg.report.maturities, Some(&report))?);
    out.table("decomposition.csv", "decomposition", &DECOMPOSITION_COLUMNS, &dec)?;
    Ok(())
}

const DECOMPOSITION_COLUMNS: [&str; 7] = ["state", "maturity", "a1_share", "a2_share", "a3_share", "psi_over_h_star", "days"];

/// Shares of a₁, a₂σ² and a₃h* in the VIX radicand and ψ/h*, at the
/// unconditional state or averaged over a filtered path.
pub fn decomposition_rows(spec: &ModelSpec, maturities: &[usize], path: Option<&LikelihoodReport>) -> Result<Vec<Vec<String>>> {
    let (pp, kp) = (&spec.pp, &spec.kp);
    let s2 = kp.sigma * kp.sigma;
    let states: Vec<(f64, f64)> = match path {
        None => vec![(kp.zeta, kp.zeta * pp.unconditional_variance()?)],
        Some(r) => r.days.iter().map(|d| (d.eta, d.h_star_next)).collect(),
    };
    let mut rows = Vec::new();
    for &m in maturities {
        let mut acc = [0.0; 4];
        for &(eta, hs) in &states {
            let t = vix_terms_closed(pp, kp, eta, m)?;
            let total = t.a1 + t.a2 * s2 + t.a3 * hs;
            acc[0] += t.a1 / total;
            acc[1] += t.a2 * s2 / total;
            acc[2] += t.a3 * hs / total;
            acc[3] += compensated_vol(pp, kp, eta, hs, m, s2)?.psi / hs;
        }
        let k = states.len() as f64;
        let mut r = vec![if path.is_some() { "filtered-mean" } else { "unconditional" }.to_string(), m.to_string()];
        r.extend(acc.iter().map(|v| num(v / k)));
        r.push(states.len().to_string());
        rows.push(r);
    }
    Ok(rows)
}

fn state_or_default(spec: &ModelSpec, eta: Option<f64>, h_next: Option<f64>) -> Result<(f64, f64)> {
    let h = match h_next {
        Some(v) => v,
        None => spec.pp.unconditional_variance()?,
    };
    Ok((eta.unwrap_or(spec.kp.zeta), h))
}

fn run_price(cfg: &RunConfig, out: &mut Out) -> Result<()> {
    let spec = cfg.model.spec()?;
    let p = &cfg.pricing;
    let (eta, h_next) = state_or_default(&spec, p.eta, p.h_next)?;
    let (pp, kp) = (&spec.pp, &spec.kp);
    let s2 = kp.sigma * kp.sigma;
    let h_star = eta * h_next;
    let rule = FourierRule::new(p.nodes, p.kappa);
    let mut rows = Vec::new();
    for &m in &p.maturities {
        let cv = compensated_vol(pp, kp, eta, h_star, m, s2)?;
        let v = vix_price(pp, kp, eta, h_star, m, s2)?;
        for &k in &p.strikes {
            let call = EuropeanCall { spot: p.spot, strike: k, maturity_days: m, rate: pp.r };
            let c = crate::pricing::price_call_stochastic_with(pp, kp, &call, eta, h_star, s2, &rule, None)?;
            let iv = bs_implied_vol(c, &call).ok();
            rows.push(vec![
                m.to_string(),
                num(k),
                num(c),
                opt(iv.map(|x| 100.0 * x)),
                opt(iv.map(|x| bs_delta(&call, x))),
                num(cv.psi),
                num(v.value),
            ]);
        }
    }
    out.table("prices.csv", "prices", &["maturity", "strike", "call", "iv", "delta", "psi", "vix"], &rows)
}

fn read_scores(path: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
        .map(|(i, l)| {
            l.trim().parse::<f64>().map_err(|_| Error::Data(format!("{}:{}: bad score '{l}'", path.display(), i + 1)))
        })
        .collect()
}

fn run_simulate(cfg: &RunConfig, out: &mut Out) -> Result<()> {
    let spec = cfg.model.spec()?;
    let s = &cfg.simulation;
    let (eta, h_next) = state_or_default(&spec, s.eta, s.h_next)?;
    let mut eta_mode = s.eta_mode.clone();
    if let (Some(f), EtaMode::Ar1EmpiricalScore { standardize, .. }) = (&s.score_file, &eta_mode) {
        eta_mode = EtaMode::Ar1EmpiricalScore { scores: read_scores(f)?, standardize: *standardize };
    }
    let sc = SimConfig {
        n_paths: s.n_paths,
        horizon_days: s.horizon_days,
        seed: cfg.seed,
        measure: s.measure,
        eta_mode,
        leverage: s.leverage,
        antithetic: s.antithetic,
        ..SimConfig::new(s.n_paths, s.horizon_days, cfg.seed)
    };
    let s0 = SimState { h_next, eta };
    let term = simulate_terminal(&sc, &spec.pp, &spec.kp, &s0)?;
    let (mean, se) = crate::mc::mean_se(&term.log_return, sc.antithetic);
    let hs: Vec<f64> = term.sum_h_star.clone();
    let (mh, seh) = crate::mc::mean_se(&hs, sc.antithetic);
    let rows = vec![
        vec!["paths".into(), term.log_return.len().to_string(), String::new()],
        vec!["mean_log_return".into(), num(mean), num(se)],
        vec!["mean_sum_h_star".into(), num(mh), num(seh)],
        vec!["floor_events".into(), term.floor_events.to_string(), String::new()],
    ];
    out.table("simulation_summary.csv", "simulation-summary", &["quantity", "value", "se"], &rows)?;

    if s.write_paths > 0 {
        let small = SimConfig { n_paths: s.write_paths.max(2), ..sc.clone() };
        let panel = simulate(&small, &spec.pp, &spec.kp, &s0)?;
        let mut rows = Vec::new();
        for (i, ((r, h), (hs, e))) in
            panel.returns.iter().zip(&panel.h).zip(panel.h_star.iter().zip(&panel.eta)).enumerate()
        {
            for d in 0..r.len() {
                rows.push(vec![i.to_string(), (d + 1).to_string(), num(r[d]), num(h[d]), num(hs[d]), num(e[d])]);
            }
        }
        out.table("paths.csv", "paths", &["path", "day", "ret", "h", "h_star", "eta"], &rows)?;
    }

    if s.panel {
        let syn = cfg.synthetic.clone().unwrap_or_default();
        let gen = synthetic_spec(cfg, &syn)?;
        let pc = PanelConfig { days: syn.days, seed: cfg.seed, ..syn.panel.clone() };
        let sim = simulate_panel_data(&gen, &pc, &cfg.estimation.fit.filter)?;
        write_panel_files(out, &sim.days, pc.spot, &pc)?;
        let rows: Vec<Vec<String>> = sim
            .eta
            .iter()
            .zip(&sim.h)
            .zip(&sim.scores)
            .enumerate()
            .map(|(t, ((e, h), s))| vec![format!("{t:05}"), num(*e), num(*h), num(*s)])
            .collect();
        out.table("truth.csv", "truth", &["date", "eta", "h", "score"], &rows)?;
    }
    Ok(())
}

/// Writes returns, VIX and option quotes in the default ingestion schema.
/// In-the-money calls are written as puts through parity so the files pass
/// the out-of-the-money filter.
fn write_panel_files(out: &mut Out, days: &[DayObs], spot0: f64, pc: &PanelConfig) -> Result<()> {
    let mut spot = spot0;
    let mut rets = Vec::new();
    let mut vix = Vec::new();
    let mut opts = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(pc.seed ^ 0x5eed);
    for (t, d) in days.iter().enumerate() {
        let date = format!("{t:05}");
        spot *= d.ret.exp();
        let s = d.options.first().map_or(spot, |o| o.call.spot);
        rets.push(vec![date.clone(), num(d.ret), num(s)]);
        if let Some(v) = d.vix {
            vix.push(vec![date.clone(), num(v)]);
        }
        for o in &d.options {
            let c = &o.call;
            let dtm = (c.maturity_days as f64 * pc.calendar_ratio).round() as u32;
            let volume = rng.random_range(1..1000u32);
            let (kind, price, delta) = if c.strike >= c.spot {
                ("C", o.price, o.delta)
            } else {
                ("P", parity_put(o.price, c.spot, c.strike, c.rate, c.maturity_days), o.delta - 1.0)
            };
            opts.push(vec![date.clone(), num(c.strike), dtm.to_string(), num(price), kind.into(), volume.to_string(), num(delta)]);
        }
    }
    out.table("returns.csv", "returns", &["date", "ret", "close"], &rets)?;
    out.table("vix.csv", "vix", &["date", "vix"], &vix)?;
    out.table("options.csv", "options", &["date", "strike", "dtm", "price", "cp", "volume", "delta"], &opts)
}

fn check(rows: &mut Vec<Vec<String>>, name: String, value: f64, tol: f64, pass: bool) {
    rows.push(vec![name, num(value), num(tol), if pass { "PASS" } else { "FAIL" }.into()]);
}

fn run_validate(cfg: &RunConfig, out: &mut Out) -> Result<()> {
    let spec = cfg.model.spec()?;
    let (pp, kp) = (&spec.pp, &spec.kp);
    let v = &cfg.validate;
    let (eta, h_next) = state_or_default(&spec, None, None)?;
    let h_star = eta * h_next;
    let s2 = kp.sigma * kp.sigma;
    let s0 = SimState { h_next, eta };
    let mut rows = Vec::new();
    for &m in &v.maturities {
        // closed form against the brute-force sum
        let a = vix_terms_closed(pp, kp, eta, m)?;
        let b = crate::vix::vix_terms_bruteforce(pp, kp, eta, m)?;
        let rel = [(a.a1, b.a1), (a.a2, b.a2), (a.a3, b.a3)]
            .iter()
            .map(|(x, y)| (x - y).abs() / y.abs().max(1e-300))
            .fold(0.0, f64::max);
        check(&mut rows, format!("vix_closed_vs_sum_M{m}"), rel, 1e-10, rel < 1e-10);

        let mut sc = SimConfig::new(v.n_paths, m, cfg.seed);
        let gap = mc_martingale_gap(&sc, pp, kp, &s0)?;
        check(&mut rows, format!("martingale_M{m}"), gap.value / gap.se, 3.0, gap.value.abs() < 3.0 * gap.se);

        sc.leverage = Leverage::Approx;
        let mv = mc_vix(&sc, pp, kp, &s0)?;
        let t = vix_terms_closed(pp, kp, eta, m)?;
        let closed = t.a1 + t.a2 * s2 + t.a3 * h_star;
        let z = (mv.sum_h_star.value - closed) / mv.sum_h_star.se;
        check(&mut rows, format!("vix_vs_mc_M{m}"), z, 3.0, z.abs() < 3.0);

        let call = EuropeanCall { spot: 100.0, strike: 100.0, maturity_days: m, rate: pp.r };
        let sc = SimConfig::new(v.n_paths, m, cfg.seed);
        let mc = mc_option_price(&sc, pp, kp, &call, &s0)?;
        let c = price_call_stochastic(pp, kp, &call, eta, h_star, s2)?;
        let dev = (c - mc.value).abs();
        let tol = (3.0 * mc.se).max(0.005 * mc.value);
        check(&mut rows, format!("atm_call_vs_mc_M{m}"), dev, tol, dev <= tol);
    }
    // Black-Scholes nesting
    let h = 1e-4;
    let flat = PhysicalParams { omega: h, beta: 0.0, alpha: 1e-14, gamma: 0.0, lambda: 0.0, r: pp.r };
    let path = vec![1.0; 127];
    let mut worst: f64 = 0.0;
    for &m in &v.maturities {
        for k in [90.0, 100.0, 110.0] {
            let call = EuropeanCall { spot: 100.0, strike: k, maturity_days: m, rate: pp.r };
            let c = crate::pricing::price_call_predetermined(&flat, &call, &path[..m.min(path.len())], h)?;
            let bs = bs_price(&call, (h * 252.0).sqrt());
            worst = worst.max((c - bs).abs() / bs);
        }
    }
    check(&mut rows, "black_scholes_nesting".into(), worst, 1e-4, worst < 1e-4);
    out.table("validate.csv", "validate", &["check", "value", "tolerance", "status"], &rows)
}

fn run_report(cfg: &RunConfig, out: &mut Out) -> Result<()> {
    let spec = cfg.model.spec()?;
    let (pp, kp) = (&spec.pp, &spec.kp);
    let r = &cfg.report;

    if let Some(d) = &cfg.data {
        let ing = ingest(&d.paths, &d.schema)?;
        let pre = preprocess(&ing, &d.preprocess)?;
        let rows: Vec<Vec<String>> = describe(&pre.panels)
            .into_iter()
            .map(|x| vec![x.group, x.label, x.count.to_string(), opt(x.mean_price), opt(x.mean_iv)])
            .collect();
        out.table("describe.csv", "describe", &["group", "bucket", "count", "mean_price", "mean_iv"], &rows)?;
    }
    out.table(
        "decomposition.csv",
        "decomposition",
        &DECOMPOSITION_COLUMNS,
        &decomposition_rows(&spec, &r.maturities, None)?,
    )?;

    let h_bar = pp.unconditional_variance()?;
    let mut rows = Vec::new();
    for (i, &eta) in presets::ETA_QUANTILES.iter().enumerate() {
        let sc = SimConfig::new(r.moment_paths, r.moment_days, cfg.seed.wrapping_add(i as u64));
        for m in term_structure_moments(&sc, pp, kp, eta, h_bar, r.moment_days)? {
            rows.push(vec![
                num(eta),
                m.horizon.to_string(),
                num(m.skewness),
                num(m.skewness_se),
                num(m.kurtosis),
                num(m.kurtosis_se),
            ]);
        }
    }
    out.table("moments.csv", "moments", &["eta", "horizon", "skewness", "skewness_se", "kurtosis", "kurtosis_se"], &rows)?;

    // certainty-equivalent density against simulation
    let m = r.density_days;
    let rule = FourierRule::standard();
    let mut rows = Vec::new();
    let mut dist = Vec::new();
    for (i, &eta) in presets::ETA_QUANTILES.iter().enumerate() {
        let h_star = eta * h_bar;
        let s2 = kp.sigma * kp.sigma;
        let cv = compensated_vol(pp, kp, eta, h_star, m, s2)?;
        let sd = (m as f64 * cv.h_tilde).sqrt();
        let grid = linspace(-6.0 * sd, 4.0 * sd, r.density_points);
        let path = full_expected_path(kp, eta, m);
        let approx = fourier_density(pp, &path, cv.h_tilde, m, &grid, rule)?;
        let sc = SimConfig::new(r.density_paths, m, cfg.seed.wrapping_add(100 + i as u64));
        let t = simulate_terminal(&sc, pp, kp, &SimState { h_next: h_bar, eta })?;
        let kd = kernel_density(&t.log_return, &grid)?;
        let dd = density_compare(&grid, &approx, &kd.density)?;
        dist.push(vec![num(eta), num(dd.sup), num(dd.l1)]);
        for (x, (a, b)) in grid.iter().zip(approx.iter().zip(&kd.density)) {
            rows.push(vec![num(eta), num(*x), num(*a), num(*b)]);
        }
    }
    out.table("density.csv", "density", &["eta", "log_return", "approx", "simulated"], &rows)?;
    out.table("density_distance.csv", "density-distance", &["eta", "sup", "l1"], &dist)
}

/// Sets the global worker count from [`THREADS_ENV`] when present.
pub fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v.parse().map_err(|_| Error::Config(format!("{THREADS_ENV}={v} is not a count")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parity_round_trip() {
        let (s, k, r, m) = (100.0, 95.0, 1e-4, 42);
        let p = 1.7;
        let c = parity_call(p, s, k, r, m);
        assert!((parity_put(c, s, k, r, m) - p).abs() < 1e-12);
        assert_eq!(parity_call(2.5, 100.0, 100.0, 0.0, 21), 2.5);
    }

    #[test]
    fn buckets_follow_targets() {
        let c = PreprocessConfig::default();
        assert_eq!(c.bucket_of(21), Some(0));
        assert_eq!(c.bucket_of(22), Some(1));
        assert_eq!(c.bucket_of(126), Some(5));
        assert_eq!(c.bucket_of(127), None);
        assert_eq!(c.trading_days(183), 126);
        assert_eq!(c.trading_days(30), 21);
    }
}
