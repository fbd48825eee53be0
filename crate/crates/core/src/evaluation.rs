//! Simulation experiments and validation: the RMSE comparison of the three
//! estimators, leave-one-out cross-validation, seasonal averaging, and Monte
//! Carlo checks of the kernel estimator's convergence rate and normality.

use std::fmt::Write as _;
use std::io::Write;
use std::str::FromStr;
use std::time::{Duration, Instant};

use chrono::{Datelike, NaiveDate};
use rand::seq::index::sample;
use rayon::prelude::*;

use crate::covariance::SeparableCovParams;
use crate::data::{fmt_num, indicators, Dataset, GridSpec, Location, Method, TimeGrid};
use crate::error::{invalid, Error, Result};
use crate::kriging::{fit_ml, FitOptions, KrigedField, KrigingSystem};
use crate::simulate::{ar1_series, design_rng, replicate_rng, SimScenario, Simulator};
use crate::smoothing::{bandwidth_rule, smooth_ker, KernelSpec, SeriesSmoother, SmoothingConfig};
use crate::stats::{excess_kurtosis, mean, ols_slope, pairwise_sum, skewness, std_dev};

/// Root mean squared difference over time.
pub fn rmse_time(estimates: &[f64], truth: &[f64]) -> Result<f64> {
    if estimates.len() != truth.len() {
        return invalid(format!(
            "{} estimates against {} true values",
            estimates.len(),
            truth.len()
        ));
    }
    if estimates.is_empty() {
        return invalid("rmse of an empty series");
    }
    let sq: Vec<f64> = estimates
        .iter()
        .zip(truth)
        .map(|(a, b)| (a - b) * (a - b))
        .collect();
    Ok((pairwise_sum(&sq) / sq.len() as f64).sqrt())
}

fn rmse_const(estimates: &[f64], truth: f64) -> f64 {
    let sq: Vec<f64> = estimates
        .iter()
        .map(|a| (a - truth) * (a - truth))
        .collect();
    (pairwise_sum(&sq) / sq.len() as f64).sqrt()
}

/// How covariance parameters are estimated across the days of a series.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RefitPolicy {
    /// A separate maximum-likelihood fit for every day.
    #[default]
    Daily,
    /// One fit on the per-site time average, reused for every day.
    TimeAveraged,
}

impl FromStr for RefitPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "daily" => Ok(RefitPolicy::Daily),
            "averaged" | "time-averaged" => Ok(RefitPolicy::TimeAveraged),
            other => invalid(format!(
                "unknown refit policy '{other}' (expected daily or averaged)"
            )),
        }
    }
}

/// Spatial step settings.
#[derive(Debug, Clone, Copy, Default)]
pub struct KrigingConfig {
    pub fit: FitOptions,
    pub refit: RefitPolicy,
}

fn dot(w: &[f64], v: impl Iterator<Item = f64>) -> f64 {
    w.iter().zip(v).map(|(a, b)| a * b).sum()
}

/// Kriging weights at `target` for one slice, or `None` when the slice is constant.
fn slice_weights(
    sites: &[Location],
    values: &[f64],
    target: &Location,
    fit: &FitOptions,
) -> Result<Option<Vec<f64>>> {
    match fit_ml(sites, values, fit) {
        Ok(model) => Ok(Some(KrigingSystem::new(&model)?.weights(target).0)),
        Err(Error::ZeroVariance) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Daily kriging predictions at `target` from per-site daily series.
///
/// A day on which every site has the same value is predicted as that value.
/// Under [`RefitPolicy::TimeAveraged`] a constant time-averaged field yields
/// equal weights.
pub fn krige_series(
    sites: &[Location],
    series: &[Vec<f64>],
    target: &Location,
    cfg: &KrigingConfig,
) -> Result<Vec<f64>> {
    if sites.len() != series.len() || series.is_empty() {
        return invalid("one series per site required");
    }
    let n = series[0].len();
    if series.iter().any(|s| s.len() != n) {
        return invalid("site series differ in length");
    }
    let day = |t: usize| series.iter().map(move |s| s[t]);
    match cfg.refit {
        RefitPolicy::Daily => (0..n)
            .map(|t| {
                let values: Vec<f64> = day(t).collect();
                Ok(match slice_weights(sites, &values, target, &cfg.fit)? {
                    Some(w) => dot(&w, values.iter().copied()),
                    None => values[0],
                })
            })
            .collect(),
        RefitPolicy::TimeAveraged => {
            let avg: Vec<f64> = series.iter().map(|s| mean(s)).collect();
            let w = slice_weights(sites, &avg, target, &cfg.fit)?
                .unwrap_or_else(|| vec![1.0 / sites.len() as f64; sites.len()]);
            Ok((0..n).map(|t| dot(&w, day(t))).collect())
        }
    }
}

/// Settings for the RMSE comparison of the three estimators.
#[derive(Debug, Clone)]
pub struct Table1Config {
    pub reps: usize,
    pub methods: Vec<Method>,
    pub thresholds: Vec<f64>,
    pub ms: Vec<usize>,
    pub grid: GridSpec,
    pub n_time: usize,
    pub cov: SeparableCovParams,
    pub seed: u64,
    pub smoothing: SmoothingConfig,
    pub fit: FitOptions,
    /// Designs with at most this many sites refit daily; larger ones fit the time average.
    pub daily_refit_max_m: usize,
    pub parallel: usize,
}

impl Default for Table1Config {
    fn default() -> Self {
        Self {
            reps: 50,
            methods: Method::ALL.to_vec(),
            thresholds: vec![0.0, 2.0],
            ms: vec![24, 400],
            grid: GridSpec::unit(20, 20).expect("valid grid"),
            n_time: 200,
            cov: SeparableCovParams::default(),
            seed: 0,
            smoothing: SmoothingConfig::default(),
            fit: FitOptions::default(),
            daily_refit_max_m: 100,
            parallel: 1,
        }
    }
}

impl Table1Config {
    pub fn refit_for(&self, m: usize) -> RefitPolicy {
        if m <= self.daily_refit_max_m {
            RefitPolicy::Daily
        } else {
            RefitPolicy::TimeAveraged
        }
    }

    fn validate(&self) -> Result<()> {
        if self.reps == 0 {
            return invalid("replicate count must be positive");
        }
        if self.methods.is_empty() || self.thresholds.is_empty() || self.ms.is_empty() {
            return invalid("methods, thresholds and m values must be non-empty");
        }
        if self.thresholds.iter().any(|x| !x.is_finite()) {
            return invalid("thresholds must be finite");
        }
        for &m in &self.ms {
            if m < 3 || m > self.grid.len() {
                return invalid(format!("m = {m} outside [3, {}]", self.grid.len()));
            }
        }
        if self.parallel == 0 {
            return invalid("parallelism degree must be at least 1");
        }
        if self.n_time < 2 {
            return invalid("n_time must be at least 2");
        }
        Ok(())
    }
}

/// Mean and standard deviation of per-replicate RMSE for one table cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellSummary {
    pub method: Method,
    pub threshold: f64,
    pub m: usize,
    /// Over successful replicates, predictions clamped into [0, 1].
    pub mean_rmse: f64,
    pub sd_rmse: f64,
    /// Same, without clamping.
    pub mean_rmse_raw: f64,
    pub sd_rmse_raw: f64,
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub config: Table1Config,
    pub target: Location,
    pub cells: Vec<CellSummary>,
    /// `(replicate, reason)` for each replicate that was dropped.
    pub failures: Vec<(usize, String)>,
    pub elapsed: Duration,
}

impl ExperimentReport {
    pub fn successful_reps(&self) -> usize {
        self.config.reps - self.failures.len()
    }

    pub fn all_succeeded(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn cell(&self, method: Method, threshold: f64, m: usize) -> Option<&CellSummary> {
        self.cells
            .iter()
            .find(|c| c.method == method && c.threshold == threshold && c.m == m)
    }

    /// `method,threshold,m,mean_rmse,sd_rmse,R,seed` with clamped RMSE.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let io = |e: csv::Error| Error::Io(e.into());
        w.write_record([
            "method",
            "threshold",
            "m",
            "mean_rmse",
            "sd_rmse",
            "R",
            "seed",
        ])
        .map_err(io)?;
        for c in &self.cells {
            w.write_record([
                c.method.as_str().to_string(),
                fmt_num(c.threshold),
                c.m.to_string(),
                fmt_num(c.mean_rmse),
                fmt_num(c.sd_rmse),
                self.config.reps.to_string(),
                self.config.seed.to_string(),
            ])
            .map_err(io)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Scenario echo, one `key = value` per line.
    pub fn config_block(&self) -> String {
        let c = &self.config;
        let mut s = String::new();
        let _ = writeln!(s, "grid = {}x{}", c.grid.nx, c.grid.ny);
        let _ = writeln!(s, "spacing = {}", c.grid.spacing);
        let _ = writeln!(s, "n_time = {}", c.n_time);
        let _ = writeln!(s, "sigma_T2 = {}", c.cov.sigma_t2);
        let _ = writeln!(s, "alpha = {}", c.cov.alpha);
        let _ = writeln!(s, "sigma_S2 = {}", c.cov.sigma_s2);
        let _ = writeln!(s, "gamma = {}", c.cov.gamma);
        let _ = writeln!(s, "R = {}", c.reps);
        let _ = writeln!(s, "seed = {}", c.seed);
        let _ = writeln!(s, "target = ({}, {})", self.target.x, self.target.y);
        match c.smoothing.bandwidth {
            Some(b) => {
                let _ = writeln!(s, "bandwidth = {b}");
            }
            None => {
                let _ = writeln!(s, "bandwidth = {} * n^(-1/5)", c.smoothing.bandwidth_c);
            }
        }
        let _ = writeln!(s, "kernel = {}", c.smoothing.kernel.as_str());
        let _ = writeln!(s, "edf_window = {}", c.smoothing.window);
        let _ = writeln!(s, "mean_model = {}", c.fit.mean.as_str());
        let _ = writeln!(s, "nugget = {}", c.fit.nugget);
        let _ = writeln!(s, "daily_refit_max_m = {}", c.daily_refit_max_m);
        s
    }

    fn table(&self, title: &str, pick: impl Fn(&CellSummary) -> (f64, f64)) -> String {
        let c = &self.config;
        let cols: Vec<(f64, usize)> = c
            .thresholds
            .iter()
            .flat_map(|&x| c.ms.iter().map(move |&m| (x, m)))
            .collect();
        let mut s = String::new();
        let _ = writeln!(s, "{title}");
        let _ = write!(s, "{:<6}", "");
        for (x, m) in &cols {
            let _ = write!(s, "{:>20}", format!("x0={x} m={m}"));
        }
        s.push('\n');
        for &method in &c.methods {
            let _ = write!(s, "{:<6}", method.as_str());
            for &(x, m) in &cols {
                let cell = match self.cell(method, x, m) {
                    Some(cell) => {
                        let (mu, sd) = pick(cell);
                        format!("{mu:.4} ({sd:.4})")
                    }
                    None => "-".into(),
                };
                let _ = write!(s, "{cell:>20}");
            }
            s.push('\n');
        }
        s
    }

    /// Human-readable report: config block, clamped and raw tables, attrition.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# config");
        s.push_str(&self.config_block());
        s.push('\n');
        s.push_str(&self.table(
            &format!(
                "mean (sd) of RMSE over {} replicates, predictions clamped to [0, 1]",
                self.successful_reps()
            ),
            |c| (c.mean_rmse, c.sd_rmse),
        ));
        s.push('\n');
        s.push_str(&self.table("mean (sd) of RMSE, raw predictions", |c| {
            (c.mean_rmse_raw, c.sd_rmse_raw)
        }));
        s.push('\n');
        let _ = writeln!(
            s,
            "replicates: {} requested, {} succeeded, {} failed",
            self.config.reps,
            self.successful_reps(),
            self.failures.len()
        );
        for (rep, why) in &self.failures {
            let _ = writeln!(s, "replicate {rep} failed: {why}");
        }
        s
    }
}

struct Design {
    target: Location,
    // cell indices of the predictor sites, one list per entry of `ms`
    sites: Vec<Vec<usize>>,
}

fn table1_design(cfg: &Table1Config) -> Design {
    let mut rng = design_rng(cfg.seed);
    let g = &cfg.grid;
    // centre of a random grid square, so never a predictor site
    let square = sample(&mut rng, (g.nx - 1) * (g.ny - 1), 1).index(0);
    let (ix, iy) = (square % (g.nx - 1), square / (g.nx - 1));
    let target = Location {
        x: g.origin.x + g.spacing * (ix as f64 + 0.5),
        y: g.origin.y + g.spacing * (iy as f64 + 0.5),
    };
    let sites = cfg
        .ms
        .iter()
        .map(|&m| {
            if m == g.len() {
                (0..m).collect()
            } else {
                let mut idx = sample(&mut rng, g.len(), m).into_vec();
                idx.sort_unstable();
                idx
            }
        })
        .collect();
    Design { target, sites }
}

type RepResult = Vec<(f64, f64)>;

fn table1_replicate(
    cfg: &Table1Config,
    sim: &Simulator,
    design: &Design,
    smoothers: &[SeriesSmoother],
    truths: &[f64],
    rep: usize,
) -> Result<RepResult> {
    let field = sim.sample(rep as u64);
    let cells = cfg.grid.cells();
    let mut out = Vec::new();
    // order: method, threshold, m (matches the report cells)
    for smoother in smoothers {
        for (xi, &x0) in cfg.thresholds.iter().enumerate() {
            let smoothed: Vec<Vec<f64>> = (0..cfg.grid.len())
                .map(|p| smoother.smooth(field.series(p), x0))
                .collect::<Result<_>>()?;
            for (mi, &m) in cfg.ms.iter().enumerate() {
                let idx = &design.sites[mi];
                let sites: Vec<Location> = idx.iter().map(|&i| cells[i]).collect();
                let series: Vec<Vec<f64>> = idx.iter().map(|&i| smoothed[i].clone()).collect();
                let kcfg = KrigingConfig {
                    fit: cfg.fit,
                    refit: cfg.refit_for(m),
                };
                let pred = krige_series(&sites, &series, &design.target, &kcfg)?;
                let clamped: Vec<f64> = pred.iter().map(|p| p.clamp(0.0, 1.0)).collect();
                out.push((
                    rmse_const(&clamped, truths[xi]),
                    rmse_const(&pred, truths[xi]),
                ));
            }
        }
    }
    Ok(out)
}

/// Simulates `reps` fields, estimates the exceedance probability at a held-out
/// target with each method, and summarizes RMSE against the analytic truth.
///
/// Replicate `r` draws from its own stream of the master seed, so results do
/// not depend on the degree of parallelism. A replicate that fails is dropped
/// and reported in [`ExperimentReport::failures`].
pub fn run_table1(cfg: &Table1Config) -> Result<ExperimentReport> {
    cfg.validate()?;
    let start = Instant::now();
    let scenario = SimScenario {
        grid: cfg.grid,
        extra_sites: Vec::new(),
        n_time: cfg.n_time,
        cov: cfg.cov,
        seed: cfg.seed,
        transform: None,
        max_points: crate::simulate::DEFAULT_MAX_POINTS,
    };
    let sim = Simulator::new(&scenario)?;
    let design = table1_design(cfg);
    let time = TimeGrid::with_len(cfg.n_time)?;
    let smoothers: Vec<SeriesSmoother> = cfg
        .methods
        .iter()
        .map(|&m| SeriesSmoother::new(m, &time, &cfg.smoothing))
        .collect::<Result<_>>()?;
    let truths: Vec<f64> = cfg
        .thresholds
        .iter()
        .map(|&x| crate::simulate::true_exceedance(&scenario, x))
        .collect::<Result<_>>()?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.parallel)
        .build()
        .map_err(|e| Error::Invalid(format!("thread pool: {e}")))?;
    let results: Vec<Result<RepResult>> = pool.install(|| {
        (0..cfg.reps)
            .into_par_iter()
            .map(|rep| {
                let r = table1_replicate(cfg, &sim, &design, &smoothers, &truths, rep);
                match &r {
                    Ok(_) => log::debug!("replicate {rep} done"),
                    Err(e) => log::warn!("replicate {rep} failed: {e}"),
                }
                r
            })
            .collect()
    });

    let mut failures = Vec::new();
    let mut ok = Vec::new();
    for (rep, r) in results.into_iter().enumerate() {
        match r {
            Ok(v) => ok.push(v),
            Err(e) => failures.push((rep, e.to_string())),
        }
    }
    let mut cells = Vec::new();
    let mut k = 0;
    for &method in &cfg.methods {
        for &threshold in &cfg.thresholds {
            for &m in &cfg.ms {
                let clamped: Vec<f64> = ok.iter().map(|r| r[k].0).collect();
                let raw: Vec<f64> = ok.iter().map(|r| r[k].1).collect();
                cells.push(CellSummary {
                    method,
                    threshold,
                    m,
                    mean_rmse: mean(&clamped),
                    sd_rmse: std_dev(&clamped),
                    mean_rmse_raw: mean(&raw),
                    sd_rmse_raw: std_dev(&raw),
                });
                k += 1;
            }
        }
    }
    Ok(ExperimentReport {
        config: cfg.clone(),
        target: design.target,
        cells,
        failures,
        elapsed: start.elapsed(),
    })
}

/// Leave-one-out RMSE for one station.
#[derive(Debug, Clone, PartialEq)]
pub struct LooResult {
    pub station_id: String,
    pub rmse: f64,
}

/// Holds out each station in turn and kriges the others' estimates to it.
///
/// The held-out station is scored against its own indicators for IND and its
/// own smoothed series for EDF and KER. Predictions are clamped into [0, 1].
/// Every station must be fully observed.
pub fn loo_crossval(
    data: &Dataset,
    x0: f64,
    method: Method,
    smoothing: &SmoothingConfig,
    kriging: &KrigingConfig,
) -> Result<Vec<LooResult>> {
    let n_st = data.stations.len();
    if n_st < 4 {
        return invalid(format!(
            "cross-validation needs at least 4 stations, got {n_st}"
        ));
    }
    let smoother = SeriesSmoother::new(method, &data.grid, smoothing)?;
    let smoothed: Vec<Vec<f64>> = data
        .stations
        .iter()
        .map(|s| {
            if !s.is_complete() {
                return invalid(format!("station {} has missing values; impute first", s.id));
            }
            smoother.smooth(s.values(), x0)
        })
        .collect::<Result<_>>()?;
    let locs = data.locations();
    (0..n_st)
        .map(|h| {
            let sites: Vec<Location> = (0..n_st).filter(|&i| i != h).map(|i| locs[i]).collect();
            let series: Vec<Vec<f64>> = (0..n_st)
                .filter(|&i| i != h)
                .map(|i| smoothed[i].clone())
                .collect();
            let pred = krige_series(&sites, &series, &locs[h], kriging)?;
            let clamped: Vec<f64> = pred.iter().map(|p| p.clamp(0.0, 1.0)).collect();
            let observed = match method {
                Method::Ind => indicators(data.stations[h].values(), x0)
                    .into_iter()
                    .map(|b| if b { 1.0 } else { 0.0 })
                    .collect(),
                _ => smoothed[h].clone(),
            };
            Ok(LooResult {
                station_id: data.stations[h].id.clone(),
                rmse: rmse_time(&clamped, &observed)?,
            })
        })
        .collect()
}

pub fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Date predicate for seasonal summaries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Season {
    /// April 1 to September 30 inclusive, any year.
    Summer,
    /// Every day outside summer.
    Winter,
    /// Inclusive date range.
    Range(NaiveDate, NaiveDate),
}

impl Season {
    pub fn contains(&self, d: NaiveDate) -> bool {
        let summer = (4..=9).contains(&d.month());
        match *self {
            Season::Summer => summer,
            Season::Winter => !summer,
            Season::Range(a, b) => a <= d && d <= b,
        }
    }
}

impl FromStr for Season {
    type Err = Error;

    /// `summer`, `winter`, or `YYYY-MM-DD:YYYY-MM-DD`.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "summer" => Ok(Season::Summer),
            "winter" => Ok(Season::Winter),
            _ => {
                let (a, b) = s.split_once(':').ok_or_else(|| {
                    Error::Invalid(format!(
                        "season '{s}' is neither summer, winter nor START:END"
                    ))
                })?;
                let parse = |x: &str| {
                    NaiveDate::parse_from_str(x, "%Y-%m-%d")
                        .map_err(|_| Error::Invalid(format!("bad date '{x}' in season")))
                };
                let (a, b) = (parse(a)?, parse(b)?);
                if a > b {
                    return invalid(format!("season range {a}:{b} is reversed"));
                }
                Ok(Season::Range(a, b))
            }
        }
    }
}

/// Cellwise mean over the days in `season`; the standard error is the square
/// root of the mean kriging variance.
pub fn seasonal_average(fields: &[KrigedField], season: &Season) -> Result<KrigedField> {
    let chosen: Vec<&KrigedField> = fields
        .iter()
        .filter(|f| f.date.is_some_and(|d| season.contains(d)))
        .collect();
    let Some(first) = chosen.first() else {
        return invalid("no day falls in the requested season");
    };
    if chosen.iter().any(|f| f.grid != first.grid) {
        return invalid("fields are on different grids");
    }
    let n = first.grid.len();
    let k = chosen.len() as f64;
    let avg = |get: &dyn Fn(&KrigedField, usize) -> f64| -> Vec<f64> {
        (0..n)
            .map(|i| {
                let v: Vec<f64> = chosen.iter().map(|f| get(f, i)).collect();
                pairwise_sum(&v) / k
            })
            .collect()
    };
    Ok(KrigedField {
        grid: first.grid,
        pred: avg(&|f, i| f.pred[i]),
        raw: avg(&|f, i| f.raw[i]),
        se: avg(&|f, i| f.se[i] * f.se[i])
            .into_iter()
            .map(f64::sqrt)
            .collect(),
        label: match season {
            Season::Summer => "summer".into(),
            Season::Winter => "winter".into(),
            Season::Range(a, b) => format!("{a}:{b}"),
        },
        date: None,
        method: first.method,
        transform: first.transform,
    })
}

/// Monte Carlo study of the kernel estimator's error as the series grows.
#[derive(Debug, Clone)]
pub struct RateCheckConfig {
    pub ns: Vec<usize>,
    pub bandwidth_c: f64,
    pub reps: usize,
    /// Rescaled evaluation time, interior to (0, 1).
    pub t: f64,
    /// AR(1) coefficient of the latent Gaussian series.
    pub phi: f64,
    pub seed: u64,
}

impl Default for RateCheckConfig {
    fn default() -> Self {
        Self {
            ns: vec![200, 800, 3200],
            bandwidth_c: 1.0,
            reps: 200,
            t: 0.5,
            phi: 0.5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RateCheck {
    pub ns: Vec<usize>,
    pub rmse: Vec<f64>,
    /// Least-squares slope of log RMSE on log n.
    pub slope: f64,
    /// Set when too few replicates were run for the slope to be meaningful.
    pub wide_tolerance: bool,
}

/// Series are thresholded at 0, so the true exceedance probability is 1/2 at all times.
fn ker_at(n: usize, c: f64, t: f64, phi: f64, seed: u64, stream: u64) -> Result<f64> {
    let mut rng = replicate_rng(seed, stream);
    let x = ar1_series(n, phi, &mut rng);
    let grid = TimeGrid::with_len(n)?;
    let k = KernelSpec::gaussian(bandwidth_rule(n, c)?)?;
    smooth_ker(&indicators(&x, 0.0), &grid, &k, t)
}

pub fn rate_check(cfg: &RateCheckConfig) -> Result<RateCheck> {
    let mut ns = cfg.ns.clone();
    ns.sort_unstable();
    ns.dedup();
    if ns.len() < 3 {
        return invalid("rate check needs at least 3 distinct series lengths");
    }
    if cfg.reps == 0 {
        return invalid("rate check needs at least one replicate");
    }
    if !(cfg.t > 0.0 && cfg.t < 1.0) {
        return invalid("evaluation time must be interior to (0, 1)");
    }
    let rmse: Vec<f64> = ns
        .iter()
        .enumerate()
        .map(|(k, &n)| {
            let est: Vec<f64> = (0..cfg.reps)
                .map(|r| {
                    ker_at(
                        n,
                        cfg.bandwidth_c,
                        cfg.t,
                        cfg.phi,
                        cfg.seed,
                        ((k as u64) << 32) | r as u64,
                    )
                })
                .collect::<Result<_>>()?;
            Ok(rmse_const(&est, 0.5))
        })
        .collect::<Result<_>>()?;
    let lx: Vec<f64> = ns.iter().map(|&n| (n as f64).ln()).collect();
    let ly: Vec<f64> = rmse.iter().map(|r| r.ln()).collect();
    let slope = ols_slope(&lx, &ly)?;
    let wide_tolerance = cfg.reps < 10;
    if wide_tolerance {
        log::warn!(
            "rate check with {} replicates: slope is indicative only",
            cfg.reps
        );
    }
    Ok(RateCheck {
        ns,
        rmse,
        slope,
        wide_tolerance,
    })
}

/// Monte Carlo distribution of the kernel estimator at one time point.
#[derive(Debug, Clone)]
pub struct NormalityConfig {
    pub n: usize,
    pub reps: usize,
    pub bandwidth_c: f64,
    pub t: f64,
    pub phi: f64,
    pub seed: u64,
}

impl Default for NormalityConfig {
    fn default() -> Self {
        Self {
            n: 800,
            reps: 500,
            bandwidth_c: 1.0,
            t: 0.5,
            phi: 0.5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct NormalityCheck {
    /// Standardized estimates, one per replicate.
    pub standardized: Vec<f64>,
    pub skewness: f64,
    pub excess_kurtosis: f64,
}

pub fn normality_check(cfg: &NormalityConfig) -> Result<NormalityCheck> {
    if cfg.reps < 3 {
        return invalid("normality check needs at least 3 replicates");
    }
    let est: Vec<f64> = (0..cfg.reps)
        .map(|r| ker_at(cfg.n, cfg.bandwidth_c, cfg.t, cfg.phi, cfg.seed, r as u64))
        .collect::<Result<_>>()?;
    let mu = mean(&est);
    let sd = std_dev(&est);
    if !(sd > 0.0) {
        return Err(Error::ZeroVariance);
    }
    let standardized: Vec<f64> = est.iter().map(|e| (e - mu) / sd).collect();
    Ok(NormalityCheck {
        skewness: skewness(&standardized),
        excess_kurtosis: excess_kurtosis(&standardized),
        standardized,
    })
}
