//! Per-station temporal estimators of exceedance probability.
//!
//! * IND: the raw 0/1 indicators.
//! * EDF: a centered moving window of indicators, each weighted by the
//!   empirical distribution function of its observation.
//! * KER: Nadaraya-Watson smoothing of the indicators on rescaled time.
//!
//! The KER bandwidth never depends on the threshold, so for a fixed bandwidth
//! the estimate is non-increasing in the threshold at every time point.

use std::f64::consts::PI;
use std::str::FromStr;

use crate::data::{indicators, Method, TimeGrid};
use crate::error::{invalid, Error, Result};
use crate::stats::norm_quantile;

/// Default EDF window, in time points.
pub const DEFAULT_EDF_WINDOW: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum KernelFamily {
    #[default]
    Gaussian,
    Epanechnikov,
}

impl KernelFamily {
    pub fn eval(&self, u: f64) -> f64 {
        match self {
            KernelFamily::Gaussian => (-0.5 * u * u).exp() / (2.0 * PI).sqrt(),
            KernelFamily::Epanechnikov => {
                if u.abs() <= 1.0 {
                    0.75 * (1.0 - u * u)
                } else {
                    0.0
                }
            }
        }
    }

    /// `R(K)`, the integral of `K^2`.
    pub fn roughness(&self) -> f64 {
        match self {
            KernelFamily::Gaussian => 1.0 / (2.0 * PI.sqrt()),
            KernelFamily::Epanechnikov => 0.6,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            KernelFamily::Gaussian => "gaussian",
            KernelFamily::Epanechnikov => "epanechnikov",
        }
    }
}

impl FromStr for KernelFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gaussian" => Ok(KernelFamily::Gaussian),
            "epanechnikov" => Ok(KernelFamily::Epanechnikov),
            other => invalid(format!("unknown kernel '{other}'")),
        }
    }
}

/// A kernel family with a bandwidth on rescaled time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub bandwidth: f64,
}

impl KernelSpec {
    pub fn new(family: KernelFamily, bandwidth: f64) -> Result<Self> {
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return invalid(format!("bandwidth must be positive, got {bandwidth}"));
        }
        Ok(Self { family, bandwidth })
    }

    pub fn gaussian(bandwidth: f64) -> Result<Self> {
        Self::new(KernelFamily::Gaussian, bandwidth)
    }

    fn weight(&self, ti: f64, t: f64) -> f64 {
        self.family.eval((ti - t) / self.bandwidth)
    }
}

/// IND: the indicators themselves.
pub fn smooth_ind(indicators: &[bool]) -> Vec<f64> {
    indicators
        .iter()
        .map(|&b| if b { 1.0 } else { 0.0 })
        .collect()
}

fn kernel_row(grid: &TimeGrid, k: &KernelSpec, t: f64) -> Result<Vec<f64>> {
    let raw: Vec<f64> = (0..grid.len())
        .map(|i| k.weight(grid.point(i), t))
        .collect();
    let total: f64 = raw.iter().sum();
    if !(total > 0.0) {
        return Err(Error::ZeroKernelWeights {
            t,
            bandwidth: k.bandwidth,
        });
    }
    Ok(raw.into_iter().map(|w| w / total).collect())
}

fn weighted_indicator_sum(weights: &[f64], indicators: &[bool]) -> f64 {
    let mut acc = 0.0;
    for (w, &b) in weights.iter().zip(indicators) {
        if b {
            acc += w;
        }
    }
    acc.min(1.0)
}

/// KER: Nadaraya-Watson estimate at rescaled time `eval_t`.
pub fn smooth_ker(
    indicators: &[bool],
    grid: &TimeGrid,
    k: &KernelSpec,
    eval_t: f64,
) -> Result<f64> {
    if indicators.len() != grid.len() {
        return invalid(format!(
            "{} indicators for a time grid of {}",
            indicators.len(),
            grid.len()
        ));
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, &b) in indicators.iter().enumerate() {
        let w = k.weight(grid.point(i), eval_t);
        den += w;
        if b {
            num += w;
        }
    }
    if !(den > 0.0) {
        return Err(Error::ZeroKernelWeights {
            t: eval_t,
            bandwidth: k.bandwidth,
        });
    }
    Ok((num / den).min(1.0))
}

/// Precomputed normalized kernel weights for every grid time; reusable across
/// stations and thresholds.
#[derive(Debug, Clone)]
pub struct KernelSmoother {
    n: usize,
    // row i holds the weights for evaluation at t_i
    weights: Vec<f64>,
}

impl KernelSmoother {
    pub fn new(grid: &TimeGrid, k: &KernelSpec) -> Result<Self> {
        let n = grid.len();
        let mut weights = Vec::with_capacity(n * n);
        for i in 0..n {
            weights.extend(kernel_row(grid, k, grid.point(i))?);
        }
        Ok(Self { n, weights })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.weights[i * self.n..(i + 1) * self.n]
    }

    /// KER estimates at every grid time.
    pub fn smooth(&self, indicators: &[bool]) -> Result<Vec<f64>> {
        if indicators.len() != self.n {
            return invalid(format!(
                "{} indicators for a smoother of length {}",
                indicators.len(),
                self.n
            ));
        }
        Ok((0..self.n)
            .map(|i| weighted_indicator_sum(self.row(i), indicators))
            .collect())
    }
}

/// KER estimates at every grid time.
pub fn smooth_ker_series(indicators: &[bool], grid: &TimeGrid, k: &KernelSpec) -> Result<Vec<f64>> {
    KernelSmoother::new(grid, k)?.smooth(indicators)
}

/// Empirical distribution function of `values`, evaluated at each value.
fn edf_weights(values: &[f64]) -> Vec<f64> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = values.len() as f64;
    values
        .iter()
        .map(|v| sorted.partition_point(|s| s <= v) as f64 / n)
        .collect()
}

/// EDF: for each time, the EDF-weighted mean of indicators over a centered
/// window of `window` points, truncated at the series ends. The EDF is taken
/// over the whole series. If every weight in a window is zero the plain mean of
/// the window's indicators is used instead.
pub fn smooth_edf(values: &[f64], x0: f64, window: usize) -> Result<Vec<f64>> {
    let n = values.len();
    if window == 0 || window.is_multiple_of(2) {
        return invalid(format!("EDF window must be odd and positive, got {window}"));
    }
    if window > n {
        return invalid(format!("EDF window {window} exceeds series length {n}"));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return invalid("EDF smoothing needs a fully observed series");
    }
    let w = edf_weights(values);
    let ind: Vec<bool> = values.iter().map(|v| *v >= x0).collect();
    let half = window / 2;
    Ok((0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half).min(n - 1);
            let mut num = 0.0;
            let mut den = 0.0;
            for j in lo..=hi {
                den += w[j];
                if ind[j] {
                    num += w[j];
                }
            }
            if den > 0.0 {
                (num / den).min(1.0)
            } else {
                let hits = ind[lo..=hi].iter().filter(|b| **b).count();
                hits as f64 / (hi - lo + 1) as f64
            }
        })
        .collect())
}

/// Global bandwidth `c * n^(-1/5)`, capped at 0.5.
pub fn bandwidth_rule(n: usize, c: f64) -> Result<f64> {
    if n < 2 {
        return invalid(format!("bandwidth rule needs n >= 2, got {n}"));
    }
    if !(c > 0.0 && c.is_finite()) {
        return invalid(format!("bandwidth constant must be positive, got {c}"));
    }
    Ok((c * (n as f64).powf(-0.2)).min(0.5))
}

/// Tapered, locally smoothed lag covariances of the indicator residuals.
#[derive(Debug, Clone, PartialEq)]
pub struct CovEstimate {
    /// `g[k]` for lags `0..=L`.
    pub g: Vec<f64>,
}

impl CovEstimate {
    pub fn max_lag(&self) -> usize {
        self.g.len().saturating_sub(1)
    }
}

/// Pointwise confidence band for the KER estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Band {
    pub estimate: f64,
    pub sd: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Lag window used for the band variance, `floor(n^(1/3))`.
pub fn lag_window(n: usize) -> usize {
    let mut l = (n as f64).cbrt().floor() as usize;
    // guard against cbrt rounding just below an exact cube
    while (l + 1).pow(3) <= n {
        l += 1;
    }
    l
}

/// Lag covariances of `resid` localized at weights `w` (normalized per lag),
/// Bartlett-tapered and clipped so that `|g(k)| <= g(0)`.
fn local_lag_cov(resid: &[f64], w: &[f64], max_lag: usize) -> CovEstimate {
    let n = resid.len();
    let mut g = Vec::with_capacity(max_lag + 1);
    for k in 0..=max_lag {
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..n.saturating_sub(k) {
            num += w[i] * resid[i] * resid[i + k];
            den += w[i];
        }
        let raw = if den > 0.0 { num / den } else { 0.0 };
        let taper = 1.0 - k as f64 / (max_lag + 1) as f64;
        g.push(raw * taper);
    }
    let g0 = g[0].max(0.0);
    g[0] = g0;
    for v in g.iter_mut().skip(1) {
        *v = v.clamp(-g0, g0);
    }
    CovEstimate { g }
}

/// Pointwise KER estimate with a normal-theory band at coverage `level`.
///
/// The variance at `t` is `sum_i sum_j w_i(t) w_j(t) g_t(|i-j|)`, where `w`
/// are the normalized kernel weights and `g_t` are lag covariances of the
/// indicator residuals, kernel-smoothed around `t`, Bartlett-tapered, and set
/// to zero beyond lag `floor(n^(1/3))`. Negative variances are floored at zero.
pub fn variance_band(
    indicators: &[bool],
    grid: &TimeGrid,
    k: &KernelSpec,
    level: f64,
) -> Result<Vec<Band>> {
    if !(level > 0.0 && level < 1.0) {
        return invalid(format!("coverage level must lie in (0, 1), got {level}"));
    }
    let n = grid.len();
    let max_lag = lag_window(n);
    if max_lag < 1 {
        return invalid("series too short for a lag window");
    }
    let z = norm_quantile(0.5 + 0.5 * level)?;
    let smoother = KernelSmoother::new(grid, k)?;
    let est = smoother.smooth(indicators)?;
    let resid: Vec<f64> = indicators
        .iter()
        .zip(&est)
        .map(|(&b, p)| if b { 1.0 - p } else { -p })
        .collect();

    let mut floored = 0usize;
    let bands = (0..n)
        .map(|t| {
            let w = smoother.row(t);
            let g = local_lag_cov(&resid, w, max_lag);
            let mut var = 0.0;
            for (lag, gk) in g.g.iter().enumerate() {
                if *gk == 0.0 {
                    continue;
                }
                let s: f64 = (0..n - lag).map(|i| w[i] * w[i + lag]).sum();
                var += if lag == 0 { s * gk } else { 2.0 * s * gk };
            }
            if var < 0.0 {
                floored += 1;
                var = 0.0;
            }
            let sd = var.sqrt();
            Band {
                estimate: est[t],
                sd,
                lower: (est[t] - z * sd).clamp(0.0, 1.0),
                upper: (est[t] + z * sd).clamp(0.0, 1.0),
            }
        })
        .collect();
    if floored > 0 {
        log::warn!("variance estimate negative at {floored} time points; floored at 0");
    }
    Ok(bands)
}

/// Settings shared by the three temporal estimators.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothingConfig {
    /// Constant `c` of the bandwidth rule `c * n^(-1/5)`.
    pub bandwidth_c: f64,
    /// Explicit KER bandwidth; overrides the rule when set.
    pub bandwidth: Option<f64>,
    pub kernel: KernelFamily,
    pub window: usize,
}

impl Default for SmoothingConfig {
    fn default() -> Self {
        Self {
            bandwidth_c: 1.0,
            bandwidth: None,
            kernel: KernelFamily::Gaussian,
            window: DEFAULT_EDF_WINDOW,
        }
    }
}

impl SmoothingConfig {
    /// Kernel and bandwidth used for KER on a series of length `n`.
    pub fn kernel_spec(&self, n: usize) -> Result<KernelSpec> {
        let b = match self.bandwidth {
            Some(b) => b,
            None => bandwidth_rule(n, self.bandwidth_c)?,
        };
        KernelSpec::new(self.kernel, b)
    }
}

/// One estimator bound to a time grid; kernel weights are computed once.
#[derive(Debug, Clone)]
pub struct SeriesSmoother {
    method: Method,
    window: usize,
    kernel: Option<KernelSmoother>,
}

impl SeriesSmoother {
    pub fn new(method: Method, grid: &TimeGrid, cfg: &SmoothingConfig) -> Result<Self> {
        let kernel = match method {
            Method::Ker => Some(KernelSmoother::new(grid, &cfg.kernel_spec(grid.len())?)?),
            _ => None,
        };
        Ok(Self {
            method,
            window: cfg.window,
            kernel,
        })
    }

    pub fn method(&self) -> Method {
        self.method
    }

    /// Estimated exceedance probabilities of `x0` for a fully observed series.
    pub fn smooth(&self, values: &[f64], x0: f64) -> Result<Vec<f64>> {
        if values.iter().any(|v| !v.is_finite()) {
            return invalid("smoothing needs a fully observed series");
        }
        match (&self.method, &self.kernel) {
            (Method::Ind, _) => Ok(smooth_ind(&indicators(values, x0))),
            (Method::Edf, _) => smooth_edf(values, x0, self.window),
            (Method::Ker, Some(k)) => k.smooth(&indicators(values, x0)),
            (Method::Ker, None) => unreachable!("KER smoother always carries weights"),
        }
    }
}
