//! Matérn maximum-likelihood fitting and universal kriging.
//!
//! The mean is either an unknown constant (ordinary kriging) or linear in the
//! coordinates; in both cases it is profiled out by generalized least squares.
//! Standard errors come from the kriging variance at the fitted covariance and
//! do not account for uncertainty in the covariance parameters.

use std::fmt::Write as _;
use std::io::Write;
use std::str::FromStr;

use chrono::NaiveDate;
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::covariance::{MaternCorrelation, MaternParams};
use crate::data::{fmt_num, GridSpec, Location, Method};
use crate::error::{invalid, Error, Result};
use crate::optim::{nelder_mead, NelderMeadOptions};

/// Smoothness is searched within these bounds.
pub const NU_BOUNDS: (f64, f64) = (0.05, 5.0);
/// Values are clamped to `[eps, 1 - eps]` before the logit.
pub const LOGIT_EPS: f64 = 1e-6;

const JITTER_START: f64 = 1e-12;
const JITTER_MAX: f64 = 1e-8;
const FIT_F_TOL: f64 = 1e-8;
const FIT_MAX_ITER: usize = 500;
const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MeanModel {
    #[default]
    Constant,
    Linear,
}

impl MeanModel {
    fn n_coef(&self) -> usize {
        match self {
            MeanModel::Constant => 1,
            MeanModel::Linear => 3,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            MeanModel::Constant => "constant",
            MeanModel::Linear => "linear",
        }
    }
}

impl FromStr for MeanModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "constant" => Ok(MeanModel::Constant),
            "linear" => Ok(MeanModel::Linear),
            other => invalid(format!("unknown mean model '{other}'")),
        }
    }
}

/// Pointwise transform applied before kriging and inverted afterwards.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FieldTransform {
    #[default]
    None,
    Logit,
}

impl FieldTransform {
    pub fn forward(&self, p: f64) -> f64 {
        match self {
            FieldTransform::None => p,
            FieldTransform::Logit => {
                let q = p.clamp(LOGIT_EPS, 1.0 - LOGIT_EPS);
                (q / (1.0 - q)).ln()
            }
        }
    }

    pub fn inverse(&self, z: f64) -> f64 {
        match self {
            FieldTransform::None => z,
            FieldTransform::Logit => 1.0 / (1.0 + (-z).exp()),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            FieldTransform::None => "none",
            FieldTransform::Logit => "logit",
        }
    }
}

impl FromStr for FieldTransform {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(FieldTransform::None),
            "logit" => Ok(FieldTransform::Logit),
            other => invalid(format!(
                "unknown transform '{other}' (expected none or logit)"
            )),
        }
    }
}

/// Fitted (or user-specified) covariance and mean model at a set of sites.
#[derive(Debug, Clone, PartialEq)]
pub struct KrigingModel {
    pub params: MaternParams,
    pub mean: MeanModel,
    pub nugget: f64,
    pub sites: Vec<Location>,
    /// Maximized log-likelihood, when the model came from [`fit_ml`].
    pub log_likelihood: Option<f64>,
}

impl KrigingModel {
    pub fn new(
        params: MaternParams,
        mean: MeanModel,
        nugget: f64,
        sites: Vec<Location>,
    ) -> Result<Self> {
        if !(nugget >= 0.0) || !nugget.is_finite() {
            return invalid(format!("nugget must be finite and >= 0, got {nugget}"));
        }
        if sites.len() < mean.n_coef() {
            return invalid(format!(
                "{} mean needs at least {} sites",
                mean.as_str(),
                mean.n_coef()
            ));
        }
        check_distinct(&sites)?;
        Ok(Self {
            params,
            mean,
            nugget,
            sites,
            log_likelihood: None,
        })
    }

    /// Plain-text `key=value` form; one `site=x,y` line per site.
    pub fn to_kv_string(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "sigma={}", fmt_num(self.params.sigma));
        let _ = writeln!(s, "rho={}", fmt_num(self.params.rho));
        let _ = writeln!(s, "nu={}", fmt_num(self.params.nu));
        let _ = writeln!(s, "nugget={}", fmt_num(self.nugget));
        let _ = writeln!(s, "mean={}", self.mean.as_str());
        if let Some(ll) = self.log_likelihood {
            let _ = writeln!(s, "loglik={}", fmt_num(ll));
        }
        for site in &self.sites {
            let _ = writeln!(s, "site={},{}", fmt_num(site.x), fmt_num(site.y));
        }
        s
    }

    pub fn from_kv_str(text: &str) -> Result<Self> {
        let mut sigma = None;
        let mut rho = None;
        let mut nu = None;
        let mut nugget = 0.0;
        let mut mean = MeanModel::Constant;
        let mut loglik = None;
        let mut sites = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let perr = |msg: String| Error::Parse {
                line: lineno as u64 + 1,
                msg,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| perr(format!("expected key=value, found '{line}'")))?;
            let num = |v: &str| -> Result<f64> {
                v.trim()
                    .parse::<f64>()
                    .map_err(|_| perr(format!("bad number '{v}' for {key}")))
            };
            match key.trim() {
                "sigma" => sigma = Some(num(value)?),
                "rho" => rho = Some(num(value)?),
                "nu" => nu = Some(num(value)?),
                "nugget" => nugget = num(value)?,
                "loglik" => loglik = Some(num(value)?),
                "mean" => mean = value.trim().parse()?,
                "site" => {
                    let (x, y) = value
                        .split_once(',')
                        .ok_or_else(|| perr(format!("bad site '{value}'")))?;
                    sites.push(Location::new(num(x)?, num(y)?)?);
                }
                other => return Err(perr(format!("unknown key '{other}'"))),
            }
        }
        let missing = |k: &str| Error::Invalid(format!("model file lacks '{k}'"));
        let params = MaternParams::new(
            sigma.ok_or_else(|| missing("sigma"))?,
            rho.ok_or_else(|| missing("rho"))?,
            nu.ok_or_else(|| missing("nu"))?,
        )?;
        let mut model = KrigingModel::new(params, mean, nugget, sites)?;
        model.log_likelihood = loglik;
        Ok(model)
    }
}

fn check_distinct(sites: &[Location]) -> Result<()> {
    for (i, a) in sites.iter().enumerate() {
        if let Some(b) = sites[i + 1..].iter().find(|b| *b == a) {
            return Err(Error::DuplicateSite { x: b.x, y: b.y });
        }
    }
    Ok(())
}

/// Trend basis with coordinates centered and scaled for conditioning.
#[derive(Debug, Clone, Copy)]
struct Trend {
    mean: MeanModel,
    cx: f64,
    cy: f64,
    scale: f64,
}

impl Trend {
    fn new(mean: MeanModel, sites: &[Location]) -> Self {
        let m = sites.len() as f64;
        let cx = sites.iter().map(|s| s.x).sum::<f64>() / m;
        let cy = sites.iter().map(|s| s.y).sum::<f64>() / m;
        let spread = sites
            .iter()
            .map(|s| (s.x - cx).abs().max((s.y - cy).abs()))
            .fold(0.0, f64::max);
        Self {
            mean,
            cx,
            cy,
            scale: if spread > 0.0 { spread } else { 1.0 },
        }
    }

    fn p(&self) -> usize {
        self.mean.n_coef()
    }

    fn row(&self, loc: &Location) -> [f64; 3] {
        [
            1.0,
            (loc.x - self.cx) / self.scale,
            (loc.y - self.cy) / self.scale,
        ]
    }

    fn design(&self, sites: &[Location]) -> DMatrix<f64> {
        let p = self.p();
        DMatrix::from_fn(sites.len(), p, |i, j| self.row(&sites[i])[j])
    }
}

/// Pairwise distances stored once as indices into the sorted distinct values.
#[derive(Debug, Clone)]
struct DistanceTable {
    m: usize,
    distinct: Vec<f64>,
    // upper triangle, row-major, i < j
    index: Vec<u32>,
}

impl DistanceTable {
    fn new(sites: &[Location]) -> Self {
        let m = sites.len();
        let mut pairs = Vec::with_capacity(m * (m.saturating_sub(1)) / 2);
        for i in 0..m {
            for j in i + 1..m {
                pairs.push(sites[i].distance(&sites[j]));
            }
        }
        let mut distinct = pairs.clone();
        distinct.sort_by(f64::total_cmp);
        distinct.dedup();
        let index = pairs
            .iter()
            .map(|d| distinct.partition_point(|x| x < d) as u32)
            .collect();
        Self { m, distinct, index }
    }

    fn min_max(&self) -> (f64, f64) {
        (
            self.distinct.first().copied().unwrap_or(1.0),
            self.distinct.last().copied().unwrap_or(1.0),
        )
    }

    /// `scale * corr(h_ij)` off the diagonal, `scale + diag` on it.
    fn matrix(&self, corr: &MaternCorrelation, scale: f64, diag: f64) -> DMatrix<f64> {
        let vals: Vec<f64> = self.distinct.iter().map(|h| scale * corr.at(*h)).collect();
        let mut c = DMatrix::zeros(self.m, self.m);
        let mut k = 0;
        for i in 0..self.m {
            c[(i, i)] = scale + diag;
            for j in i + 1..self.m {
                let v = vals[self.index[k] as usize];
                c[(i, j)] = v;
                c[(j, i)] = v;
                k += 1;
            }
        }
        c
    }
}

/// Most strongly correlated pair of sites, for error reporting.
fn most_correlated_pair(c: &DMatrix<f64>) -> (usize, usize) {
    let n = c.nrows();
    let mut best = (0, n.min(2).saturating_sub(1), f64::NEG_INFINITY);
    for i in 0..n {
        for j in i + 1..n {
            let r = c[(i, j)] / (c[(i, i)] * c[(j, j)]).sqrt();
            if r > best.2 {
                best = (i, j, r);
            }
        }
    }
    (best.0, best.1)
}

/// Cholesky factorization, adding `1e-12 * scale` to the diagonal and growing it
/// tenfold up to `1e-8 * scale` when the plain factorization fails.
fn cholesky_with_jitter(c: DMatrix<f64>, scale: f64) -> Result<Cholesky<f64, Dyn>> {
    if let Some(ch) = c.clone().cholesky() {
        return Ok(ch);
    }
    let mut jitter = JITTER_START;
    while jitter <= JITTER_MAX * (1.0 + 1e-9) {
        let mut cj = c.clone();
        for i in 0..cj.nrows() {
            cj[(i, i)] += jitter * scale;
        }
        if let Some(ch) = cj.cholesky() {
            return Ok(ch);
        }
        jitter *= 10.0;
    }
    let (i, j) = most_correlated_pair(&c);
    Err(Error::NotPositiveDefinite { i, j })
}

fn log_det(ch: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * ch.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

/// GLS residual quadratic form `r' C^-1 r` with `r = y - F beta_hat`.
fn gls_quadratic_form(ch: &Cholesky<f64, Dyn>, f: &DMatrix<f64>, y: &DVector<f64>) -> Option<f64> {
    let cinv_f = ch.solve(f);
    let cinv_y = ch.solve(y);
    let ftcf = f.transpose() * &cinv_f;
    let ftcy = f.transpose() * &cinv_y;
    let beta = ftcf.cholesky()?.solve(&ftcy);
    let r = y - f * beta;
    let q = r.dot(&ch.solve(&r));
    Some(q)
}

/// Gaussian log-likelihood of `values` under the given covariance, with the
/// mean coefficients at their GLS estimate.
pub fn log_likelihood(
    sites: &[Location],
    values: &[f64],
    params: &MaternParams,
    mean: MeanModel,
    nugget: f64,
) -> Result<f64> {
    if sites.len() != values.len() {
        return invalid("values not aligned with sites");
    }
    check_distinct(sites)?;
    let table = DistanceTable::new(sites);
    let corr = MaternCorrelation::new(params.rho, params.nu);
    let c = table.matrix(&corr, params.sigma, nugget);
    let ch = cholesky_with_jitter(c, params.sigma)?;
    let f = Trend::new(mean, sites).design(sites);
    let y = DVector::from_column_slice(values);
    let q = gls_quadratic_form(&ch, &f, &y)
        .ok_or_else(|| Error::Numerical("singular trend design".into()))?;
    let m = sites.len() as f64;
    Ok(-0.5 * (m * LN_2PI + log_det(&ch) + q))
}

/// Options for [`fit_ml`].
#[derive(Debug, Clone, Copy, Default)]
pub struct FitOptions {
    pub mean: MeanModel,
    /// Fixed nugget variance added to the diagonal; 0 for exact interpolation.
    pub nugget: f64,
}

/// Maximum-likelihood Matérn parameters for one spatial slice.
///
/// Minimizes the negative log-likelihood with Nelder-Mead on the log scale from
/// three fixed starting points and keeps the best. Without a nugget the variance
/// is profiled out in closed form and only `(log rho, log nu)` are searched;
/// with a nugget all of `(log sigma, log rho, log nu)` are.
pub fn fit_ml(sites: &[Location], values: &[f64], opts: &FitOptions) -> Result<KrigingModel> {
    let m = sites.len();
    if m != values.len() {
        return invalid(format!("{} values for {} sites", values.len(), m));
    }
    if m < 3 || m < opts.mean.n_coef() + 2 {
        return invalid(format!(
            "need at least {} sites to fit a {} mean, got {m}",
            (opts.mean.n_coef() + 2).max(3),
            opts.mean.as_str()
        ));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return invalid("non-finite value in kriging input");
    }
    check_distinct(sites)?;
    let first = values[0];
    if values.iter().all(|v| *v == first) {
        return Err(Error::ZeroVariance);
    }
    if !(opts.nugget >= 0.0) {
        return invalid("nugget must be >= 0");
    }

    let table = DistanceTable::new(sites);
    let f = Trend::new(opts.mean, sites).design(sites);
    let y = DVector::from_column_slice(values);
    let (dmin, dmax) = table.min_max();
    let ln_rho = ((dmin / 100.0).ln(), (dmax * 100.0).ln());
    let ln_nu = (NU_BOUNDS.0.ln(), NU_BOUNDS.1.ln());
    let mf = m as f64;
    let var = {
        let mu = values.iter().sum::<f64>() / mf;
        values.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / mf
    };
    let starts: [(f64, f64); 3] = [(0.1 * dmax, 0.5), (0.3 * dmax, 1.5), (dmax, 1.0)];

    // profiled: returns (neg loglik, sigma_hat)
    let profiled = |ln_rho_v: f64, ln_nu_v: f64| -> Option<(f64, f64)> {
        let corr = MaternCorrelation::new(ln_rho_v.exp(), ln_nu_v.exp());
        let r = table.matrix(&corr, 1.0, 0.0);
        let ch = cholesky_with_jitter(r, 1.0).ok()?;
        let q = gls_quadratic_form(&ch, &f, &y)?;
        if !(q > 0.0) {
            return None;
        }
        let sigma = q / mf;
        Some((
            0.5 * (mf * LN_2PI + mf * sigma.ln() + log_det(&ch) + mf),
            sigma,
        ))
    };
    let full = |x: &[f64]| -> f64 {
        let corr = MaternCorrelation::new(x[1].exp(), x[2].exp());
        let c = table.matrix(&corr, x[0].exp(), opts.nugget);
        let Ok(ch) = cholesky_with_jitter(c, x[0].exp()) else {
            return f64::INFINITY;
        };
        match gls_quadratic_form(&ch, &f, &y) {
            Some(q) => 0.5 * (mf * LN_2PI + log_det(&ch) + q),
            None => f64::INFINITY,
        }
    };

    let mut best: Option<(f64, MaternParams)> = None;
    for (rho0, nu0) in starts {
        let (x, fx) = if opts.nugget == 0.0 {
            let nm = NelderMeadOptions {
                f_tol: FIT_F_TOL,
                max_iter: FIT_MAX_ITER,
                initial_step: vec![0.7, 0.7],
                bounds: vec![ln_rho, ln_nu],
            };
            let r = nelder_mead(
                |x| profiled(x[0], x[1]).map_or(f64::INFINITY, |v| v.0),
                &[rho0.ln(), nu0.ln()],
                &nm,
            );
            let Some((_, sigma)) = profiled(r.x[0], r.x[1]) else {
                continue;
            };
            (vec![sigma.ln(), r.x[0], r.x[1]], r.f)
        } else {
            let nm = NelderMeadOptions {
                f_tol: FIT_F_TOL,
                max_iter: FIT_MAX_ITER,
                initial_step: vec![0.7, 0.7, 0.7],
                bounds: vec![((var * 1e-4).ln(), (var * 1e4).ln()), ln_rho, ln_nu],
            };
            let r = nelder_mead(full, &[var.ln(), rho0.ln(), nu0.ln()], &nm);
            (r.x, r.f)
        };
        if !fx.is_finite() {
            continue;
        }
        let Ok(params) = MaternParams::new(x[0].exp(), x[1].exp(), x[2].exp()) else {
            continue;
        };
        if best.as_ref().is_none_or(|(bf, _)| fx < *bf) {
            best = Some((fx, params));
        }
    }
    let Some((_, params)) = best else {
        return Err(Error::Numerical(
            "log-likelihood non-finite from every starting point".into(),
        ));
    };
    let mut model = KrigingModel::new(params, opts.mean, opts.nugget, sites.to_vec())?;
    model.log_likelihood = Some(log_likelihood(
        sites,
        values,
        &params,
        opts.mean,
        opts.nugget,
    )?);
    Ok(model)
}

/// Kriging prediction at one target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub value: f64,
    pub se: f64,
}

/// Factorized kriging system for a model; reusable across targets and value vectors.
#[derive(Debug, Clone)]
pub struct KrigingSystem {
    sites: Vec<Location>,
    sigma: f64,
    corr: MaternCorrelation,
    trend: Trend,
    chol: Cholesky<f64, Dyn>,
    cinv_f: DMatrix<f64>,
    gram: Cholesky<f64, Dyn>,
}

impl KrigingSystem {
    pub fn new(model: &KrigingModel) -> Result<Self> {
        let sites = model.sites.clone();
        let table = DistanceTable::new(&sites);
        let corr = MaternCorrelation::new(model.params.rho, model.params.nu);
        let sigma = model.params.sigma;
        let c = table.matrix(&corr, sigma, model.nugget);
        let chol = cholesky_with_jitter(c, sigma)?;
        let trend = Trend::new(model.mean, &sites);
        let f = trend.design(&sites);
        let cinv_f = chol.solve(&f);
        let gram = (f.transpose() * &cinv_f)
            .cholesky()
            .ok_or_else(|| Error::Numerical("singular trend design".into()))?;
        Ok(Self {
            sites,
            sigma,
            corr,
            trend,
            chol,
            cinv_f,
            gram,
        })
    }

    pub fn sites(&self) -> &[Location] {
        &self.sites
    }

    /// Kriging weights and kriging variance at `target`.
    pub fn weights(&self, target: &Location) -> (Vec<f64>, f64) {
        let c0 = DVector::from_iterator(
            self.sites.len(),
            self.sites
                .iter()
                .map(|s| self.sigma * self.corr.at(s.distance(target))),
        );
        let a = self.chol.solve(&c0);
        let row = self.trend.row(target);
        let f0 = DVector::from_column_slice(&row[..self.trend.p()]);
        let r = f0 - self.cinv_f.transpose() * &c0;
        let mu = self.gram.solve(&r);
        let lambda = &a + &self.cinv_f * &mu;
        let var = self.sigma - c0.dot(&a) + r.dot(&mu);
        (lambda.iter().copied().collect(), var.max(0.0))
    }

    pub fn predict(&self, values: &[f64], targets: &[Location]) -> Result<Vec<Prediction>> {
        if values.len() != self.sites.len() {
            return invalid(format!(
                "{} values for {} kriging sites",
                values.len(),
                self.sites.len()
            ));
        }
        Ok(targets
            .iter()
            .map(|t| {
                let (w, var) = self.weights(t);
                Prediction {
                    value: w.iter().zip(values).map(|(a, b)| a * b).sum(),
                    se: var.sqrt(),
                }
            })
            .collect())
    }
}

/// BLUP and standard error at each target.
pub fn krige_predict(
    model: &KrigingModel,
    values: &[f64],
    targets: &[Location],
) -> Result<Vec<Prediction>> {
    KrigingSystem::new(model)?.predict(values, targets)
}

/// A kriged probability map.
#[derive(Debug, Clone, PartialEq)]
pub struct KrigedField {
    pub grid: GridSpec,
    /// Probabilities clamped into `[0, 1]`.
    pub pred: Vec<f64>,
    /// Back-transformed predictions before clamping.
    pub raw: Vec<f64>,
    /// Kriging standard error on the scale kriging was done on.
    pub se: Vec<f64>,
    pub label: String,
    pub date: Option<NaiveDate>,
    pub method: Option<Method>,
    pub transform: FieldTransform,
}

impl KrigedField {
    /// A spatially constant field, used when every input value is identical.
    pub fn constant(grid: GridSpec, value: f64, transform: FieldTransform) -> Self {
        let n = grid.len();
        Self {
            grid,
            pred: vec![value.clamp(0.0, 1.0); n],
            raw: vec![value; n],
            se: vec![0.0; n],
            label: String::new(),
            date: None,
            method: None,
            transform,
        }
    }

    /// Grid CSV `x,y,pred,se` with the unclamped prediction, row-major from the origin.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let io = |e: csv::Error| Error::Io(e.into());
        w.write_record(["x", "y", "pred", "se"]).map_err(io)?;
        for (i, loc) in self.grid.cells().iter().enumerate() {
            w.write_record([
                fmt_num(loc.x),
                fmt_num(loc.y),
                fmt_num(self.raw[i]),
                fmt_num(self.se[i]),
            ])
            .map_err(io)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Binary 8-bit PGM; pixel `round(255 p)` of the clamped probability, north up.
    pub fn write_pgm<W: Write>(&self, mut w: W) -> Result<()> {
        write!(w, "P5\n{} {}\n255\n", self.grid.nx, self.grid.ny)?;
        let mut bytes = Vec::with_capacity(self.grid.len());
        for iy in (0..self.grid.ny).rev() {
            for ix in 0..self.grid.nx {
                bytes.push(prob_to_gray(self.pred[iy * self.grid.nx + ix]));
            }
        }
        w.write_all(&bytes)?;
        Ok(())
    }
}

pub fn prob_to_gray(p: f64) -> u8 {
    (255.0 * p.clamp(0.0, 1.0)).round() as u8
}

/// Kriges `values` (probabilities at the model sites) onto every grid cell.
///
/// With [`FieldTransform::Logit`] the model is taken to describe the logit-scale
/// field and predictions are mapped back into (0, 1).
pub fn krige_field(
    model: &KrigingModel,
    values: &[f64],
    grid: &GridSpec,
    transform: FieldTransform,
) -> Result<KrigedField> {
    let z: Vec<f64> = values.iter().map(|p| transform.forward(*p)).collect();
    let preds = krige_predict(model, &z, &grid.cells())?;
    let raw: Vec<f64> = preds.iter().map(|p| transform.inverse(p.value)).collect();
    Ok(KrigedField {
        grid: *grid,
        pred: raw.iter().map(|p| p.clamp(0.0, 1.0)).collect(),
        raw,
        se: preds.iter().map(|p| p.se).collect(),
        label: String::new(),
        date: None,
        method: None,
        transform,
    })
}

/// Fits on the transformed scale and kriges onto the grid; a spatially
/// constant input yields the constant field.
pub fn fit_and_krige_field(
    sites: &[Location],
    values: &[f64],
    grid: &GridSpec,
    transform: FieldTransform,
    opts: &FitOptions,
) -> Result<KrigedField> {
    let z: Vec<f64> = values.iter().map(|p| transform.forward(*p)).collect();
    match fit_ml(sites, &z, opts) {
        Ok(model) => krige_field(&model, values, grid, transform),
        Err(Error::ZeroVariance) => Ok(KrigedField::constant(
            *grid,
            transform.inverse(z[0]),
            transform,
        )),
        Err(e) => Err(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn loc(x: f64, y: f64) -> Location {
        Location { x, y }
    }

    fn model(sites: Vec<Location>, sigma: f64, rho: f64, nu: f64) -> KrigingModel {
        KrigingModel::new(
            MaternParams::new(sigma, rho, nu).unwrap(),
            MeanModel::Constant,
            0.0,
            sites,
        )
        .unwrap()
    }

    #[test]
    fn interpolates_exactly_at_sites() {
        let sites = vec![loc(0.0, 0.0), loc(1.0, 0.3), loc(0.2, 1.4), loc(2.0, 2.0)];
        let values = [0.1, 0.7, 0.4, 0.9];
        let m = model(sites.clone(), 1.0, 1.5, 1.2);
        let preds = krige_predict(&m, &values, &sites).unwrap();
        for (p, v) in preds.iter().zip(values) {
            assert!((p.value - v).abs() < 1e-8);
            assert!(p.se < 1e-6);
        }
    }

    #[test]
    fn symmetric_pair_gets_equal_weights() {
        let sites = vec![loc(-1.0, 0.0), loc(1.0, 0.0)];
        let m = model(sites, 1.0, 2.0, 0.5);
        let sys = KrigingSystem::new(&m).unwrap();
        let (w, _) = sys.weights(&loc(0.0, 0.7));
        assert!((w[0] - 0.5).abs() < 1e-12 && (w[1] - 0.5).abs() < 1e-12);
        let p = sys.predict(&[0.2, 0.6], &[loc(0.0, 0.7)]).unwrap();
        assert!((p[0].value - 0.4).abs() < 1e-12);
    }

    #[test]
    fn weights_match_augmented_system_solved_by_lu() {
        // Oracle: the ordinary kriging system [C 1; 1' 0][lambda; mu] = [c0; 1]
        // assembled by hand and solved with a general LU factorization.
        let sites = vec![loc(0.0, 0.0), loc(3.0, 0.0), loc(1.0, 2.5)];
        let target = loc(1.2, 0.9);
        let p = MaternParams::new(1.4, 2.0, 1.3).unwrap();
        let mut a = DMatrix::zeros(4, 4);
        let mut rhs = DVector::zeros(4);
        for i in 0..3 {
            for j in 0..3 {
                a[(i, j)] = p.cov(sites[i].distance(&sites[j]));
            }
            a[(i, 3)] = 1.0;
            a[(3, i)] = 1.0;
            rhs[i] = p.cov(sites[i].distance(&target));
        }
        rhs[3] = 1.0;
        let sol = a.lu().solve(&rhs).unwrap();

        let m = model(sites, 1.4, 2.0, 1.3);
        let (w, var) = KrigingSystem::new(&m).unwrap().weights(&target);
        for i in 0..3 {
            assert!((w[i] - sol[i]).abs() < 1e-10);
        }
        // sigma - lambda'c0 - mu  (sign convention of the augmented system)
        let var_oracle = p.sigma - (0..3).map(|i| sol[i] * rhs[i]).sum::<f64>() - sol[3];
        assert!((var - var_oracle).abs() < 1e-10);
    }

    #[test]
    fn constant_mean_weights_sum_to_one() {
        let sites = vec![
            loc(0.0, 0.0),
            loc(4.0, 1.0),
            loc(2.0, 3.0),
            loc(5.0, 5.0),
            loc(1.0, 6.0),
        ];
        let sys = KrigingSystem::new(&model(sites, 0.8, 3.0, 0.9)).unwrap();
        for t in [loc(2.5, 2.5), loc(-3.0, 10.0), loc(40.0, 0.0)] {
            let (w, _) = sys.weights(&t);
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn linear_trend_reproduces_planes() {
        let sites = vec![
            loc(0.0, 0.0),
            loc(4.0, 1.0),
            loc(2.0, 3.0),
            loc(5.0, 5.0),
            loc(1.0, 6.0),
            loc(3.0, 2.0),
        ];
        let plane = |l: &Location| 0.3 + 0.05 * l.x - 0.02 * l.y;
        let values: Vec<f64> = sites.iter().map(plane).collect();
        let mut m = model(sites, 1.0, 2.0, 1.5);
        m.mean = MeanModel::Linear;
        let targets = [loc(2.2, 2.2), loc(7.0, -1.0)];
        for (p, t) in krige_predict(&m, &values, &targets)
            .unwrap()
            .iter()
            .zip(&targets)
        {
            assert!((p.value - plane(t)).abs() < 1e-9);
        }
    }

    #[test]
    fn shift_invariance() {
        let sites = vec![loc(0.0, 0.0), loc(1.0, 2.0), loc(3.0, 1.0), loc(2.0, 4.0)];
        let v = [0.1, 0.5, 0.3, 0.8];
        let shifted: Vec<f64> = v.iter().map(|x| x + 2.5).collect();
        let m = model(sites, 1.0, 2.0, 1.0);
        let t = [loc(1.5, 1.5), loc(5.0, 5.0)];
        let a = krige_predict(&m, &v, &t).unwrap();
        let b = krige_predict(&m, &shifted, &t).unwrap();
        for (a, b) in a.iter().zip(&b) {
            assert!((b.value - a.value - 2.5).abs() < 1e-12);
            assert_eq!(a.se, b.se);
        }
    }

    #[test]
    fn duplicate_sites_rejected() {
        let sites = vec![loc(0.0, 0.0), loc(1.0, 1.0), loc(0.0, 0.0)];
        assert!(matches!(
            fit_ml(&sites, &[0.1, 0.2, 0.3], &FitOptions::default()),
            Err(Error::DuplicateSite { .. })
        ));
        let p = MaternParams::new(1.0, 1.0, 1.0).unwrap();
        assert!(KrigingModel::new(p, MeanModel::Constant, 0.0, sites).is_err());
    }

    #[test]
    fn fit_rejects_constant_values_and_too_few_sites() {
        let sites = vec![loc(0.0, 0.0), loc(1.0, 1.0), loc(2.0, 0.0)];
        assert!(matches!(
            fit_ml(&sites, &[0.3; 3], &FitOptions::default()),
            Err(Error::ZeroVariance)
        ));
        assert!(fit_ml(&sites[..2], &[0.1, 0.2], &FitOptions::default()).is_err());
    }

    #[test]
    fn near_singular_sites_are_named() {
        // Two almost coincident sites with a very smooth, long-range covariance.
        let sites = vec![loc(0.0, 0.0), loc(5.0, 0.0), loc(5.0, 1e-9), loc(0.0, 5.0)];
        let m = model(sites, 1.0, 1e3, 5.0);
        match KrigingSystem::new(&m) {
            Err(Error::NotPositiveDefinite { i, j }) => assert_eq!((i, j), (1, 2)),
            Ok(_) => {}
            Err(e) => panic!("unexpected error {e}"),
        }
    }

    #[test]
    fn model_text_round_trip() {
        let mut m = model(vec![loc(0.5, 1.0), loc(2.0, -3.25)], 0.3, 4.0, 1.7);
        m.log_likelihood = Some(-12.5);
        m.nugget = 0.01;
        let back = KrigingModel::from_kv_str(&m.to_kv_string()).unwrap();
        assert_eq!(back, m);
        assert!(KrigingModel::from_kv_str("sigma=1\nrho=1\n").is_err());
        assert!(KrigingModel::from_kv_str("bogus=1\n").is_err());
    }

    #[test]
    fn fitted_profile_equals_full_likelihood() {
        let sites: Vec<Location> = (0..12)
            .map(|i| loc((i * 7 % 5) as f64 * 1.3, (i * 3 % 7) as f64 * 0.9))
            .collect();
        let values: Vec<f64> = sites
            .iter()
            .map(|s| (0.7 * s.x).sin() + 0.3 * s.y)
            .collect();
        let fit = fit_ml(&sites, &values, &FitOptions::default()).unwrap();
        let ll = log_likelihood(&sites, &values, &fit.params, MeanModel::Constant, 0.0).unwrap();
        assert!((fit.log_likelihood.unwrap() - ll).abs() < 1e-9);
        // a perturbed parameter set should not beat the optimum
        for (ds, dr, dn) in [(1.2, 1.0, 1.0), (1.0, 0.8, 1.0), (1.0, 1.0, 1.3)] {
            let p = MaternParams::new(
                fit.params.sigma * ds,
                fit.params.rho * dr,
                (fit.params.nu * dn).min(NU_BOUNDS.1),
            )
            .unwrap();
            assert!(
                log_likelihood(&sites, &values, &p, MeanModel::Constant, 0.0).unwrap() <= ll + 1e-9
            );
        }
    }

    #[test]
    fn nugget_fit_runs() {
        let sites: Vec<Location> = (0..10).map(|i| loc(i as f64, (i * i % 7) as f64)).collect();
        let values: Vec<f64> = (0..10).map(|i| ((i * 37 % 11) as f64) / 11.0).collect();
        let opts = FitOptions {
            mean: MeanModel::Constant,
            nugget: 0.01,
        };
        let fit = fit_ml(&sites, &values, &opts).unwrap();
        assert!(fit.log_likelihood.unwrap().is_finite());
        assert_eq!(fit.nugget, 0.01);
    }

    #[test]
    fn logit_field_stays_inside_unit_interval() {
        let sites = vec![loc(0.0, 0.0), loc(4.0, 0.0), loc(0.0, 4.0), loc(4.0, 4.0)];
        let grid = GridSpec::unit(5, 5).unwrap();
        let m = model(sites, 4.0, 3.0, 1.0);
        let f = krige_field(&m, &[0.001, 0.999, 0.5, 0.02], &grid, FieldTransform::Logit).unwrap();
        assert!(f.raw.iter().all(|p| *p > 0.0 && *p < 1.0));
        assert_eq!(f.pred, f.raw);
    }

    #[test]
    fn constant_field_is_reproduced() {
        let sites = vec![loc(0.0, 0.0), loc(4.0, 1.0), loc(1.0, 4.0)];
        let grid = GridSpec::unit(6, 6).unwrap();
        let m = model(sites, 1.0, 2.0, 1.0);
        for tr in [FieldTransform::None, FieldTransform::Logit] {
            let f = krige_field(&m, &[0.35; 3], &grid, tr).unwrap();
            assert!(f.pred.iter().all(|p| (p - 0.35).abs() < 1e-9));
        }
    }

    #[test]
    fn negative_predictions_are_kept_raw_and_clamped_for_maps() {
        let grid = GridSpec::unit(2, 1).unwrap();
        let mut f = KrigedField::constant(grid, 0.5, FieldTransform::None);
        f.raw[0] = -0.03;
        f.pred[0] = 0.0;
        let mut csv = Vec::new();
        f.write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.lines().nth(1).unwrap().contains(&fmt_num(-0.03)));
        let mut pgm = Vec::new();
        f.write_pgm(&mut pgm).unwrap();
        assert_eq!(&pgm[pgm.len() - 2..], &[0, 128]);
    }
}
