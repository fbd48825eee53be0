use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use exceedance::covariance::SeparableCovParams;
use exceedance::data::{
    impute_missing, load_stations, write_exceedance, write_stations, Dataset, ExceedanceEstimate,
    GridSpec, LoadOptions, Location, Method,
};
use exceedance::evaluation::{
    loo_crossval, median, run_table1, seasonal_average, KrigingConfig, RefitPolicy, Table1Config,
};
use exceedance::kriging::{
    fit_ml, FieldTransform, FitOptions, KrigedField, KrigingModel, KrigingSystem,
};
use exceedance::simulate::{SimScenario, Simulator, DEFAULT_MAX_POINTS};
use exceedance::smoothing::{variance_band, SeriesSmoother, SmoothingConfig};
use exceedance::Error;

use crate::{
    CliError, CrossvalCmd, ExperimentCmd, FitCmd, InputArgs, KrigeArgs, KrigeCmd, MapCmd,
    ScenarioArgs, SimulateArgs, SmoothArgs, SmoothCmd,
};

type CliResult<T> = Result<T, CliError>;

/// Writes through a temporary file in the destination directory, then renames,
/// so a failed run never leaves a truncated output behind.
fn write_atomic(
    path: &Path,
    body: impl FnOnce(&mut dyn Write) -> exceedance::Result<()>,
) -> CliResult<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| CliError::from(e).at(path))?;
    {
        let mut w = BufWriter::new(tmp.as_file());
        body(&mut w).map_err(|e| CliError::from(e).at(path))?;
        w.flush().map_err(|e| CliError::from(e).at(path))?;
    }
    tmp.persist(path)
        .map_err(|e| CliError::from(e.error).at(path))?;
    Ok(())
}

fn with_suffix(prefix: &Path, ext: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

fn smoothing_config(a: &SmoothArgs) -> SmoothingConfig {
    SmoothingConfig {
        bandwidth_c: a.bandwidth_c,
        bandwidth: a.bandwidth,
        kernel: a.kernel,
        window: a.window,
    }
}

fn fit_options(a: &KrigeArgs) -> CliResult<FitOptions> {
    if !(a.nugget >= 0.0 && a.nugget.is_finite()) {
        return Err(CliError::invalid(format!(
            "nugget must be non-negative, got {}",
            a.nugget
        )));
    }
    Ok(FitOptions {
        mean: a.mean,
        nugget: a.nugget,
    })
}

fn scenario(a: &ScenarioArgs) -> CliResult<SimScenario> {
    Ok(SimScenario {
        grid: a.grid.spec(Location { x: 0.0, y: 0.0 })?,
        extra_sites: Vec::new(),
        n_time: a.n_time,
        cov: SeparableCovParams::new(a.sigma_t2, a.alpha, a.sigma_s2, a.gamma)?,
        seed: a.seed,
        transform: None,
        max_points: DEFAULT_MAX_POINTS,
    })
}

/// Loads stations and fills gaps by interpolation, warning per station.
fn load(a: &InputArgs) -> CliResult<Dataset> {
    let opts = LoadOptions {
        missing_cap: a.missing_cap,
    };
    let mut data = load_stations(&a.input, &opts).map_err(|e| CliError::from(e).at(&a.input))?;
    for s in data.stations.iter_mut() {
        if !s.is_complete() {
            log::warn!(
                "station {}: imputing {} missing values",
                s.id,
                s.missing_count()
            );
            *s = impute_missing(s)?;
        }
    }
    Ok(data)
}

/// Smoothed series per station, in station order.
fn smoothed(
    data: &Dataset,
    method: Method,
    x0: f64,
    cfg: &SmoothingConfig,
) -> CliResult<Vec<Vec<f64>>> {
    let smoother = SeriesSmoother::new(method, &data.grid, cfg)?;
    Ok(data
        .stations
        .iter()
        .map(|s| smoother.smooth(s.values(), x0))
        .collect::<exceedance::Result<_>>()?)
}

fn day_index(data: &Dataset, date: chrono::NaiveDate) -> CliResult<usize> {
    data.grid
        .index_of(date)
        .ok_or_else(|| CliError::invalid(format!("date {date} is outside the station record")))
}

pub fn simulate(a: &SimulateArgs) -> CliResult<()> {
    let sc = scenario(&a.scenario)?;
    let field = Simulator::new(&sc)?.sample(a.rep);
    let data = field.to_dataset(&sc.grid, a.start_date)?;
    write_atomic(&a.output, |w| write_stations(w, &data))?;
    log::info!(
        "wrote {} stations x {} days",
        data.stations.len(),
        data.grid.len()
    );
    Ok(())
}

pub fn smooth(a: &SmoothCmd) -> CliResult<()> {
    let data = load(&a.input)?;
    let cfg = smoothing_config(&a.smooth);
    let mut out = Vec::new();
    for &x0 in &a.threshold {
        for &method in &a.method {
            let probs = smoothed(&data, method, x0, &cfg)?;
            let kernel = match (a.band, method) {
                (true, Method::Ker) => Some(cfg.kernel_spec(data.grid.len())?),
                _ => None,
            };
            for (s, p) in data.stations.iter().zip(probs) {
                let se = match &kernel {
                    Some(k) => {
                        let ind = exceedance::data::indicators(s.values(), x0);
                        Some(
                            variance_band(&ind, &data.grid, k, a.level)?
                                .into_iter()
                                .map(|b| b.sd)
                                .collect(),
                        )
                    }
                    None => None,
                };
                out.push(ExceedanceEstimate::new(s.id.clone(), x0, p, method, se)?);
            }
        }
    }
    if a.band && !a.method.contains(&Method::Ker) {
        log::warn!("--band only applies to KER; no standard errors written");
    }
    write_atomic(&a.output, |w| write_exceedance(w, &data.grid, &out))
}

/// Spatial prediction strategy shared by `krige` and `map`.
enum Plan {
    /// One system for every day.
    Fixed(KrigingSystem),
    /// Time-averaged field was constant; every site gets the same weight.
    EqualWeights,
    /// Fit each day separately.
    Daily(FitOptions),
}

struct Predictor {
    sites: Vec<Location>,
    transform: FieldTransform,
    plan: Plan,
}

impl Predictor {
    fn new(
        sites: Vec<Location>,
        probs: &[Vec<f64>],
        k: &KrigeArgs,
        model: Option<KrigingModel>,
    ) -> CliResult<Self> {
        let fit = fit_options(k)?;
        let transform = k.transform;
        let plan = match (model, k.refit) {
            (Some(m), _) => {
                if m.sites != sites {
                    return Err(CliError::invalid(
                        "model sites do not match the station locations",
                    ));
                }
                Plan::Fixed(KrigingSystem::new(&m)?)
            }
            (None, RefitPolicy::Daily) => Plan::Daily(fit),
            (None, RefitPolicy::TimeAveraged) => {
                let avg: Vec<f64> = probs
                    .iter()
                    .map(|p| transform.forward(p.iter().sum::<f64>() / p.len() as f64))
                    .collect();
                match fit_ml(&sites, &avg, &fit) {
                    Ok(m) => Plan::Fixed(KrigingSystem::new(&m)?),
                    Err(Error::ZeroVariance) => Plan::EqualWeights,
                    Err(e) => return Err(e.into()),
                }
            }
        };
        Ok(Self {
            sites,
            transform,
            plan,
        })
    }

    /// Back-transformed predictions and standard errors on the kriging scale.
    fn day(&self, probs: &[f64], targets: &[Location]) -> CliResult<(Vec<f64>, Vec<f64>)> {
        let z: Vec<f64> = probs.iter().map(|p| self.transform.forward(*p)).collect();
        let constant = |v: f64| {
            (
                vec![self.transform.inverse(v); targets.len()],
                vec![0.0; targets.len()],
            )
        };
        let preds = match &self.plan {
            Plan::Fixed(sys) => sys.predict(&z, targets)?,
            Plan::EqualWeights => return Ok(constant(z.iter().sum::<f64>() / z.len() as f64)),
            Plan::Daily(fit) => match fit_ml(&self.sites, &z, fit) {
                Ok(m) => KrigingSystem::new(&m)?.predict(&z, targets)?,
                Err(Error::ZeroVariance) => return Ok(constant(z[0])),
                Err(e) => return Err(e.into()),
            },
        };
        Ok((
            preds
                .iter()
                .map(|p| self.transform.inverse(p.value))
                .collect(),
            preds.iter().map(|p| p.se).collect(),
        ))
    }
}

/// Column `t` of per-station series.
fn slice(probs: &[Vec<f64>], t: usize) -> Vec<f64> {
    probs.iter().map(|p| p[t]).collect()
}

pub fn fit(a: &FitCmd) -> CliResult<()> {
    let data = load(&a.input)?;
    let probs = smoothed(&data, a.method, a.threshold, &smoothing_config(&a.smooth))?;
    let values: Vec<f64> = match a.date {
        Some(d) => slice(&probs, day_index(&data, d)?),
        None => probs
            .iter()
            .map(|p| p.iter().sum::<f64>() / p.len() as f64)
            .collect(),
    };
    let z: Vec<f64> = values
        .iter()
        .map(|p| a.krige.transform.forward(*p))
        .collect();
    let model = fit_ml(&data.locations(), &z, &fit_options(&a.krige)?)?;
    log::info!(
        "sigma={} rho={} nu={} loglik={:?}",
        model.params.sigma,
        model.params.rho,
        model.params.nu,
        model.log_likelihood
    );
    write_atomic(&a.output, |w| {
        Ok(w.write_all(model.to_kv_string().as_bytes())?)
    })
}

pub fn krige(a: &KrigeCmd) -> CliResult<()> {
    let data = load(&a.input)?;
    let probs = smoothed(&data, a.method, a.threshold, &smoothing_config(&a.smooth))?;
    let model = match &a.model {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| CliError::from(e).at(path))?;
            Some(KrigingModel::from_kv_str(&text).map_err(|e| CliError::from(e).at(path))?)
        }
        None => None,
    };
    let targets: Vec<Location> = a.targets.iter().map(|t| t.0).collect();
    let predictor = Predictor::new(data.locations(), &probs, &a.krige, model)?;
    let days: Vec<usize> = match a.date {
        Some(d) => vec![day_index(&data, d)?],
        None => (0..data.grid.len()).collect(),
    };
    let mut rows = Vec::with_capacity(days.len() * targets.len());
    for t in days {
        let (pred, se) = predictor.day(&slice(&probs, t), &targets)?;
        for (i, loc) in targets.iter().enumerate() {
            rows.push((data.grid.date(t), *loc, pred[i], se[i]));
        }
    }
    write_atomic(&a.output, |w| {
        writeln!(w, "date,x,y,pred,se")?;
        for (d, loc, p, se) in &rows {
            writeln!(
                w,
                "{d},{},{},{},{}",
                exceedance::data::fmt_num(loc.x),
                exceedance::data::fmt_num(loc.y),
                exceedance::data::fmt_num(*p),
                exceedance::data::fmt_num(*se)
            )?;
        }
        Ok(())
    })
}

pub fn map(a: &MapCmd) -> CliResult<()> {
    let data = load(&a.input)?;
    let probs = smoothed(&data, a.method, a.threshold, &smoothing_config(&a.smooth))?;
    let origin = match a.origin {
        Some(p) => p.0,
        None => {
            let locs = data.locations();
            Location {
                x: locs.iter().map(|l| l.x).fold(f64::INFINITY, f64::min),
                y: locs.iter().map(|l| l.y).fold(f64::INFINITY, f64::min),
            }
        }
    };
    let grid: GridSpec = a.grid.spec(origin)?;
    let cells = grid.cells();
    let predictor = Predictor::new(data.locations(), &probs, &a.krige, None)?;
    let field_for = |t: usize| -> CliResult<KrigedField> {
        let (raw, se) = predictor.day(&slice(&probs, t), &cells)?;
        let date = data.grid.date(t);
        Ok(KrigedField {
            grid,
            pred: raw.iter().map(|p| p.clamp(0.0, 1.0)).collect(),
            raw,
            se,
            label: date.to_string(),
            date: Some(date),
            method: Some(a.method),
            transform: a.krige.transform,
        })
    };
    let field = match (a.date, &a.season) {
        (Some(d), _) => field_for(day_index(&data, d)?)?,
        (None, Some(season)) => {
            let days: Vec<usize> = (0..data.grid.len())
                .filter(|&t| season.contains(data.grid.date(t)))
                .collect();
            let fields = days
                .into_iter()
                .map(field_for)
                .collect::<CliResult<Vec<_>>>()?;
            seasonal_average(&fields, season)?
        }
        (None, None) => return Err(CliError::invalid("one of --date or --season is required")),
    };
    write_atomic(&with_suffix(&a.output, "csv"), |w| field.write_csv(w))?;
    write_atomic(&with_suffix(&a.output, "pgm"), |w| field.write_pgm(w))
}

pub fn crossval(a: &CrossvalCmd) -> CliResult<()> {
    let data = load(&a.input)?;
    let smoothing = smoothing_config(&a.smooth);
    let kriging = KrigingConfig {
        fit: fit_options(&KrigeArgs {
            transform: FieldTransform::None,
            mean: a.mean,
            nugget: a.nugget,
            refit: a.refit,
        })?,
        refit: a.refit,
    };
    let mut rows = Vec::new();
    for &method in &a.method {
        let res = loo_crossval(&data, a.threshold, method, &smoothing, &kriging)?;
        let rmse: Vec<f64> = res.iter().map(|r| r.rmse).collect();
        println!("{method}\tmedian_rmse={:.6}", median(&rmse));
        rows.extend(res.into_iter().map(|r| (r.station_id, method, r.rmse)));
    }
    write_atomic(&a.output, |w| {
        writeln!(w, "station_id,method,rmse")?;
        for (id, m, r) in &rows {
            writeln!(w, "{id},{m},{}", exceedance::data::fmt_num(*r))?;
        }
        Ok(())
    })
}

pub fn experiment(a: &ExperimentCmd) -> CliResult<()> {
    let sc = scenario(&a.scenario)?;
    let cfg = Table1Config {
        reps: a.reps,
        methods: a.method.clone(),
        thresholds: a.threshold.clone(),
        ms: a.ms.clone(),
        grid: sc.grid,
        n_time: sc.n_time,
        cov: sc.cov,
        seed: sc.seed,
        smoothing: smoothing_config(&a.smooth),
        fit: FitOptions {
            mean: a.mean,
            nugget: a.nugget,
        },
        daily_refit_max_m: a.daily_refit_max_m,
        parallel: a.parallel,
    };
    if !(a.nugget >= 0.0 && a.nugget.is_finite()) {
        return Err(CliError::invalid(format!(
            "nugget must be non-negative, got {}",
            a.nugget
        )));
    }
    let report = run_table1(&cfg)?;
    write_atomic(&with_suffix(&a.output, "csv"), |w| report.write_csv(w))?;
    let text = report.to_text();
    write_atomic(&with_suffix(&a.output, "txt"), |w| {
        Ok(w.write_all(text.as_bytes())?)
    })?;
    print!("{text}");
    eprintln!("wall-clock: {:.1} s", report.elapsed.as_secs_f64());
    if !report.all_succeeded() {
        for (rep, msg) in &report.failures {
            eprintln!("replicate {rep} failed: {msg}");
        }
        return Err(CliError::numerical(format!(
            "{} of {} replicates failed",
            report.failures.len(),
            cfg.reps
        )));
    }
    Ok(())
}
