//! `exceedance`: smoothing, kriging, mapping and simulation experiments for
//! threshold exceedance probabilities.
//!
//! Exit codes: 0 success, 1 invalid input or usage, 2 numerical failure.

// `!(x > 0.0)` is used deliberately so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand};
use exceedance::data::{GridSpec, Location, Method};
use exceedance::evaluation::{RefitPolicy, Season};
use exceedance::kriging::{FieldTransform, MeanModel};
use exceedance::smoothing::KernelFamily;

#[derive(Parser, Debug)]
#[command(
    name = "exceedance",
    version,
    about = "Threshold exceedance probabilities in space and time"
)]
struct Cli {
    /// File of `key=value` lines used as default flag values; flags given on
    /// the command line take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate a separable space-time Gaussian field; grid cells are written as stations.
    #[command(args_override_self = true)]
    Simulate(SimulateArgs),
    /// Per-station exceedance probabilities over time.
    #[command(args_override_self = true)]
    Smooth(SmoothCmd),
    /// Fit Matérn covariance parameters by maximum likelihood.
    #[command(args_override_self = true)]
    Fit(FitCmd),
    /// Krige exceedance probabilities to target locations.
    #[command(args_override_self = true)]
    Krige(KrigeCmd),
    /// Kriged probability map for one day or a season, as grid CSV and PGM.
    #[command(args_override_self = true)]
    Map(MapCmd),
    /// Leave-one-out cross-validation over stations.
    #[command(args_override_self = true)]
    Crossval(CrossvalCmd),
    /// RMSE comparison of the estimators on simulated fields.
    #[command(args_override_self = true)]
    Experiment(ExperimentCmd),
}

/// `nx,ny,spacing`
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridArg {
    pub nx: usize,
    pub ny: usize,
    pub spacing: f64,
}

impl FromStr for GridArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        let [nx, ny, spacing] = parts[..] else {
            return Err(format!("expected nx,ny,spacing, got '{s}'"));
        };
        let nx = nx.parse().map_err(|_| format!("bad nx '{nx}'"))?;
        let ny = ny.parse().map_err(|_| format!("bad ny '{ny}'"))?;
        let spacing = spacing
            .parse()
            .map_err(|_| format!("bad spacing '{spacing}'"))?;
        Ok(Self { nx, ny, spacing })
    }
}

impl GridArg {
    pub fn spec(&self, origin: Location) -> Result<GridSpec, CliError> {
        Ok(GridSpec::new(self.nx, self.ny, origin, self.spacing)?)
    }
}

/// `x,y`
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointArg(pub Location);

impl FromStr for PointArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (x, y) = s
            .split_once(',')
            .ok_or_else(|| format!("expected x,y, got '{s}'"))?;
        let x: f64 = x.trim().parse().map_err(|_| format!("bad x '{x}'"))?;
        let y: f64 = y.trim().parse().map_err(|_| format!("bad y '{y}'"))?;
        Location::new(x, y).map(PointArg).map_err(|e| e.to_string())
    }
}

fn parse_date(s: &str) -> Result<NaiveDate, String> {
    NaiveDate::parse_from_str(s, "%Y-%m-%d").map_err(|_| format!("expected YYYY-MM-DD, got '{s}'"))
}

#[derive(Args, Debug, Clone)]
pub struct ScenarioArgs {
    /// Master seed; all randomness derives from it.
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value = "20,20,1", value_name = "NX,NY,SPACING")]
    pub grid: GridArg,
    #[arg(long, default_value_t = 200)]
    pub n_time: usize,
    #[arg(long = "sigma-t2", default_value_t = 0.7)]
    pub sigma_t2: f64,
    #[arg(long, default_value_t = 0.2)]
    pub alpha: f64,
    #[arg(long = "sigma-s2", default_value_t = 1.3)]
    pub sigma_s2: f64,
    #[arg(long, default_value_t = 0.5)]
    pub gamma: f64,
}

#[derive(Args, Debug, Clone)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    /// Replicate index under the master seed.
    #[arg(long, default_value_t = 0)]
    pub rep: u64,
    #[arg(long, default_value = "2004-01-01", value_parser = parse_date)]
    pub start_date: NaiveDate,
    /// Station CSV to write.
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct InputArgs {
    /// Station CSV (`station_id,x,y,date,value`).
    #[arg(long)]
    pub input: PathBuf,
    /// Largest tolerated fraction of missing days per station.
    #[arg(long, default_value_t = exceedance::data::DEFAULT_MISSING_CAP)]
    pub missing_cap: f64,
}

#[derive(Args, Debug, Clone)]
pub struct SmoothArgs {
    /// Constant c of the bandwidth rule b = c n^(-1/5).
    #[arg(long, default_value_t = 1.0)]
    pub bandwidth_c: f64,
    /// Fixed KER bandwidth on rescaled time; overrides the rule.
    #[arg(long)]
    pub bandwidth: Option<f64>,
    #[arg(long, default_value = "gaussian")]
    pub kernel: KernelFamily,
    /// EDF window length (odd).
    #[arg(long, default_value_t = exceedance::smoothing::DEFAULT_EDF_WINDOW)]
    pub window: usize,
}

#[derive(Args, Debug, Clone)]
pub struct KrigeArgs {
    #[arg(long, default_value = "none")]
    pub transform: FieldTransform,
    #[arg(long, default_value = "constant")]
    pub mean: MeanModel,
    #[arg(long, default_value_t = 0.0)]
    pub nugget: f64,
    /// `daily` refits every day; `averaged` fits the time-averaged field once.
    #[arg(long, default_value = "daily")]
    pub refit: RefitPolicy,
}

#[derive(Args, Debug, Clone)]
pub struct SmoothCmd {
    #[command(flatten)]
    pub input: InputArgs,
    /// Exceedance CSV to write.
    #[arg(long)]
    pub output: PathBuf,
    /// One or more thresholds, comma separated.
    #[arg(
        long,
        value_delimiter = ',',
        required = true,
        allow_hyphen_values = true
    )]
    pub threshold: Vec<f64>,
    /// One or more of ind, edf, ker.
    #[arg(long, value_delimiter = ',', default_value = "ker")]
    pub method: Vec<Method>,
    #[command(flatten)]
    pub smooth: SmoothArgs,
    /// Add pointwise standard errors to KER output.
    #[arg(long)]
    pub band: bool,
    /// Coverage level of the band; only the standard error is written.
    #[arg(long, default_value_t = 0.95, requires = "band")]
    pub level: f64,
}

#[derive(Args, Debug, Clone)]
pub struct FitCmd {
    #[command(flatten)]
    pub input: InputArgs,
    /// Model file to write (`key=value`).
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, allow_hyphen_values = true)]
    pub threshold: f64,
    #[arg(long, default_value = "ker")]
    pub method: Method,
    #[command(flatten)]
    pub smooth: SmoothArgs,
    #[command(flatten)]
    pub krige: KrigeArgs,
    /// Day to fit; the time-averaged field is used when omitted.
    #[arg(long, value_parser = parse_date)]
    pub date: Option<NaiveDate>,
}

#[derive(Args, Debug, Clone)]
pub struct KrigeCmd {
    #[command(flatten)]
    pub input: InputArgs,
    /// CSV `date,x,y,pred,se` to write.
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, allow_hyphen_values = true)]
    pub threshold: f64,
    #[arg(long, default_value = "ker")]
    pub method: Method,
    #[command(flatten)]
    pub smooth: SmoothArgs,
    #[command(flatten)]
    pub krige: KrigeArgs,
    /// Fixed model from `fit`; refits per --refit when omitted.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Target locations as `x,y`; repeatable.
    #[arg(
        long = "target",
        value_name = "X,Y",
        required = true,
        allow_hyphen_values = true
    )]
    pub targets: Vec<PointArg>,
    /// Restrict to one day.
    #[arg(long, value_parser = parse_date)]
    pub date: Option<NaiveDate>,
}

#[derive(Args, Debug, Clone)]
pub struct MapCmd {
    #[command(flatten)]
    pub input: InputArgs,
    /// Output prefix; writes PREFIX.csv and PREFIX.pgm.
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, allow_hyphen_values = true)]
    pub threshold: f64,
    #[arg(long, default_value = "ker")]
    pub method: Method,
    #[command(flatten)]
    pub smooth: SmoothArgs,
    #[command(flatten)]
    pub krige: KrigeArgs,
    #[arg(long, value_name = "NX,NY,SPACING")]
    pub grid: GridArg,
    /// Lower-left cell centre; defaults to the stations' lower-left corner.
    #[arg(long, value_name = "X,Y", allow_hyphen_values = true)]
    pub origin: Option<PointArg>,
    #[arg(long, value_parser = parse_date, conflicts_with = "season", required_unless_present = "season")]
    pub date: Option<NaiveDate>,
    /// `summer`, `winter` or `YYYY-MM-DD:YYYY-MM-DD`.
    #[arg(long)]
    pub season: Option<Season>,
}

#[derive(Args, Debug, Clone)]
pub struct CrossvalCmd {
    #[command(flatten)]
    pub input: InputArgs,
    /// CSV `station_id,method,rmse` to write.
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, allow_hyphen_values = true)]
    pub threshold: f64,
    #[arg(long, value_delimiter = ',', default_value = "ind,edf,ker")]
    pub method: Vec<Method>,
    #[command(flatten)]
    pub smooth: SmoothArgs,
    #[arg(long, default_value = "constant")]
    pub mean: MeanModel,
    #[arg(long, default_value_t = 0.0)]
    pub nugget: f64,
    /// `averaged` fits the time-averaged field once per held-out station.
    #[arg(long, default_value = "averaged")]
    pub refit: RefitPolicy,
}

#[derive(Args, Debug, Clone)]
pub struct ExperimentCmd {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    #[arg(long, default_value_t = 50)]
    pub reps: usize,
    /// Worker threads for replicates.
    #[arg(long, default_value_t = 1)]
    pub parallel: usize,
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "0,2",
        allow_hyphen_values = true
    )]
    pub threshold: Vec<f64>,
    /// Numbers of predictor sites.
    #[arg(long = "m", value_delimiter = ',', default_value = "24,400")]
    pub ms: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "ind,edf,ker")]
    pub method: Vec<Method>,
    #[command(flatten)]
    pub smooth: SmoothArgs,
    #[arg(long, default_value = "constant")]
    pub mean: MeanModel,
    #[arg(long, default_value_t = 0.0)]
    pub nugget: f64,
    /// Designs with more sites than this use one time-averaged fit per replicate.
    #[arg(long, default_value_t = 100)]
    pub daily_refit_max_m: usize,
    /// Output prefix; writes PREFIX.csv and PREFIX.txt.
    #[arg(long)]
    pub output: PathBuf,
}

/// Error with its process exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub msg: String,
}

impl CliError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Self {
            code: 1,
            msg: msg.into(),
        }
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        Self {
            code: 2,
            msg: msg.into(),
        }
    }

    /// Prefixes the message with a file name.
    pub fn at(self, path: &Path) -> Self {
        Self {
            code: self.code,
            msg: format!("{}: {}", path.display(), self.msg),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.msg)
    }
}

impl From<exceedance::Error> for CliError {
    fn from(e: exceedance::Error) -> Self {
        Self {
            code: if e.is_numerical() { 2 } else { 1 },
            msg: e.to_string(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::invalid(e.to_string())
    }
}

const SUBCOMMANDS: [&str; 7] = [
    "simulate",
    "smooth",
    "fit",
    "krige",
    "map",
    "crossval",
    "experiment",
];

/// Reads `key=value` lines into `--key value` arguments. `true` becomes a bare
/// flag and `false` is dropped.
fn config_args(path: &Path) -> Result<Vec<String>, CliError> {
    let text =
        std::fs::read_to_string(path).map_err(|e| CliError::invalid(e.to_string()).at(path))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            CliError::invalid(format!("line {}: expected key=value", i + 1)).at(path)
        })?;
        let (k, v) = (k.trim().replace('_', "-"), v.trim());
        match v {
            "true" => out.push(format!("--{k}")),
            "false" => {}
            _ => {
                out.push(format!("--{k}"));
                out.push(v.to_string());
            }
        }
    }
    Ok(out)
}

/// Splices config-file arguments in right after the subcommand so that
/// explicit flags, which come later, override them.
fn expand_config(mut args: Vec<String>) -> Result<Vec<String>, CliError> {
    if args
        .iter()
        .any(|a| a == "-h" || a == "--help" || a == "-V" || a == "--version")
    {
        return Ok(args);
    }
    let mut path = None;
    let mut i = 1;
    while i < args.len() {
        if args[i] == "--config" && i + 1 < args.len() {
            path = Some(PathBuf::from(args.remove(i + 1)));
            args.remove(i);
        } else if let Some(p) = args[i].strip_prefix("--config=") {
            path = Some(PathBuf::from(p));
            args.remove(i);
        } else {
            i += 1;
        }
    }
    let Some(path) = path else {
        return Ok(args);
    };
    let extra = config_args(&path)?;
    let at = args
        .iter()
        .position(|a| SUBCOMMANDS.contains(&a.as_str()))
        .map_or(args.len(), |p| p + 1);
    args.splice(at..at, extra);
    Ok(args)
}

fn run() -> Result<(), CliError> {
    let args = expand_config(std::env::args().collect())?;
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return if code == 0 {
                Ok(())
            } else {
                Err(CliError {
                    code,
                    msg: String::new(),
                })
            };
        }
    };
    match cli.command {
        Command::Simulate(a) => commands::simulate(&a),
        Command::Smooth(a) => commands::smooth(&a),
        Command::Fit(a) => commands::fit(&a),
        Command::Krige(a) => commands::krige(&a),
        Command::Map(a) => commands::map(&a),
        Command::Crossval(a) => commands::crossval(&a),
        Command::Experiment(a) => commands::experiment(&a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if !e.msg.is_empty() {
                eprintln!("error: {}", e.msg);
            }
            ExitCode::from(e.code)
        }
    }
}
