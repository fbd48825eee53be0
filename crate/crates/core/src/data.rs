//! Station time series, prediction grids and their CSV formats.
//!
//! Station CSV: `station_id,x,y,date,value`, one row per station and day,
//! ISO dates, an empty `value` marks a missing observation. Every station
//! must cover the same run of consecutive days.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use chrono::{Days, NaiveDate};

use crate::error::{invalid, Error, Result};

/// Default cap on the fraction of missing days per station.
pub const DEFAULT_MISSING_CAP: f64 = 0.10;

const STATION_HEADER: [&str; 5] = ["station_id", "x", "y", "date", "value"];

/// Formats a float with 17 significant digits, enough for a bit-exact round trip.
pub fn fmt_num(v: f64) -> String {
    format!("{v:.16e}")
}

/// A point in planar coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Location {
    pub x: f64,
    pub y: f64,
}

impl Location {
    pub fn new(x: f64, y: f64) -> Result<Self> {
        if !x.is_finite() || !y.is_finite() {
            return invalid(format!("non-finite coordinates ({x}, {y})"));
        }
        Ok(Self { x, y })
    }

    pub fn distance(&self, other: &Location) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.x, self.y)
    }
}

/// A regular daily time axis. Index `i` (0-based) maps to rescaled time `(i + 1) / n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TimeGrid {
    start: NaiveDate,
    n: usize,
}

impl TimeGrid {
    pub fn new(start: NaiveDate, n: usize) -> Result<Self> {
        if n < 2 {
            return invalid(format!("time grid needs at least 2 points, got {n}"));
        }
        if start.checked_add_days(Days::new(n as u64)).is_none() {
            return invalid("time grid runs past the calendar range");
        }
        Ok(Self { start, n })
    }

    /// A grid starting on 2004-01-01, used when no calendar is attached.
    pub fn with_len(n: usize) -> Result<Self> {
        Self::new(default_start(), n)
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn start(&self) -> NaiveDate {
        self.start
    }

    /// Rescaled time of index `i`.
    pub fn point(&self, i: usize) -> f64 {
        (i + 1) as f64 / self.n as f64
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.point(i)).collect()
    }

    pub fn date(&self, i: usize) -> NaiveDate {
        self.start + Days::new(i as u64)
    }

    pub fn dates(&self) -> Vec<NaiveDate> {
        (0..self.n).map(|i| self.date(i)).collect()
    }

    pub fn index_of(&self, date: NaiveDate) -> Option<usize> {
        let d = (date - self.start).num_days();
        (d >= 0 && (d as usize) < self.n).then_some(d as usize)
    }
}

fn default_start() -> NaiveDate {
    NaiveDate::from_ymd_opt(2004, 1, 1).expect("valid date")
}

/// One monitoring site: location, values and an observed/missing mask.
#[derive(Debug, Clone, PartialEq)]
pub struct StationSeries {
    pub id: String,
    pub loc: Location,
    values: Vec<f64>,
    observed: Vec<bool>,
}

impl StationSeries {
    /// Missing entries in `values` are ignored; they are stored as NaN.
    pub fn new(
        id: impl Into<String>,
        loc: Location,
        values: Vec<f64>,
        observed: Vec<bool>,
    ) -> Result<Self> {
        let id = id.into();
        if values.len() != observed.len() {
            return invalid(format!(
                "station {id}: {} values but {} mask entries",
                values.len(),
                observed.len()
            ));
        }
        let mut values = values;
        for (v, &obs) in values.iter_mut().zip(&observed) {
            if !obs {
                *v = f64::NAN;
            } else if !v.is_finite() {
                return invalid(format!("station {id}: non-finite observed value"));
            }
        }
        Ok(Self {
            id,
            loc,
            values,
            observed,
        })
    }

    pub fn complete(id: impl Into<String>, loc: Location, values: Vec<f64>) -> Result<Self> {
        let observed = vec![true; values.len()];
        Self::new(id, loc, values, observed)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `true` where the value was observed.
    pub fn mask(&self) -> &[bool] {
        &self.observed
    }

    pub fn value(&self, i: usize) -> Option<f64> {
        self.observed[i].then(|| self.values[i])
    }

    pub fn missing_count(&self) -> usize {
        self.observed.iter().filter(|o| !**o).count()
    }

    pub fn missing_fraction(&self) -> f64 {
        if self.values.is_empty() {
            return 0.0;
        }
        self.missing_count() as f64 / self.values.len() as f64
    }

    pub fn is_complete(&self) -> bool {
        self.observed.iter().all(|o| *o)
    }
}

/// The three temporal estimators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    /// Raw 0/1 indicators, no smoothing.
    Ind,
    /// Indicators averaged over a short window with empirical-CDF weights.
    Edf,
    /// Nadaraya-Watson kernel smoothing of indicators.
    Ker,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Ind, Method::Edf, Method::Ker];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Ind => "IND",
            Method::Edf => "EDF",
            Method::Ker => "KER",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ind" => Ok(Method::Ind),
            "edf" => Ok(Method::Edf),
            "ker" => Ok(Method::Ker),
            other => invalid(format!(
                "unknown method '{other}' (expected ind, edf or ker)"
            )),
        }
    }
}

/// Smoothed exceedance probabilities for one station and threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct ExceedanceEstimate {
    pub station_id: String,
    pub threshold: f64,
    pub probs: Vec<f64>,
    pub method: Method,
    pub se: Option<Vec<f64>>,
}

impl ExceedanceEstimate {
    pub fn new(
        station_id: impl Into<String>,
        threshold: f64,
        probs: Vec<f64>,
        method: Method,
        se: Option<Vec<f64>>,
    ) -> Result<Self> {
        if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return invalid(format!("probability {p} outside [0, 1]"));
        }
        if let Some(se) = &se {
            if se.len() != probs.len() {
                return invalid("standard errors not aligned with probabilities");
            }
            if se.iter().any(|s| !(*s >= 0.0)) {
                return invalid("negative standard error");
            }
        }
        Ok(Self {
            station_id: station_id.into(),
            threshold,
            probs,
            method,
            se,
        })
    }
}

/// A regular rectangular lattice of prediction or simulation points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub nx: usize,
    pub ny: usize,
    pub origin: Location,
    pub spacing: f64,
}

impl GridSpec {
    pub fn new(nx: usize, ny: usize, origin: Location, spacing: f64) -> Result<Self> {
        if nx == 0 || ny == 0 {
            return invalid(format!("grid dimensions must be positive, got {nx}x{ny}"));
        }
        if !(spacing > 0.0 && spacing.is_finite()) {
            return invalid(format!("grid spacing must be positive, got {spacing}"));
        }
        Ok(Self {
            nx,
            ny,
            origin,
            spacing,
        })
    }

    /// Unit-spaced grid anchored at the origin.
    pub fn unit(nx: usize, ny: usize) -> Result<Self> {
        Self::new(nx, ny, Location { x: 0.0, y: 0.0 }, 1.0)
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cell(&self, ix: usize, iy: usize) -> Location {
        Location {
            x: self.origin.x + ix as f64 * self.spacing,
            y: self.origin.y + iy as f64 * self.spacing,
        }
    }

    /// Cells in row-major order: index = `iy * nx + ix`.
    pub fn cells(&self) -> Vec<Location> {
        (0..self.ny)
            .flat_map(|iy| (0..self.nx).map(move |ix| (ix, iy)))
            .map(|(ix, iy)| self.cell(ix, iy))
            .collect()
    }
}

/// Stations sharing one time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub grid: TimeGrid,
    pub stations: Vec<StationSeries>,
}

impl Dataset {
    pub fn new(grid: TimeGrid, stations: Vec<StationSeries>) -> Result<Self> {
        for s in &stations {
            if s.len() != grid.len() {
                return invalid(format!(
                    "station {} has {} values, time grid has {}",
                    s.id,
                    s.len(),
                    grid.len()
                ));
            }
        }
        Ok(Self { grid, stations })
    }

    pub fn locations(&self) -> Vec<Location> {
        self.stations.iter().map(|s| s.loc).collect()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LoadOptions {
    pub missing_cap: f64,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self {
            missing_cap: DEFAULT_MISSING_CAP,
        }
    }
}

pub fn load_stations(path: impl AsRef<Path>, opts: &LoadOptions) -> Result<Dataset> {
    let file = std::fs::File::open(path.as_ref())?;
    read_stations(file, opts)
}

struct RawStation {
    id: String,
    loc: Location,
    rows: BTreeMap<NaiveDate, Option<f64>>,
}

pub fn read_stations<R: Read>(reader: R, opts: &LoadOptions) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| Error::Parse {
            line: 1,
            msg: e.to_string(),
        })?
        .clone();
    if header.iter().ne(STATION_HEADER.iter().copied()) {
        return Err(Error::Parse {
            line: 1,
            msg: format!(
                "expected header '{}', found '{}'",
                STATION_HEADER.join(","),
                header.iter().collect::<Vec<_>>().join(",")
            ),
        });
    }

    let mut order: Vec<RawStation> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    for record in rdr.records() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line()),
            msg: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let perr = |msg: String| Error::Parse { line, msg };
        let id = record[0].to_string();
        if id.is_empty() {
            return Err(perr("empty station_id".into()));
        }
        let x: f64 = record[1]
            .parse()
            .map_err(|_| perr(format!("bad x '{}'", &record[1])))?;
        let y: f64 = record[2]
            .parse()
            .map_err(|_| perr(format!("bad y '{}'", &record[2])))?;
        let loc = Location::new(x, y).map_err(|e| perr(e.to_string()))?;
        let date = NaiveDate::parse_from_str(&record[3], "%Y-%m-%d")
            .map_err(|_| perr(format!("bad date '{}'", &record[3])))?;
        let value = match &record[4] {
            "" => None,
            s => {
                let v: f64 = s.parse().map_err(|_| perr(format!("bad value '{s}'")))?;
                if !v.is_finite() {
                    return Err(perr(format!("non-finite value '{s}'")));
                }
                Some(v)
            }
        };

        let slot = *index.entry(id.clone()).or_insert_with(|| {
            order.push(RawStation {
                id: id.clone(),
                loc,
                rows: BTreeMap::new(),
            });
            order.len() - 1
        });
        let station = &mut order[slot];
        if station.loc != loc {
            return Err(perr(format!(
                "station {id} changes location from {} to {loc}",
                station.loc
            )));
        }
        if station.rows.insert(date, value).is_some() {
            return Err(Error::DuplicateRecord {
                station: id,
                date: date.to_string(),
            });
        }
    }

    let Some(first) = order.first() else {
        return invalid("no station records");
    };
    let dates: Vec<NaiveDate> = first.rows.keys().copied().collect();
    for s in &order[1..] {
        if s.rows.len() != dates.len() || s.rows.keys().zip(&dates).any(|(a, b)| a != b) {
            return Err(Error::InconsistentDates(format!(
                "station {} does not cover the same dates as station {}",
                s.id, first.id
            )));
        }
    }
    for w in dates.windows(2) {
        if (w[1] - w[0]).num_days() != 1 {
            return invalid(format!(
                "irregular time grid: gap between {} and {}",
                w[0], w[1]
            ));
        }
    }
    let grid = TimeGrid::new(dates[0], dates.len())?;

    let mut stations = Vec::with_capacity(order.len());
    for raw in order {
        let observed: Vec<bool> = raw.rows.values().map(Option::is_some).collect();
        let values: Vec<f64> = raw.rows.values().map(|v| v.unwrap_or(f64::NAN)).collect();
        let s = StationSeries::new(raw.id, raw.loc, values, observed)?;
        let fraction = s.missing_fraction();
        if fraction > opts.missing_cap {
            return Err(Error::MissingCapExceeded {
                station: s.id,
                fraction,
                cap: opts.missing_cap,
            });
        }
        if let Some(other) = stations.iter().find(|o: &&StationSeries| o.loc == s.loc) {
            return invalid(format!(
                "stations {} and {} share location {}",
                other.id, s.id, s.loc
            ));
        }
        stations.push(s);
    }
    Dataset::new(grid, stations)
}

pub fn write_stations<W: Write>(writer: W, data: &Dataset) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let io = |e: csv::Error| Error::Io(e.into());
    w.write_record(STATION_HEADER).map_err(io)?;
    let dates: Vec<String> = data.grid.dates().iter().map(|d| d.to_string()).collect();
    for s in &data.stations {
        let (x, y) = (fmt_num(s.loc.x), fmt_num(s.loc.y));
        for (i, date) in dates.iter().enumerate() {
            let value = s.value(i).map(fmt_num).unwrap_or_default();
            w.write_record([s.id.as_str(), &x, &y, date, &value])
                .map_err(io)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Writes `station_id,date,prob,se,method,threshold`; `se` is empty when absent.
pub fn write_exceedance<W: Write>(
    writer: W,
    grid: &TimeGrid,
    estimates: &[ExceedanceEstimate],
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let io = |e: csv::Error| Error::Io(e.into());
    w.write_record(["station_id", "date", "prob", "se", "method", "threshold"])
        .map_err(io)?;
    for est in estimates {
        if est.probs.len() != grid.len() {
            return invalid(format!(
                "estimate for {} not aligned to grid",
                est.station_id
            ));
        }
        let threshold = fmt_num(est.threshold);
        for (i, p) in est.probs.iter().enumerate() {
            let se = est.se.as_ref().map(|se| fmt_num(se[i])).unwrap_or_default();
            w.write_record([
                est.station_id.as_str(),
                &grid.date(i).to_string(),
                &fmt_num(*p),
                &se,
                est.method.as_str(),
                &threshold,
            ])
            .map_err(io)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Fills missing values by linear interpolation between the nearest observed
/// neighbours, extending the first/last observation to the edges.
pub fn impute_missing(s: &StationSeries) -> Result<StationSeries> {
    let known: Vec<usize> = (0..s.len()).filter(|&i| s.observed[i]).collect();
    if known.len() < 2 {
        return invalid(format!(
            "station {}: need at least 2 observed values to impute, found {}",
            s.id,
            known.len()
        ));
    }
    let mut values = s.values.clone();
    let (first, last) = (known[0], known[known.len() - 1]);
    for v in &mut values[..first] {
        *v = s.values[first];
    }
    for v in &mut values[last + 1..] {
        *v = s.values[last];
    }
    for pair in known.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        let (va, vb) = (s.values[a], s.values[b]);
        for (i, v) in values.iter_mut().enumerate().take(b).skip(a + 1) {
            let w = (i - a) as f64 / (b - a) as f64;
            *v = va + w * (vb - va);
        }
    }
    StationSeries::complete(s.id.clone(), s.loc, values)
}

/// `values[i] >= x0` for every index.
pub fn indicators(values: &[f64], x0: f64) -> Vec<bool> {
    values.iter().map(|v| *v >= x0).collect()
}

/// Exceedance indicators of a fully observed station.
pub fn indicator_series(s: &StationSeries, x0: f64) -> Result<Vec<bool>> {
    if !s.is_complete() {
        return invalid(format!(
            "station {} has missing values; impute before thresholding",
            s.id
        ));
    }
    Ok(indicators(&s.values, x0))
}
