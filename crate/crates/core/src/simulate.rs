//! Exact simulation of separable space-time Gaussian fields.
//!
//! With spatial covariance `S` and temporal covariance `T`, a field with
//! covariance `S ⊗ T` is `L_S E L_T'` for Cholesky factors `L_S`, `L_T` and an
//! i.i.d. standard normal matrix `E`. The full covariance is never formed.

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::covariance::SeparableCovParams;
use crate::data::{Dataset, GridSpec, Location, StationSeries, TimeGrid};
use crate::error::{invalid, Error, Result};
use crate::stats::norm_sf;

/// Default cap on the number of spatial points in one scenario.
pub const DEFAULT_MAX_POINTS: usize = 4000;

const JITTER_START: f64 = 1e-12;
const JITTER_MAX: f64 = 1e-8;
// stream reserved for scenario-level draws (sites, targets); replicates use 0..R
const DESIGN_STREAM: u64 = u64::MAX;

/// Strictly increasing pointwise map applied to the simulated Gaussian field.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MonotoneTransform {
    Exp,
    /// `scale * x + shift` with `scale > 0`.
    Affine {
        scale: f64,
        shift: f64,
    },
}

impl MonotoneTransform {
    pub fn apply(&self, x: f64) -> f64 {
        match *self {
            MonotoneTransform::Exp => x.exp(),
            MonotoneTransform::Affine { scale, shift } => scale * x + shift,
        }
    }

    /// `G^-1(y)`; `-inf` below the range of `G`.
    pub fn inverse(&self, y: f64) -> Result<f64> {
        match *self {
            MonotoneTransform::Exp => Ok(if y <= 0.0 { f64::NEG_INFINITY } else { y.ln() }),
            MonotoneTransform::Affine { scale, shift } => {
                if !(scale > 0.0) || !scale.is_finite() || !shift.is_finite() {
                    return Err(Error::NonInvertibleTransform);
                }
                Ok((y - shift) / scale)
            }
        }
    }
}

/// Simulation design: a grid plus optional off-grid sites, `n_time` integer-spaced times.
#[derive(Debug, Clone, PartialEq)]
pub struct SimScenario {
    pub grid: GridSpec,
    pub extra_sites: Vec<Location>,
    pub n_time: usize,
    pub cov: SeparableCovParams,
    pub seed: u64,
    pub transform: Option<MonotoneTransform>,
    pub max_points: usize,
}

impl SimScenario {
    /// The reference design: 20x20 unit grid, 200 times, default covariance.
    pub fn reference(seed: u64) -> Self {
        Self {
            grid: GridSpec::unit(20, 20).expect("valid grid"),
            extra_sites: Vec::new(),
            n_time: 200,
            cov: SeparableCovParams::default(),
            seed,
            transform: None,
            max_points: DEFAULT_MAX_POINTS,
        }
    }

    /// Grid cells in row-major order followed by the extra sites.
    pub fn locations(&self) -> Vec<Location> {
        let mut locs = self.grid.cells();
        locs.extend_from_slice(&self.extra_sites);
        locs
    }

    pub fn n_points(&self) -> usize {
        self.grid.len() + self.extra_sites.len()
    }
}

/// One realization; `values[p * n_time + t]` is point `p` at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimField {
    pub locations: Vec<Location>,
    pub n_time: usize,
    pub values: Vec<f64>,
}

impl SimField {
    pub fn series(&self, point: usize) -> &[f64] {
        &self.values[point * self.n_time..(point + 1) * self.n_time]
    }

    pub fn n_points(&self) -> usize {
        self.locations.len()
    }

    /// Grid cells become stations `c<ix>_<iy>`, extra sites `x<k>`.
    pub fn to_dataset(&self, grid: &GridSpec, start: chrono::NaiveDate) -> Result<Dataset> {
        let time = TimeGrid::new(start, self.n_time)?;
        let stations = (0..self.n_points())
            .map(|p| {
                let id = if p < grid.len() {
                    format!("c{}_{}", p % grid.nx, p / grid.nx)
                } else {
                    format!("x{}", p - grid.len())
                };
                StationSeries::complete(id, self.locations[p], self.series(p).to_vec())
            })
            .collect::<Result<Vec<_>>>()?;
        Dataset::new(time, stations)
    }
}

fn cholesky_lower(mut c: DMatrix<f64>, scale: f64, what: &str) -> Result<DMatrix<f64>> {
    if let Some(ch) = c.clone().cholesky() {
        return Ok(ch.unpack());
    }
    let mut jitter = JITTER_START;
    let mut added = 0.0;
    while jitter <= JITTER_MAX * (1.0 + 1e-9) {
        for i in 0..c.nrows() {
            c[(i, i)] += (jitter - added) * scale;
        }
        added = jitter;
        if let Some(ch) = c.clone().cholesky() {
            return Ok(ch.unpack());
        }
        jitter *= 10.0;
    }
    Err(Error::Numerical(format!(
        "{what} covariance is not positive definite"
    )))
}

/// Cholesky factors of a scenario, reusable across replicates.
#[derive(Debug, Clone)]
pub struct Simulator {
    scenario: SimScenario,
    locations: Vec<Location>,
    l_s: DMatrix<f64>,
    l_t_transpose: DMatrix<f64>,
}

impl Simulator {
    pub fn new(scenario: &SimScenario) -> Result<Self> {
        let locations = scenario.locations();
        let np = locations.len();
        if np > scenario.max_points {
            return invalid(format!(
                "scenario has {np} spatial points, above the budget of {}",
                scenario.max_points
            ));
        }
        if scenario.n_time == 0 {
            return invalid("n_time must be positive");
        }
        let cov = &scenario.cov;
        let spatial = cov.spatial();
        let s = DMatrix::from_fn(np, np, |i, j| {
            spatial.cov(locations[i].distance(&locations[j]))
        });
        let nt = scenario.n_time;
        let t = DMatrix::from_fn(nt, nt, |i, j| cov.temporal_cov(i.abs_diff(j) as f64));
        Ok(Self {
            l_s: cholesky_lower(s, cov.sigma_s2, "spatial")?,
            l_t_transpose: cholesky_lower(t, cov.sigma_t2, "temporal")?.transpose(),
            scenario: scenario.clone(),
            locations,
        })
    }

    pub fn scenario(&self) -> &SimScenario {
        &self.scenario
    }

    /// Replicate `rep`; depends only on the scenario seed and `rep`.
    pub fn sample(&self, rep: u64) -> SimField {
        let mut rng = replicate_rng(self.scenario.seed, rep);
        let np = self.locations.len();
        let nt = self.scenario.n_time;
        // E is filled row by row (point-major) so the draw order is explicit.
        let mut e = DMatrix::zeros(np, nt);
        for p in 0..np {
            for t in 0..nt {
                e[(p, t)] = rng.sample::<f64, _>(StandardNormal);
            }
        }
        let x = &self.l_s * e * &self.l_t_transpose;
        let mut values = Vec::with_capacity(np * nt);
        for p in 0..np {
            for t in 0..nt {
                let v = x[(p, t)];
                values.push(match &self.scenario.transform {
                    Some(g) => g.apply(v),
                    None => v,
                });
            }
        }
        SimField {
            locations: self.locations.clone(),
            n_time: nt,
            values,
        }
    }
}

/// Generator for replicate `rep` under master `seed`: the seed's ChaCha8 key on stream `rep`.
pub fn replicate_rng(seed: u64, rep: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep);
    rng
}

/// Generator for scenario-level design draws, disjoint from every replicate stream.
pub fn design_rng(seed: u64) -> ChaCha8Rng {
    replicate_rng(seed, DESIGN_STREAM)
}

/// First replicate of a scenario.
pub fn simulate(sc: &SimScenario) -> Result<SimField> {
    Ok(Simulator::new(sc)?.sample(0))
}

/// `P(G(X) >= x0)` for the stationary zero-mean field.
pub fn true_exceedance(sc: &SimScenario, x0: f64) -> Result<f64> {
    let z = match &sc.transform {
        Some(g) => g.inverse(x0)?,
        None => x0,
    };
    if z == f64::NEG_INFINITY {
        return Ok(1.0);
    }
    Ok(norm_sf(z / sc.cov.variance().sqrt()))
}

/// `m` distinct grid cells drawn uniformly without replacement.
pub fn sample_sites(grid: &GridSpec, m: usize, seed: u64) -> Result<Vec<Location>> {
    sample_sites_with(grid, m, &mut design_rng(seed))
}

pub(crate) fn sample_sites_with<R: Rng>(
    grid: &GridSpec,
    m: usize,
    rng: &mut R,
) -> Result<Vec<Location>> {
    let n = grid.len();
    if m > n {
        return invalid(format!("cannot draw {m} sites from {n} grid cells"));
    }
    let cells = grid.cells();
    Ok(sample(rng, n, m).into_iter().map(|i| cells[i]).collect())
}

/// Stationary Gaussian AR(1) series with coefficient `phi` and unit innovations.
pub fn ar1_series<R: Rng>(n: usize, phi: f64, rng: &mut R) -> Vec<f64> {
    let mut out = Vec::with_capacity(n);
    let mut x = rng.sample::<f64, _>(StandardNormal) / (1.0 - phi * phi).sqrt();
    for _ in 0..n {
        out.push(x);
        x = phi * x + rng.sample::<f64, _>(StandardNormal);
    }
    out
}
