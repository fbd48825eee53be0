//! Isotropic Matérn covariance and the separable space-time model used by the simulator.
//!
//! The Matérn family is parameterized as
//!
//! ```text
//! C(h) = sigma / (2^(nu-1) Gamma(nu)) * z^nu * K_nu(z),   z = 2 sqrt(nu) h / rho
//! ```
//!
//! so `sigma` is the variance (`C(0) = sigma`). The common form without the
//! `2 sqrt(nu)` factor, `z = h / ell`, corresponds to `rho = 2 sqrt(nu) ell`.

use crate::error::{invalid, Result};
use crate::special::{bessel_k_scaled, ln_gamma};

/// Parameters of the Matérn covariance: variance, range and smoothness.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaternParams {
    pub sigma: f64,
    pub rho: f64,
    pub nu: f64,
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        invalid(format!("{name} must be positive and finite, got {v}"))
    }
}

impl MaternParams {
    pub fn new(sigma: f64, rho: f64, nu: f64) -> Result<Self> {
        positive("sigma", sigma)?;
        positive("rho", rho)?;
        positive("nu", nu)?;
        Ok(Self { sigma, rho, nu })
    }

    /// Correlation `C(h) / sigma` for `h >= 0`.
    pub fn correlation(&self, h: f64) -> f64 {
        matern_correlation(h, self.rho, self.nu)
    }

    /// Covariance at distance `h >= 0`.
    pub fn cov(&self, h: f64) -> f64 {
        self.sigma * self.correlation(h)
    }
}

/// Matérn correlation with constants hoisted out, for repeated evaluation.
#[derive(Debug, Clone, Copy)]
pub(crate) struct MaternCorrelation {
    nu: f64,
    scale: f64,
    log_norm: f64,
}

impl MaternCorrelation {
    pub(crate) fn new(rho: f64, nu: f64) -> Self {
        let log_norm = (1.0 - nu) * std::f64::consts::LN_2 - ln_gamma(nu).unwrap_or(f64::NAN);
        Self {
            nu,
            scale: 2.0 * nu.sqrt() / rho,
            log_norm,
        }
    }

    /// Correlation at distance `h`; `h <= 0` gives 1.
    pub(crate) fn at(&self, h: f64) -> f64 {
        if h <= 0.0 {
            return 1.0;
        }
        let z = self.scale * h;
        // K_1/2 has a closed form
        if self.nu == 0.5 {
            return (-z).exp();
        }
        match bessel_k_scaled(self.nu, z) {
            Ok(ks) => (self.log_norm + self.nu * z.ln() + ks.ln() - z)
                .exp()
                .min(1.0),
            // overflow only when z is far below the resolution of the h -> 0 limit
            Err(_) => 1.0,
        }
    }
}

pub(crate) fn matern_correlation(h: f64, rho: f64, nu: f64) -> f64 {
    MaternCorrelation::new(rho, nu).at(h)
}

/// Matérn covariance at distance `h`.
pub fn matern_cov(h: f64, p: &MaternParams) -> Result<f64> {
    if !(h >= 0.0) || !h.is_finite() {
        return invalid(format!("distance must be finite and >= 0, got {h}"));
    }
    Ok(p.cov(h))
}

/// Stable temporal covariance `sigma_t2 * exp(-u^alpha)`.
pub fn stable_temporal_cov(u: f64, sigma_t2: f64, alpha: f64) -> Result<f64> {
    positive("sigma_T2", sigma_t2)?;
    if !(alpha > 0.0 && alpha <= 2.0) {
        return invalid(format!("alpha must lie in (0, 2], got {alpha}"));
    }
    if !(u >= 0.0) || !u.is_finite() {
        return invalid(format!("time lag must be finite and >= 0, got {u}"));
    }
    if u == 0.0 {
        return Ok(sigma_t2);
    }
    Ok(sigma_t2 * (-u.powf(alpha)).exp())
}

/// Separable space-time covariance: stable in time times Whittle-Matérn in space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeparableCovParams {
    pub sigma_t2: f64,
    pub alpha: f64,
    pub sigma_s2: f64,
    pub gamma: f64,
}

impl Default for SeparableCovParams {
    /// The reference simulation setting.
    fn default() -> Self {
        Self {
            sigma_t2: 0.7,
            alpha: 0.2,
            sigma_s2: 1.3,
            gamma: 0.5,
        }
    }
}

impl SeparableCovParams {
    pub fn new(sigma_t2: f64, alpha: f64, sigma_s2: f64, gamma: f64) -> Result<Self> {
        positive("sigma_T2", sigma_t2)?;
        positive("sigma_S2", sigma_s2)?;
        positive("gamma", gamma)?;
        if !(alpha > 0.0 && alpha <= 2.0) {
            return invalid(format!("alpha must lie in (0, 2], got {alpha}"));
        }
        Ok(Self {
            sigma_t2,
            alpha,
            sigma_s2,
            gamma,
        })
    }

    /// `sigma_S2 * 2^(1-gamma) / Gamma(gamma) * h^gamma * K_gamma(h)`, i.e. Matérn
    /// with `nu = gamma` and `rho = 2 sqrt(gamma)`.
    pub fn spatial(&self) -> MaternParams {
        MaternParams {
            sigma: self.sigma_s2,
            rho: 2.0 * self.gamma.sqrt(),
            nu: self.gamma,
        }
    }

    pub fn temporal_cov(&self, u: f64) -> f64 {
        if u <= 0.0 {
            self.sigma_t2
        } else {
            self.sigma_t2 * (-u.powf(self.alpha)).exp()
        }
    }

    pub fn spatial_cov(&self, h: f64) -> f64 {
        self.spatial().cov(h)
    }

    /// Marginal variance of the field.
    pub fn variance(&self) -> f64 {
        self.sigma_t2 * self.sigma_s2
    }
}

pub fn separable_cov(u: f64, h: f64, p: &SeparableCovParams) -> Result<f64> {
    if !(u >= 0.0) || !(h >= 0.0) || !u.is_finite() || !h.is_finite() {
        return invalid(format!("lags must be finite and >= 0, got u={u}, h={h}"));
    }
    Ok(p.temporal_cov(u) * p.spatial_cov(h))
}
