//! Spatio-temporal estimation of threshold exceedance probabilities.
//!
//! Each station's series is turned into a time-varying exceedance probability
//! by smoothing the indicators `1{X >= x0}` in time; the smoothed values are
//! then interpolated in space by Matérn kriging.

// `!(x > 0.0)` is used deliberately so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod covariance;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod kriging;
pub mod optim;
pub mod simulate;
pub mod smoothing;
pub mod special;
pub mod stats;

pub use error::{Error, Result};
