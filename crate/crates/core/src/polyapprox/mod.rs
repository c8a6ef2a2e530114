//! Polynomial approximation of activation functions over bounded ranges.
//!
//! [`remez`] computes the minimax (best uniform) polynomial of a given
//! degree; [`lstsq_fit`] is the cheaper discrete least-squares alternative.
//! Both return an [`ApproxReport`] whose `max_abs_error` is re-measured on a
//! dense grid with [`max_error`].

mod lstsq;
mod poly;
mod remez;
mod scan;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use lstsq::lstsq_fit;
pub use poly::{Interval, Polynomial};
pub use remez::{remez, VERIFY_GRID};
pub use scan::{golden_max, run_extrema};

use crate::numcore::ops;

pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITERS: usize = 100;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum ApproxError {
    #[error("degenerate range [{lo}, {hi}]: need finite lo < hi")]
    DegenerateRange { lo: f64, hi: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("rank-deficient least-squares system ({0})")]
    RankDeficient(String),
    #[error("singular system: {0}")]
    Singular(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("fit did not converge after {iterations} iterations (max error {max_abs_error})")]
    NotConverged { iterations: usize, max_abs_error: f64 },
    #[error("parse error: {0}")]
    Parse(String),
}

/// The non-polynomial activations this toolkit replaces.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActivationFn {
    Relu,
    Gelu,
}

impl ActivationFn {
    pub fn eval(self, x: f64) -> f64 {
        match self {
            ActivationFn::Relu => ops::relu(x),
            ActivationFn::Gelu => ops::gelu(x),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ActivationFn::Relu => "relu",
            ActivationFn::Gelu => "gelu",
        }
    }
}

impl fmt::Display for ActivationFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ActivationFn {
    type Err = ApproxError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "relu" => Ok(ActivationFn::Relu),
            "gelu" => Ok(ActivationFn::Gelu),
            other => Err(ApproxError::Parse(format!("unknown activation {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FitMethod {
    Remez,
    Lstsq,
}

impl FromStr for FitMethod {
    type Err = ApproxError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "remez" => Ok(FitMethod::Remez),
            "lstsq" => Ok(FitMethod::Lstsq),
            other => Err(ApproxError::Parse(format!("unknown fit method {other:?}"))),
        }
    }
}

impl fmt::Display for FitMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FitMethod::Remez => "remez",
            FitMethod::Lstsq => "lstsq",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ApproxReport {
    pub polynomial: Polynomial,
    /// Dense-grid maximum of `|p(x) - f(x)|` over the fitted range.
    pub max_abs_error: f64,
    pub error_argmax: f64,
    /// `(x, p(x) - f(x))` at the final reference points (Remez) or at the
    /// per-sign-run extrema of the error (least squares).
    pub extrema: Vec<(f64, f64)>,
    pub iterations: usize,
    pub converged: bool,
    pub method: FitMethod,
}

impl ApproxReport {
    /// Turns a non-converged report into an error.
    pub fn require_converged(self) -> Result<Self, ApproxError> {
        if self.converged {
            Ok(self)
        } else {
            Err(ApproxError::NotConverged {
                iterations: self.iterations,
                max_abs_error: self.max_abs_error,
            })
        }
    }

    /// True when `extrema` holds `degree + 2` alternating errors whose
    /// magnitudes agree within `rel` of `max_abs_error`.
    pub fn equioscillates(&self, rel: f64) -> bool {
        let n = self.polynomial.degree() + 2;
        if self.extrema.len() != n {
            return false;
        }
        let alternating = self.extrema.windows(2).all(|w| w[0].1 * w[1].1 < 0.0);
        let mags: Vec<f64> = self.extrema.iter().map(|e| e.1.abs()).collect();
        let hi = mags.iter().cloned().fold(0.0, f64::max);
        let lo = mags.iter().cloned().fold(f64::INFINITY, f64::min);
        alternating && (hi - lo) <= rel * self.max_abs_error
    }
}

/// Fit `f` with the chosen method using default tolerances.
pub fn fit(
    method: FitMethod,
    f: &dyn Fn(f64) -> f64,
    degree: usize,
    range: Interval,
) -> Result<ApproxReport, ApproxError> {
    match method {
        FitMethod::Remez => remez(f, degree, range, DEFAULT_TOL, DEFAULT_MAX_ITERS),
        FitMethod::Lstsq => lstsq_fit(f, degree, range, lstsq::DEFAULT_SAMPLES.max(degree + 1)),
    }
}

/// Dense-grid maximum of `|p - f|` over `range`, refined once by a
/// golden-section search around the grid argmax. Ties resolve to the
/// leftmost grid point.
pub fn max_error(
    p: &Polynomial,
    f: &dyn Fn(f64) -> f64,
    range: Interval,
    grid_size: usize,
) -> Result<(f64, f64), ApproxError> {
    if grid_size < 1000 {
        return Err(ApproxError::InvalidArgument(format!(
            "max_error grid needs at least 1000 points, got {grid_size}"
        )));
    }
    let grid = range.uniform_grid(grid_size);
    let err = |x: f64| (p.eval(x) - f(x)).abs();
    let mut best = (0usize, f64::NEG_INFINITY);
    for (k, &x) in grid.iter().enumerate() {
        let e = err(x);
        if !e.is_finite() {
            return Err(ApproxError::NonFinite(format!("error at x = {x}")));
        }
        if e > best.1 {
            best = (k, e);
        }
    }
    let k = best.0;
    let lo = grid[k.saturating_sub(1)];
    let hi = grid[(k + 1).min(grid.len() - 1)];
    let (x, e) = golden_max(err, lo, hi, grid[k]);
    Ok((e, x))
}
