use nalgebra::{DMatrix, DVector};

use super::poly::cheb;
use super::{max_error, run_extrema, ApproxError, ApproxReport, FitMethod, Interval, Polynomial, VERIFY_GRID};

pub(crate) const DEFAULT_SAMPLES: usize = 10_000;

/// Discrete least-squares fit on `n_samples` uniform points of `range`.
///
/// The design matrix uses the Chebyshev basis on the unit interval and is
/// solved by Householder QR, so the fit stays well-conditioned at high
/// degree.
pub fn lstsq_fit(
    f: &dyn Fn(f64) -> f64,
    degree: usize,
    range: Interval,
    n_samples: usize,
) -> Result<ApproxReport, ApproxError> {
    if n_samples < degree + 1 {
        return Err(ApproxError::InvalidArgument(format!(
            "{n_samples} samples cannot determine a degree-{degree} fit"
        )));
    }
    let xs = if n_samples == 1 {
        vec![range.mid()]
    } else {
        range.uniform_grid(n_samples)
    };
    let mut a = DMatrix::<f64>::zeros(n_samples, degree + 1);
    let mut rhs = DVector::<f64>::zeros(n_samples);
    for (i, &x) in xs.iter().enumerate() {
        for (k, v) in cheb::basis(degree, range.to_unit(x)).into_iter().enumerate() {
            a[(i, k)] = v;
        }
        let y = f(x);
        if !y.is_finite() {
            return Err(ApproxError::NonFinite(format!("target at x = {x}")));
        }
        rhs[i] = y;
    }
    let qr = a.qr();
    let r = qr.r();
    let rmax = (0..=degree).map(|k| r[(k, k)].abs()).fold(0.0, f64::max);
    if (0..=degree).any(|k| r[(k, k)].abs() <= 1e-12 * rmax.max(f64::MIN_POSITIVE)) {
        return Err(ApproxError::RankDeficient(format!(
            "degree {degree} on {n_samples} samples"
        )));
    }
    let qtb = qr.q().transpose() * rhs;
    let coeffs = r
        .solve_upper_triangular(&qtb)
        .ok_or_else(|| ApproxError::Singular("least-squares triangular solve".into()))?;

    let alpha = 2.0 / range.width();
    let beta = -(range.lo + range.hi) / range.width();
    let cheb_coeffs: Vec<f64> = coeffs.iter().copied().collect();
    let polynomial = Polynomial::new(cheb::to_monomial(&cheb_coeffs, alpha, beta), range)?;
    let (max_abs_error, error_argmax) = max_error(&polynomial, f, range, VERIFY_GRID)?;
    let grid = range.uniform_grid(VERIFY_GRID);
    let errs: Vec<f64> = grid.iter().map(|&x| polynomial.eval(x) - f(x)).collect();
    let extrema = run_extrema(&errs).into_iter().map(|i| (grid[i], errs[i])).collect();
    Ok(ApproxReport {
        polynomial,
        max_abs_error,
        error_argmax,
        extrema,
        iterations: 1,
        converged: true,
        method: FitMethod::Lstsq,
    })
}
