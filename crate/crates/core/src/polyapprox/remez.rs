//! Multi-point exchange Remez iteration.
//!
//! The working polynomial lives in the Chebyshev basis on the unit interval
//! (the monomial basis is far too ill-conditioned at degree 18 on wide
//! ranges) and is converted to monomials once at the end.

use nalgebra::{DMatrix, DVector};

use super::scan::{golden_max, signed_extrema};
use super::{max_error, poly::cheb, ApproxError, ApproxReport, FitMethod, Interval, Polynomial};

/// Dense scan resolution used to locate extrema between exchanges.
const SCAN_POINTS: usize = 4096;
/// Verification grid for the reported maximum error.
pub const VERIFY_GRID: usize = 20_001;

pub fn remez(
    f: &dyn Fn(f64) -> f64,
    degree: usize,
    range: Interval,
    tol: f64,
    max_iters: usize,
) -> Result<ApproxReport, ApproxError> {
    if !(tol > 0.0) {
        return Err(ApproxError::InvalidArgument(format!("tolerance must be positive, got {tol}")));
    }
    let n = degree + 2;
    // Chebyshev-Lobatto scan grid in t, with the reference's own points mixed in later.
    let scan_t: Vec<f64> = (0..=SCAN_POINTS)
        .map(|k| -(std::f64::consts::PI * k as f64 / SCAN_POINTS as f64).cos())
        .collect();
    let f_scale = scan_t
        .iter()
        .map(|&t| f(range.from_unit(t)).abs())
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    for &t in &scan_t {
        if !f(range.from_unit(t)).is_finite() {
            return Err(ApproxError::NonFinite("target function on the range".into()));
        }
    }
    let floor = 64.0 * f64::EPSILON * f_scale;

    let mut reference: Vec<f64> = (0..n)
        .map(|i| -(std::f64::consts::PI * i as f64 / (n - 1) as f64).cos())
        .collect();
    let mut coeffs = vec![0.0; degree + 1];
    let mut converged = false;
    let mut iterations = 0;

    while iterations < max_iters {
        iterations += 1;
        let (c, level) = solve_reference(f, degree, range, &reference)?;
        coeffs = c;
        let err = |t: f64| cheb::eval(&coeffs, t) - f(range.from_unit(t));

        let mut grid: Vec<f64> = scan_t.iter().chain(reference.iter()).copied().collect();
        grid.sort_by(f64::total_cmp);
        grid.dedup();
        let values: Vec<f64> = grid.iter().map(|&t| err(t)).collect();
        let global = values.iter().fold(0.0, |m: f64, v| m.max(v.abs()));
        if global <= floor {
            converged = true;
            break;
        }
        let picks = signed_extrema(&values, n);
        if picks.len() < n {
            // Too few sign changes for a full exchange; swap in the global
            // extremum alone.
            let idx = (0..values.len())
                .max_by(|&a, &b| values[a].abs().total_cmp(&values[b].abs()).then(b.cmp(&a)))
                .expect("non-empty grid");
            let sign = values[idx].signum();
            let lo = grid[idx.saturating_sub(1)];
            let hi = grid[(idx + 1).min(grid.len() - 1)];
            let (t_star, _) = golden_max(|t| sign * err(t), lo, hi, grid[idx]);
            let before = reference.clone();
            single_exchange(&mut reference, level, t_star, sign);
            if reference == before {
                break;
            }
            continue;
        }
        let mut next = Vec::with_capacity(n);
        let mut levels = Vec::with_capacity(n);
        for &idx in &picks {
            let sign = values[idx].signum();
            let lo = grid[idx.saturating_sub(1)];
            let hi = grid[(idx + 1).min(grid.len() - 1)];
            let (t_best, v_best) = golden_max(|t| sign * err(t), lo, hi, grid[idx]);
            next.push(t_best);
            levels.push(v_best);
        }
        let hi = levels.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lo = levels.iter().cloned().fold(f64::INFINITY, f64::min);
        reference = next;
        if hi <= floor || (hi - lo) <= tol * hi || (hi - lo) <= floor {
            converged = true;
            break;
        }
    }

    let alpha = 2.0 / range.width();
    let beta = -(range.lo + range.hi) / range.width();
    let poly = Polynomial::new(cheb::to_monomial(&coeffs, alpha, beta), range)?;
    let (max_abs_error, error_argmax) = max_error(&poly, f, range, VERIFY_GRID)?;
    let extrema = reference
        .iter()
        .map(|&t| {
            let x = range.from_unit(t);
            (x, poly.eval(x) - f(x))
        })
        .collect();
    Ok(ApproxReport {
        polynomial: poly,
        max_abs_error,
        error_argmax,
        extrema,
        iterations,
        converged,
        method: FitMethod::Remez,
    })
}

/// Replaces one reference point by `t` so that the assigned error signs keep
/// alternating. The error at `reference[i]` has sign `-(-1)^i sgn(level)`.
fn single_exchange(reference: &mut Vec<f64>, level: f64, t: f64, sign: f64) {
    if reference.contains(&t) {
        return;
    }
    let base = if level > 0.0 { -1.0 } else { 1.0 };
    let sig = |i: usize| if i % 2 == 0 { base } else { -base };
    let n = reference.len();
    let pos = reference.partition_point(|&r| r < t);
    if pos == 0 {
        if sig(0) == sign {
            reference[0] = t;
        } else {
            reference.pop();
            reference.insert(0, t);
        }
    } else if pos == n {
        if sig(n - 1) == sign {
            reference[n - 1] = t;
        } else {
            reference.remove(0);
            reference.push(t);
        }
    } else if sig(pos - 1) == sign {
        reference[pos - 1] = t;
    } else {
        reference[pos] = t;
    }
}

/// Solves `p(t_i) + (-1)^i E = f(x_i)` for the Chebyshev coefficients of `p`
/// and the levelled error `E`.
fn solve_reference(
    f: &dyn Fn(f64) -> f64,
    degree: usize,
    range: Interval,
    reference: &[f64],
) -> Result<(Vec<f64>, f64), ApproxError> {
    let n = degree + 2;
    let mut a = DMatrix::<f64>::zeros(n, n);
    let mut rhs = DVector::<f64>::zeros(n);
    for (i, &t) in reference.iter().enumerate() {
        for (k, v) in cheb::basis(degree, t).into_iter().enumerate() {
            a[(i, k)] = v;
        }
        a[(i, degree + 1)] = if i % 2 == 0 { 1.0 } else { -1.0 };
        rhs[i] = f(range.from_unit(t));
    }
    let sol = a
        .lu()
        .solve(&rhs)
        .ok_or_else(|| ApproxError::Singular("Remez reference system".into()))?;
    if sol.iter().any(|v| !v.is_finite()) {
        return Err(ApproxError::NonFinite("Remez solution".into()));
    }
    Ok((sol.iter().take(degree + 1).copied().collect(), sol[degree + 1]))
}
