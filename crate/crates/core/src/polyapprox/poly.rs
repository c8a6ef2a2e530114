use std::fmt;

use serde::{Deserialize, Serialize};

use super::ApproxError;
use crate::numcore::ops::{horner, horner_derivative};
use crate::numcore::{NumError, Tensor};

/// Closed interval `[lo, hi]` with `lo < hi`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Result<Self, ApproxError> {
        if !(lo.is_finite() && hi.is_finite()) || lo >= hi {
            return Err(ApproxError::DegenerateRange { lo, hi });
        }
        Ok(Interval { lo, hi })
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn mid(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn contains(&self, other: &Interval) -> bool {
        self.lo <= other.lo && other.hi <= self.hi
    }

    /// Maps `x` in the interval onto `[-1, 1]`.
    pub fn to_unit(&self, x: f64) -> f64 {
        (2.0 * x - (self.lo + self.hi)) / self.width()
    }

    pub fn from_unit(&self, t: f64) -> f64 {
        self.mid() + 0.5 * self.width() * t
    }

    /// `n >= 2` evenly spaced points including both ends.
    pub fn uniform_grid(&self, n: usize) -> Vec<f64> {
        let step = self.width() / (n - 1) as f64;
        (0..n)
            .map(|k| if k == n - 1 { self.hi } else { self.lo + step * k as f64 })
            .collect()
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}]", self.lo, self.hi)
    }
}

/// Monomial-basis polynomial (ascending coefficients) with the interval it
/// was fitted on. Evaluation outside the domain is allowed but carries no
/// accuracy guarantee.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Polynomial {
    coeffs: Vec<f64>,
    domain: Interval,
}

impl Polynomial {
    pub fn new(coeffs: Vec<f64>, domain: Interval) -> Result<Self, ApproxError> {
        if coeffs.is_empty() {
            return Err(ApproxError::InvalidArgument("polynomial needs at least one coefficient".into()));
        }
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(ApproxError::NonFinite("polynomial coefficient".into()));
        }
        Ok(Polynomial { coeffs, domain })
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn domain(&self) -> Interval {
        self.domain
    }

    pub fn eval(&self, x: f64) -> f64 {
        horner(&self.coeffs, x)
    }

    pub fn derivative(&self, x: f64) -> f64 {
        horner_derivative(&self.coeffs, x)
    }

    /// Elementwise Horner evaluation.
    pub fn eval_tensor(&self, x: &Tensor) -> Result<Tensor, NumError> {
        let out = x.map(|v| self.eval(v));
        out.check_finite("eval_poly")?;
        Ok(out)
    }

    /// Upper bound on `|p'(x)|` over the domain.
    pub fn max_abs_derivative(&self) -> f64 {
        self.max_abs_derivative_on(self.domain)
    }

    /// Upper bound on `|p'(x)|` over `range`, from a dense scan of the
    /// derivative plus the derivative's own Lipschitz slack.
    pub fn max_abs_derivative_on(&self, range: Interval) -> f64 {
        let grid = range.uniform_grid(4097);
        let step = range.width() / 4096.0;
        let d2: Vec<f64> = self
            .coeffs
            .iter()
            .enumerate()
            .skip(2)
            .map(|(k, &c)| (k * (k - 1)) as f64 * c)
            .collect();
        let mut worst: f64 = 0.0;
        let mut worst_d2: f64 = 0.0;
        for &x in &grid {
            worst = worst.max(self.derivative(x).abs());
            if !d2.is_empty() {
                worst_d2 = worst_d2.max(horner(&d2, x).abs());
            }
        }
        worst + 0.5 * step * worst_d2 * 1.01
    }

    /// Text record `degree,a,b,c0,...,cd` with 17 significant digits per
    /// real, which round-trips every `f64` exactly.
    pub fn to_record(&self) -> String {
        let mut fields = vec![
            self.degree().to_string(),
            fmt_exact(self.domain.lo),
            fmt_exact(self.domain.hi),
        ];
        fields.extend(self.coeffs.iter().map(|&c| fmt_exact(c)));
        fields.join(",")
    }

    pub fn from_record(line: &str) -> Result<Self, ApproxError> {
        let bad = |m: String| ApproxError::Parse(m);
        let fields: Vec<&str> = line.trim().split(',').map(str::trim).collect();
        if fields.len() < 4 {
            return Err(bad(format!("polynomial record has {} fields", fields.len())));
        }
        let degree: usize = fields[0]
            .parse()
            .map_err(|e| bad(format!("degree {:?}: {e}", fields[0])))?;
        let nums: Vec<f64> = fields[1..]
            .iter()
            .map(|s| s.parse::<f64>().map_err(|e| bad(format!("number {s:?}: {e}"))))
            .collect::<Result<_, _>>()?;
        if nums.len() != degree + 3 {
            return Err(bad(format!(
                "degree {degree} needs {} coefficients, record has {}",
                degree + 1,
                nums.len() - 2
            )));
        }
        Polynomial::new(nums[2..].to_vec(), Interval::new(nums[0], nums[1])?)
    }
}

pub(crate) fn fmt_exact(v: f64) -> String {
    format!("{v:.16e}")
}

/// Chebyshev-series helpers on the unit interval.
pub(crate) mod cheb {
    /// Clenshaw evaluation of `sum a_k T_k(t)`.
    pub fn eval(a: &[f64], t: f64) -> f64 {
        let (mut b1, mut b2) = (0.0, 0.0);
        for &ak in a.iter().skip(1).rev() {
            let b0 = 2.0 * t * b1 - b2 + ak;
            b2 = b1;
            b1 = b0;
        }
        t * b1 - b2 + a[0]
    }

    /// `T_0..T_d` at `t`.
    pub fn basis(d: usize, t: f64) -> Vec<f64> {
        let mut out = Vec::with_capacity(d + 1);
        out.push(1.0);
        if d >= 1 {
            out.push(t);
        }
        for k in 2..=d {
            let next = 2.0 * t * out[k - 1] - out[k - 2];
            out.push(next);
        }
        out
    }

    /// Converts Chebyshev coefficients in `t` to monomial coefficients in
    /// `x`, where `t = alpha * x + beta`.
    pub fn to_monomial(a: &[f64], alpha: f64, beta: f64) -> Vec<f64> {
        let d = a.len() - 1;
        // power-basis coefficients of T_k, built by recurrence
        let mut t_prev = vec![0.0; d + 1];
        let mut t_cur = vec![0.0; d + 1];
        let mut in_t = vec![0.0; d + 1];
        t_prev[0] = 1.0;
        in_t[0] += a[0];
        if d >= 1 {
            t_cur[1] = 1.0;
            in_t[1] += a[1];
        }
        for ak in a.iter().skip(2) {
            let mut next = vec![0.0; d + 1];
            for j in 0..d {
                next[j + 1] += 2.0 * t_cur[j];
            }
            for j in 0..=d {
                next[j] -= t_prev[j];
            }
            for j in 0..=d {
                in_t[j] += ak * next[j];
            }
            t_prev = std::mem::replace(&mut t_cur, next);
        }
        // substitute t = alpha x + beta by Horner over polynomials
        let mut out = vec![0.0; d + 1];
        for k in (0..=d).rev() {
            let mut next = vec![0.0; d + 1];
            for j in 0..d {
                next[j + 1] += alpha * out[j];
                next[j] += beta * out[j];
            }
            next[d] += beta * out[d];
            next[0] += in_t[k];
            out = next;
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn record_round_trip_is_exact() {
        let p = Polynomial::new(vec![0.1, -1.0 / 3.0, 2.5e-17], Interval::new(-1.5, 2.0).unwrap()).unwrap();
        let rec = p.to_record();
        assert!(rec.starts_with("2,"));
        assert_eq!(Polynomial::from_record(&rec).unwrap(), p);
    }

    #[test]
    fn record_with_wrong_count_is_rejected() {
        assert!(Polynomial::from_record("2,-1,1,1,2").is_err());
        assert!(Polynomial::from_record("0,1,-1,3").is_err());
    }

    #[test]
    fn chebyshev_conversion_matches_direct_evaluation() {
        let a = [0.3, -0.2, 0.7, 0.05, -0.4];
        let dom = Interval::new(-3.0, 5.0).unwrap();
        let alpha = 2.0 / dom.width();
        let beta = -(dom.lo + dom.hi) / dom.width();
        let m = cheb::to_monomial(&a, alpha, beta);
        for &x in &[-3.0, -1.0, 0.5, 4.9] {
            let direct = cheb::eval(&a, dom.to_unit(x));
            assert!((horner(&m, x) - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn degenerate_interval_is_rejected() {
        assert!(Interval::new(1.0, -1.0).is_err());
        assert!(Interval::new(1.0, 1.0).is_err());
    }
}
