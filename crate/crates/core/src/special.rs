//! Special functions for Gaussian absolute moments.
//!
//! `E|U|^r |V|^s` for a standard bivariate normal pair with correlation `c` is
//!
//! ```text
//! (1/pi) 2^((r+s)/2) Gamma((r+1)/2) Gamma((s+1)/2) 2F1(-r/2, -s/2; 1/2; c^2)
//! ```
//!
//! which is what the moment maps of power-variation functionals reduce to.

use crate::error::{Error, Result};
use crate::quadrature;
use crate::scalar::Scalar;

/// Largest `|x|` accepted by the series in [`hyp2f1`].
pub const HYP2F1_MAX_ARG: f64 = 1.0 - 1e-8;

const HYP2F1_MAX_TERMS: usize = 1_000_000;
const HYP2F1_REL_TOL: f64 = 1e-14;

/// Euler gamma function (evaluated in double precision).
pub fn gamma<T: Scalar>(x: T) -> T {
    T::lit(statrs::function::gamma::gamma(x.as_f64()))
}

/// `E|Z|^r` for `Z ~ N(0, 1)`: `2^(r/2) Gamma((r+1)/2) / sqrt(pi)`.
pub fn abs_moment<T: Scalar>(r: T) -> T {
    let half = T::lit(0.5);
    let two = T::lit(2.0);
    two.powf(half * r) * gamma(half * (r + T::one())) / T::PI().sqrt()
}

/// Gauss hypergeometric function by direct power series.
///
/// Summation stops once a term drops below `1e-14` of the partial sum
/// (or is exactly zero, for terminating series).
pub fn hyp2f1<T: Scalar>(a: T, b: T, c: T, x: T) -> Result<T> {
    if c <= T::zero() && c == c.round() {
        return Err(Error::InvalidParams(format!(
            "2F1: c = {c} is a nonpositive integer"
        )));
    }
    if !(x.abs() <= T::lit(HYP2F1_MAX_ARG)) {
        return Err(Error::InvalidParams(format!(
            "2F1: |x| = {} too close to 1",
            x.abs()
        )));
    }
    let tol = T::lit(HYP2F1_REL_TOL).max(T::epsilon());
    let mut term = T::one();
    let mut sum = T::one();
    for k in 0..HYP2F1_MAX_TERMS {
        let kf = T::count(k);
        term = term * (a + kf) * (b + kf) / ((c + kf) * (kf + T::one())) * x;
        sum += term;
        if term == T::zero() || term.abs() < tol * sum.abs() {
            return Ok(sum);
        }
    }
    Err(Error::NoConvergence {
        terms: HYP2F1_MAX_TERMS,
    })
}

/// `E|U|^r |V|^s` for unit-variance jointly Gaussian `(U, V)` with correlation `corr`.
///
/// Uses the hypergeometric series for `corr^2 <= 0.99` and an angular
/// quadrature of the same expectation closer to `|corr| = 1`, where the
/// series converges too slowly.
pub fn bivariate_abs_moment<T: Scalar>(r: T, s: T, corr: T) -> T {
    let half = T::lit(0.5);
    let x = (corr * corr).min(T::one());
    if x <= T::lit(0.99) {
        let prefactor = T::lit(2.0).powf(half * (r + s))
            * gamma(half * (r + T::one()))
            * gamma(half * (s + T::one()))
            / T::PI();
        let f = hyp2f1(-half * r, -half * s, half, x).expect("series converges for corr^2 <= 0.99");
        return prefactor * f;
    }
    if x >= T::one() - T::epsilon() {
        return abs_moment(r + s);
    }
    T::lit(angular_abs_moment(r.as_f64(), s.as_f64(), corr.as_f64()))
}

/// `E[R^(r+s)] / (2 pi) * integral over theta of |cos t|^r |c cos t + sqrt(1-c^2) sin t|^s`.
fn angular_abs_moment(r: f64, s: f64, corr: f64) -> f64 {
    use std::f64::consts::PI;
    let sc = (1.0 - corr * corr).max(0.0).sqrt();
    let f = |t: f64| t.cos().abs().powf(r) * (corr * t.cos() + sc * t.sin()).abs().powf(s);
    // kinks at the zeros of both factors, reduced to [0, pi); the integrand has period pi
    let mut cuts = vec![0.0, PI / 2.0, (-corr).atan2(sc).rem_euclid(PI), PI];
    cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut integral = 0.0;
    for w in cuts.windows(2) {
        if w[1] > w[0] {
            integral += quadrature::integrate(f, w[0], w[1], 1e-14).expect("bounded integrand");
        }
    }
    let radial = 2f64.powf(0.5 * (r + s)) * statrs::function::gamma::gamma(1.0 + 0.5 * (r + s));
    radial * integral / PI
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn hyp2f1_basic_values() {
        assert_eq!(hyp2f1(0.3, -0.7, 1.5, 0.0).unwrap(), 1.0);
        let v = hyp2f1(1.0, 1.0, 2.0, 0.5).unwrap();
        assert_relative_eq!(v, -(0.5f64).ln() / 0.5, max_relative = 1e-12);
        for x in [0.1, 0.4, 0.9] {
            assert_relative_eq!(
                hyp2f1(-1.0, -1.0, 0.5, x).unwrap(),
                1.0 + 2.0 * x,
                max_relative = 1e-15
            );
        }
    }

    #[test]
    fn hyp2f1_domain_errors() {
        assert!(hyp2f1(1.0, 1.0, -2.0, 0.1).is_err());
        assert!(hyp2f1(1.0, 1.0, 2.0, 1.0).is_err());
    }

    #[test]
    fn absolute_moments_of_standard_normal() {
        assert_relative_eq!(
            abs_moment(1.0),
            (2.0 / std::f64::consts::PI).sqrt(),
            max_relative = 1e-14
        );
        assert_relative_eq!(abs_moment(2.0), 1.0, max_relative = 1e-14);
        assert_relative_eq!(abs_moment(4.0), 3.0, max_relative = 1e-13);
    }

    #[test]
    fn bivariate_moment_identities() {
        for c in [0.0, 0.3, 0.7, 0.95, -0.5] {
            assert_relative_eq!(
                bivariate_abs_moment(2.0, 2.0, c),
                1.0 + 2.0 * c * c,
                max_relative = 1e-12
            );
        }
        assert_relative_eq!(
            bivariate_abs_moment(0.5, 1.0, 0.0),
            abs_moment(0.5) * abs_moment(1.0),
            max_relative = 1e-14
        );
        assert_relative_eq!(
            bivariate_abs_moment(0.5, 0.5, 1.0),
            abs_moment(1.0),
            max_relative = 1e-14
        );
    }

    #[test]
    fn series_and_angular_branches_agree() {
        for &(r, s) in &[(0.5, 0.5), (1.0, 0.5), (0.25, 2.0)] {
            let c = 0.99f64.sqrt();
            let series = bivariate_abs_moment(r, s, c);
            let angular = angular_abs_moment(r, s, c);
            assert_relative_eq!(series, angular, max_relative = 1e-9);
        }
    }
}
