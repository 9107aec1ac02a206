//! Chebyshev interpolation of `exp(-x)` on `[0, L]`.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChebModel {
    pub degree: usize,
    pub interval_length: f64,
    /// Coefficients of `T_0..T_d` in the variable `t = 2x/L - 1`.
    pub coefficients: Vec<f64>,
    /// Sup error against `exp(-x)` over the dense check sample.
    pub sup_error: f64,
}

impl ChebModel {
    /// Interpolant of `exp(-x)` at the `d+1` Chebyshev points of the first kind.
    pub fn interpolate(interval_length: f64, degree: usize) -> Self {
        let n = degree + 1;
        let nodes: Vec<f64> = (0..n).map(|j| PI * (j as f64 + 0.5) / n as f64).collect();
        let values: Vec<f64> = nodes
            .iter()
            .map(|theta| (-0.5 * interval_length * (1.0 + theta.cos())).exp())
            .collect();
        let mut coefficients: Vec<f64> = (0..n)
            .map(|k| {
                let s: f64 = nodes
                    .iter()
                    .zip(&values)
                    .map(|(theta, f)| f * (k as f64 * theta).cos())
                    .sum();
                2.0 * s / n as f64
            })
            .collect();
        coefficients[0] *= 0.5;
        let mut model = ChebModel {
            degree,
            interval_length,
            coefficients,
            sup_error: f64::NAN,
        };
        model.sup_error = model.dense_sup_error();
        model
    }

    /// Map `x in [0, L]` to `t in [-1, 1]`.
    pub fn to_unit(&self, x: f64) -> f64 {
        2.0 * x / self.interval_length - 1.0
    }

    pub fn eval(&self, x: f64) -> f64 {
        clenshaw(&self.coefficients, self.to_unit(x))
    }

    /// Max of `|exp(-x) - h(x)|` over `10 (d+1)` uniform points of `[0, L]`.
    pub fn dense_sup_error(&self) -> f64 {
        let count = 10 * (self.degree + 1);
        (0..count)
            .map(|i| {
                let x = self.interval_length * i as f64 / (count - 1) as f64;
                ((-x).exp() - self.eval(x)).abs()
            })
            .fold(0.0, f64::max)
    }
}

pub(crate) fn clenshaw(coefficients: &[f64], t: f64) -> f64 {
    let mut b1 = 0.0;
    let mut b2 = 0.0;
    for &c in coefficients.iter().skip(1).rev() {
        let b0 = c + 2.0 * t * b1 - b2;
        b2 = b1;
        b1 = b0;
    }
    coefficients[0] + t * b1 - b2
}

/// Degree cap `16 (ln(1+L) + ln(1/eps))`.
pub fn degree_cap(interval_length: f64, eps: f64) -> usize {
    ((16.0 * ((1.0 + interval_length).ln() + (1.0 / eps).ln())).floor() as usize).max(1)
}

/// Smallest-degree interpolant (doubling, then bisection) meeting `eps` on the dense sample.
pub fn cheb_exp(interval_length: f64, eps: f64) -> Result<ChebModel> {
    if !(interval_length.is_finite() && interval_length > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "interval length must be positive, got {interval_length}"
        )));
    }
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::InvalidArgument(format!("eps must lie in (0,1), got {eps}")));
    }
    let cap = degree_cap(interval_length, eps);
    let exceeded = || Error::DegreeCapExceeded {
        interval_length,
        eps,
        cap,
    };

    let model = ChebModel::interpolate(interval_length, 0);
    if model.sup_error <= eps {
        return Ok(model);
    }
    let mut fail = 0usize;
    let mut pass = 1usize;
    let mut best = loop {
        if pass > cap {
            return Err(exceeded());
        }
        let m = ChebModel::interpolate(interval_length, pass);
        if m.sup_error <= eps {
            break m;
        }
        fail = pass;
        pass *= 2;
    };
    while pass - fail > 1 {
        let mid = fail + (pass - fail) / 2;
        let m = ChebModel::interpolate(interval_length, mid);
        if m.sup_error <= eps {
            pass = mid;
            best = m;
        } else {
            fail = mid;
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tiny_interval_is_constant() {
        let m = cheb_exp(1e-12, 1e-6).unwrap();
        assert_eq!(m.degree, 0);
        assert!((m.eval(0.0) - 1.0).abs() < 1e-11);
    }

    #[test]
    fn interval_twenty() {
        let eps = 1e-9;
        let m = cheb_exp(20.0, eps).unwrap();
        // independent dense check on a finer, offset grid
        let worst = (0..=5000)
            .map(|i| {
                let x = 20.0 * (i as f64 + 0.37) / 5001.0;
                ((-x).exp() - m.eval(x)).abs()
            })
            .fold(0.0, f64::max);
        assert!(m.sup_error <= eps);
        assert!(worst <= 2.0 * eps, "worst {worst}");
        // one degree less must fail the check (minimality of the search)
        assert!(ChebModel::interpolate(20.0, m.degree - 1).sup_error > eps);
    }

    #[test]
    fn degree_grows_logarithmically() {
        let eps: f64 = 1e-6;
        let c = 4.0;
        let m = cheb_exp(c * (1.0 / eps).ln(), eps).unwrap();
        assert!(m.degree as f64 <= 4.0 * (1.0 / eps).ln(), "degree {}", m.degree);
    }

    #[test]
    fn rejects_bad_input_and_reports_cap() {
        assert!(cheb_exp(0.0, 1e-6).is_err());
        assert!(cheb_exp(1.0, 1.5).is_err());
        assert!(matches!(
            cheb_exp(50.0, 1e-18),
            Err(Error::DegreeCapExceeded { .. })
        ));
    }
}
