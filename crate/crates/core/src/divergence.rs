//! Divergence functions `E`, `E*`, the reflected `E(1-p||1-q)` and the
//! Bernoulli KL divergence, together with the threshold equations that
//! delimit where `exp(-n E)` exceeds a target accuracy.
//!
//! With `E(p||q) = p ln(p/q) - (p - q)`, the thresholds for a level `M` are:
//!
//! * lower square `(1,2) x (0,1)`: `q_M < 1` solves `E(1||q_M) = M` and
//!   `p_M = min(2, p')` with `E(p'||1) = M`, `p' > 1`;
//! * upper square `(0,1) x (1,2)`: `q_M = min(2, q')` with `E(1||q') = M`,
//!   `q' > 1`, and `p_M` is the smallest `p' >= 0` with `E(p'||1) <= M`.
//!
//! In both cases `E(p_M||q_M) / M` stays bounded uniformly in `M`.

use serde::{Deserialize, Serialize};
use std::f64::consts::LN_2;

use crate::error::{Error, Result};

/// Default residual tolerance for the threshold solvers.
pub const DEFAULT_TOL: f64 = 1e-12;

/// Bisection iteration cap.
pub const MAX_BISECTION_ITERS: usize = 200;

/// `E(2||1) = 2 ln 2 - 1`: above this level `p_M` is clamped to 2 in the lower square.
pub const LOWER_PM_CLAMP: f64 = 2.0 * LN_2 - 1.0;

/// `E(1||2) = 1 - ln 2`: above this level `q_M` is clamped to 2 in the upper square.
pub const UPPER_QM_CLAMP: f64 = 1.0 - LN_2;

/// `E(0||1) = 1`: above this level `p_M` is clamped to 0 in the upper square.
pub const UPPER_PM_CLAMP: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DivergenceKind {
    /// `p ln(p/q) - (p - q)`
    E,
    /// `q ln(q/p) - (q - p)`
    EStar,
    /// `E(1-p || 1-q)`
    EReflected,
    /// `p ln(p/q) + (1-p) ln((1-p)/(1-q))`
    KL,
}

impl DivergenceKind {
    pub fn eval(self, p: f64, q: f64) -> Result<f64> {
        eval(self, p, q)
    }
}

/// Which square the threshold pair belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Regime {
    /// `(p,q) in (1,2) x (0,1)`, below the diagonal.
    Lower,
    /// `(p,q) in (0,1) x (1,2)`, above the diagonal.
    Upper,
}

impl Regime {
    pub fn as_str(self) -> &'static str {
        match self {
            Regime::Lower => "lower",
            Regime::Upper => "upper",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdPair {
    pub m: f64,
    pub p_m: f64,
    pub q_m: f64,
    /// `ln q_M`, kept separately because `q_M ~ exp(-(M+1))` underflows for large `M`.
    pub ln_q_m: f64,
    pub regime: Regime,
}

impl ThresholdPair {
    /// `E(p_M || q_M)`, evaluated in log space for `q_M`.
    pub fn divergence(&self) -> f64 {
        e_with_log_q(self.p_m, self.q_m, self.ln_q_m)
    }
}

/// `(1+r) ln(1+r) - r` for `r >= -1`, accurate near `r = 0`.
fn phi(r: f64) -> f64 {
    if r.abs() <= 0.1 {
        // sum_{k>=2} (-1)^k r^k / (k (k-1))
        let mut term = r * r;
        let mut sum = 0.0;
        let mut sign = 1.0;
        for k in 2..=20 {
            let kf = k as f64;
            sum += sign * term / (kf * (kf - 1.0));
            term *= r;
            sign = -sign;
        }
        sum
    } else if r == -1.0 {
        1.0
    } else {
        (1.0 + r) * r.ln_1p() - r
    }
}

/// `E(p||q)` for `p >= 0`, `q >= 0`.
fn e_raw(p: f64, q: f64) -> Option<f64> {
    if !(p.is_finite() && q.is_finite()) || p < 0.0 || q < 0.0 {
        return None;
    }
    if q == 0.0 {
        return if p == 0.0 { Some(0.0) } else { None };
    }
    if p == 0.0 {
        return Some(q);
    }
    let r = (p - q) / q;
    let value = if r.abs() <= 0.1 {
        q * phi(r)
    } else {
        p * (p.ln() - q.ln()) - (p - q)
    };
    Some(value.max(0.0))
}

/// `E(p||q)` given `ln q` directly; used when `q` has underflowed.
fn e_with_log_q(p: f64, q: f64, ln_q: f64) -> f64 {
    if q > f64::MIN_POSITIVE {
        return e_raw(p, q).unwrap_or(f64::INFINITY);
    }
    if p == 0.0 {
        return q;
    }
    p * p.ln() - p * ln_q - p + q
}

fn kl_raw(p: f64, q: f64) -> Option<f64> {
    if !(p.is_finite() && q.is_finite()) || !(0.0..=1.0).contains(&p) || q <= 0.0 || q >= 1.0 {
        return None;
    }
    let head = if p > 0.0 { p * (p.ln() - q.ln()) } else { 0.0 };
    let tail = if p < 1.0 {
        (1.0 - p) * ((-p).ln_1p() - (-q).ln_1p())
    } else {
        0.0
    };
    Some((head + tail).max(0.0))
}

/// Evaluate a divergence. Boundary values (`p = 0` for `E`, `p in {0,1}` for KL)
/// use their one-sided limits.
pub fn eval(kind: DivergenceKind, p: f64, q: f64) -> Result<f64> {
    let value = match kind {
        DivergenceKind::E => e_raw(p, q),
        DivergenceKind::EStar => e_raw(q, p),
        DivergenceKind::EReflected => e_raw(1.0 - p, 1.0 - q),
        DivergenceKind::KL => kl_raw(p, q),
    };
    value.ok_or(Error::DivergenceUndefined { kind, p, q })
}

/// `exp(-n * divergence)`, with infinite divergence mapped to 0.
pub fn kernel(kind: DivergenceKind, n: f64, p: f64, q: f64) -> f64 {
    match eval(kind, p, q) {
        Ok(d) => (-n * d).exp(),
        Err(_) => 0.0,
    }
}

/// Bisection on a monotone function with a sign change on `[lo, hi]`.
/// Runs to machine resolution, then checks the residual against `tol`.
fn bisect<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64, tol: f64) -> Result<f64> {
    let mut f_lo = f(lo);
    let f_hi = f(hi);
    if f_lo == 0.0 {
        return Ok(lo);
    }
    if f_hi == 0.0 {
        return Ok(hi);
    }
    if f_lo.signum() == f_hi.signum() {
        return Err(Error::SolverFailure { lo, hi, tol });
    }
    for _ in 0..MAX_BISECTION_ITERS {
        let mid = lo + 0.5 * (hi - lo);
        if mid <= lo || mid >= hi {
            break;
        }
        let f_mid = f(mid);
        if f_mid == 0.0 {
            return Ok(mid);
        }
        if f_mid.signum() == f_lo.signum() {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
        }
    }
    let (r_lo, r_hi) = (f(lo).abs(), f(hi).abs());
    let (best, resid) = if r_lo <= r_hi { (lo, r_lo) } else { (hi, r_hi) };
    if resid <= tol {
        Ok(best)
    } else {
        Err(Error::SolverFailure { lo, hi, tol })
    }
}

fn check_level(m: f64, tol: f64) -> Result<()> {
    if !(m.is_finite() && m > 0.0) {
        return Err(Error::InvalidArgument(format!("level M must be positive, got {m}")));
    }
    if !(tol.is_finite() && tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance must be positive, got {tol}")));
    }
    Ok(())
}

/// `E(p||1)` for `p >= 0`.
fn e_p_one(p: f64) -> f64 {
    e_raw(p, 1.0).unwrap_or(f64::INFINITY)
}

/// `E(1||q)` for `q > 0`.
fn e_one_q(q: f64) -> f64 {
    e_raw(1.0, q).unwrap_or(f64::INFINITY)
}

/// Solve `ln(1/q) - (1-q) = m` for `q in (0,1)`, returned as `t = -ln q`.
fn solve_neg_ln_qm_lower(m: f64, tol: f64) -> Result<f64> {
    check_level(m, tol)?;
    // t - 1 + e^{-t} is increasing on t > 0, zero at 0, and exceeds m at t = m + 2.
    // At t = m + 1 the excess is e^{-t}, which rounds away for m above ~40.
    let g = |t: f64| ((-t).exp_m1() + t) - m;
    bisect(g, 0.0, m + 2.0, tol * m.max(1.0))
}

/// `q_M` in the lower square: the root of `E(1||q) = m` in `(0,1)`.
///
/// For very large `m` the root underflows; use [`solve_thresholds_lower`] to
/// keep `ln q_M`.
pub fn solve_qm_lower(m: f64, tol: f64) -> Result<f64> {
    solve_neg_ln_qm_lower(m, tol).map(|t| (-t).exp())
}

/// `p_M = min(2, p')` in the lower square, `E(p'||1) = m`, `p' > 1`.
pub fn solve_pm_lower(m: f64, tol: f64) -> Result<f64> {
    check_level(m, tol)?;
    if m >= LOWER_PM_CLAMP {
        return Ok(2.0);
    }
    bisect(|p| e_p_one(p) - m, 1.0, 2.0, tol * m.max(1.0))
}

pub fn solve_thresholds_lower(m: f64, tol: f64) -> Result<ThresholdPair> {
    let t = solve_neg_ln_qm_lower(m, tol)?;
    let p_m = solve_pm_lower(m, tol)?;
    Ok(ThresholdPair {
        m,
        p_m,
        q_m: (-t).exp(),
        ln_q_m: -t,
        regime: Regime::Lower,
    })
}

/// Thresholds in the upper square `(0,1) x (1,2)`.
pub fn solve_thresholds_upper(m: f64, tol: f64) -> Result<ThresholdPair> {
    check_level(m, tol)?;
    let scaled_tol = tol * m.max(1.0);
    let q_m = if m >= UPPER_QM_CLAMP {
        2.0
    } else {
        bisect(|q| e_one_q(q) - m, 1.0, 2.0, scaled_tol)?
    };
    let p_m = if m >= UPPER_PM_CLAMP {
        0.0
    } else {
        // E(p||1) decreases from 1 at p = 0 to 0 at p = 1.
        bisect(|p| e_p_one(p) - m, 0.0, 1.0, scaled_tol)?
    };
    Ok(ThresholdPair {
        m,
        p_m,
        q_m,
        ln_q_m: q_m.ln(),
        regime: Regime::Upper,
    })
}

pub fn solve_thresholds(regime: Regime, m: f64, tol: f64) -> Result<ThresholdPair> {
    match regime {
        Regime::Lower => solve_thresholds_lower(m, tol),
        Regime::Upper => solve_thresholds_upper(m, tol),
    }
}

/// `E(p_M||q_M) / M` for the regime's threshold pair.
pub fn ratio(regime: Regime, m: f64) -> Result<f64> {
    let pair = solve_thresholds(regime, m, DEFAULT_TOL)?;
    Ok(pair.divergence() / m)
}
