//! Binomial, Poisson and chi-squared matrices and their divergence kernels.
//!
//! Each family matrix factors as `row_factor(i) * col_factor(j) * exp(-n_eff D(p_i || q_j))`
//! where `D` is one of the divergences and `(p_i, q_j)` are affine images of the
//! row and column indices:
//!
//! | family   | rows            | columns              | kernel | p        | q         | n_eff |
//! |----------|-----------------|----------------------|--------|----------|-----------|-------|
//! | binomial | `k = 0..=n`     | `q_j` in `(0,1)`     | KL     | `k/n`    | `q_j`     | `n`   |
//! | Poisson  | `k = 0..=k_max` | `lambda_j > 0`       | E      | `k`      | `lambda`  | 1     |
//! | chi^2    | `x_i > 0`       | `k = 1..=k_max`      | E*     | `x/2`    | `k/2 - 1` | 1     |
//!
//! The factors are close to the Stirling prefactors `1/sqrt(2 pi n p (1-p))`,
//! `1/sqrt(2 pi k)` and `1/(2 sqrt(2 pi (k/2-1)))`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::function::factorial::ln_factorial;
use statrs::function::gamma::ln_gamma;
use std::f64::consts::{LN_2, PI};

use crate::divergence::{self, DivergenceKind};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum FamilySpec {
    /// Rows `k = 0..=n`, columns at midpoints `q_j = (j + 1/2) / q_grid`.
    Binomial { n: usize, q_grid: usize },
    /// Rows `k = 0..=k_max`, columns at midpoints of `(0, lambda_max]`.
    Poisson {
        k_max: usize,
        lambda_max: f64,
        lambda_grid: usize,
    },
    /// Rows at midpoints of `(0, x_max]`, columns `k = 1..=k_max`.
    ChiSquared {
        x_max: f64,
        x_grid: usize,
        k_max: usize,
    },
}

/// `x -> scale * x + offset`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Affine {
    pub scale: f64,
    pub offset: f64,
}

impl Affine {
    pub fn apply(&self, index: usize) -> f64 {
        self.scale * index as f64 + self.offset
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelMap {
    pub kind: DivergenceKind,
    pub p_of_row: Affine,
    pub q_of_col: Affine,
    pub n_eff: f64,
}

fn ln_choose(n: usize, k: usize) -> f64 {
    if k == 0 || k == n {
        return 0.0;
    }
    ln_factorial(n as u64) - ln_factorial(k as u64) - ln_factorial((n - k) as u64)
}

/// `x ln y` with `0 ln 0 = 0`.
fn xlny(x: f64, y: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * y.ln()
    }
}

/// `ln(binom(n,k) q^k (1-q)^(n-k))` with the boundary conventions at `q in {0,1}`.
pub fn binomial_ln_pmf(n: usize, k: usize, q: f64) -> f64 {
    if k > n {
        return f64::NEG_INFINITY;
    }
    let (kf, rest) = (k as f64, (n - k) as f64);
    let tail = if rest == 0.0 { 0.0 } else { rest * (-q).ln_1p() };
    ln_choose(n, k) + xlny(kf, q) + tail
}

/// `ln(e^{-lambda} lambda^k / k!)`
pub fn poisson_ln_pmf(k: usize, lambda: f64) -> f64 {
    -lambda + xlny(k as f64, lambda) - ln_factorial(k as u64)
}

/// `ln(x^{k/2-1} e^{-x/2} / (2^{k/2} Gamma(k/2)))`
pub fn chi_squared_ln_pdf(x: f64, k: usize) -> f64 {
    let half = k as f64 / 2.0;
    (half - 1.0) * x.ln() - x / 2.0 - half * LN_2 - ln_gamma_plus_one(half - 1.0)
}

/// `ln(t^t e^{-t} / Gamma(t+1))`, the exact ratio behind the Stirling prefactor.
fn ln_stirling_ratio(t: f64) -> f64 {
    xlny(t, t) - t - ln_gamma_plus_one(t)
}

/// `ln Gamma(t + 1)`, through the factorial table when `t` is a whole number.
fn ln_gamma_plus_one(t: f64) -> f64 {
    if t >= 0.0 && t.fract() == 0.0 && t < 1e15 {
        ln_factorial(t as u64)
    } else {
        ln_gamma(t + 1.0)
    }
}

impl FamilySpec {
    pub fn binomial(n: usize) -> Self {
        FamilySpec::Binomial { n, q_grid: n }
    }

    pub fn poisson(k_max: usize, lambda_max: f64) -> Self {
        FamilySpec::Poisson {
            k_max,
            lambda_max,
            lambda_grid: k_max + 1,
        }
    }

    pub fn chi_squared(x_max: f64, k_max: usize) -> Self {
        FamilySpec::ChiSquared {
            x_max,
            x_grid: k_max,
            k_max,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            FamilySpec::Binomial { .. } => "binomial",
            FamilySpec::Poisson { .. } => "poisson",
            FamilySpec::ChiSquared { .. } => "chisq",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        match *self {
            FamilySpec::Binomial { n, q_grid } => {
                if n < 1 || q_grid < 1 {
                    return bad(format!("binomial needs n >= 1 and q grid >= 1 (n={n}, grid={q_grid})"));
                }
            }
            FamilySpec::Poisson {
                lambda_max,
                lambda_grid,
                ..
            } => {
                if !(lambda_max.is_finite() && lambda_max > 0.0) || lambda_grid < 1 {
                    return bad(format!(
                        "poisson needs lambda_max > 0 and grid >= 1 (lambda_max={lambda_max}, grid={lambda_grid})"
                    ));
                }
            }
            FamilySpec::ChiSquared { x_max, x_grid, k_max } => {
                if !(x_max.is_finite() && x_max > 0.0) || x_grid < 1 || k_max < 1 {
                    return bad(format!(
                        "chi-squared needs x_max > 0, x grid >= 1, k_max >= 1 (x_max={x_max}, grid={x_grid}, k_max={k_max})"
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn rows(&self) -> usize {
        match *self {
            FamilySpec::Binomial { n, .. } => n + 1,
            FamilySpec::Poisson { k_max, .. } => k_max + 1,
            FamilySpec::ChiSquared { x_grid, .. } => x_grid,
        }
    }

    pub fn cols(&self) -> usize {
        match *self {
            FamilySpec::Binomial { q_grid, .. } => q_grid,
            FamilySpec::Poisson { lambda_grid, .. } => lambda_grid,
            FamilySpec::ChiSquared { k_max, .. } => k_max,
        }
    }

    /// Natural row coordinate: `k` (binomial, Poisson) or `x` (chi^2).
    pub fn row_value(&self, row: usize) -> f64 {
        match *self {
            FamilySpec::Binomial { .. } | FamilySpec::Poisson { .. } => row as f64,
            FamilySpec::ChiSquared { x_max, x_grid, .. } => (row as f64 + 0.5) * x_max / x_grid as f64,
        }
    }

    /// Natural column coordinate: `q`, `lambda`, or `k`.
    pub fn col_value(&self, col: usize) -> f64 {
        match *self {
            FamilySpec::Binomial { q_grid, .. } => (col as f64 + 0.5) / q_grid as f64,
            FamilySpec::Poisson {
                lambda_max,
                lambda_grid,
                ..
            } => (col as f64 + 0.5) * lambda_max / lambda_grid as f64,
            FamilySpec::ChiSquared { .. } => col as f64 + 1.0,
        }
    }

    fn check_index(&self, row: usize, col: usize) -> Result<()> {
        let (rows, cols) = (self.rows(), self.cols());
        if row >= rows || col >= cols {
            return Err(Error::IndexOutOfRange { row, col, rows, cols });
        }
        Ok(())
    }

    /// Exact entry, evaluated in log space.
    pub fn entry_exact(&self, row: usize, col: usize) -> Result<f64> {
        self.check_index(row, col)?;
        Ok(self.entry_unchecked(row, col))
    }

    pub(crate) fn entry_unchecked(&self, row: usize, col: usize) -> f64 {
        self.combine(&self.row_terms(row), &self.col_terms(col))
    }

    /// Row-only pieces of the log entry.
    fn row_terms(&self, row: usize) -> [f64; 3] {
        match *self {
            FamilySpec::Binomial { n, .. } => [ln_choose(n, row), row as f64, (n - row) as f64],
            FamilySpec::Poisson { .. } => [row as f64, ln_factorial(row as u64), 0.0],
            FamilySpec::ChiSquared { .. } => {
                let x = self.row_value(row);
                [x, x.ln(), 0.0]
            }
        }
    }

    /// Column-only pieces of the log entry.
    fn col_terms(&self, col: usize) -> [f64; 2] {
        let y = self.col_value(col);
        match *self {
            FamilySpec::Binomial { .. } => [y.ln(), (-y).ln_1p()],
            FamilySpec::Poisson { .. } => [y, y.ln()],
            FamilySpec::ChiSquared { .. } => {
                let half = y / 2.0;
                [half, half * LN_2 + ln_gamma_plus_one(half - 1.0)]
            }
        }
    }

    fn combine(&self, r: &[f64; 3], c: &[f64; 2]) -> f64 {
        let ln = match self {
            FamilySpec::Binomial { .. } => {
                let head = if r[1] == 0.0 { 0.0 } else { r[1] * c[0] };
                let tail = if r[2] == 0.0 { 0.0 } else { r[2] * c[1] };
                r[0] + head + tail
            }
            FamilySpec::Poisson { .. } => {
                let power = if r[0] == 0.0 { 0.0 } else { r[0] * c[1] };
                -c[0] + power - r[1]
            }
            FamilySpec::ChiSquared { .. } => (c[0] - 1.0) * r[1] - r[0] / 2.0 - c[1],
        };
        ln.exp()
    }

    /// Exact entries of a sub-block.
    pub fn exact_block(&self, rows: std::ops::Range<usize>, cols: std::ops::Range<usize>) -> DMatrix<f64> {
        let rt: Vec<[f64; 3]> = rows.clone().map(|i| self.row_terms(i)).collect();
        let ct: Vec<[f64; 2]> = cols.clone().map(|j| self.col_terms(j)).collect();
        DMatrix::from_fn(rt.len(), ct.len(), |a, b| self.combine(&rt[a], &ct[b]))
    }

    pub fn kernel_map(&self) -> KernelMap {
        match *self {
            FamilySpec::Binomial { n, q_grid } => KernelMap {
                kind: DivergenceKind::KL,
                p_of_row: Affine {
                    scale: 1.0 / n as f64,
                    offset: 0.0,
                },
                q_of_col: Affine {
                    scale: 1.0 / q_grid as f64,
                    offset: 0.5 / q_grid as f64,
                },
                n_eff: n as f64,
            },
            FamilySpec::Poisson {
                lambda_max,
                lambda_grid,
                ..
            } => {
                let h = lambda_max / lambda_grid as f64;
                KernelMap {
                    kind: DivergenceKind::E,
                    p_of_row: Affine {
                        scale: 1.0,
                        offset: 0.0,
                    },
                    q_of_col: Affine {
                        scale: h,
                        offset: 0.5 * h,
                    },
                    n_eff: 1.0,
                }
            }
            FamilySpec::ChiSquared { x_max, x_grid, .. } => {
                let h = x_max / x_grid as f64;
                KernelMap {
                    kind: DivergenceKind::EStar,
                    p_of_row: Affine {
                        scale: 0.5 * h,
                        offset: 0.25 * h,
                    },
                    // column j holds k = j + 1, so q = k/2 - 1 = j/2 - 1/2
                    q_of_col: Affine {
                        scale: 0.5,
                        offset: -0.5,
                    },
                    n_eff: 1.0,
                }
            }
        }
    }

    /// Rows where the Stirling form is undefined (stored exactly in the H-matrix).
    pub fn is_singular_row(&self, row: usize) -> bool {
        match *self {
            FamilySpec::Binomial { n, .. } => row == 0 || row == n,
            FamilySpec::Poisson { .. } => row == 0,
            FamilySpec::ChiSquared { .. } => false,
        }
    }

    pub fn is_singular_col(&self, col: usize) -> bool {
        match self {
            FamilySpec::ChiSquared { .. } => col < 2,
            _ => false,
        }
    }

    /// Contiguous range of rows that are not singular.
    pub fn regular_rows(&self) -> std::ops::Range<usize> {
        let rows = self.rows();
        let lo = (0..rows).find(|&i| !self.is_singular_row(i)).unwrap_or(rows);
        let hi = (lo..rows).find(|&i| self.is_singular_row(i)).unwrap_or(rows);
        lo..hi
    }

    pub fn regular_cols(&self) -> std::ops::Range<usize> {
        let cols = self.cols();
        let lo = (0..cols).find(|&j| !self.is_singular_col(j)).unwrap_or(cols);
        let hi = (lo..cols).find(|&j| self.is_singular_col(j)).unwrap_or(cols);
        lo..hi
    }

    /// Stirling prefactor for a regular entry.
    pub fn stirling_prefactor(&self, row: usize, col: usize) -> f64 {
        let map = self.kernel_map();
        match *self {
            FamilySpec::Binomial { n, .. } => {
                let p = map.p_of_row.apply(row);
                1.0 / (2.0 * PI * n as f64 * p * (1.0 - p)).sqrt()
            }
            FamilySpec::Poisson { .. } => 1.0 / (2.0 * PI * row as f64).sqrt(),
            FamilySpec::ChiSquared { .. } => {
                let q = map.q_of_col.apply(col);
                1.0 / (2.0 * (2.0 * PI * q).sqrt())
            }
        }
    }

    /// `prefactor * exp(-n_eff * divergence)`.
    pub fn entry_stirling(&self, row: usize, col: usize) -> Result<f64> {
        self.check_index(row, col)?;
        if self.is_singular_row(row) || self.is_singular_col(col) {
            return Err(Error::StirlingUndefined { row, col });
        }
        let map = self.kernel_map();
        let d = divergence::eval(map.kind, map.p_of_row.apply(row), map.q_of_col.apply(col))?;
        Ok(self.stirling_prefactor(row, col) * (-map.n_eff * d).exp())
    }

    /// Exact row factor: `entry = row_factor * col_factor * exp(-n_eff D)`.
    pub fn row_factor(&self, row: usize) -> f64 {
        match *self {
            FamilySpec::Binomial { n, .. } => {
                // binom(n,k) p^k (1-p)^(n-k) at p = k/n
                let p = row as f64 / n as f64;
                binomial_ln_pmf(n, row, p).exp()
            }
            FamilySpec::Poisson { .. } => ln_stirling_ratio(row as f64).exp(),
            FamilySpec::ChiSquared { .. } => 1.0,
        }
    }

    pub fn col_factor(&self, col: usize) -> f64 {
        match *self {
            FamilySpec::ChiSquared { .. } => {
                let q = self.kernel_map().q_of_col.apply(col);
                0.5 * ln_stirling_ratio(q).exp()
            }
            _ => 1.0,
        }
    }

    /// `exp(-n_eff D(p_i||q_j))` for a regular entry.
    pub fn kernel_entry(&self, row: usize, col: usize) -> f64 {
        let map = self.kernel_map();
        divergence::kernel(map.kind, map.n_eff, map.p_of_row.apply(row), map.q_of_col.apply(col))
    }

    /// Family of comparable size used by scaling benchmarks.
    pub fn with_size(&self, size: usize) -> FamilySpec {
        match *self {
            FamilySpec::Binomial { .. } => FamilySpec::binomial(size),
            FamilySpec::Poisson { .. } => FamilySpec::Poisson {
                k_max: size - 1,
                lambda_max: size as f64,
                lambda_grid: size,
            },
            FamilySpec::ChiSquared { .. } => FamilySpec::ChiSquared {
                x_max: size as f64,
                x_grid: size,
                k_max: size,
            },
        }
    }
}
