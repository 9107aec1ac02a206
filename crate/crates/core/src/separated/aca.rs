//! Adaptive cross approximation with partial pivoting.

use nalgebra::DMatrix;

use super::lowrank::{truncated_svd, LowRank, Truncation};
use super::SeparatedApprox;
use crate::error::{Error, Result};

/// Stopping rule for a new cross `u v^T`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AcaTolerance {
    /// Stop when `|u| |v| <= eps * |S_k|_F` (running approximation norm).
    Relative(f64),
    /// Stop when `|u| |v| <= tol`.
    Absolute(f64),
}

impl AcaTolerance {
    fn cutoff(&self, approx_norm: f64) -> f64 {
        match *self {
            AcaTolerance::Relative(eps) => eps * approx_norm,
            AcaTolerance::Absolute(tol) => tol,
        }
    }

    fn truncation(&self) -> Truncation {
        match *self {
            AcaTolerance::Relative(eps) => Truncation::relative(eps),
            AcaTolerance::Absolute(tol) => Truncation::absolute(tol),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AcaOutcome {
    pub factors: LowRank,
    /// Crosses accepted before any recompression.
    pub crosses: usize,
    /// The cross iteration hit `min(rows, cols)` and a dense SVD was used instead.
    pub fell_back: bool,
}

/// Rows probed before accepting convergence: evenly spaced, ends included.
fn reference_rows(rows: usize) -> Vec<usize> {
    let count = rows.min(8);
    if count <= 1 {
        return (0..count).collect();
    }
    let mut out: Vec<usize> = (0..count)
        .map(|t| (t * (rows - 1) + (count - 1) / 2) / (count - 1))
        .collect();
    out.dedup();
    out
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Cross iteration without recompression.
///
/// Candidate convergence (a cross below the cutoff, or an all-zero residual row)
/// is confirmed by probing a few reference rows; a probe that yields a large
/// cross restarts the iteration from there.
pub fn aca_factors<F>(oracle: F, rows: usize, cols: usize, tol: AcaTolerance) -> Result<AcaOutcome>
where
    F: Fn(usize, usize) -> f64,
{
    let max_rank = rows.min(cols);
    let mut us: Vec<Vec<f64>> = Vec::new();
    let mut vs: Vec<Vec<f64>> = Vec::new();
    let mut used_rows = vec![false; rows];
    let mut used_cols = vec![false; cols];
    let mut norm2 = 0.0f64;
    let references = reference_rows(rows);
    let mut next_row = if rows > 0 { Some(0) } else { None };

    while us.len() < max_rank {
        let i = match next_row.take() {
            Some(i) => i,
            None => match references.iter().copied().find(|&i| !used_rows[i]) {
                Some(i) => i,
                None => break,
            },
        };
        used_rows[i] = true;

        let mut row: Vec<f64> = (0..cols).map(|j| oracle(i, j)).collect();
        if row.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite);
        }
        for (u, v) in us.iter().zip(&vs) {
            let ui = u[i];
            if ui != 0.0 {
                row.iter_mut().zip(v).for_each(|(r, vj)| *r -= ui * vj);
            }
        }
        let pivot_col = (0..cols)
            .filter(|&j| !used_cols[j])
            .max_by(|&a, &b| row[a].abs().total_cmp(&row[b].abs()));
        let Some(j) = pivot_col else { break };
        let pivot = row[j];
        if pivot == 0.0 {
            continue;
        }

        let mut col: Vec<f64> = (0..rows).map(|ii| oracle(ii, j)).collect();
        if col.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite);
        }
        for (u, v) in us.iter().zip(&vs) {
            let vj = v[j];
            if vj != 0.0 {
                col.iter_mut().zip(u).for_each(|(c, ui)| *c -= vj * ui);
            }
        }
        let v_new: Vec<f64> = row.iter().map(|r| r / pivot).collect();
        let nu2 = dot(&col, &col);
        let nv2 = dot(&v_new, &v_new);
        let cross = (nu2 * nv2).sqrt();
        if cross <= tol.cutoff(norm2.sqrt()) {
            continue;
        }

        let mixed: f64 = us
            .iter()
            .zip(&vs)
            .map(|(u, v)| dot(u, &col) * dot(v, &v_new))
            .sum();
        norm2 = (norm2 + nu2 * nv2 + 2.0 * mixed).max(0.0);
        used_cols[j] = true;
        next_row = (0..rows)
            .filter(|&ii| !used_rows[ii])
            .max_by(|&a, &b| col[a].abs().total_cmp(&col[b].abs()))
            .filter(|&ii| col[ii] != 0.0);
        us.push(col);
        vs.push(v_new);
    }

    let crosses = us.len();
    if crosses == max_rank && max_rank > 0 {
        // no convergence before full rank: truncate the dense block instead
        let dense = DMatrix::from_fn(rows, cols, oracle);
        return Ok(AcaOutcome {
            factors: truncated_svd(&dense, tol.truncation()),
            crosses,
            fell_back: true,
        });
    }
    let u = DMatrix::from_fn(rows, crosses, |i, t| us[t][i]);
    let v = DMatrix::from_fn(cols, crosses, |j, t| vs[t][j]);
    Ok(AcaOutcome {
        factors: LowRank { u, v },
        crosses,
        fell_back: false,
    })
}

/// ACA at relative accuracy `eps`, recompressed at `eps * sigma_1`.
///
/// The grids of the result are the row and column indices.
pub fn aca_build<F>(oracle: F, rows: usize, cols: usize, eps: f64) -> Result<SeparatedApprox>
where
    F: Fn(usize, usize) -> f64,
{
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::InvalidArgument(format!("eps must be positive, got {eps}")));
    }
    let outcome = aca_factors(oracle, rows, cols, AcaTolerance::Relative(eps))?;
    let factors = outcome.factors.recompress(Truncation::relative(eps));
    Ok(SeparatedApprox::from_lowrank(
        (0..rows).map(|i| i as f64).collect(),
        (0..cols).map(|j| j as f64).collect(),
        factors,
        eps,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_one_stops_after_one_cross() {
        let outcome = aca_factors(
            |i, j| (i as f64 + 1.0) * (2.0 + (j as f64).sin()),
            30,
            20,
            AcaTolerance::Relative(1e-9),
        )
        .unwrap();
        assert_eq!(outcome.crosses, 1);
        assert!(!outcome.fell_back);
    }

    #[test]
    fn zero_block_has_rank_zero() {
        let a = aca_build(|_, _| 0.0, 12, 9, 1e-6).unwrap();
        assert_eq!(a.rank(), 0);
    }

    #[test]
    fn finds_mass_away_from_first_row() {
        // only the last rows are non-zero
        let f = |i: usize, j: usize| if i >= 45 { 1.0 / (1.0 + i as f64 + j as f64) } else { 0.0 };
        let a = aca_build(f, 50, 40, 1e-10).unwrap();
        let dense = DMatrix::from_fn(50, 40, f);
        assert!((a.reconstruct() - dense).amax() < 1e-9);
    }

    #[test]
    fn smooth_kernel_accuracy() {
        let f = |i: usize, j: usize| 1.0 / (1.0 + (i as f64 / 10.0) + 50.0 + j as f64 / 10.0);
        let a = aca_build(f, 80, 60, 1e-9).unwrap();
        let dense = DMatrix::from_fn(80, 60, f);
        let max_entry = dense.amax();
        assert!((a.reconstruct() - dense).amax() <= 10.0 * 1e-9 * max_entry);
        assert!(a.rank() < 10);
    }

    #[test]
    fn full_rank_falls_back() {
        let outcome = aca_factors(
            |i, j| if i == j { 1.0 } else { 0.0 },
            6,
            6,
            AcaTolerance::Relative(1e-9),
        )
        .unwrap();
        assert!(outcome.fell_back);
        assert_eq!(outcome.factors.rank(), 6);
    }

    #[test]
    fn reference_rows_cover_ends() {
        assert_eq!(reference_rows(1), vec![0]);
        let r = reference_rows(100);
        assert_eq!(r.first(), Some(&0));
        assert_eq!(r.last(), Some(&99));
    }
}
