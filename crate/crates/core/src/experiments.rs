//! Rank maps, eps sweeps, ratio scans and matvec benchmarks.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::divergence::{self, Regime, DEFAULT_TOL};
use crate::error::{Error, Result};
use crate::families::FamilySpec;
use crate::hmatrix::{time_matvec, BlockSlot, Builder, HMatrix, Layout};
use crate::separated::{
    aca_factors, rank_from_singular_values, singular_values, AcaTolerance, RankConvention, Truncation,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankRow {
    pub level: i32,
    pub index: u64,
    pub row_lo: usize,
    pub row_hi: usize,
    pub col_lo: usize,
    pub col_hi: usize,
    pub svd_rank: usize,
    pub aca_rank: usize,
}

/// Rank of a block from ACA under the same convention as the SVD oracle.
///
/// The cross iteration runs to `eps / 10` so that the singular values near the
/// cut are resolved before truncating at `eps`.
pub fn aca_rank(spec: &FamilySpec, slot: &BlockSlot, eps: f64, convention: RankConvention) -> Result<usize> {
    let (rows, cols) = (slot.rows.clone(), slot.cols.clone());
    let oracle = |a: usize, b: usize| spec.entry_unchecked(rows.start + a, cols.start + b);
    let (tol, trunc) = match convention {
        RankConvention::RelativeToSigma1 => (AcaTolerance::Relative(0.1 * eps), Truncation::relative(eps)),
        RankConvention::Absolute => (AcaTolerance::Absolute(0.1 * eps), Truncation::absolute(eps)),
    };
    let outcome = aca_factors(oracle, rows.len(), cols.len(), tol)?;
    Ok(outcome.factors.recompress(trunc).rank())
}

fn check_eps(eps: f64) -> Result<()> {
    if eps > 0.0 && eps < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("eps must lie in (0,1), got {eps}")))
    }
}

/// Per-block numerical rank (SVD oracle) and ACA rank of the off-diagonal blocks.
pub fn rank_map(spec: &FamilySpec, eps: f64, convention: RankConvention) -> Result<Vec<RankRow>> {
    check_eps(eps)?;
    let layout = Layout::new(*spec)?;
    layout
        .block_slots()
        .par_iter()
        .map(|slot| {
            let block = spec.exact_block(slot.rows.clone(), slot.cols.clone());
            let sv = singular_values(&block);
            Ok(RankRow {
                level: slot.block.level,
                index: slot.block.index,
                row_lo: slot.rows.start,
                row_hi: slot.rows.end,
                col_lo: slot.cols.start,
                col_hi: slot.cols.end,
                svd_rank: rank_from_singular_values(&sv, eps, convention),
                aca_rank: aca_rank(spec, slot, eps, convention)?,
            })
        })
        .collect()
}

/// Maximum block rank for each eps; singular values are computed once per block.
pub fn eps_sweep(spec: &FamilySpec, eps_list: &[f64], convention: RankConvention) -> Result<Vec<(f64, usize)>> {
    if eps_list.is_empty() {
        return Err(Error::InvalidArgument("eps list is empty".into()));
    }
    for &e in eps_list {
        check_eps(e)?;
    }
    let layout = Layout::new(*spec)?;
    let spectra: Vec<Vec<f64>> = layout
        .block_slots()
        .par_iter()
        .map(|slot| singular_values(&spec.exact_block(slot.rows.clone(), slot.cols.clone())))
        .collect();
    Ok(eps_list
        .iter()
        .map(|&e| {
            let max = spectra
                .iter()
                .map(|sv| rank_from_singular_values(sv, e, convention))
                .max()
                .unwrap_or(0);
            (e, max)
        })
        .collect())
}

/// `n` log-spaced points over `[lo, hi]`.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let (a, b) = (lo.ln(), hi.ln());
            let mut g: Vec<f64> = (0..n)
                .map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
                .collect();
            g[0] = lo;
            g[n - 1] = hi;
            g
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioRow {
    pub regime: Regime,
    pub m: f64,
    /// `None` when the threshold solver failed at this `M`.
    pub p_m: Option<f64>,
    pub q_m: Option<f64>,
    pub ratio: Option<f64>,
    pub error: Option<String>,
}

/// Threshold points and `E(p_M||q_M)/M` for both regimes over a log grid.
pub fn ratio_scan(m_min: f64, m_max: f64, points: usize) -> Result<Vec<RatioRow>> {
    if !(m_min > 0.0 && m_max >= m_min && m_max.is_finite()) || points == 0 {
        return Err(Error::InvalidArgument(format!(
            "need 0 < m_min <= m_max and points >= 1 (got {m_min}, {m_max}, {points})"
        )));
    }
    let grid = log_grid(m_min, m_max, points);
    let mut rows = Vec::with_capacity(2 * points);
    for regime in [Regime::Lower, Regime::Upper] {
        for &m in &grid {
            rows.push(match divergence::solve_thresholds(regime, m, DEFAULT_TOL) {
                Ok(t) => RatioRow {
                    regime,
                    m,
                    p_m: Some(t.p_m),
                    q_m: Some(t.q_m),
                    ratio: Some(t.divergence() / m),
                    error: None,
                },
                Err(e) => RatioRow {
                    regime,
                    m,
                    p_m: None,
                    q_m: None,
                    ratio: None,
                    error: Some(e.to_string()),
                },
            });
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub size: usize,
    pub rows: usize,
    pub cols: usize,
    pub stored_entries: usize,
    pub max_rank: usize,
    pub compress_seconds: f64,
    pub compressed_matvec_seconds: f64,
    pub dense_matvec_seconds: f64,
    pub relative_error: f64,
}

/// Compress the family at each size and time compressed vs dense matvecs on a
/// random vector with entries in `[0, 1)`.
pub fn matvec_bench(
    family: &FamilySpec,
    sizes: &[usize],
    eps: f64,
    builder: Builder,
    seed: u64,
    reps: usize,
) -> Result<Vec<BenchRow>> {
    check_eps(eps)?;
    let mut out = Vec::with_capacity(sizes.len());
    for &size in sizes {
        if size < 4 {
            return Err(Error::InvalidArgument(format!("size must be >= 4, got {size}")));
        }
        let spec = family.with_size(size);
        let start = Instant::now();
        let h = HMatrix::compress(spec, eps, builder)?;
        let compress_seconds = start.elapsed().as_secs_f64();
        let dense = spec.exact_block(0..spec.rows(), 0..spec.cols());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..spec.cols()).map(|_| rng.random::<f64>()).collect();
        let t = time_matvec(&h, &dense, &x, reps)?;
        out.push(BenchRow {
            size,
            rows: spec.rows(),
            cols: spec.cols(),
            stored_entries: h.stored_entries(),
            max_rank: h.max_rank(),
            compress_seconds,
            compressed_matvec_seconds: t.compressed_seconds,
            dense_matvec_seconds: t.dense_seconds,
            relative_error: t.relative_error,
        });
    }
    Ok(out)
}

/// Least-squares line through `(x, y)`; returns `(slope, intercept, r_squared)`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let syy: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let r2 = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    (slope, my - slope * mx, r2)
}
