//! Constructive separated approximation of `exp(-n E(p||q))` on one block.
//!
//! Steps, for a block below the diagonal with corner `(c, c)`:
//!
//! 1. rescale `p -> p/c`, `q -> q/c` so the block sits in `(1,2) x (0,1)`;
//!    `E` is 1-homogeneous, so the exponent becomes `n' = n c`;
//! 2. set `M = ln(1/eps) / n'` and solve for the thresholds `p_M`, `q_M`;
//!    outside `[1, p_M] x [q_M, 1]` the kernel is at most `eps` and is replaced by 0;
//! 3. inside, `x = n' E` ranges over `[0, L]`, `L = n' E(p_M||q_M)`, and
//!    `exp(-x)` is replaced by its Chebyshev interpolant `h_d`;
//! 4. `h_d(n' E)` is expanded over the separable split
//!    `E(p||q) = E(p||1) + E(1||q) + (p - 1)(-ln q)`, whose three pieces are
//!    all non-negative on the box, so no cancellation enters the expansion;
//! 5. the expansion is recompressed.
//!
//! Blocks above the diagonal use the `(0,1) x (1,2)` thresholds. The expansion
//! spans the monomials `E(p||1)^a ((p-1)(-ln q))^b E(1||q)^c`, `a+b+c <= d`;
//! it is accumulated with the Chebyshev three-term recurrence in factored
//! form, truncating far below `eps` after every step, instead of forming the
//! monomial coefficients, which would cancel catastrophically for large `L`.

use serde::Serialize;

use super::cheb::cheb_exp;
use super::lowrank::{LowRank, Truncation};
use super::{build_product, uniform_grid, SeparatedApprox};
use crate::divergence::{self, DivergenceKind, Regime, ThresholdPair, DEFAULT_TOL};
use crate::error::{Error, Result};
use crate::partition::{Block, Interval};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConstructiveReport {
    pub regime: Regime,
    /// Diagonal corner coordinate `c` used for rescaling.
    pub corner: f64,
    /// Rescaled exponent `n' = n c`.
    pub n_scaled: f64,
    /// Working accuracy `eps' < eps` used for thresholds and interpolation.
    pub working_eps: f64,
    /// `M = ln(1/eps') / n'`.
    pub level_m: f64,
    pub thresholds: ThresholdPair,
    /// `L = n' E(p_M||q_M)`.
    pub interval_length: f64,
    pub degree: usize,
    /// Number of multi-indices `(a,b,c)` with `a+b+c <= d`.
    pub raw_terms: usize,
    pub max_intermediate_rank: usize,
    /// Grid points inside the threshold box (rows, cols).
    pub active: (usize, usize),
    pub rank: usize,
}

/// `(d+1)(d+2)(d+3)/6`, the size of the raw three-term expansion.
pub fn multi_index_count(degree: usize) -> usize {
    (degree + 1) * (degree + 2) * (degree + 3) / 6
}

fn check_grid(grid: &[f64], iv: Interval, name: &str) -> Result<()> {
    let slack = 1e-12 * iv.hi.abs().max(1.0);
    if let Some(x) = grid
        .iter()
        .find(|&&x| !(x >= iv.lo - slack && x <= iv.hi + slack))
    {
        return Err(Error::GridMismatch(format!(
            "{name} grid point {x} outside [{}, {}]",
            iv.lo, iv.hi
        )));
    }
    Ok(())
}

fn check_params(n: f64, eps: f64) -> Result<()> {
    if !(n.is_finite() && n > 0.0) {
        return Err(Error::InvalidArgument(format!("n must be positive, got {n}")));
    }
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::InvalidArgument(format!("eps must lie in (0,1), got {eps}")));
    }
    Ok(())
}

/// Core builder for `exp(-n E(p||q))` on `p_iv x q_iv` (one side of the diagonal).
fn build_e(
    p_iv: Interval,
    q_iv: Interval,
    p_grid: &[f64],
    q_grid: &[f64],
    n: f64,
    eps: f64,
) -> Result<(LowRank, ConstructiveReport)> {
    check_params(n, eps)?;
    check_grid(p_grid, p_iv, "p")?;
    check_grid(q_grid, q_iv, "q")?;

    let (regime, corner) = if p_iv.lo >= q_iv.hi {
        (Regime::Lower, p_iv.lo)
    } else if p_iv.hi <= q_iv.lo {
        (Regime::Upper, q_iv.lo)
    } else {
        return Err(Error::InvalidArgument(format!(
            "block [{}, {}] x [{}, {}] straddles the diagonal",
            p_iv.lo, p_iv.hi, q_iv.lo, q_iv.hi
        )));
    };
    let far_edge = match regime {
        Regime::Lower => p_iv.hi,
        Regime::Upper => q_iv.hi,
    };
    if corner.is_nan() || corner <= 0.0 || far_edge > 2.0 * corner * (1.0 + 1e-12) {
        return Err(Error::InvalidArgument(format!(
            "block does not fit the rescaled configuration (corner {corner}, far edge {far_edge})"
        )));
    }

    // Thresholds, interpolation and intermediate truncations run at a working
    // accuracy well below eps, so that the residual (spectral norm up to
    // sqrt(rows * cols) times the entrywise error) stays under the final cut.
    let work_eps = eps / (10.0 * ((p_grid.len() * q_grid.len()) as f64).sqrt().max(1.0));
    let n_scaled = n * corner;
    let level_m = (1.0 / work_eps).ln() / n_scaled;
    let thresholds = divergence::solve_thresholds(regime, level_m, DEFAULT_TOL)?;
    let interval_length = n_scaled * thresholds.divergence();

    let ps: Vec<f64> = p_grid.iter().map(|p| p / corner).collect();
    let qs: Vec<f64> = q_grid.iter().map(|q| q / corner).collect();
    let rows: Vec<usize> = (0..ps.len())
        .filter(|&i| match regime {
            Regime::Lower => ps[i] <= thresholds.p_m,
            Regime::Upper => ps[i] >= thresholds.p_m,
        })
        .collect();
    let cols: Vec<usize> = (0..qs.len())
        .filter(|&j| match regime {
            Regime::Lower => qs[j] > 0.0 && qs[j].ln() >= thresholds.ln_q_m,
            Regime::Upper => qs[j] <= thresholds.q_m,
        })
        .collect();

    let mut report = ConstructiveReport {
        regime,
        corner,
        n_scaled,
        working_eps: work_eps,
        level_m,
        thresholds,
        interval_length,
        degree: 0,
        raw_terms: 0,
        max_intermediate_rank: 0,
        active: (rows.len(), cols.len()),
        rank: 0,
    };
    if rows.is_empty() || cols.is_empty() {
        return Ok((LowRank::zeros(p_grid.len(), q_grid.len()), report));
    }

    let cheb = cheb_exp(interval_length, work_eps)?;
    report.degree = cheb.degree;
    report.raw_terms = multi_index_count(cheb.degree);

    // t = 2x/L - 1 = scale (a + b + c d) - 1, held as a rank-3 factorization
    let scale = 2.0 * n_scaled / interval_length;
    let (m, k) = (rows.len(), cols.len());
    let mut su = nalgebra::DMatrix::zeros(m, 3);
    for (r, &i) in rows.iter().enumerate() {
        let a = divergence::eval(DivergenceKind::E, ps[i], 1.0)?;
        su[(r, 0)] = scale * a - 1.0;
        su[(r, 1)] = 1.0;
        su[(r, 2)] = scale * (ps[i] - 1.0);
    }
    let mut sv = nalgebra::DMatrix::zeros(k, 3);
    for (r, &j) in cols.iter().enumerate() {
        let b = divergence::eval(DivergenceKind::E, 1.0, qs[j])?;
        sv[(r, 0)] = 1.0;
        sv[(r, 1)] = scale * b;
        sv[(r, 2)] = -qs[j].ln();
    }
    let t = LowRank { u: su, v: sv };

    // Clenshaw: b_j = c_j + 2 t b_{j+1} - b_{j+2}; perturbations grow at most like (d+1)^2
    let degree = cheb.degree;
    let inner = Truncation {
        absolute: work_eps / (10.0 * ((degree + 1) * (degree + 1)) as f64),
        relative: 8.0 * f64::EPSILON,
    };
    let coeffs = &cheb.coefficients;
    let mut b1 = LowRank::zeros(m, k);
    let mut b2 = LowRank::zeros(m, k);
    for &c in coeffs.iter().skip(1).rev() {
        let next = t
            .hadamard(&b1)
            .scale(2.0)
            .add(&LowRank::constant(c, m, k), 1.0)
            .add(&b2, -1.0)
            .recompress(inner);
        report.max_intermediate_rank = report.max_intermediate_rank.max(next.rank());
        b2 = std::mem::replace(&mut b1, next);
    }
    let active = t
        .hadamard(&b1)
        .add(&LowRank::constant(coeffs[0], m, k), 1.0)
        .add(&b2, -1.0)
        .recompress(Truncation::absolute(eps));

    // embed the active box; everything outside stays zero
    let r = active.rank();
    let mut u = nalgebra::DMatrix::zeros(p_grid.len(), r);
    let mut v = nalgebra::DMatrix::zeros(q_grid.len(), r);
    for (src, &dst) in rows.iter().enumerate() {
        u.row_mut(dst).copy_from(&active.u.row(src));
    }
    for (src, &dst) in cols.iter().enumerate() {
        v.row_mut(dst).copy_from(&active.v.row(src));
    }
    report.rank = r;
    Ok((LowRank { u, v }, report))
}

/// Constructive approximation on explicit grids for `E`, `E*` or the reflected `E`.
pub fn build_constructive_on_grid(
    p_interval: Interval,
    q_interval: Interval,
    kind: DivergenceKind,
    n: f64,
    eps: f64,
    p_grid: &[f64],
    q_grid: &[f64],
) -> Result<(SeparatedApprox, ConstructiveReport)> {
    let (factors, report) = match kind {
        DivergenceKind::E => build_e(p_interval, q_interval, p_grid, q_grid, n, eps)?,
        DivergenceKind::EStar => {
            let (swapped, report) = build_e(q_interval, p_interval, q_grid, p_grid, n, eps)?;
            (
                LowRank {
                    u: swapped.v,
                    v: swapped.u,
                },
                report,
            )
        }
        DivergenceKind::EReflected => {
            let flip = |iv: Interval| Interval::new(1.0 - iv.hi, 1.0 - iv.lo);
            let pr: Vec<f64> = p_grid.iter().map(|p| 1.0 - p).collect();
            let qr: Vec<f64> = q_grid.iter().map(|q| 1.0 - q).collect();
            build_e(flip(p_interval), flip(q_interval), &pr, &qr, n, eps)?
        }
        DivergenceKind::KL => {
            return Err(Error::InvalidArgument(
                "KL blocks are built as a product, use build_kl".into(),
            ))
        }
    };
    Ok((
        SeparatedApprox::from_lowrank(p_grid.to_vec(), q_grid.to_vec(), factors, eps),
        report,
    ))
}

/// Constructive approximation on a `grid_size x grid_size` uniform grid over the block.
pub fn build_constructive(
    block: &Block,
    kind: DivergenceKind,
    n: f64,
    eps: f64,
    grid_size: usize,
) -> Result<(SeparatedApprox, ConstructiveReport)> {
    if grid_size < 2 {
        return Err(Error::InvalidArgument(format!("grid size must be >= 2, got {grid_size}")));
    }
    let p_grid = uniform_grid(block.p_interval.lo, block.p_interval.hi, grid_size);
    let q_grid = uniform_grid(block.q_interval.lo, block.q_interval.hi, grid_size);
    build_constructive_on_grid(block.p_interval, block.q_interval, kind, n, eps, &p_grid, &q_grid)
}

/// `exp(-n D(p||q))` as the product of the `E` and reflected-`E` expansions.
/// Also returns the raw product rank before recompression.
pub fn build_kl(
    p_interval: Interval,
    q_interval: Interval,
    n: f64,
    eps: f64,
    p_grid: &[f64],
    q_grid: &[f64],
) -> Result<(SeparatedApprox, usize)> {
    let (e, _) = build_constructive_on_grid(p_interval, q_interval, DivergenceKind::E, n, eps, p_grid, q_grid)?;
    let (er, _) =
        build_constructive_on_grid(p_interval, q_interval, DivergenceKind::EReflected, n, eps, p_grid, q_grid)?;
    build_product(&e, &er, eps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::divergence::kernel;

    fn unit_lower() -> (Interval, Interval) {
        (Interval::new(1.0, 2.0), Interval::new(0.0, 1.0))
    }

    #[test]
    fn unit_configuration_accuracy() {
        let (pi, qi) = unit_lower();
        let p = uniform_grid(1.0, 2.0, 64);
        let q = uniform_grid(0.0, 1.0, 64);
        let (approx, report) =
            build_constructive_on_grid(pi, qi, DivergenceKind::E, 1.0, 1e-6, &p, &q).unwrap();
        let err = approx.max_abs_error(|p, q| kernel(DivergenceKind::E, 1.0, p, q));
        assert!(err <= 1e-5, "err {err}");
        assert!(approx.rank() <= report.raw_terms);
        assert_eq!(report.raw_terms, multi_index_count(report.degree));
    }

    #[test]
    fn huge_n_gives_rank_zero() {
        // exp(-n E) <= eps everywhere on the block except the diagonal corner
        let block = Block::new(1, 1); // [0.5,1] x [0,0.5]
        let p = uniform_grid(0.6, 1.0, 16);
        let q = uniform_grid(0.0, 0.4, 16);
        let (approx, _) = build_constructive_on_grid(
            block.p_interval,
            block.q_interval,
            DivergenceKind::E,
            1e6,
            1e-6,
            &p,
            &q,
        )
        .unwrap();
        assert_eq!(approx.rank(), 0);
        let err = approx.max_abs_error(|p, q| kernel(DivergenceKind::E, 1e6, p, q));
        assert!(err <= 1e-6);
    }

    #[test]
    fn upper_and_dual_and_reflected() {
        let block = Block::new(3, 2); // [0.25,0.375] x [0.375,0.5]
        for kind in [DivergenceKind::E, DivergenceKind::EStar, DivergenceKind::EReflected] {
            for n in [1.0, 32.0, 1024.0] {
                let (approx, _) = build_constructive(&block, kind, n, 1e-8, 40).unwrap();
                let err = approx.max_abs_error(|p, q| kernel(kind, n, p, q));
                assert!(err <= 1e-7, "{kind:?} n={n} err={err}");
            }
        }
    }

    #[test]
    fn rejects_straddling_block() {
        let r = build_constructive_on_grid(
            Interval::new(0.0, 1.0),
            Interval::new(0.5, 1.5),
            DivergenceKind::E,
            1.0,
            1e-6,
            &[0.5],
            &[1.0],
        );
        assert!(matches!(r, Err(Error::InvalidArgument(_))));
        let block = Block::new(2, 1);
        assert!(build_constructive(&block, DivergenceKind::KL, 1.0, 1e-6, 8).is_err());
    }

    #[test]
    fn grid_outside_block_rejected() {
        let (pi, qi) = unit_lower();
        let r = build_constructive_on_grid(pi, qi, DivergenceKind::E, 1.0, 1e-6, &[0.5], &[0.5]);
        assert!(matches!(r, Err(Error::GridMismatch(_))));
    }
}
