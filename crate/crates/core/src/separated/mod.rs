//! Separated (low-rank) approximations of `exp(-n * divergence)` on a block.
//!
//! Two builders are provided: [`build_constructive`], which follows the
//! threshold/Chebyshev argument (rescale the block, locate the region where the
//! kernel exceeds `eps`, approximate `exp(-x)` by a polynomial and expand it
//! over the separable pieces of the divergence), and [`aca_build`], adaptive
//! cross approximation from matrix entries. [`numerical_rank`] is the SVD
//! oracle both are checked against.

mod aca;
mod cheb;
mod constructive;
mod lowrank;
mod rank;

pub use aca::{aca_build, aca_factors, AcaOutcome, AcaTolerance};
pub use cheb::{cheb_exp, degree_cap, ChebModel};
pub use constructive::{
    build_constructive, build_constructive_on_grid, build_kl, multi_index_count, ConstructiveReport,
};
pub use lowrank::{singular_values, truncated_svd, LowRank, Truncation};
pub use rank::{numerical_rank, rank_from_singular_values, RankConvention};

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Rank-`r` factorization `sum_i alpha_i(p) beta_i(q)` sampled on tensor grids.
#[derive(Debug, Clone, PartialEq)]
pub struct SeparatedApprox {
    pub p_grid: Vec<f64>,
    pub q_grid: Vec<f64>,
    /// `p_grid.len() x rank`
    pub alpha: DMatrix<f64>,
    /// `q_grid.len() x rank`
    pub beta: DMatrix<f64>,
    pub target_eps: f64,
}

impl SeparatedApprox {
    pub fn from_lowrank(p_grid: Vec<f64>, q_grid: Vec<f64>, factors: LowRank, target_eps: f64) -> Self {
        SeparatedApprox {
            p_grid,
            q_grid,
            alpha: factors.u,
            beta: factors.v,
            target_eps,
        }
    }

    pub fn rank(&self) -> usize {
        self.alpha.ncols()
    }

    pub fn factors(&self) -> LowRank {
        LowRank {
            u: self.alpha.clone(),
            v: self.beta.clone(),
        }
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        &self.alpha * self.beta.transpose()
    }

    /// Max-abs deviation from `f(p, q)` over the sample grid.
    pub fn max_abs_error<F: Fn(f64, f64) -> f64>(&self, f: F) -> f64 {
        let approx = self.reconstruct();
        let mut worst: f64 = 0.0;
        for (i, &p) in self.p_grid.iter().enumerate() {
            for (j, &q) in self.q_grid.iter().enumerate() {
                worst = worst.max((approx[(i, j)] - f(p, q)).abs());
            }
        }
        worst
    }
}

/// Entrywise product of two expansions on the same grids.
///
/// Returns the recompressed product and the raw rank `rank(a) * rank(b)`
/// before recompression.
pub fn build_product(a: &SeparatedApprox, b: &SeparatedApprox, eps: f64) -> Result<(SeparatedApprox, usize)> {
    if a.p_grid != b.p_grid {
        return Err(Error::GridMismatch("p grids differ".into()));
    }
    if a.q_grid != b.q_grid {
        return Err(Error::GridMismatch("q grids differ".into()));
    }
    let raw = a.factors().hadamard(&b.factors());
    let raw_rank = raw.rank();
    let product = raw.recompress(Truncation::absolute(eps));
    Ok((
        SeparatedApprox::from_lowrank(a.p_grid.clone(), a.q_grid.clone(), product, eps),
        raw_rank,
    ))
}

/// `n` points evenly spaced over `[lo, hi]` (both ends included).
pub fn uniform_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.5 * (lo + hi)],
        _ => (0..n)
            .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rank_one(p: &[f64], q: &[f64], fp: impl Fn(f64) -> f64, fq: impl Fn(f64) -> f64) -> SeparatedApprox {
        SeparatedApprox {
            p_grid: p.to_vec(),
            q_grid: q.to_vec(),
            alpha: DMatrix::from_fn(p.len(), 1, |i, _| fp(p[i])),
            beta: DMatrix::from_fn(q.len(), 1, |j, _| fq(q[j])),
            target_eps: 1e-12,
        }
    }

    #[test]
    fn product_of_rank_one_is_rank_one() {
        let p = uniform_grid(0.0, 1.0, 9);
        let q = uniform_grid(1.0, 2.0, 7);
        let a = rank_one(&p, &q, |x| x + 1.0, |y| y * y);
        let b = rank_one(&p, &q, |x| (-x).exp(), |y| y.sin());
        let (prod, raw) = build_product(&a, &b, 1e-12).unwrap();
        assert_eq!(raw, 1);
        assert!(prod.rank() <= 1);
        let err = prod.max_abs_error(|x, y| (x + 1.0) * y * y * (-x).exp() * y.sin());
        assert!(err < 1e-13);
    }

    #[test]
    fn product_grid_mismatch() {
        let p = uniform_grid(0.0, 1.0, 4);
        let q = uniform_grid(1.0, 2.0, 4);
        let a = rank_one(&p, &q, |x| x, |y| y);
        let b = rank_one(&q, &q, |x| x, |y| y);
        assert!(matches!(build_product(&a, &b, 1e-6), Err(Error::GridMismatch(_))));
    }
}
