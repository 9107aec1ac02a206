use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::lowrank::singular_values;
use crate::error::{Error, Result};

/// How the numerical-rank threshold is tied to `eps`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum RankConvention {
    /// Count `sigma_i > eps * sigma_1`.
    #[default]
    RelativeToSigma1,
    /// Count `sigma_i > eps`.
    Absolute,
}

/// Count singular values above the convention's threshold. `sv` must be sorted descending.
pub fn rank_from_singular_values(sv: &[f64], eps: f64, convention: RankConvention) -> usize {
    let cut = match convention {
        RankConvention::RelativeToSigma1 => eps * sv.first().copied().unwrap_or(0.0),
        RankConvention::Absolute => eps,
    };
    sv.iter().take_while(|&&s| s > cut).count()
}

/// Numerical rank of a sampled block by full SVD.
pub fn numerical_rank(matrix: &DMatrix<f64>, eps: f64, convention: RankConvention) -> Result<usize> {
    if matrix.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite);
    }
    Ok(rank_from_singular_values(&singular_values(matrix), eps, convention))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_matrix_has_rank_zero() {
        let z = DMatrix::<f64>::zeros(6, 4);
        assert_eq!(numerical_rank(&z, 1e-9, RankConvention::RelativeToSigma1).unwrap(), 0);
        assert_eq!(numerical_rank(&z, 1e-9, RankConvention::Absolute).unwrap(), 0);
    }

    #[test]
    fn rank_one_outer_product() {
        let u = DMatrix::from_fn(7, 1, |i, _| (i as f64 + 1.0).sqrt());
        let v = DMatrix::from_fn(5, 1, |j, _| 1.0 / (j as f64 + 1.0));
        let m = &u * v.transpose();
        let m = &m / m.norm();
        for eps in [0.9, 1e-3, 1e-9] {
            assert_eq!(numerical_rank(&m, eps, RankConvention::RelativeToSigma1).unwrap(), 1);
        }
    }

    #[test]
    fn non_finite_rejected() {
        let mut m = DMatrix::<f64>::zeros(3, 3);
        m[(1, 1)] = f64::NAN;
        assert_eq!(numerical_rank(&m, 1e-6, RankConvention::Absolute), Err(Error::NonFinite));
    }
}
