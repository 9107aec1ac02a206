use nalgebra::DMatrix;

/// Singular-value cut used when truncating a factorization: keep `sigma_i`
/// strictly above `max(absolute, relative * sigma_1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Truncation {
    pub absolute: f64,
    pub relative: f64,
}

impl Truncation {
    pub fn absolute(tol: f64) -> Self {
        Truncation {
            absolute: tol,
            relative: 0.0,
        }
    }

    pub fn relative(eps: f64) -> Self {
        Truncation {
            absolute: 0.0,
            relative: eps,
        }
    }

    pub fn threshold(&self, sigma_1: f64) -> f64 {
        self.absolute.max(self.relative * sigma_1)
    }
}

/// A matrix held as `u * v^T`, `u` is `rows x r`, `v` is `cols x r`.
#[derive(Debug, Clone, PartialEq)]
pub struct LowRank {
    pub u: DMatrix<f64>,
    pub v: DMatrix<f64>,
}

impl LowRank {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        LowRank {
            u: DMatrix::zeros(rows, 0),
            v: DMatrix::zeros(cols, 0),
        }
    }

    pub fn constant(value: f64, rows: usize, cols: usize) -> Self {
        LowRank {
            u: DMatrix::from_element(rows, 1, value),
            v: DMatrix::from_element(cols, 1, 1.0),
        }
    }

    pub fn rows(&self) -> usize {
        self.u.nrows()
    }

    pub fn cols(&self) -> usize {
        self.v.nrows()
    }

    pub fn rank(&self) -> usize {
        self.u.ncols()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        &self.u * self.v.transpose()
    }

    pub fn scale(mut self, alpha: f64) -> Self {
        self.u *= alpha;
        self
    }

    /// `self + sign * other` by concatenating factors.
    pub fn add(&self, other: &LowRank, sign: f64) -> LowRank {
        let (m, n) = (self.rows(), self.cols());
        let (ra, rb) = (self.rank(), other.rank());
        let mut u = DMatrix::zeros(m, ra + rb);
        let mut v = DMatrix::zeros(n, ra + rb);
        u.columns_mut(0, ra).copy_from(&self.u);
        v.columns_mut(0, ra).copy_from(&self.v);
        u.columns_mut(ra, rb).copy_from(&(&other.u * sign));
        v.columns_mut(ra, rb).copy_from(&other.v);
        LowRank { u, v }
    }

    /// Entrywise product; ranks multiply (row-wise Kronecker of the factors).
    pub fn hadamard(&self, other: &LowRank) -> LowRank {
        LowRank {
            u: khatri_rao_rows(&self.u, &other.u),
            v: khatri_rao_rows(&self.v, &other.v),
        }
    }

    /// Scale row `i` by `row_scale[i]`.
    pub fn scale_rows(&mut self, row_scale: &[f64]) {
        for (i, s) in row_scale.iter().enumerate() {
            self.u.row_mut(i).scale_mut(*s);
        }
    }

    pub fn scale_cols(&mut self, col_scale: &[f64]) {
        for (j, s) in col_scale.iter().enumerate() {
            self.v.row_mut(j).scale_mut(*s);
        }
    }

    /// Orthogonalize both factors and truncate the singular values of the core.
    /// The result has the form `(Q_u W S) (Q_v Z)^T`.
    pub fn recompress(&self, trunc: Truncation) -> LowRank {
        let (m, n, r) = (self.rows(), self.cols(), self.rank());
        if r == 0 || m == 0 || n == 0 {
            return LowRank::zeros(m, n);
        }
        let qr_u = self.u.clone().qr();
        let qr_v = self.v.clone().qr();
        let (qu, ru) = (qr_u.q(), qr_u.r());
        let (qv, rv) = (qr_v.q(), qr_v.r());
        let core = &ru * rv.transpose();
        let svd = core.svd(true, true);
        let sigma = &svd.singular_values;
        let sigma_1 = sigma.iter().cloned().fold(0.0, f64::max);
        let cut = trunc.threshold(sigma_1);
        let keep = sigma.iter().take_while(|&&s| s > cut).count();
        if keep == 0 {
            return LowRank::zeros(m, n);
        }
        let w = svd.u.as_ref().expect("u requested");
        let z_t = svd.v_t.as_ref().expect("v_t requested");
        let mut left = w.columns(0, keep).into_owned();
        for (c, s) in sigma.iter().take(keep).enumerate() {
            left.column_mut(c).scale_mut(*s);
        }
        LowRank {
            u: &qu * left,
            v: &qv * z_t.rows(0, keep).transpose(),
        }
    }
}

fn khatri_rao_rows(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (m, ra, rb) = (a.nrows(), a.ncols(), b.ncols());
    let mut out = DMatrix::zeros(m, ra * rb);
    for s in 0..ra {
        for t in 0..rb {
            let col = s * rb + t;
            for i in 0..m {
                out[(i, col)] = a[(i, s)] * b[(i, t)];
            }
        }
    }
    out
}

/// Sorted (descending) singular values of a dense matrix.
pub fn singular_values(matrix: &DMatrix<f64>) -> Vec<f64> {
    if matrix.is_empty() {
        return Vec::new();
    }
    let mut sv: Vec<f64> = matrix.clone().svd(false, false).singular_values.iter().cloned().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

/// Best rank-`k` approximation of a dense matrix via SVD with the given cut.
pub fn truncated_svd(matrix: &DMatrix<f64>, trunc: Truncation) -> LowRank {
    let (m, n) = matrix.shape();
    if m == 0 || n == 0 {
        return LowRank::zeros(m, n);
    }
    let svd = matrix.clone().svd(true, true);
    let sigma = &svd.singular_values;
    let sigma_1 = sigma.iter().cloned().fold(0.0, f64::max);
    let cut = trunc.threshold(sigma_1);
    let keep = sigma.iter().take_while(|&&s| s > cut).count();
    if keep == 0 {
        return LowRank::zeros(m, n);
    }
    let u_full = svd.u.as_ref().expect("u requested");
    let v_t = svd.v_t.as_ref().expect("v_t requested");
    let mut u = u_full.columns(0, keep).into_owned();
    for (c, s) in sigma.iter().take(keep).enumerate() {
        u.column_mut(c).scale_mut(*s);
    }
    LowRank {
        u,
        v: v_t.rows(0, keep).transpose(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(rows: usize, cols: usize) -> DMatrix<f64> {
        DMatrix::from_fn(rows, cols, |i, j| {
            let x = i as f64 / rows as f64;
            let y = 1.0 + j as f64 / cols as f64;
            1.0 / (x + y)
        })
    }

    #[test]
    fn hadamard_matches_dense() {
        let a = truncated_svd(&sample(12, 9), Truncation::absolute(1e-14));
        let b = LowRank::constant(2.0, 12, 9).add(&a, -1.0);
        let prod = a.hadamard(&b).to_dense();
        let expected = a.to_dense().component_mul(&b.to_dense());
        assert!((prod - expected).amax() < 1e-13);
    }

    #[test]
    fn recompress_preserves_matrix() {
        let a = truncated_svd(&sample(20, 15), Truncation::absolute(1e-15));
        // duplicate the factors; the sum has the same range
        let doubled = a.add(&a, 1.0);
        let r = doubled.recompress(Truncation::absolute(1e-12));
        assert!(r.rank() <= a.rank());
        assert!((r.to_dense() - a.to_dense() * 2.0).amax() < 1e-11);
    }

    #[test]
    fn recompress_zero_and_empty() {
        let z = LowRank::zeros(5, 4).recompress(Truncation::relative(1e-6));
        assert_eq!(z.rank(), 0);
        let c = LowRank::constant(0.0, 5, 4).recompress(Truncation::relative(1e-6));
        assert_eq!(c.rank(), 0);
    }

    #[test]
    fn singular_values_sorted() {
        let sv = singular_values(&sample(10, 10));
        assert!(sv.windows(2).all(|w| w[0] >= w[1]));
    }
}
