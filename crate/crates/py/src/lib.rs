//! Python bindings for `distrank-core`.

use std::fs::File;
use std::io::{BufReader, BufWriter};

use distrank_core::divergence::{self as div, DivergenceKind, Regime, DEFAULT_TOL};
use distrank_core::experiments;
use distrank_core::families::FamilySpec;
use distrank_core::hmatrix::{self, Builder};
use distrank_core::partition::{Domain, PartitionScheme, Region};
use distrank_core::separated::{self, RankConvention};
use distrank_core::Error;
use nalgebra::DMatrix;
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::InvalidArgument(_)
        | Error::ExtentNotPowerOfTwo(_)
        | Error::GridMismatch(_)
        | Error::DimensionMismatch { .. }
        | Error::IndexOutOfRange { .. }
        | Error::OutOfDomain { .. }
        | Error::DivergenceUndefined { .. } => PyValueError::new_err(e.to_string()),
        Error::Container(_) => PyIOError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn parse_kind(kind: &str) -> PyResult<DivergenceKind> {
    match kind.to_ascii_lowercase().as_str() {
        "e" => Ok(DivergenceKind::E),
        "estar" | "e*" => Ok(DivergenceKind::EStar),
        "ereflected" | "reflected" => Ok(DivergenceKind::EReflected),
        "kl" => Ok(DivergenceKind::KL),
        _ => Err(PyValueError::new_err(format!("unknown divergence kind {kind:?}"))),
    }
}

fn parse_regime(regime: &str) -> PyResult<Regime> {
    match regime {
        "lower" => Ok(Regime::Lower),
        "upper" => Ok(Regime::Upper),
        _ => Err(PyValueError::new_err(format!("regime must be 'lower' or 'upper', got {regime:?}"))),
    }
}

fn parse_convention(convention: &str) -> PyResult<RankConvention> {
    match convention {
        "relative" => Ok(RankConvention::RelativeToSigma1),
        "absolute" => Ok(RankConvention::Absolute),
        _ => Err(PyValueError::new_err(format!(
            "convention must be 'relative' or 'absolute', got {convention:?}"
        ))),
    }
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn matrix_from(rows: Vec<Vec<f64>>) -> PyResult<DMatrix<f64>> {
    let nc = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != nc) {
        return Err(PyValueError::new_err("rows have different lengths"));
    }
    Ok(DMatrix::from_fn(rows.len(), nc, |i, j| rows[i][j]))
}

/// Evaluate `E`, `E*`, the reflected `E` or the Bernoulli KL divergence.
#[pyfunction]
fn divergence(kind: &str, p: f64, q: f64) -> PyResult<f64> {
    div::eval(parse_kind(kind)?, p, q).map_err(to_py)
}

/// `(p_M, q_M)` for level `m` in the given regime.
#[pyfunction]
#[pyo3(signature = (regime, m, tol = DEFAULT_TOL))]
fn thresholds(regime: &str, m: f64, tol: f64) -> PyResult<(f64, f64)> {
    let t = div::solve_thresholds(parse_regime(regime)?, m, tol).map_err(to_py)?;
    Ok((t.p_m, t.q_m))
}

/// `E(p_M||q_M) / M`.
#[pyfunction]
fn ratio(regime: &str, m: f64) -> PyResult<f64> {
    div::ratio(parse_regime(regime)?, m).map_err(to_py)
}

/// Chebyshev interpolant of `exp(-x)` on `[0, length]`; returns `(degree, coefficients, sup_error)`.
#[pyfunction]
fn cheb_exp(length: f64, eps: f64) -> PyResult<(usize, Vec<f64>, f64)> {
    let m = separated::cheb_exp(length, eps).map_err(to_py)?;
    Ok((m.degree, m.coefficients, m.sup_error))
}

/// SVD rank of a matrix given as a list of rows.
#[pyfunction]
#[pyo3(signature = (matrix, eps, convention = "relative"))]
fn numerical_rank(matrix: Vec<Vec<f64>>, eps: f64, convention: &str) -> PyResult<usize> {
    separated::numerical_rank(&matrix_from(matrix)?, eps, parse_convention(convention)?).map_err(to_py)
}

/// A distribution family sampled on a grid.
#[pyclass(name = "Family", module = "distrank", skip_from_py_object)]
#[derive(Clone, Copy)]
struct PyFamily {
    spec: FamilySpec,
}

#[pymethods]
impl PyFamily {
    #[staticmethod]
    #[pyo3(signature = (n, q_grid = None))]
    fn binomial(n: usize, q_grid: Option<usize>) -> PyResult<Self> {
        let spec = FamilySpec::Binomial {
            n,
            q_grid: q_grid.unwrap_or(n),
        };
        spec.validate().map_err(to_py)?;
        Ok(Self { spec })
    }

    #[staticmethod]
    #[pyo3(signature = (k_max, lambda_max, lambda_grid = None))]
    fn poisson(k_max: usize, lambda_max: f64, lambda_grid: Option<usize>) -> PyResult<Self> {
        let mut spec = FamilySpec::poisson(k_max, lambda_max);
        if let (Some(g), FamilySpec::Poisson { lambda_grid, .. }) = (lambda_grid, &mut spec) {
            *lambda_grid = g;
        }
        spec.validate().map_err(to_py)?;
        Ok(Self { spec })
    }

    #[staticmethod]
    #[pyo3(signature = (x_max, k_max, x_grid = None))]
    fn chi_squared(x_max: f64, k_max: usize, x_grid: Option<usize>) -> PyResult<Self> {
        let mut spec = FamilySpec::chi_squared(x_max, k_max);
        if let (Some(g), FamilySpec::ChiSquared { x_grid, .. }) = (x_grid, &mut spec) {
            *x_grid = g;
        }
        spec.validate().map_err(to_py)?;
        Ok(Self { spec })
    }

    #[getter]
    fn name(&self) -> &'static str {
        self.spec.name()
    }

    #[getter]
    fn shape(&self) -> (usize, usize) {
        (self.spec.rows(), self.spec.cols())
    }

    fn entry_exact(&self, row: usize, col: usize) -> PyResult<f64> {
        self.spec.entry_exact(row, col).map_err(to_py)
    }

    fn entry_stirling(&self, row: usize, col: usize) -> PyResult<f64> {
        self.spec.entry_stirling(row, col).map_err(to_py)
    }

    /// Dense `rows x cols` slice of exact entries.
    fn block(&self, row_lo: usize, row_hi: usize, col_lo: usize, col_hi: usize) -> PyResult<Vec<Vec<f64>>> {
        if row_lo > row_hi || row_hi > self.spec.rows() || col_lo > col_hi || col_hi > self.spec.cols() {
            return Err(PyValueError::new_err("block range out of bounds"));
        }
        Ok(rows_of(&self.spec.exact_block(row_lo..row_hi, col_lo..col_hi)))
    }

    /// Affine maps from indices to divergence coordinates and the effective `n`.
    fn kernel_map<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let k = self.spec.kernel_map();
        let d = PyDict::new(py);
        d.set_item("kind", format!("{:?}", k.kind))?;
        d.set_item("p_of_row", (k.p_of_row.scale, k.p_of_row.offset))?;
        d.set_item("q_of_col", (k.q_of_col.scale, k.q_of_col.offset))?;
        d.set_item("n_eff", k.n_eff)?;
        Ok(d)
    }

    fn __repr__(&self) -> String {
        format!("{:?}", self.spec)
    }
}

/// Per-block SVD and ACA ranks as dicts.
#[pyfunction]
#[pyo3(signature = (family, eps, convention = "relative"))]
fn rank_map<'py>(py: Python<'py>, family: &PyFamily, eps: f64, convention: &str) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let conv = parse_convention(convention)?;
    let rows = py
        .detach(|| experiments::rank_map(&family.spec, eps, conv))
        .map_err(to_py)?;
    rows.iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("level", r.level)?;
            d.set_item("index", r.index)?;
            d.set_item("rows", (r.row_lo, r.row_hi))?;
            d.set_item("cols", (r.col_lo, r.col_hi))?;
            d.set_item("svd_rank", r.svd_rank)?;
            d.set_item("aca_rank", r.aca_rank)?;
            Ok(d)
        })
        .collect()
}

/// `(eps, max block rank)` for each eps.
#[pyfunction]
#[pyo3(signature = (family, eps_list, convention = "relative"))]
fn eps_sweep(py: Python<'_>, family: &PyFamily, eps_list: Vec<f64>, convention: &str) -> PyResult<Vec<(f64, usize)>> {
    let conv = parse_convention(convention)?;
    py.detach(|| experiments::eps_sweep(&family.spec, &eps_list, conv))
        .map_err(to_py)
}

/// Dyadic partition of the unit square or of a power-of-two quarter plane.
#[pyclass(name = "Partition", module = "distrank")]
struct PyPartition {
    scheme: PartitionScheme,
}

#[pymethods]
impl PyPartition {
    /// `extent=None` gives the unit square.
    #[new]
    #[pyo3(signature = (level_max, extent = None))]
    fn new(level_max: i32, extent: Option<f64>) -> PyResult<Self> {
        let domain = match extent {
            None => Domain::UnitSquare { level_max },
            Some(extent) => Domain::QuarterPlane { extent, level_max },
        };
        Ok(Self {
            scheme: PartitionScheme::build(domain).map_err(to_py)?,
        })
    }

    #[getter]
    fn num_blocks(&self) -> usize {
        self.scheme.blocks.len()
    }

    #[getter]
    fn num_dense(&self) -> usize {
        self.scheme.dense_remainder.len()
    }

    /// `("block", level, index)` or `("dense", index, 0)`.
    fn locate(&self, p: f64, q: f64) -> PyResult<(&'static str, i64, u64)> {
        Ok(match self.scheme.locate(p, q).map_err(to_py)? {
            Region::Block(b) => ("block", b.level as i64, b.index),
            Region::Dense(c) => ("dense", c.index as i64, 0),
        })
    }

    /// `(samples, covered fraction, overlaps)`.
    #[pyo3(signature = (samples = 100_000, seed = 0))]
    fn verify_tiling(&self, samples: usize, seed: u64) -> (usize, f64, usize) {
        let r = self.scheme.verify_tiling(samples, seed);
        (r.samples, r.covered, r.overlaps)
    }
}

fn parse_builder(builder: &str) -> PyResult<Builder> {
    match builder {
        "aca" => Ok(Builder::Aca),
        "constructive" => Ok(Builder::Constructive),
        _ => Err(PyValueError::new_err(format!(
            "builder must be 'aca' or 'constructive', got {builder:?}"
        ))),
    }
}

/// Hierarchical low-rank compression of a family matrix.
#[pyclass(name = "HMatrix", module = "distrank")]
struct PyHMatrix {
    inner: hmatrix::HMatrix,
}

#[pymethods]
impl PyHMatrix {
    #[staticmethod]
    #[pyo3(signature = (family, eps, builder = "aca"))]
    fn compress(py: Python<'_>, family: &PyFamily, eps: f64, builder: &str) -> PyResult<Self> {
        let b = parse_builder(builder)?;
        let spec = family.spec;
        let inner = py.detach(|| hmatrix::HMatrix::compress(spec, eps, b)).map_err(to_py)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let f = File::open(path).map_err(|e| PyIOError::new_err(format!("{path}: {e}")))?;
        let inner = hmatrix::read_container(BufReader::new(f)).map_err(to_py)?;
        Ok(Self { inner })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        let f = File::create(path).map_err(|e| PyIOError::new_err(format!("{path}: {e}")))?;
        hmatrix::write_container(&self.inner, BufWriter::new(f)).map_err(to_py)
    }

    #[getter]
    fn shape(&self) -> (usize, usize) {
        (self.inner.rows(), self.inner.cols())
    }

    #[getter]
    fn eps(&self) -> f64 {
        self.inner.eps
    }

    #[getter]
    fn max_rank(&self) -> usize {
        self.inner.max_rank()
    }

    fn matvec(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.matvec(&x).map_err(to_py)
    }

    fn entry(&self, row: usize, col: usize) -> PyResult<f64> {
        self.inner.entry(row, col).map_err(to_py)
    }

    fn to_dense(&self) -> Vec<Vec<f64>> {
        rows_of(&self.inner.to_dense())
    }

    fn storage_report<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let r = self.inner.storage_report();
        let d = PyDict::new(py);
        d.set_item("stored_entries", r.stored_entries)?;
        d.set_item("dense_equivalent", r.dense_equivalent)?;
        d.set_item("ratio", r.ratio)?;
        d.set_item("per_level_ranks", r.per_level_ranks)?;
        Ok(d)
    }

    /// Sampled entrywise error against the exact family; `(samples, max_abs, rms)`.
    #[pyo3(signature = (samples = 10_000, seed = 0))]
    fn verify(&self, samples: usize, seed: u64) -> PyResult<(usize, f64, f64)> {
        let r = self.inner.verify(samples, seed).map_err(to_py)?;
        Ok((r.samples, r.max_abs_error, r.rms_error))
    }

    fn __repr__(&self) -> String {
        format!(
            "HMatrix({}x{}, {}, eps={:e}, max_rank={})",
            self.inner.rows(),
            self.inner.cols(),
            self.inner.spec.name(),
            self.inner.eps,
            self.inner.max_rank()
        )
    }
}

#[pymodule]
fn distrank(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(divergence, m)?)?;
    m.add_function(wrap_pyfunction!(thresholds, m)?)?;
    m.add_function(wrap_pyfunction!(ratio, m)?)?;
    m.add_function(wrap_pyfunction!(cheb_exp, m)?)?;
    m.add_function(wrap_pyfunction!(numerical_rank, m)?)?;
    m.add_function(wrap_pyfunction!(rank_map, m)?)?;
    m.add_function(wrap_pyfunction!(eps_sweep, m)?)?;
    m.add_class::<PyFamily>()?;
    m.add_class::<PyPartition>()?;
    m.add_class::<PyHMatrix>()?;
    Ok(())
}
