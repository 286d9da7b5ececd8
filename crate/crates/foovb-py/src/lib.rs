//! Python bindings for the core optimizer types and operations: the
//! quadratic matrix-equation solvers, noise sampling, and the diagonal and
//! matrix-variate posteriors with their transforms, estimators, and updates.
//!
//! Matrices cross the boundary as lists of rows (`list[list[float]]`).

use nalgebra::{DMatrix, DVector};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use foovb::matequ::{self, SpdMatrix, SquareMatrix};
use foovb::posterior as post;

type Mat = Vec<Vec<f64>>;

fn to_dmatrix(m: &Mat, what: &str) -> PyResult<DMatrix<f64>> {
    let rows = m.len();
    if rows == 0 {
        return Err(PyValueError::new_err(format!("{what}: empty matrix")));
    }
    let cols = m[0].len();
    if m.iter().any(|r| r.len() != cols) {
        return Err(PyValueError::new_err(format!("{what}: ragged rows")));
    }
    Ok(DMatrix::from_fn(rows, cols, |i, j| m[i][j]))
}

fn from_dmatrix(m: &DMatrix<f64>) -> Mat {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

fn to_square(m: &Mat, what: &str) -> PyResult<SquareMatrix> {
    SquareMatrix::new(to_dmatrix(m, what)?).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn to_spd(m: &Mat, what: &str) -> PyResult<SpdMatrix> {
    SpdMatrix::new(to_square(m, what)?).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn value_err<E: std::fmt::Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Symmetric PSD square root `D` with `D D = m`.
#[pyfunction]
fn sym_sqrt(m: Mat) -> PyResult<Mat> {
    let spd = to_spd(&m, "m")?;
    let root = matequ::sym_sqrt(&spd).map_err(value_err)?;
    Ok(from_dmatrix(root.as_matrix()))
}

/// Solves `X Xᵀ + M T Xᵀ − M = 0` for strictly positive definite `M`.
#[pyfunction]
fn solve_quadratic_pd(m: Mat, t: Mat) -> PyResult<Mat> {
    let spd = to_spd(&m, "m")?;
    let t = to_square(&t, "t")?;
    let x = matequ::solve_quadratic_pd(&spd, &t).map_err(value_err)?;
    Ok(from_dmatrix(x.as_matrix()))
}

/// Solves the same equation for PSD (possibly singular) `M` via the
/// generalized-SVD route.
#[pyfunction]
fn solve_quadratic_psd(m: Mat, t: Mat) -> PyResult<Mat> {
    let spd = to_spd(&m, "m")?;
    let t = to_square(&t, "t")?;
    let x = matequ::solve_quadratic_psd(&spd, &t).map_err(value_err)?;
    Ok(from_dmatrix(x.as_matrix()))
}

/// Frobenius norm of `X Xᵀ + M T Xᵀ − M` for a candidate solution.
#[pyfunction]
fn quadratic_residual(x: Mat, m: Mat, t: Mat) -> PyResult<f64> {
    let x = to_square(&x, "x")?;
    let m = to_spd(&m, "m")?;
    let t = to_square(&t, "t")?;
    Ok(matequ::quadratic_residual(&x, &m, &t))
}

/// Left orthogonal factors `(u, z)` of the generalized SVD of `(a, b)`.
#[pyfunction]
fn gsvd_left(a: Mat, b: Mat) -> PyResult<(Mat, Mat)> {
    let a = to_square(&a, "a")?;
    let b = to_square(&b, "b")?;
    let (u, z) = matequ::gsvd_left(&a, &b).map_err(value_err)?;
    Ok((from_dmatrix(u.as_matrix()), from_dmatrix(z.as_matrix())))
}

/// Deterministic standard normal draws, row-major order.
#[pyfunction]
fn sample_noise(rows: usize, cols: usize, seed: u64) -> Mat {
    let mut rng = post::seeded_rng(seed);
    from_dmatrix(&post::sample_noise_mat(rows, cols, &mut rng))
}

/// Mean-field Gaussian posterior: independent (mu_i, sigma_i) per weight.
#[pyclass(name = "DiagonalPosterior", skip_from_py_object)]
#[derive(Clone)]
struct PyDiagonalPosterior {
    inner: post::DiagonalPosterior,
}

#[pymethods]
impl PyDiagonalPosterior {
    #[new]
    fn new(mu: Vec<f64>, sigma: Vec<f64>) -> PyResult<Self> {
        let inner = post::DiagonalPosterior::new(DVector::from_vec(mu), DVector::from_vec(sigma))
            .map_err(value_err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn mu(&self) -> Vec<f64> {
        self.inner.mu().iter().cloned().collect()
    }

    #[getter]
    fn sigma(&self) -> Vec<f64> {
        self.inner.sigma().iter().cloned().collect()
    }

    /// theta_i = mu_i + sigma_i * eps_i
    fn transform(&self, eps: Vec<f64>) -> PyResult<Vec<f64>> {
        let theta =
            post::transform_diagonal(&self.inner, &DVector::from_vec(eps)).map_err(value_err)?;
        Ok(theta.iter().cloned().collect())
    }

    /// Reduces paired noise/gradient samples to the expectation estimates
    /// (e1, e2).
    #[staticmethod]
    fn estimate(eps: Vec<Vec<f64>>, grads: Vec<Vec<f64>>) -> PyResult<(Vec<f64>, Vec<f64>)> {
        let eps: Vec<DVector<f64>> = eps.into_iter().map(DVector::from_vec).collect();
        let grads: Vec<DVector<f64>> = grads.into_iter().map(DVector::from_vec).collect();
        let batch = post::McBatch::new(eps, grads).map_err(value_err)?;
        let est = post::estimate_diagonal(&batch).map_err(value_err)?;
        Ok((
            est.e1.iter().cloned().collect(),
            est.e2.iter().cloned().collect(),
        ))
    }

    /// One fixed-point update; returns the new posterior.
    fn update(&self, e1: Vec<f64>, e2: Vec<f64>) -> PyResult<PyDiagonalPosterior> {
        let est = post::DiagonalEstimates {
            e1: DVector::from_vec(e1),
            e2: DVector::from_vec(e2),
        };
        let next = post::update_diagonal(&self.inner, &est).map_err(value_err)?;
        Ok(Self { inner: next })
    }

    /// KL divergence of this posterior from a prior of the same shape.
    fn kl(&self, prior: &PyDiagonalPosterior) -> PyResult<f64> {
        post::kl_diagonal(&self.inner, &prior.inner).map_err(value_err)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

/// Per-layer Gaussian over a d2 x d1 weight matrix with covariance
/// (A Aᵀ) ⊗ (B Bᵀ).
#[pyclass(name = "MatrixVariatePosterior", skip_from_py_object)]
#[derive(Clone)]
struct PyMatrixVariatePosterior {
    inner: post::MatrixVariatePosterior,
}

#[pymethods]
impl PyMatrixVariatePosterior {
    #[new]
    fn new(mean: Mat, a_factor: Mat, b_factor: Mat) -> PyResult<Self> {
        let inner = post::MatrixVariatePosterior::new(
            to_dmatrix(&mean, "mean")?,
            to_dmatrix(&a_factor, "a_factor")?,
            to_dmatrix(&b_factor, "b_factor")?,
        )
        .map_err(value_err)?;
        Ok(Self { inner })
    }

    /// Seeded initializer matching the trainer's defaults: mean entries
    /// N(0, 2a/(n_in+2)), diagonal A and B factors.
    #[staticmethod]
    fn init(d1: usize, d2: usize, alpha: f64, seed: u64) -> PyResult<Self> {
        let mut rng = post::seeded_rng(seed);
        let inner = post::init_matrix_variate(d1, d2, alpha, &mut rng).map_err(value_err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn mean(&self) -> Mat {
        from_dmatrix(self.inner.mean())
    }

    #[getter]
    fn a_factor(&self) -> Mat {
        from_dmatrix(self.inner.a_factor())
    }

    #[getter]
    fn b_factor(&self) -> Mat {
        from_dmatrix(self.inner.b_factor())
    }

    /// W = mean + B Phi Aᵀ
    fn transform(&self, phi: Mat) -> PyResult<Mat> {
        let w = post::transform_matrix_variate(&self.inner, &to_dmatrix(&phi, "phi")?)
            .map_err(value_err)?;
        Ok(from_dmatrix(&w))
    }

    /// Reduces paired noise/gradient samples (shaped like the weight matrix)
    /// to the expectation estimates (e1, e2, e3).
    fn estimate(&self, eps: Vec<Mat>, grads: Vec<Mat>) -> PyResult<(Mat, Mat, Mat)> {
        let eps: Vec<DMatrix<f64>> = eps
            .iter()
            .map(|m| to_dmatrix(m, "eps"))
            .collect::<PyResult<_>>()?;
        let grads: Vec<DMatrix<f64>> = grads
            .iter()
            .map(|m| to_dmatrix(m, "grads"))
            .collect::<PyResult<_>>()?;
        let batch = post::McBatch::new(eps, grads).map_err(value_err)?;
        let est = post::estimate_matrix_variate(&batch, &self.inner).map_err(value_err)?;
        Ok((
            from_dmatrix(&est.e1),
            from_dmatrix(&est.e2),
            from_dmatrix(&est.e3),
        ))
    }

    /// One fixed-point update; returns the new posterior.
    fn update(&self, e1: Mat, e2: Mat, e3: Mat) -> PyResult<PyMatrixVariatePosterior> {
        let est = post::MatrixVariateEstimates {
            e1: to_dmatrix(&e1, "e1")?,
            e2: to_dmatrix(&e2, "e2")?,
            e3: to_dmatrix(&e3, "e3")?,
        };
        let next = post::update_matrix_variate(&self.inner, &est).map_err(value_err)?;
        Ok(Self { inner: next })
    }

    fn kl(&self, prior: &PyMatrixVariatePosterior) -> PyResult<f64> {
        post::kl_matrix_variate(&self.inner, &prior.inner).map_err(value_err)
    }
}

#[pymodule]
fn foovb_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(sym_sqrt, m)?)?;
    m.add_function(wrap_pyfunction!(solve_quadratic_pd, m)?)?;
    m.add_function(wrap_pyfunction!(solve_quadratic_psd, m)?)?;
    m.add_function(wrap_pyfunction!(quadratic_residual, m)?)?;
    m.add_function(wrap_pyfunction!(gsvd_left, m)?)?;
    m.add_function(wrap_pyfunction!(sample_noise, m)?)?;
    m.add_class::<PyDiagonalPosterior>()?;
    m.add_class::<PyMatrixVariatePosterior>()?;
    Ok(())
}
