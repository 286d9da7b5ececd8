//! Dense linear-algebra kernels for the posterior covariance updates: the
//! symmetric PSD square root, a deterministic SVD contract, and solvers for
//! the quadratic matrix equation
//!
//! ```text
//! X Xᵀ + M T Xᵀ − M = 0
//! ```
//!
//! with `M` symmetric positive (semi-)definite. The strictly-PD route factors
//! `B = M + ¼ M T Tᵀ M`, takes `D = B^{1/2}`, builds an orthogonal `Q` from the
//! SVD of `D⁻¹ M T`, and returns `X = D Q − ½ M T`. When `B` is singular or
//! badly conditioned, a generalized-SVD route produces `Q` from the left
//! factors of the pair `(Dᵀ, Tᵀ M)` instead, which needs no inversion.
//!
//! All arithmetic is in f64; the residual tolerances asserted by the test
//! suites are unreachable in single precision.

mod decomp;

pub use decomp::{gsvd, relative_asymmetry, sym_eigen, symmetrize, Gsvd, SymEigen};

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Relative Frobenius tolerance for accepting a matrix as symmetric.
pub const SYM_TOL: f64 = 1e-10;
/// Eigenvalues below `-PSD_TOL * lambda_max` make a matrix indefinite.
pub const PSD_TOL: f64 = 1e-10;
/// Relative eigenvalue floor below which the PD route refuses to invert.
pub const PD_FLOOR: f64 = 1e-12;
/// Condition-number threshold routing from the PD solver to the PSD solver.
pub const DEFAULT_COND_THRESHOLD: f64 = 1e12;

#[derive(Debug, Error)]
pub enum MatequError {
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("non-finite entry at ({row},{col})")]
    NonFinite { row: usize, col: usize },
    #[error("matrix is not symmetric (relative asymmetry {asymmetry:.3e})")]
    NonSymmetric { asymmetry: f64 },
    #[error("matrix is indefinite (eigenvalue {eigenvalue:.3e}, floor {floor:.3e})")]
    IndefiniteMatrix { eigenvalue: f64, floor: f64 },
    #[error("ill-conditioned (condition estimate {cond:.3e} exceeds {threshold:.3e})")]
    IllConditioned { cond: f64, threshold: f64 },
    #[error("generalized SVD failed: {0}")]
    GsvdFailure(String),
    #[error("decomposition iteration did not converge")]
    ConvergenceFailure,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

pub type Result<T> = std::result::Result<T, MatequError>;

/// Square matrix of finite f64 entries.
#[derive(Debug, Clone, PartialEq)]
pub struct SquareMatrix {
    data: DMatrix<f64>,
}

impl SquareMatrix {
    pub fn new(data: DMatrix<f64>) -> Result<Self> {
        if data.nrows() != data.ncols() {
            return Err(MatequError::NotSquare {
                rows: data.nrows(),
                cols: data.ncols(),
            });
        }
        check_finite(&data)?;
        Ok(Self { data })
    }

    /// Builds from row-major entries.
    pub fn from_rows(dim: usize, entries: &[f64]) -> Result<Self> {
        if entries.len() != dim * dim {
            return Err(MatequError::DimensionMismatch(format!(
                "expected {} entries, got {}",
                dim * dim,
                entries.len()
            )));
        }
        Self::new(DMatrix::from_row_slice(dim, dim, entries))
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            data: DMatrix::identity(dim, dim),
        }
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            data: DMatrix::zeros(dim, dim),
        }
    }

    pub fn from_diagonal(diag: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(&DVector::from_row_slice(diag)))
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.data
    }
}

/// Symmetric positive semidefinite matrix (positive definiteness, where a
/// solver requires it, is established by that solver's own conditioning check).
#[derive(Debug, Clone, PartialEq)]
pub struct SpdMatrix {
    mat: SquareMatrix,
}

impl SpdMatrix {
    /// Validates symmetry (within [`SYM_TOL`]) and eigenvalues above
    /// `-PSD_TOL * lambda_max`.
    pub fn new(mat: SquareMatrix) -> Result<Self> {
        let asym = relative_asymmetry(mat.as_matrix());
        if asym > SYM_TOL {
            return Err(MatequError::NonSymmetric { asymmetry: asym });
        }
        let eig = sym_eigen(mat.as_matrix())?;
        let lmax = eig.values[0].max(0.0);
        let floor = -PSD_TOL * lmax;
        let lmin = eig.values[eig.values.len() - 1];
        if lmin < floor {
            return Err(MatequError::IndefiniteMatrix {
                eigenvalue: lmin,
                floor,
            });
        }
        Ok(Self {
            mat: SquareMatrix {
                data: symmetrize(mat.as_matrix()),
            },
        })
    }

    /// Builds `a aᵀ`, which is PSD by construction; only finiteness is checked.
    pub fn from_gram(a: &DMatrix<f64>) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(MatequError::NotSquare {
                rows: a.nrows(),
                cols: a.ncols(),
            });
        }
        let g = symmetrize(&(a * a.transpose()));
        check_finite(&g)?;
        Ok(Self {
            mat: SquareMatrix { data: g },
        })
    }

    /// Wraps a matrix the caller guarantees to be symmetric PSD.
    pub(crate) fn from_symmetric_unchecked(data: DMatrix<f64>) -> Self {
        Self {
            mat: SquareMatrix { data },
        }
    }

    pub fn dim(&self) -> usize {
        self.mat.dim()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        self.mat.as_matrix()
    }

    pub fn as_square(&self) -> &SquareMatrix {
        &self.mat
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.mat.into_inner()
    }
}

fn check_finite(data: &DMatrix<f64>) -> Result<()> {
    for j in 0..data.ncols() {
        for i in 0..data.nrows() {
            if !data[(i, j)].is_finite() {
                return Err(MatequError::NonFinite { row: i, col: j });
            }
        }
    }
    Ok(())
}

/// Symmetric PSD square root: returns symmetric `D` with `D D = m`.
///
/// Rounding-level negative eigenvalues are clamped to zero before rooting;
/// eigenvalues below `-PSD_TOL * lambda_max` are rejected as indefinite.
pub fn sym_sqrt(m: &SpdMatrix) -> Result<SpdMatrix> {
    let eig = sym_eigen(m.as_matrix())?;
    let root = sqrt_from_eigen(&eig)?;
    Ok(SpdMatrix::from_symmetric_unchecked(
        root.apply_spectral(|x| x),
    ))
}

/// Eigendecomposition of the square root, reusing an existing factorization.
fn sqrt_from_eigen(eig: &SymEigen) -> Result<SymEigen> {
    let lmax = eig.values[0].max(0.0);
    let floor = -PSD_TOL * lmax;
    let mut values = eig.values.clone();
    for v in values.iter_mut() {
        if *v < floor {
            return Err(MatequError::IndefiniteMatrix {
                eigenvalue: *v,
                floor,
            });
        }
        *v = v.max(0.0).sqrt();
    }
    Ok(SymEigen {
        values,
        vectors: eig.vectors.clone(),
    })
}

/// Deterministic SVD: `a = left * diag(singvals) * rightᵀ`, singular values
/// sorted descending, sign fixed by making the entry of largest magnitude in
/// each left singular vector positive. A zero input yields `(I, 0, I)`.
pub fn svd_thin(a: &SquareMatrix) -> Result<(SquareMatrix, DVector<f64>, SquareMatrix)> {
    let (u, s, v) = decomp::svd_fixed(a.as_matrix())?;
    Ok((SquareMatrix { data: u }, s, SquareMatrix { data: v }))
}

/// Left orthogonal factors `(u, z)` of the generalized SVD of `(a, b)`.
pub fn gsvd_left(a: &SquareMatrix, b: &SquareMatrix) -> Result<(SquareMatrix, SquareMatrix)> {
    let g = gsvd(a.as_matrix(), b.as_matrix())?;
    Ok((SquareMatrix { data: g.u }, SquareMatrix { data: g.z }))
}

/// Solves `X Xᵀ + M T Xᵀ − M = 0` for strictly positive definite `M`.
///
/// Returns [`MatequError::IllConditioned`] when the Gram factor
/// `B = M + ¼ M T Tᵀ M` has a condition estimate above
/// [`DEFAULT_COND_THRESHOLD`]; callers should then route to
/// [`solve_quadratic_psd`], which handles the singular case.
pub fn solve_quadratic_pd(m: &SpdMatrix, t: &SquareMatrix) -> Result<SquareMatrix> {
    solve_quadratic_pd_with(m, t, DEFAULT_COND_THRESHOLD)
}

/// [`solve_quadratic_pd`] with an explicit condition-number threshold.
pub fn solve_quadratic_pd_with(
    m: &SpdMatrix,
    t: &SquareMatrix,
    cond_threshold: f64,
) -> Result<SquareMatrix> {
    let n = m.dim();
    if t.dim() != n {
        return Err(MatequError::DimensionMismatch(format!(
            "m is {n}x{n} but t is {t}x{t}",
            t = t.dim()
        )));
    }
    let mt = m.as_matrix() * t.as_matrix();
    let b = gram_factor(m.as_matrix(), &mt);
    let eig = sym_eigen(&b)?;
    let lmax = eig.values[0];
    let lmin = eig.values[n - 1];
    if !(lmax > 0.0) || lmin <= PD_FLOOR * lmax {
        let cond = if lmin > 0.0 {
            lmax / lmin
        } else {
            f64::INFINITY
        };
        return Err(MatequError::IllConditioned {
            cond,
            threshold: cond_threshold,
        });
    }
    let cond = lmax / lmin;
    if cond > cond_threshold {
        return Err(MatequError::IllConditioned {
            cond,
            threshold: cond_threshold,
        });
    }
    let droot = sqrt_from_eigen(&eig)?;
    let d = droot.apply_spectral(|x| x);
    let q = if is_effectively_symmetric(&(&mt * &d)) {
        // When M T commutes symmetrically with D the identity rotation already
        // solves the equation, and it selects the branch of X that is
        // continuously connected to X = M^{1/2} at T = 0 (entrywise positive
        // roots in the diagonal case).
        DMatrix::identity(n, n)
    } else {
        let d_inv = droot.apply_spectral(|x| 1.0 / x);
        let y = &d_inv * &mt;
        let (s, _, w) = decomp::svd_fixed(&y)?;
        s * w.transpose()
    };
    let x = &d * q - 0.5 * &mt;
    Ok(SquareMatrix { data: x })
}

/// Solves `X Xᵀ + M T Xᵀ − M = 0` for PSD (possibly singular) `M` via the
/// generalized-SVD route, which never inverts `D`.
pub fn solve_quadratic_psd(m: &SpdMatrix, t: &SquareMatrix) -> Result<SquareMatrix> {
    let n = m.dim();
    if t.dim() != n {
        return Err(MatequError::DimensionMismatch(format!(
            "m is {n}x{n} but t is {t}x{t}",
            t = t.dim()
        )));
    }
    if m.as_matrix().iter().all(|&x| x == 0.0) {
        return Ok(SquareMatrix::zeros(n));
    }
    let mt = m.as_matrix() * t.as_matrix();
    let b = gram_factor(m.as_matrix(), &mt);
    let eig = sym_eigen(&b)?;
    let droot = sqrt_from_eigen(&eig)?;
    let d = droot.apply_spectral(|x| x);
    let q = if is_effectively_symmetric(&(&mt * &d)) {
        DMatrix::identity(n, n)
    } else {
        let tm = t.as_matrix().transpose() * m.as_matrix();
        let g = gsvd(&d, &tm).map_err(|e| match e {
            MatequError::GsvdFailure(msg) => MatequError::GsvdFailure(msg),
            other => MatequError::GsvdFailure(other.to_string()),
        })?;
        &g.u * g.z.transpose()
    };
    let x = &d * q - 0.5 * &mt;
    Ok(SquareMatrix { data: x })
}

/// `B = M + ¼ (M T)(M T)ᵀ`, symmetrized.
fn gram_factor(m: &DMatrix<f64>, mt: &DMatrix<f64>) -> DMatrix<f64> {
    symmetrize(&(m + 0.25 * (mt * mt.transpose())))
}

fn is_effectively_symmetric(m: &DMatrix<f64>) -> bool {
    relative_asymmetry(m) <= 1e-12
}

/// Frobenius norm of `X Xᵀ + M T Xᵀ − M`, the defect of a candidate solution.
pub fn quadratic_residual(x: &SquareMatrix, m: &SpdMatrix, t: &SquareMatrix) -> f64 {
    let xm = x.as_matrix();
    let res = xm * xm.transpose() + m.as_matrix() * t.as_matrix() * xm.transpose() - m.as_matrix();
    res.norm()
}
