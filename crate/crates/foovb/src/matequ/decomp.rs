//! Deterministic decomposition backends: symmetric eigendecomposition, SVD with
//! a fixed sign/order convention, and a generalized SVD for matrix pairs.
//!
//! All routines are pure functions of their input bytes. Ambiguities left open
//! by the underlying factorizations (ordering, signs, degenerate inputs) are
//! resolved here once so every caller sees reproducible output.

use nalgebra::{DMatrix, DVector};

use super::{MatequError, Result};

const BACKEND_MAX_ITER: usize = 100_000;

/// Eigendecomposition of a symmetric matrix, eigenvalues sorted descending.
#[derive(Debug, Clone)]
pub struct SymEigen {
    /// Eigenvalues in descending order.
    pub values: DVector<f64>,
    /// Orthonormal eigenvectors as columns, matching `values` order.
    pub vectors: DMatrix<f64>,
}

impl SymEigen {
    /// Rebuilds `vectors * f(values) * vectorsᵀ` for an elementwise spectral map.
    pub fn apply_spectral<F: Fn(f64) -> f64>(&self, f: F) -> DMatrix<f64> {
        let n = self.values.len();
        let scaled = DMatrix::from_fn(n, n, |i, j| self.vectors[(i, j)] * f(self.values[j]));
        let m = scaled * self.vectors.transpose();
        symmetrize(&m)
    }
}

/// Averages a matrix with its transpose, removing rounding-level asymmetry.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    DMatrix::from_fn(n, n, |i, j| 0.5 * (m[(i, j)] + m[(j, i)]))
}

/// Largest absolute entrywise asymmetry |m_ij - m_ji| relative to max |m_ij|.
pub fn relative_asymmetry(m: &DMatrix<f64>) -> f64 {
    let scale = m.amax();
    if scale == 0.0 {
        return 0.0;
    }
    let mut worst = 0.0_f64;
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst / scale
}

/// Symmetric eigendecomposition with descending eigenvalues and sign-fixed
/// eigenvectors (the entry of largest magnitude in each vector is positive).
pub fn sym_eigen(m: &DMatrix<f64>) -> Result<SymEigen> {
    let sym = symmetrize(m);
    let eig = sym
        .try_symmetric_eigen(f64::EPSILON, BACKEND_MAX_ITER)
        .ok_or(MatequError::ConvergenceFailure)?;
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap()
            .then(a.cmp(&b))
    });
    let mut values = DVector::zeros(n);
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        values[dst] = eig.eigenvalues[src];
        let mut col = eig.eigenvectors.column(src).clone_owned();
        if dominant_entry(col.as_slice()) < 0.0 {
            col.neg_mut();
        }
        vectors.set_column(dst, &col);
    }
    Ok(SymEigen { values, vectors })
}

/// SVD `a = u * diag(singvals) * vᵀ` with singular values sorted descending and
/// the entry of largest magnitude in each column of `u` made positive.
///
/// A zero input maps to `(I, 0, I)` so downstream orthogonal factors stay
/// well defined.
pub fn svd_fixed(a: &DMatrix<f64>) -> Result<(DMatrix<f64>, DVector<f64>, DMatrix<f64>)> {
    let (rows, cols) = a.shape();
    let k = rows.min(cols);
    if a.iter().all(|&x| x == 0.0) {
        return Ok((
            DMatrix::identity(rows, k),
            DVector::zeros(k),
            DMatrix::identity(cols, k),
        ));
    }
    let svd = a
        .clone()
        .try_svd_unordered(true, true, f64::EPSILON, BACKEND_MAX_ITER)
        .ok_or(MatequError::ConvergenceFailure)?;
    let u_raw = svd.u.expect("u requested");
    let vt_raw = svd.v_t.expect("v_t requested");
    let sig = svd.singular_values;

    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&i, &j| sig[j].partial_cmp(&sig[i]).unwrap().then(i.cmp(&j)));

    let mut u = DMatrix::zeros(rows, k);
    let mut v = DMatrix::zeros(cols, k);
    let mut singvals = DVector::zeros(k);
    for (dst, &src) in order.iter().enumerate() {
        singvals[dst] = sig[src].max(0.0);
        let mut ucol = u_raw.column(src).clone_owned();
        let mut vcol = vt_raw.row(src).transpose();
        if dominant_entry(ucol.as_slice()) < 0.0 {
            ucol.neg_mut();
            vcol.neg_mut();
        }
        u.set_column(dst, &ucol);
        v.set_column(dst, &vcol);
    }
    Ok((u, singvals, v))
}

/// First entry of largest magnitude (ties resolved by lowest index).
fn dominant_entry(xs: &[f64]) -> f64 {
    let mut best = 0.0_f64;
    for &x in xs {
        if x.abs() > best.abs() {
            best = x;
        }
    }
    best
}

/// Generalized SVD of a square pair `(a, b)` sharing a right factor:
/// `a = u * diag(lambda1) * w_t` and `b = z * diag(lambda2) * w_t`
/// with `u`, `z` orthogonal.
#[derive(Debug, Clone)]
pub struct Gsvd {
    pub u: DMatrix<f64>,
    pub z: DMatrix<f64>,
    pub lambda1: DVector<f64>,
    pub lambda2: DVector<f64>,
    /// Common right factor (not orthogonal in general).
    pub w_t: DMatrix<f64>,
}

/// Computes the generalized SVD of a square pair by QR-factoring the vertical
/// stack `[a; b]` and splitting the orthonormal factor: an SVD of the top block
/// yields `u`, and the bottom block is carried to `z` by the same right factor.
pub fn gsvd(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<Gsvd> {
    let n = a.nrows();
    if a.ncols() != n || b.nrows() != n || b.ncols() != n {
        return Err(MatequError::DimensionMismatch(format!(
            "gsvd expects equal square matrices, got {}x{} and {}x{}",
            a.nrows(),
            a.ncols(),
            b.nrows(),
            b.ncols()
        )));
    }
    let mut stack = DMatrix::zeros(2 * n, n);
    stack.view_mut((0, 0), (n, n)).copy_from(a);
    stack.view_mut((n, 0), (n, n)).copy_from(b);
    let qr = stack.qr();
    let r = qr.r();
    let q_thin = qr.q();
    let q1 = q_thin.view((0, 0), (n, n)).clone_owned();
    let q2 = q_thin.view((n, 0), (n, n)).clone_owned();

    // Top block: q1 = u * diag(lambda1) * v1ᵀ. The stacked blocks satisfy
    // q1ᵀq1 + q2ᵀq2 = I, so the columns of q2 * v1 are mutually orthogonal
    // with norms sqrt(1 - lambda1_i²); orthonormalizing them column by column
    // (no mixing) yields z together with the diagonal lambda2.
    let (u, lambda1, v1) = svd_fixed(&q1)?;
    let g = &q2 * &v1;
    let (z, lambda2) = orthonormalize_columns(&g);
    let w_t = v1.transpose() * r;
    Ok(Gsvd {
        u,
        z,
        lambda1,
        lambda2,
        w_t,
    })
}

/// Orthonormalizes the columns of `g` without mixing them: column i of the
/// result is the normalized residual of column i of `g` against the columns
/// already produced, so `g ≈ result * diag(coeffs)`.
///
/// Columns are processed in descending-norm order for stability; near-zero
/// residuals are replaced by canonical-basis completion so the output is
/// always orthogonal. Coefficients of completed columns are the (tiny)
/// projections of the original column, keeping the reconstruction tight.
fn orthonormalize_columns(g: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let n = g.nrows();
    debug_assert_eq!(g.ncols(), n);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        let ni = g.column(i).norm();
        let nj = g.column(j).norm();
        nj.partial_cmp(&ni).unwrap().then(i.cmp(&j))
    });

    let mut z = DMatrix::zeros(n, n);
    let mut coeffs = DVector::zeros(n);
    let mut built: Vec<usize> = Vec::with_capacity(n);
    for &idx in &order {
        let mut v = g.column(idx).clone_owned();
        // Two projection passes keep orthogonality at rounding level even for
        // strongly graded column norms.
        for _ in 0..2 {
            for &j in &built {
                let proj = z.column(j).dot(&v);
                v.axpy(-proj, &z.column(j).clone_owned(), 1.0);
            }
        }
        let nrm = v.norm();
        let zcol = if nrm > 1e-12 {
            v / nrm
        } else {
            complete_direction(&z, &built, n)
        };
        coeffs[idx] = zcol.dot(&g.column(idx));
        z.set_column(idx, &zcol);
        built.push(idx);
    }
    (z, coeffs)
}

/// Deterministic completion: first canonical basis vector with a substantial
/// residual against the columns built so far, normalized.
fn complete_direction(z: &DMatrix<f64>, built: &[usize], n: usize) -> DVector<f64> {
    for k in 0..n {
        let mut v = DVector::zeros(n);
        v[k] = 1.0;
        for _ in 0..2 {
            for &j in built {
                let proj = z.column(j).dot(&v);
                v.axpy(-proj, &z.column(j).clone_owned(), 1.0);
            }
        }
        let nrm = v.norm();
        if nrm > 0.5 {
            return v / nrm;
        }
    }
    unreachable!("fewer than n orthonormal columns cannot block every basis vector");
}
