//! Gaussian weight posteriors and their fixed-point updates.
//!
//! Three parameterizations are supported:
//! - diagonal: independent per-weight `(mu_i, sigma_i)`;
//! - matrix-variate: a per-layer mean matrix `M` with Kronecker-factored
//!   covariance `(A Aᵀ) ⊗ (B Bᵀ)`, `A` among columns and `B` among rows;
//! - full: a per-layer mean vector with dense covariance factor `A`.
//!
//! Each family has a deterministic reparameterization transform mapping
//! standard normal noise to weights, Monte-Carlo estimators for the
//! expectation terms of the stationarity equations, and an update that reads
//! only prior values and returns the new posterior. The covariance updates
//! solve `X Xᵀ + V Ē₂ Xᵀ − V = 0` through [`crate::matequ`].
//!
//! Vectorization convention: weight matrices are `d2 x d1` (rows = layer
//! outputs) and vectorized column-major, under which
//! `theta = mu + (A ⊗ B) eps` coincides with `W = M + B Phi Aᵀ`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::matequ::{
    solve_quadratic_pd, solve_quadratic_psd, sym_eigen, MatequError, SpdMatrix, SquareMatrix,
};

/// Default cap on the flattened per-layer dimension of a full posterior.
/// Dense covariance memory grows with the fourth power of the layer width,
/// so anything large must opt in explicitly.
pub const DEFAULT_MAX_FULL_DIM: usize = 64;

#[derive(Debug, Error)]
pub enum PosteriorError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("empty Monte-Carlo batch")]
    EmptyBatch,
    #[error("non-finite value produced in {0}")]
    NonFinite(&'static str),
    #[error("sigma must be strictly positive (index {0})")]
    NonPositiveSigma(usize),
    #[error("prior covariance is singular")]
    SingularPrior,
    #[error("full posterior dimension {dim} exceeds max_full_dim {max}")]
    LayerTooWide { dim: usize, max: usize },
    #[error(transparent)]
    Solver(#[from] MatequError),
}

pub type Result<T> = std::result::Result<T, PosteriorError>;

// ---------------------------------------------------------------------------
// Seeding helpers. All randomness in the crate flows through ChaCha8 streams
// derived from a single base seed, so every artifact is reproducible.
// ---------------------------------------------------------------------------

/// Deterministic RNG from a bare seed.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derives an independent stream seed from a base seed and context words
/// (splitmix64 folding).
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    let mut state = base;
    for &p in parts {
        state = state.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(p);
        let mut z = state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        state = z ^ (z >> 31);
    }
    state
}

/// Vector of i.i.d. standard normal draws.
pub fn sample_noise_vec<R: Rng>(len: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(len, |_, _| rng.sample(StandardNormal))
}

/// Matrix of i.i.d. standard normal draws, filled in row-major order:
/// entry (0,0), (0,1), ..., (0,cols-1), (1,0), ...
pub fn sample_noise_mat<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            m[(i, j)] = rng.sample(StandardNormal);
        }
    }
    m
}

// ---------------------------------------------------------------------------
// Reference forms of the vectorization convention, used by oracles and tests.
// ---------------------------------------------------------------------------

/// Kronecker product `a ⊗ b`.
pub fn kronecker(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    let mut out = DMatrix::zeros(ar * br, ac * bc);
    for i in 0..ar {
        for j in 0..ac {
            let block = b * a[(i, j)];
            out.view_mut((i * br, j * bc), (br, bc)).copy_from(&block);
        }
    }
    out
}

/// Column-major vectorization of a matrix.
pub fn vec_col_major(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(m.as_slice())
}

/// Inverse of [`vec_col_major`].
pub fn unvec_col_major(v: &DVector<f64>, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_column_slice(rows, cols, v.as_slice())
}

// ---------------------------------------------------------------------------
// Posterior parameterizations
// ---------------------------------------------------------------------------

/// Mean-field Gaussian: independent `(mu_i, sigma_i)` per weight.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagonalPosterior {
    mu: DVector<f64>,
    sigma: DVector<f64>,
}

impl DiagonalPosterior {
    pub fn new(mu: DVector<f64>, sigma: DVector<f64>) -> Result<Self> {
        if mu.len() != sigma.len() {
            return Err(PosteriorError::ShapeMismatch(format!(
                "mu has {} entries, sigma has {}",
                mu.len(),
                sigma.len()
            )));
        }
        for (i, &s) in sigma.iter().enumerate() {
            if !(s > 0.0) || !s.is_finite() {
                return Err(PosteriorError::NonPositiveSigma(i));
            }
        }
        if mu.iter().any(|x| !x.is_finite()) {
            return Err(PosteriorError::NonFinite("mu"));
        }
        Ok(Self { mu, sigma })
    }

    pub fn len(&self) -> usize {
        self.mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu.len() == 0
    }

    pub fn mu(&self) -> &DVector<f64> {
        &self.mu
    }

    pub fn sigma(&self) -> &DVector<f64> {
        &self.sigma
    }

    /// Clamps every sigma from below. Disabled by default (floor 0); provided
    /// as a defensive knob only, since sigma does not collapse on its own.
    pub fn apply_sigma_floor(&mut self, floor: f64) {
        if floor > 0.0 {
            for s in self.sigma.iter_mut() {
                *s = s.max(floor);
            }
        }
    }
}

/// Per-layer Gaussian over a `d2 x d1` weight matrix with covariance
/// `(A Aᵀ) ⊗ (B Bᵀ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixVariatePosterior {
    mean: DMatrix<f64>,
    a_factor: DMatrix<f64>,
    b_factor: DMatrix<f64>,
}

impl MatrixVariatePosterior {
    pub fn new(mean: DMatrix<f64>, a_factor: DMatrix<f64>, b_factor: DMatrix<f64>) -> Result<Self> {
        let (d2, d1) = mean.shape();
        if a_factor.shape() != (d1, d1) || b_factor.shape() != (d2, d2) {
            return Err(PosteriorError::ShapeMismatch(format!(
                "mean {d2}x{d1} needs A {d1}x{d1} and B {d2}x{d2}, got A {:?} B {:?}",
                a_factor.shape(),
                b_factor.shape()
            )));
        }
        for (name, m) in [
            ("mean", &mean),
            ("a_factor", &a_factor),
            ("b_factor", &b_factor),
        ] {
            if m.iter().any(|x| !x.is_finite()) {
                return Err(PosteriorError::NonFinite(match name {
                    "mean" => "mean",
                    "a_factor" => "a_factor",
                    _ => "b_factor",
                }));
            }
        }
        Ok(Self {
            mean,
            a_factor,
            b_factor,
        })
    }

    /// (d1, d2) = (columns incl. any absorbed bias, rows).
    pub fn dims(&self) -> (usize, usize) {
        let (d2, d1) = self.mean.shape();
        (d1, d2)
    }

    pub fn mean(&self) -> &DMatrix<f64> {
        &self.mean
    }

    pub fn a_factor(&self) -> &DMatrix<f64> {
        &self.a_factor
    }

    pub fn b_factor(&self) -> &DMatrix<f64> {
        &self.b_factor
    }
}

/// Per-layer Gaussian over a flattened weight vector with dense covariance
/// `A Aᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct FullPosterior {
    mu: DVector<f64>,
    a_factor: DMatrix<f64>,
}

impl FullPosterior {
    pub fn new(mu: DVector<f64>, a_factor: DMatrix<f64>, max_full_dim: usize) -> Result<Self> {
        let d = mu.len();
        if d > max_full_dim {
            return Err(PosteriorError::LayerTooWide {
                dim: d,
                max: max_full_dim,
            });
        }
        if a_factor.shape() != (d, d) {
            return Err(PosteriorError::ShapeMismatch(format!(
                "mu has {} entries but A is {:?}",
                d,
                a_factor.shape()
            )));
        }
        if mu.iter().any(|x| !x.is_finite()) || a_factor.iter().any(|x| !x.is_finite()) {
            return Err(PosteriorError::NonFinite("full posterior parameters"));
        }
        Ok(Self { mu, a_factor })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn mu(&self) -> &DVector<f64> {
        &self.mu
    }

    pub fn a_factor(&self) -> &DMatrix<f64> {
        &self.a_factor
    }
}

// ---------------------------------------------------------------------------
// Monte-Carlo batches and expectation estimates
// ---------------------------------------------------------------------------

mod shape {
    use nalgebra::{DMatrix, DVector};

    pub trait ShapeOf {
        fn shape_of(&self) -> (usize, usize);
    }

    impl ShapeOf for DVector<f64> {
        fn shape_of(&self) -> (usize, usize) {
            (self.len(), 1)
        }
    }

    impl ShapeOf for DMatrix<f64> {
        fn shape_of(&self) -> (usize, usize) {
            self.shape()
        }
    }
}

use shape::ShapeOf;

/// K paired noise/gradient samples. `eps[k]` is the noise that produced the
/// weights whose gradient is `grads[k]`.
#[derive(Debug, Clone)]
pub struct McBatch<T> {
    eps: Vec<T>,
    grads: Vec<T>,
}

impl<T: ShapeOf> McBatch<T> {
    pub fn new(eps: Vec<T>, grads: Vec<T>) -> Result<Self> {
        if eps.is_empty() || grads.is_empty() {
            return Err(PosteriorError::EmptyBatch);
        }
        if eps.len() != grads.len() {
            return Err(PosteriorError::ShapeMismatch(format!(
                "{} noise samples vs {} gradients",
                eps.len(),
                grads.len()
            )));
        }
        let shape = eps[0].shape_of();
        for (k, (e, g)) in eps.iter().zip(grads.iter()).enumerate() {
            if e.shape_of() != shape || g.shape_of() != shape {
                return Err(PosteriorError::ShapeMismatch(format!(
                    "sample {k} has shape {:?}/{:?}, expected {:?}",
                    e.shape_of(),
                    g.shape_of(),
                    shape
                )));
            }
        }
        Ok(Self { eps, grads })
    }

    pub fn k(&self) -> usize {
        self.eps.len()
    }

    pub fn eps(&self) -> &[T] {
        &self.eps
    }

    pub fn grads(&self) -> &[T] {
        &self.grads
    }
}

/// Expectation estimates for the diagonal update: per-weight `Ē₁`, `Ē₂`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagonalEstimates {
    pub e1: DVector<f64>,
    pub e2: DVector<f64>,
}

/// Expectation estimates for the full update: `Ē₁` (d) and `Ē₂` (d x d).
#[derive(Debug, Clone, PartialEq)]
pub struct FullEstimates {
    pub e1: DVector<f64>,
    pub e2: DMatrix<f64>,
}

/// Expectation estimates for the matrix-variate update: `Ē₁` (d2 x d1),
/// `Ē₂` (d1 x d1), `Ē₃` (d2 x d2).
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixVariateEstimates {
    pub e1: DMatrix<f64>,
    pub e2: DMatrix<f64>,
    pub e3: DMatrix<f64>,
}

// ---------------------------------------------------------------------------
// Transforms
// ---------------------------------------------------------------------------

/// `theta_i = mu_i + sigma_i * eps_i`.
pub fn transform_diagonal(post: &DiagonalPosterior, eps: &DVector<f64>) -> Result<DVector<f64>> {
    if eps.len() != post.len() {
        return Err(PosteriorError::ShapeMismatch(format!(
            "posterior has {} weights, eps has {}",
            post.len(),
            eps.len()
        )));
    }
    Ok(DVector::from_fn(post.len(), |i, _| {
        post.mu[i] + post.sigma[i] * eps[i]
    }))
}

/// `W = M + B Phi Aᵀ`.
pub fn transform_matrix_variate(
    post: &MatrixVariatePosterior,
    phi: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    if phi.shape() != post.mean.shape() {
        return Err(PosteriorError::ShapeMismatch(format!(
            "phi has shape {:?}, mean has {:?}",
            phi.shape(),
            post.mean.shape()
        )));
    }
    Ok(&post.mean + &post.b_factor * phi * post.a_factor.transpose())
}

/// `theta = mu + A eps`.
pub fn transform_full(post: &FullPosterior, eps: &DVector<f64>) -> Result<DVector<f64>> {
    if eps.len() != post.dim() {
        return Err(PosteriorError::ShapeMismatch(format!(
            "posterior dim {} vs eps {}",
            post.dim(),
            eps.len()
        )));
    }
    Ok(&post.mu + &post.a_factor * eps)
}

// ---------------------------------------------------------------------------
// Estimators (sequential ascending-index reductions, bit-reproducible)
// ---------------------------------------------------------------------------

/// `Ē₁ = mean_k g⁽ᵏ⁾`, `Ē₂_i = mean_k g_i⁽ᵏ⁾ eps_i⁽ᵏ⁾`.
pub fn estimate_diagonal(batch: &McBatch<DVector<f64>>) -> Result<DiagonalEstimates> {
    let k = batch.k();
    let d = batch.eps[0].len();
    let mut e1 = DVector::zeros(d);
    let mut e2 = DVector::zeros(d);
    for i in 0..k {
        e1 += &batch.grads[i];
        e2 += batch.grads[i].component_mul(&batch.eps[i]);
    }
    let inv = 1.0 / k as f64;
    Ok(DiagonalEstimates {
        e1: e1 * inv,
        e2: e2 * inv,
    })
}

/// `Ē₁ = mean_k g⁽ᵏ⁾`, `Ē₂ = mean_k g⁽ᵏ⁾ (eps⁽ᵏ⁾)ᵀ`.
pub fn estimate_full(batch: &McBatch<DVector<f64>>) -> Result<FullEstimates> {
    let k = batch.k();
    let d = batch.eps[0].len();
    let mut e1 = DVector::zeros(d);
    let mut e2 = DMatrix::zeros(d, d);
    for i in 0..k {
        e1 += &batch.grads[i];
        e2 += &batch.grads[i] * batch.eps[i].transpose();
    }
    let inv = 1.0 / k as f64;
    Ok(FullEstimates {
        e1: e1 * inv,
        e2: e2 * inv,
    })
}

/// Matrix-variate estimates from gradient/noise samples reshaped as the
/// weight matrix:
/// `Ē₁ = mean_k Psi⁽ᵏ⁾`,
/// `Ē₂ = mean_k (1/d2) Psi⁽ᵏ⁾ᵀ B Phi⁽ᵏ⁾`,
/// `Ē₃ = mean_k (1/d1) Psi⁽ᵏ⁾ A Phi⁽ᵏ⁾ᵀ`.
///
/// The 1/d2 and 1/d1 scalings absorb the trace factors of the stationarity
/// equations evaluated at the prior.
pub fn estimate_matrix_variate(
    batch: &McBatch<DMatrix<f64>>,
    post: &MatrixVariatePosterior,
) -> Result<MatrixVariateEstimates> {
    let (d1, d2) = post.dims();
    if batch.eps[0].shape() != (d2, d1) {
        return Err(PosteriorError::ShapeMismatch(format!(
            "samples have shape {:?}, posterior mean is {}x{}",
            batch.eps[0].shape(),
            d2,
            d1
        )));
    }
    let k = batch.k();
    let mut e1 = DMatrix::zeros(d2, d1);
    let mut e2 = DMatrix::zeros(d1, d1);
    let mut e3 = DMatrix::zeros(d2, d2);
    for i in 0..k {
        let psi = &batch.grads[i];
        let phi = &batch.eps[i];
        e1 += psi;
        e2 += psi.transpose() * &post.b_factor * phi / d2 as f64;
        e3 += psi * &post.a_factor * phi.transpose() / d1 as f64;
    }
    let inv = 1.0 / k as f64;
    Ok(MatrixVariateEstimates {
        e1: e1 * inv,
        e2: e2 * inv,
        e3: e3 * inv,
    })
}

// ---------------------------------------------------------------------------
// Updates
// ---------------------------------------------------------------------------

/// One fixed-point step of the diagonal posterior:
/// `mu_i ← mu_i − sigma_i² Ē₁_i`,
/// `sigma_i ← sigma_i sqrt(1 + (sigma_i Ē₂_i / 2)²) − sigma_i² Ē₂_i / 2`.
///
/// The sigma update is evaluated in a cancellation-free form so the output
/// stays strictly positive for every finite input.
pub fn update_diagonal(
    post: &DiagonalPosterior,
    est: &DiagonalEstimates,
) -> Result<DiagonalPosterior> {
    let d = post.len();
    if est.e1.len() != d || est.e2.len() != d {
        return Err(PosteriorError::ShapeMismatch(format!(
            "estimates have {}/{} entries, posterior has {}",
            est.e1.len(),
            est.e2.len(),
            d
        )));
    }
    let mut mu = DVector::zeros(d);
    let mut sigma = DVector::zeros(d);
    for i in 0..d {
        let s = post.sigma[i];
        mu[i] = post.mu[i] - s * s * est.e1[i];
        let x = 0.5 * s * est.e2[i];
        let root = (1.0 + x * x).sqrt();
        // sigma * (root - x) == sigma / (root + x) exactly; the division form
        // avoids cancellation when x is large and positive.
        sigma[i] = if x >= 0.0 {
            s / (root + x)
        } else {
            s * (root - x)
        };
        if !mu[i].is_finite() || !sigma[i].is_finite() {
            return Err(PosteriorError::NonFinite("diagonal update"));
        }
    }
    DiagonalPosterior::new(mu, sigma)
}

/// One fixed-point step of the full posterior:
/// `mu ← mu − A Aᵀ Ē₁`, `A ← X` solving `X Xᵀ + A Aᵀ Ē₂ Xᵀ − A Aᵀ = 0`.
///
/// Falls back to the PSD solver when the PD route reports ill-conditioning.
pub fn update_full(post: &FullPosterior, est: &FullEstimates) -> Result<FullPosterior> {
    let d = post.dim();
    if est.e1.len() != d || est.e2.shape() != (d, d) {
        return Err(PosteriorError::ShapeMismatch(
            "estimate shapes do not match posterior".into(),
        ));
    }
    let v = SpdMatrix::from_gram(&post.a_factor)?;
    let mu = &post.mu - v.as_matrix() * &est.e1;
    let t = SquareMatrix::new(est.e2.clone())?;
    let a_new = solve_covariance(&v, &t)?;
    if mu.iter().any(|x| !x.is_finite()) {
        return Err(PosteriorError::NonFinite("full update"));
    }
    FullPosterior::new(mu, a_new.into_inner(), usize::MAX)
}

/// One fixed-point step of the matrix-variate posterior:
/// `M ← M − B Bᵀ Ē₁ A Aᵀ`, then `A` and `B` from the quadratic solver with
/// `V₁ = A Aᵀ`, `T = Ē₂` and `V₂ = B Bᵀ`, `T = Ē₃`. All right-hand sides read
/// prior values; the three outputs are swapped in together.
pub fn update_matrix_variate(
    post: &MatrixVariatePosterior,
    est: &MatrixVariateEstimates,
) -> Result<MatrixVariatePosterior> {
    let (d1, d2) = post.dims();
    if est.e1.shape() != (d2, d1) || est.e2.shape() != (d1, d1) || est.e3.shape() != (d2, d2) {
        return Err(PosteriorError::ShapeMismatch(
            "estimate shapes do not match posterior".into(),
        ));
    }
    let sigma1 = SpdMatrix::from_gram(&post.a_factor)?;
    let sigma2 = SpdMatrix::from_gram(&post.b_factor)?;
    let mean = &post.mean - sigma2.as_matrix() * &est.e1 * sigma1.as_matrix();
    let a_new = solve_covariance(&sigma1, &SquareMatrix::new(est.e2.clone())?)?;
    let b_new = solve_covariance(&sigma2, &SquareMatrix::new(est.e3.clone())?)?;
    if mean.iter().any(|x| !x.is_finite()) {
        return Err(PosteriorError::NonFinite("matrix-variate update"));
    }
    MatrixVariatePosterior::new(mean, a_new.into_inner(), b_new.into_inner())
}

/// PD solve with a PSD fallback on ill-conditioning; if the PSD route also
/// fails, one retry with a tiny diagonal jitter, then the error propagates.
fn solve_covariance(v: &SpdMatrix, t: &SquareMatrix) -> Result<SquareMatrix> {
    match solve_quadratic_pd(v, t) {
        Ok(x) => Ok(x),
        Err(MatequError::IllConditioned { .. }) => match solve_quadratic_psd(v, t) {
            Ok(x) => Ok(x),
            Err(_) => {
                let n = v.dim();
                let jitter = 1e-10 * v.as_matrix().trace() / n as f64;
                let bumped = SpdMatrix::new(SquareMatrix::new(
                    v.as_matrix() + DMatrix::identity(n, n) * jitter,
                )?)?;
                Ok(solve_quadratic_pd(&bumped, t)?)
            }
        },
        Err(e) => Err(e.into()),
    }
}

// ---------------------------------------------------------------------------
// KL divergence diagnostics
// ---------------------------------------------------------------------------

/// KL(q ‖ p) between multivariate Gaussians with covariance factors:
/// `½ [ log det V − log det Σ − N + tr(V⁻¹Σ) + (m−mu)ᵀ V⁻¹ (m−mu) ]`
/// where q = (mu, Σ = A Aᵀ) and p = (m, V).
pub fn kl_full(q: &FullPosterior, p: &FullPosterior) -> Result<f64> {
    let d = q.dim();
    if p.dim() != d {
        return Err(PosteriorError::ShapeMismatch(format!(
            "q has dim {}, p has dim {}",
            d,
            p.dim()
        )));
    }
    let sigma = SpdMatrix::from_gram(&q.a_factor)?;
    let v = SpdMatrix::from_gram(&p.a_factor)?;
    let v_eig = sym_eigen(v.as_matrix())?;
    let v_max = v_eig.values[0];
    if !(v_max > 0.0) || v_eig.values[d - 1] <= 1e-14 * v_max {
        return Err(PosteriorError::SingularPrior);
    }
    let log_det_v: f64 = v_eig.values.iter().map(|&l| l.ln()).sum();
    let s_eig = sym_eigen(sigma.as_matrix())?;
    let log_det_sigma: f64 = s_eig
        .values
        .iter()
        .map(|&l| l.max(f64::MIN_POSITIVE).ln())
        .sum();
    let v_inv = v_eig.apply_spectral(|l| 1.0 / l);
    let trace = (&v_inv * sigma.as_matrix()).trace();
    let delta = p.mu() - q.mu();
    let quad = (&v_inv * &delta).dot(&delta);
    Ok(0.5 * (log_det_v - log_det_sigma - d as f64 + trace + quad))
}

/// Diagonal specialization of [`kl_full`]: a sum of univariate Gaussian KLs.
pub fn kl_diagonal(q: &DiagonalPosterior, p: &DiagonalPosterior) -> Result<f64> {
    if q.len() != p.len() {
        return Err(PosteriorError::ShapeMismatch(format!(
            "q has {} weights, p has {}",
            q.len(),
            p.len()
        )));
    }
    let mut total = 0.0;
    for i in 0..q.len() {
        let v = p.sigma[i];
        if !(v > 0.0) {
            return Err(PosteriorError::SingularPrior);
        }
        let s = q.sigma[i];
        let dm = q.mu[i] - p.mu[i];
        total += (v / s).ln() + (s * s + dm * dm) / (2.0 * v * v) - 0.5;
    }
    Ok(total)
}

/// Matrix-variate specialization of [`kl_full`]: determinants and traces
/// factorize over the two Kronecker factors,
/// `tr((V₁⊗V₂)⁻¹(Σ₁⊗Σ₂)) = tr(V₁⁻¹Σ₁) tr(V₂⁻¹Σ₂)`.
pub fn kl_matrix_variate(q: &MatrixVariatePosterior, p: &MatrixVariatePosterior) -> Result<f64> {
    if q.mean.shape() != p.mean.shape() {
        return Err(PosteriorError::ShapeMismatch(
            "matrix-variate posteriors differ in shape".into(),
        ));
    }
    let (d1, d2) = q.dims();
    let n = (d1 * d2) as f64;
    let sigma1 = SpdMatrix::from_gram(&q.a_factor)?;
    let sigma2 = SpdMatrix::from_gram(&q.b_factor)?;
    let v1 = SpdMatrix::from_gram(&p.a_factor)?;
    let v2 = SpdMatrix::from_gram(&p.b_factor)?;

    let inv_and_logdet = |m: &SpdMatrix| -> Result<(DMatrix<f64>, f64)> {
        let eig = sym_eigen(m.as_matrix())?;
        let lmax = eig.values[0];
        if !(lmax > 0.0) || eig.values[eig.values.len() - 1] <= 1e-14 * lmax {
            return Err(PosteriorError::SingularPrior);
        }
        let logdet = eig.values.iter().map(|&l| l.ln()).sum();
        Ok((eig.apply_spectral(|l| 1.0 / l), logdet))
    };
    let (v1_inv, logdet_v1) = inv_and_logdet(&v1)?;
    let (v2_inv, logdet_v2) = inv_and_logdet(&v2)?;
    let logdet_psd = |m: &SpdMatrix| -> Result<f64> {
        let eig = sym_eigen(m.as_matrix())?;
        Ok(eig
            .values
            .iter()
            .map(|&l| l.max(f64::MIN_POSITIVE).ln())
            .sum())
    };
    let logdet_s1 = logdet_psd(&sigma1)?;
    let logdet_s2 = logdet_psd(&sigma2)?;

    let log_det_v = d2 as f64 * logdet_v1 + d1 as f64 * logdet_v2;
    let log_det_sigma = d2 as f64 * logdet_s1 + d1 as f64 * logdet_s2;
    let trace = (&v1_inv * sigma1.as_matrix()).trace() * (&v2_inv * sigma2.as_matrix()).trace();
    let delta = &p.mean - &q.mean;
    let quad = (&v2_inv * &delta * &v1_inv).dot(&delta);
    Ok(0.5 * (log_det_v - log_det_sigma - n + trace + quad))
}

// ---------------------------------------------------------------------------
// Initializers
// ---------------------------------------------------------------------------

/// Diagonal posterior over a whole network, flattened layer by layer
/// (weights row-major, then bias). Weight means are drawn
/// `N(0, 2/(n_in + n_out))`, bias means start at zero, every sigma starts at
/// `sigma_init`.
pub fn init_diagonal<R: Rng>(
    layer_shapes: &[(usize, usize)],
    sigma_init: f64,
    rng: &mut R,
) -> Result<DiagonalPosterior> {
    assert!(sigma_init > 0.0, "sigma_init must be positive");
    let mut mu = Vec::new();
    for &(n_in, n_out) in layer_shapes {
        let std = (2.0 / (n_in + n_out) as f64).sqrt();
        for _ in 0..n_in * n_out {
            mu.push(rng.sample::<f64, _>(StandardNormal) * std);
        }
        mu.extend(std::iter::repeat_n(0.0, n_out));
    }
    let len = mu.len();
    DiagonalPosterior::new(
        DVector::from_vec(mu),
        DVector::from_element(len, sigma_init),
    )
}

/// Matrix-variate posterior for one `d2 x d1` layer (bias absorbed as the
/// last input column, so the fan-in is `d1 - 1`). Mean entries are
/// `N(0, 2a/(n_in+2))`; `A` and `B` are diagonal with entries drawn from a
/// Gaussian whose variance is `sqrt(2(1-a)/(n_in+2))`, so the product of the
/// two factor variances reproduces the remaining `2(1-a)/(n_in+2)` share of
/// the target weight variance. Off-diagonals start at zero.
pub fn init_matrix_variate<R: Rng>(
    d1: usize,
    d2: usize,
    alpha: f64,
    rng: &mut R,
) -> Result<MatrixVariatePosterior> {
    assert!(alpha > 0.0 && alpha < 1.0, "alpha must lie in (0,1)");
    let n_in = (d1.max(1) - 1) as f64;
    let mean_std = (2.0 * alpha / (n_in + 2.0)).sqrt();
    let factor_std = (2.0 * (1.0 - alpha) / (n_in + 2.0)).sqrt().sqrt();
    let mean = sample_noise_mat(d2, d1, rng) * mean_std;
    let mut a = DMatrix::zeros(d1, d1);
    for i in 0..d1 {
        a[(i, i)] = rng.sample::<f64, _>(StandardNormal) * factor_std;
    }
    let mut b = DMatrix::zeros(d2, d2);
    for i in 0..d2 {
        b[(i, i)] = rng.sample::<f64, _>(StandardNormal) * factor_std;
    }
    MatrixVariatePosterior::new(mean, a, b)
}

/// Full posterior for one flattened layer: `mu ~ N(0, mu_std²)`,
/// `A = sigma_init I`.
pub fn init_full<R: Rng>(
    dim: usize,
    mu_std: f64,
    sigma_init: f64,
    max_full_dim: usize,
    rng: &mut R,
) -> Result<FullPosterior> {
    assert!(sigma_init > 0.0, "sigma_init must be positive");
    let mu = sample_noise_vec(dim, rng) * mu_std;
    FullPosterior::new(mu, DMatrix::identity(dim, dim) * sigma_init, max_full_dim)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dvec(xs: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(xs)
    }

    #[test]
    fn sample_noise_deterministic_and_row_major() {
        let mut r1 = seeded_rng(99);
        let mut r2 = seeded_rng(99);
        let a = sample_noise_vec(4, &mut r1);
        let b = sample_noise_vec(4, &mut r2);
        assert_eq!(a, b);

        let mut r3 = seeded_rng(7);
        let mut r4 = seeded_rng(7);
        let m = sample_noise_mat(3, 2, &mut r3);
        let flat = sample_noise_vec(6, &mut r4);
        for i in 0..3 {
            for j in 0..2 {
                assert_eq!(m[(i, j)], flat[i * 2 + j]);
            }
        }
    }

    #[test]
    fn sample_noise_moments() {
        let mut rng = seeded_rng(123);
        let n = 1_000_000;
        let draws = sample_noise_vec(n, &mut rng);
        let mean = draws.mean();
        let var = draws.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 4.0 / (n as f64).sqrt());
        assert!((var - 1.0).abs() < 0.01);
    }

    #[test]
    fn transform_diagonal_cases() {
        let post = DiagonalPosterior::new(dvec(&[0.0, 0.0]), dvec(&[1.0, 2.0])).unwrap();
        let theta = transform_diagonal(&post, &dvec(&[0.0, 0.0])).unwrap();
        assert_eq!(theta, post.mu().clone());
        let theta = transform_diagonal(&post, &dvec(&[1.0, -1.0])).unwrap();
        assert_eq!(theta, dvec(&[1.0, -2.0]));

        let mut rng = seeded_rng(5);
        let mu = sample_noise_vec(6, &mut rng);
        let sigma = sample_noise_vec(6, &mut rng).map(|x| x.abs() + 0.1);
        let post = DiagonalPosterior::new(mu.clone(), sigma.clone()).unwrap();
        let eps = sample_noise_vec(6, &mut rng);
        let theta = transform_diagonal(&post, &eps).unwrap();
        for i in 0..6 {
            assert_eq!(theta[i], mu[i] + sigma[i] * eps[i]);
        }
        assert!(transform_diagonal(&post, &dvec(&[1.0])).is_err());
    }

    #[test]
    fn transform_matrix_variate_matches_kronecker_form() {
        let mut rng = seeded_rng(17);
        let (d1, d2) = (3, 4);
        let post = init_matrix_variate(d1, d2, 0.5, &mut rng).unwrap();
        let phi = sample_noise_mat(d2, d1, &mut rng);
        let w = transform_matrix_variate(&post, &phi).unwrap();

        let kron = kronecker(post.a_factor(), post.b_factor());
        let theta = &kron * vec_col_major(&phi);
        let direct = vec_col_major(&(&w - post.mean()));
        assert!((direct - theta).norm() < 1e-12);

        let zero = DMatrix::zeros(d2, d1);
        let w0 = transform_matrix_variate(&post, &zero).unwrap();
        assert_eq!(&w0, post.mean());
    }

    #[test]
    fn transform_matrix_variate_scalar_collapse() {
        let post = MatrixVariatePosterior::new(
            DMatrix::from_element(1, 1, 0.3),
            DMatrix::from_element(1, 1, 0.7),
            DMatrix::from_element(1, 1, 1.1),
        )
        .unwrap();
        let phi = DMatrix::from_element(1, 1, -0.4);
        let w = transform_matrix_variate(&post, &phi).unwrap();
        assert!((w[(0, 0)] - (0.3 + 1.1 * -0.4 * 0.7)).abs() < 1e-15);

        let diag = DiagonalPosterior::new(dvec(&[0.3]), dvec(&[0.7 * 1.1])).unwrap();
        let theta = transform_diagonal(&diag, &dvec(&[-0.4])).unwrap();
        assert!((w[(0, 0)] - theta[0]).abs() < 1e-15);
    }

    #[test]
    fn transform_full_cases() {
        let mut rng = seeded_rng(23);
        let d = 5;
        let post = init_full(d, 0.1, 0.5, DEFAULT_MAX_FULL_DIM, &mut rng).unwrap();
        let theta = transform_full(&post, &DVector::zeros(d)).unwrap();
        assert_eq!(&theta, post.mu());

        let ident = FullPosterior::new(
            DVector::zeros(d),
            DMatrix::identity(d, d),
            DEFAULT_MAX_FULL_DIM,
        )
        .unwrap();
        let eps = sample_noise_vec(d, &mut rng);
        let theta = transform_full(&ident, &eps).unwrap();
        assert_eq!(theta, eps);

        let eps = sample_noise_vec(d, &mut rng);
        let theta = transform_full(&post, &eps).unwrap();
        let mut manual = post.mu().clone();
        for i in 0..d {
            for j in 0..d {
                manual[i] += post.a_factor()[(i, j)] * eps[j];
            }
        }
        assert!((theta - manual).norm() < 1e-13);
    }

    #[test]
    fn estimate_diagonal_matches_brute_force() {
        let mut rng = seeded_rng(41);
        let d = 5;
        let eps: Vec<_> = (0..3).map(|_| sample_noise_vec(d, &mut rng)).collect();
        let grads: Vec<_> = (0..3).map(|_| sample_noise_vec(d, &mut rng)).collect();
        let batch = McBatch::new(eps.clone(), grads.clone()).unwrap();
        let est = estimate_diagonal(&batch).unwrap();
        for i in 0..d {
            let mut s1 = 0.0;
            let mut s2 = 0.0;
            for k in 0..3 {
                s1 += grads[k][i];
                s2 += grads[k][i] * eps[k][i];
            }
            assert!((est.e1[i] - s1 / 3.0).abs() < 1e-15);
            assert!((est.e2[i] - s2 / 3.0).abs() < 1e-15);
        }

        let single = McBatch::new(vec![eps[0].clone()], vec![grads[0].clone()]).unwrap();
        let est = estimate_diagonal(&single).unwrap();
        assert_eq!(est.e1, grads[0]);
        assert_eq!(est.e2, grads[0].component_mul(&eps[0]));

        let zeros = McBatch::new(eps.clone(), vec![DVector::zeros(d); 3]).unwrap();
        let est = estimate_diagonal(&zeros).unwrap();
        assert!(est.e1.iter().all(|&x| x == 0.0));
        assert!(est.e2.iter().all(|&x| x == 0.0));

        assert!(matches!(
            McBatch::<DVector<f64>>::new(vec![], vec![]),
            Err(PosteriorError::EmptyBatch)
        ));
    }

    #[test]
    fn estimate_full_matches_brute_force() {
        let d = 5;
        let mut g = DVector::zeros(d);
        g[0] = 1.0;
        let mut e = DVector::zeros(d);
        e[1] = 1.0;
        let batch = McBatch::new(vec![e], vec![g]).unwrap();
        let est = estimate_full(&batch).unwrap();
        for i in 0..d {
            for j in 0..d {
                let expect = if (i, j) == (0, 1) { 1.0 } else { 0.0 };
                assert_eq!(est.e2[(i, j)], expect);
            }
        }

        let mut rng = seeded_rng(42);
        let eps: Vec<_> = (0..4).map(|_| sample_noise_vec(d, &mut rng)).collect();
        let grads: Vec<_> = (0..4).map(|_| sample_noise_vec(d, &mut rng)).collect();
        let batch = McBatch::new(eps.clone(), grads.clone()).unwrap();
        let est = estimate_full(&batch).unwrap();
        for i in 0..d {
            for j in 0..d {
                let mut s = 0.0;
                for k in 0..4 {
                    s += grads[k][i] * eps[k][j];
                }
                assert!((est.e2[(i, j)] - s / 4.0).abs() < 1e-14);
            }
        }

        // g = eps gives a Gram-structured, symmetric PSD second moment
        let batch = McBatch::new(eps.clone(), eps.clone()).unwrap();
        let est = estimate_full(&batch).unwrap();
        assert!(crate::matequ::relative_asymmetry(&est.e2) < 1e-12);
        let eig = sym_eigen(&est.e2).unwrap();
        assert!(eig.values.iter().all(|&l| l > -1e-12));
    }

    #[test]
    fn estimate_matrix_variate_matches_vectorized_oracle() {
        let mut rng = seeded_rng(77);
        let (d1, d2) = (2, 3);
        let post = init_matrix_variate(d1, d2, 0.4, &mut rng).unwrap();
        let eps: Vec<_> = (0..2).map(|_| sample_noise_mat(d2, d1, &mut rng)).collect();
        let grads: Vec<_> = (0..2).map(|_| sample_noise_mat(d2, d1, &mut rng)).collect();
        let batch = McBatch::new(eps.clone(), grads.clone()).unwrap();
        let est = estimate_matrix_variate(&batch, &post).unwrap();

        // index-sum oracle for each entry of the derivative terms
        let b = post.b_factor();
        let a = post.a_factor();
        for i in 0..d1 {
            for j in 0..d1 {
                let mut total = 0.0;
                for k in 0..2 {
                    let mut s = 0.0;
                    for l in 0..d2 {
                        for kk in 0..d2 {
                            s += grads[k][(l, i)] * b[(l, kk)] * eps[k][(kk, j)];
                        }
                    }
                    total += s / d2 as f64;
                }
                assert!((est.e2[(i, j)] - total / 2.0).abs() < 1e-13);
            }
        }
        for i in 0..d2 {
            for j in 0..d2 {
                let mut total = 0.0;
                for k in 0..2 {
                    let mut s = 0.0;
                    for l in 0..d1 {
                        for kk in 0..d1 {
                            s += grads[k][(i, l)] * a[(l, kk)] * eps[k][(j, kk)];
                        }
                    }
                    total += s / d1 as f64;
                }
                assert!((est.e3[(i, j)] - total / 2.0).abs() < 1e-13);
            }
        }

        let zeros = McBatch::new(eps.clone(), vec![DMatrix::zeros(d2, d1); 2]).unwrap();
        let est = estimate_matrix_variate(&zeros, &post).unwrap();
        assert!(est.e1.iter().all(|&x| x == 0.0));
        assert!(est.e2.iter().all(|&x| x == 0.0));
        assert!(est.e3.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn estimate_matrix_variate_scalar_collapse() {
        let post = MatrixVariatePosterior::new(
            DMatrix::from_element(1, 1, 0.0),
            DMatrix::from_element(1, 1, 0.6),
            DMatrix::from_element(1, 1, 1.3),
        )
        .unwrap();
        let batch = McBatch::new(
            vec![DMatrix::from_element(1, 1, 0.5)],
            vec![DMatrix::from_element(1, 1, 2.0)],
        )
        .unwrap();
        let est = estimate_matrix_variate(&batch, &post).unwrap();
        assert!((est.e2[(0, 0)] - 2.0 * 1.3 * 0.5).abs() < 1e-15);
        assert!((est.e3[(0, 0)] - 2.0 * 0.6 * 0.5).abs() < 1e-15);
    }

    #[test]
    fn update_diagonal_zero_estimates_is_identity() {
        let post =
            DiagonalPosterior::new(dvec(&[0.3, -0.2, 0.0]), dvec(&[0.047, 1.0, 2.5])).unwrap();
        let est = DiagonalEstimates {
            e1: DVector::zeros(3),
            e2: DVector::zeros(3),
        };
        let next = update_diagonal(&post, &est).unwrap();
        assert_eq!(next, post);
    }

    #[test]
    fn update_diagonal_scalar_cases() {
        let post = DiagonalPosterior::new(dvec(&[0.0]), dvec(&[1.0])).unwrap();
        let next = update_diagonal(
            &post,
            &DiagonalEstimates {
                e1: dvec(&[0.0]),
                e2: dvec(&[1.0]),
            },
        )
        .unwrap();
        assert!((next.sigma()[0] - (1.25_f64.sqrt() - 0.5)).abs() < 1e-12);

        let next = update_diagonal(
            &post,
            &DiagonalEstimates {
                e1: dvec(&[0.0]),
                e2: dvec(&[-1.0]),
            },
        )
        .unwrap();
        assert!((next.sigma()[0] - (1.25_f64.sqrt() + 0.5)).abs() < 1e-12);

        let post = DiagonalPosterior::new(dvec(&[1.0]), dvec(&[0.5])).unwrap();
        let next = update_diagonal(
            &post,
            &DiagonalEstimates {
                e1: dvec(&[2.0]),
                e2: dvec(&[0.0]),
            },
        )
        .unwrap();
        assert!((next.mu()[0] - (1.0 - 0.25 * 2.0)).abs() < 1e-15);
    }

    #[test]
    fn update_diagonal_sigma_stays_positive_for_large_signals() {
        let post = DiagonalPosterior::new(dvec(&[0.0]), dvec(&[1.0])).unwrap();
        for &e2 in &[1e6, 1e9, -1e9, 1e12] {
            let next = update_diagonal(
                &post,
                &DiagonalEstimates {
                    e1: dvec(&[0.0]),
                    e2: dvec(&[e2]),
                },
            )
            .unwrap();
            assert!(next.sigma()[0] > 0.0, "sigma collapsed for e2 = {e2}");
        }
    }

    #[test]
    fn update_full_zero_estimates_preserves_covariance() {
        let mut rng = seeded_rng(8);
        let post = init_full(4, 0.2, 0.7, DEFAULT_MAX_FULL_DIM, &mut rng).unwrap();
        let est = FullEstimates {
            e1: DVector::zeros(4),
            e2: DMatrix::zeros(4, 4),
        };
        let next = update_full(&post, &est).unwrap();
        assert_eq!(next.mu(), post.mu());
        let cov_before = post.a_factor() * post.a_factor().transpose();
        let cov_after = next.a_factor() * next.a_factor().transpose();
        assert!((cov_before - cov_after).norm() < 1e-12);
    }

    #[test]
    fn update_full_diagonal_instances_match_diagonal_update() {
        let mut rng = seeded_rng(501);
        for _ in 0..40 {
            let d = 4;
            let sigma = sample_noise_vec(d, &mut rng).map(|x| 0.1 + x.abs());
            let mu = sample_noise_vec(d, &mut rng);
            let e1 = sample_noise_vec(d, &mut rng);
            let e2 = sample_noise_vec(d, &mut rng) * 2.0;

            let diag_post = DiagonalPosterior::new(mu.clone(), sigma.clone()).unwrap();
            let diag_next = update_diagonal(
                &diag_post,
                &DiagonalEstimates {
                    e1: e1.clone(),
                    e2: e2.clone(),
                },
            )
            .unwrap();

            let full_post = FullPosterior::new(
                mu.clone(),
                DMatrix::from_diagonal(&sigma),
                DEFAULT_MAX_FULL_DIM,
            )
            .unwrap();
            let full_next = update_full(
                &full_post,
                &FullEstimates {
                    e1: e1.clone(),
                    e2: DMatrix::from_diagonal(&e2),
                },
            )
            .unwrap();

            for i in 0..d {
                assert!((full_next.mu()[i] - diag_next.mu()[i]).abs() < 1e-10);
                assert!((full_next.a_factor()[(i, i)] - diag_next.sigma()[i]).abs() < 1e-10);
                for j in 0..d {
                    if i != j {
                        assert!(full_next.a_factor()[(i, j)].abs() < 1e-10);
                    }
                }
            }
        }
    }

    #[test]
    fn update_full_satisfies_first_order_conditions() {
        let mut rng = seeded_rng(31);
        for _ in 0..20 {
            let d = 4;
            let a = DMatrix::identity(d, d) + sample_noise_mat(d, d, &mut rng) * 0.2;
            let post =
                FullPosterior::new(sample_noise_vec(d, &mut rng), a, DEFAULT_MAX_FULL_DIM).unwrap();
            let e2 = sample_noise_mat(d, d, &mut rng) * 0.5;
            let est = FullEstimates {
                e1: sample_noise_vec(d, &mut rng),
                e2: e2.clone(),
            };
            let next = update_full(&post, &est).unwrap();
            let v = post.a_factor() * post.a_factor().transpose();
            let v_inv = v.clone().try_inverse().unwrap();
            let a_new = next.a_factor().clone();
            let a_inv_t = a_new.clone().try_inverse().unwrap().transpose();
            let res = -a_inv_t + &v_inv * &a_new + &e2;
            assert!(
                res.norm() <= 1e-6 * v_inv.norm(),
                "stationarity residual {:.3e}",
                res.norm()
            );
        }
    }

    #[test]
    fn update_matrix_variate_zero_estimates_preserves_covariances() {
        let mut rng = seeded_rng(88);
        let post = init_matrix_variate(3, 4, 0.5, &mut rng).unwrap();
        let est = MatrixVariateEstimates {
            e1: DMatrix::zeros(4, 3),
            e2: DMatrix::zeros(3, 3),
            e3: DMatrix::zeros(4, 4),
        };
        let next = update_matrix_variate(&post, &est).unwrap();
        assert_eq!(next.mean(), post.mean());
        let s1_before = post.a_factor() * post.a_factor().transpose();
        let s1_after = next.a_factor() * next.a_factor().transpose();
        assert!((s1_before - s1_after).norm() < 1e-12);
        let s2_before = post.b_factor() * post.b_factor().transpose();
        let s2_after = next.b_factor() * next.b_factor().transpose();
        assert!((s2_before - s2_after).norm() < 1e-12);
    }

    #[test]
    fn update_matrix_variate_scalar_collapse_matches_diagonal() {
        let (m0, a0, b0) = (0.4, 0.8, 1.2);
        let (e1, e2, e3) = (0.3, 0.9, -0.5);
        let post = MatrixVariatePosterior::new(
            DMatrix::from_element(1, 1, m0),
            DMatrix::from_element(1, 1, a0),
            DMatrix::from_element(1, 1, b0),
        )
        .unwrap();
        let est = MatrixVariateEstimates {
            e1: DMatrix::from_element(1, 1, e1),
            e2: DMatrix::from_element(1, 1, e2),
            e3: DMatrix::from_element(1, 1, e3),
        };
        let next = update_matrix_variate(&post, &est).unwrap();
        assert!((next.mean()[(0, 0)] - (m0 - a0 * a0 * b0 * b0 * e1)).abs() < 1e-14);

        let sig_a = update_diagonal(
            &DiagonalPosterior::new(dvec(&[0.0]), dvec(&[a0])).unwrap(),
            &DiagonalEstimates {
                e1: dvec(&[0.0]),
                e2: dvec(&[e2]),
            },
        )
        .unwrap();
        let sig_b = update_diagonal(
            &DiagonalPosterior::new(dvec(&[0.0]), dvec(&[b0])).unwrap(),
            &DiagonalEstimates {
                e1: dvec(&[0.0]),
                e2: dvec(&[e3]),
            },
        )
        .unwrap();
        assert!((next.a_factor()[(0, 0)] - sig_a.sigma()[0]).abs() < 1e-12);
        assert!((next.b_factor()[(0, 0)] - sig_b.sigma()[0]).abs() < 1e-12);
    }

    #[test]
    fn update_matrix_variate_satisfies_stationarity_at_prior() {
        let mut rng = seeded_rng(313);
        for _ in 0..20 {
            let (d1, d2) = (2, 3);
            let a = DMatrix::identity(d1, d1) + sample_noise_mat(d1, d1, &mut rng) * 0.15;
            let b = DMatrix::identity(d2, d2) + sample_noise_mat(d2, d2, &mut rng) * 0.15;
            let post = MatrixVariatePosterior::new(sample_noise_mat(d2, d1, &mut rng) * 0.2, a, b)
                .unwrap();
            let est = MatrixVariateEstimates {
                e1: sample_noise_mat(d2, d1, &mut rng) * 0.3,
                e2: sample_noise_mat(d1, d1, &mut rng) * 0.3,
                e3: sample_noise_mat(d2, d2, &mut rng) * 0.3,
            };
            let next = update_matrix_variate(&post, &est).unwrap();

            // with trace factors at the prior the per-factor condition is
            // -X^{-T} + V^{-1} X + E = 0
            let check = |v_factor: &DMatrix<f64>, x: &DMatrix<f64>, e: &DMatrix<f64>| {
                let v = v_factor * v_factor.transpose();
                let v_inv = v.try_inverse().unwrap();
                let x_inv_t = x.clone().try_inverse().unwrap().transpose();
                let res = -x_inv_t + &v_inv * x + e;
                assert!(
                    res.norm() <= 1e-7 * v_inv.norm(),
                    "residual {:.3e} vs {:.3e}",
                    res.norm(),
                    v_inv.norm()
                );
            };
            check(post.a_factor(), next.a_factor(), &est.e2);
            check(post.b_factor(), next.b_factor(), &est.e3);
        }
    }

    #[test]
    fn update_full_singular_covariance_takes_psd_route() {
        // A with a zero direction: the PD route reports ill-conditioning and
        // the update must fall through to the generalized-SVD path
        let d = 3;
        let a = DMatrix::from_diagonal(&dvec(&[1.0, 0.5, 0.0]));
        let post = FullPosterior::new(dvec(&[0.1, -0.2, 0.3]), a, DEFAULT_MAX_FULL_DIM).unwrap();
        let est = FullEstimates {
            e1: DVector::zeros(d),
            e2: DMatrix::zeros(d, d),
        };
        let next = update_full(&post, &est).unwrap();
        let cov_before = post.a_factor() * post.a_factor().transpose();
        let cov_after = next.a_factor() * next.a_factor().transpose();
        assert!((cov_before - cov_after).norm() < 1e-10);

        let est = FullEstimates {
            e1: dvec(&[0.2, 0.1, -0.3]),
            e2: DMatrix::from_diagonal(&dvec(&[0.4, -0.2, 0.1])),
        };
        let next = update_full(&post, &est).unwrap();
        assert!(next.mu().iter().all(|x| x.is_finite()));
        assert!(next.a_factor().iter().all(|x| x.is_finite()));
    }

    #[test]
    fn kl_identities() {
        let mut rng = seeded_rng(64);
        let q = init_full(3, 0.3, 0.8, DEFAULT_MAX_FULL_DIM, &mut rng).unwrap();
        assert!(kl_full(&q, &q).unwrap().abs() < 1e-10);

        // unit covariances, mean offset of norm 1 -> KL = 1/2
        let p = FullPosterior::new(
            DVector::zeros(4),
            DMatrix::identity(4, 4),
            DEFAULT_MAX_FULL_DIM,
        )
        .unwrap();
        let mut mu = DVector::zeros(4);
        mu[0] = (0.5_f64).sqrt();
        mu[2] = (0.5_f64).sqrt();
        let q = FullPosterior::new(mu, DMatrix::identity(4, 4), DEFAULT_MAX_FULL_DIM).unwrap();
        assert!((kl_full(&q, &p).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn kl_diagonal_matches_univariate_sum_and_full() {
        let mut rng = seeded_rng(11);
        let d = 5;
        let mu_q = sample_noise_vec(d, &mut rng);
        let sg_q = sample_noise_vec(d, &mut rng).map(|x| 0.2 + x.abs());
        let mu_p = sample_noise_vec(d, &mut rng);
        let sg_p = sample_noise_vec(d, &mut rng).map(|x| 0.2 + x.abs());
        let q = DiagonalPosterior::new(mu_q.clone(), sg_q.clone()).unwrap();
        let p = DiagonalPosterior::new(mu_p.clone(), sg_p.clone()).unwrap();
        let kl = kl_diagonal(&q, &p).unwrap();

        let mut manual = 0.0;
        for i in 0..d {
            let (m, v) = (mu_p[i], sg_p[i]);
            let (mu, s) = (mu_q[i], sg_q[i]);
            manual += (v / s).ln() + (s * s + (mu - m) * (mu - m)) / (2.0 * v * v) - 0.5;
        }
        assert!((kl - manual).abs() < 1e-12);

        let qf = FullPosterior::new(mu_q, DMatrix::from_diagonal(&sg_q), 64).unwrap();
        let pf = FullPosterior::new(mu_p, DMatrix::from_diagonal(&sg_p), 64).unwrap();
        assert!((kl - kl_full(&qf, &pf).unwrap()).abs() < 1e-10);
    }

    #[test]
    fn kl_matrix_variate_matches_full_on_kronecker_covariance() {
        let mut rng = seeded_rng(2);
        let (d1, d2) = (2, 3);
        let mk = |rng: &mut ChaCha8Rng| {
            let a = DMatrix::identity(d1, d1) + sample_noise_mat(d1, d1, rng) * 0.1;
            let b = DMatrix::identity(d2, d2) + sample_noise_mat(d2, d2, rng) * 0.1;
            MatrixVariatePosterior::new(sample_noise_mat(d2, d1, rng) * 0.3, a, b).unwrap()
        };
        let q = mk(&mut rng);
        let p = mk(&mut rng);
        let kl_mv = kl_matrix_variate(&q, &p).unwrap();

        let to_full = |mv: &MatrixVariatePosterior| {
            FullPosterior::new(
                vec_col_major(mv.mean()),
                kronecker(mv.a_factor(), mv.b_factor()),
                usize::MAX,
            )
            .unwrap()
        };
        let kl_f = kl_full(&to_full(&q), &to_full(&p)).unwrap();
        assert!(
            (kl_mv - kl_f).abs() < 1e-8,
            "kl_mv {kl_mv} vs kl_full {kl_f}"
        );
        assert!(kl_matrix_variate(&q, &q).unwrap().abs() < 1e-10);
    }

    #[test]
    fn init_diagonal_statistics() {
        let shapes = [(100, 10)];
        let mut sum_sq = 0.0;
        let mut count = 0usize;
        for seed in 0..10 {
            let mut rng = seeded_rng(seed);
            let post = init_diagonal(&shapes, 0.047, &mut rng).unwrap();
            assert!(post.sigma().iter().all(|&s| s == 0.047));
            // weights occupy the first n_in*n_out slots
            for i in 0..1000 {
                sum_sq += post.mu()[i] * post.mu()[i];
                count += 1;
            }
        }
        let var = sum_sq / count as f64;
        let target = 2.0 / 110.0;
        assert!(
            (var - target).abs() < 0.1 * target,
            "empirical {var}, target {target}"
        );

        let mut r1 = seeded_rng(9);
        let mut r2 = seeded_rng(9);
        let p1 = init_diagonal(&shapes, 0.047, &mut r1).unwrap();
        let p2 = init_diagonal(&shapes, 0.047, &mut r2).unwrap();
        assert_eq!(p1, p2);
    }

    #[test]
    fn init_matrix_variate_statistics() {
        let alpha = 0.5;
        let (d1, d2) = (401, 20);
        let n_in = 400.0;
        let mut rng = seeded_rng(4);
        let post = init_matrix_variate(d1, d2, alpha, &mut rng).unwrap();
        for i in 0..d1 {
            for j in 0..d1 {
                if i != j {
                    assert_eq!(post.a_factor()[(i, j)], 0.0);
                }
            }
        }
        let mean_var = post.mean().iter().map(|x| x * x).sum::<f64>() / (d1 * d2) as f64;
        let target = 2.0 * alpha / (n_in + 2.0);
        assert!((mean_var - target).abs() < 0.1 * target);

        // product of the two factor variances reproduces the weight-variance share
        let mut rng = seeded_rng(5);
        let n = 100_000;
        let mut sum_a = 0.0;
        let mut sum_b = 0.0;
        let factor_var = (2.0 * (1.0 - alpha) / (n_in + 2.0)).sqrt();
        for _ in 0..n {
            let a: f64 = rng.sample::<f64, _>(StandardNormal) * factor_var.sqrt();
            let b: f64 = rng.sample::<f64, _>(StandardNormal) * factor_var.sqrt();
            sum_a += a * a;
            sum_b += b * b;
        }
        let prod = (sum_a / n as f64) * (sum_b / n as f64);
        let target = 2.0 * (1.0 - alpha) / (n_in + 2.0);
        assert!((prod - target).abs() < 0.05 * target);
    }

    #[test]
    fn theorem_sigma_monotone_under_convex_quadratic() {
        // L(theta) = m/2 |theta|^2 has exact estimates e1 = m mu, e2 = m sigma.
        // The growing branch has a finite-time blow-up near n = 1/(m sigma0^2),
        // so sigma0 is chosen small enough that 200 steps stay representable.
        for &m in &[0.1, 1.0, 10.0] {
            let mut post =
                DiagonalPosterior::new(dvec(&[0.5, -1.0]), dvec(&[0.015, 0.01])).unwrap();
            for _ in 0..200 {
                let e1 = post.mu() * m;
                let e2 = post.sigma() * m;
                assert!(e2.iter().all(|&x| x > 0.0));
                let next = update_diagonal(&post, &DiagonalEstimates { e1, e2 }).unwrap();
                for i in 0..2 {
                    assert!(next.sigma()[i] < post.sigma()[i]);
                }
                post = next;
            }

            // concave case: sigma strictly increases
            let mut post =
                DiagonalPosterior::new(dvec(&[0.5, -1.0]), dvec(&[0.015, 0.01])).unwrap();
            for _ in 0..200 {
                let e1 = post.mu() * -m;
                let e2 = post.sigma() * -m;
                let next = update_diagonal(&post, &DiagonalEstimates { e1, e2 }).unwrap();
                for i in 0..2 {
                    assert!(next.sigma()[i] > post.sigma()[i]);
                }
                post = next;
            }
        }
    }

    #[test]
    fn sigma_monotone_under_mc_estimates_most_steps() {
        // K = 10^4 Monte-Carlo estimates: monotone in at least 95% of steps
        let m = 1.0;
        let k = 10_000;
        let mut rng = seeded_rng(2718);
        let mut post = DiagonalPosterior::new(dvec(&[0.3]), dvec(&[0.05])).unwrap();
        let steps = 100;
        let mut monotone = 0;
        for _ in 0..steps {
            let mut eps = Vec::with_capacity(k);
            let mut grads = Vec::with_capacity(k);
            for _ in 0..k {
                let e = sample_noise_vec(1, &mut rng);
                let theta = transform_diagonal(&post, &e).unwrap();
                grads.push(theta * m);
                eps.push(e);
            }
            let est = estimate_diagonal(&McBatch::new(eps, grads).unwrap()).unwrap();
            let next = update_diagonal(&post, &est).unwrap();
            if next.sigma()[0] < post.sigma()[0] {
                monotone += 1;
            }
            post = next;
        }
        assert!(
            monotone * 100 >= steps * 95,
            "monotone in {monotone}/{steps}"
        );
    }

    #[test]
    fn mc_estimator_is_unbiased() {
        // mean of 10^4 single-sample estimates vs one 10^4-sample estimate
        let m = 2.0;
        let post = DiagonalPosterior::new(dvec(&[0.4]), dvec(&[0.3])).unwrap();
        let n = 10_000;

        let mut rng = seeded_rng(600);
        let mut singles = Vec::with_capacity(n);
        for _ in 0..n {
            let e = sample_noise_vec(1, &mut rng);
            let theta = transform_diagonal(&post, &e).unwrap();
            let g = theta * m;
            let est = estimate_diagonal(&McBatch::new(vec![e], vec![g]).unwrap()).unwrap();
            singles.push(est.e2[0]);
        }
        let mean_singles = singles.iter().sum::<f64>() / n as f64;
        let var_singles = singles
            .iter()
            .map(|x| (x - mean_singles).powi(2))
            .sum::<f64>()
            / n as f64;

        let mut rng = seeded_rng(601);
        let mut eps = Vec::with_capacity(n);
        let mut grads = Vec::with_capacity(n);
        let mut prods = Vec::with_capacity(n);
        for _ in 0..n {
            let e = sample_noise_vec(1, &mut rng);
            let theta = transform_diagonal(&post, &e).unwrap();
            prods.push(m * theta[0] * e[0]);
            grads.push(theta * m);
            eps.push(e);
        }
        let big = estimate_diagonal(&McBatch::new(eps, grads).unwrap()).unwrap();
        let mean_prods = prods.iter().sum::<f64>() / n as f64;
        let var_prods = prods.iter().map(|x| (x - mean_prods).powi(2)).sum::<f64>() / n as f64;

        let se = ((var_singles + var_prods) / n as f64).sqrt();
        assert!(
            (mean_singles - big.e2[0]).abs() <= 3.0 * se,
            "difference {:.4e} exceeds 3 se {:.4e}",
            (mean_singles - big.e2[0]).abs(),
            se
        );
    }
}
