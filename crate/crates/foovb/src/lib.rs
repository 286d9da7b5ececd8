//! Online variational Bayes optimization with fixed-point posterior updates.
//!
//! The crate tracks a Gaussian posterior over neural-network weights and, for
//! every mini-batch, replaces gradient descent by one explicit iteration of
//! the stationarity equations of the online variational objective, with the
//! previous posterior acting as the prior. Three posterior families are
//! provided: diagonal (mean-field), matrix-variate (Kronecker-factored
//! covariance per layer), and full covariance per layer.
//!
//! Modules:
//! - [`matequ`]: the quadratic matrix-equation solvers behind the covariance
//!   updates, plus the deterministic SVD/GSVD contracts they rely on.
//! - [`posterior`]: posterior parameterizations, reparameterization
//!   transforms, Monte-Carlo expectation estimators, and the update rules.
//! - [`model`]: a minimal fully connected ReLU network with exact manual
//!   gradients.
//! - [`stream`]: dataset handling and task-agnostic stream schedules
//!   (discrete and continuously crossfaded pixel-permutation tasks).
//! - [`trainer`]: the training loop binding everything together, evaluation,
//!   an SGD baseline, and a runtime probe.
//! - [`checkpoint`]: binary posterior checkpoints.
//! - [`verify`]: self-check suites driven by `foovb verify` and the
//!   acceptance tests.
//! - [`cli`]: run configuration files, named profiles, and command
//!   implementations for the `foovb` binary.

pub mod checkpoint;
pub mod cli;
pub mod matequ;
pub mod model;
pub mod posterior;
pub mod stream;
pub mod trainer;
pub mod verify;

/// Version string embedded in run summaries.
pub fn version_string() -> String {
    format!("foovb {}", env!("CARGO_PKG_VERSION"))
}
