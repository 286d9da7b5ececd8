//! Training loop binding posterior, model, and stream, plus evaluation, an
//! SGD baseline, and a runtime probe.
//!
//! Per iteration the trainer draws a mini-batch from an opaque stream, makes
//! `K` Monte-Carlo passes (sample noise, transform to weights, take the exact
//! gradient), reduces them in ascending sample order, and applies the
//! variant's fixed-point update. The trainer never receives task-switch
//! signals; task identity exists only on the evaluation side, which scores
//! per-task test sets.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::model::{
    accuracy, loss_and_grad, Architecture, Batch, LossReduction, ModelError, NetworkParams,
};
use crate::posterior::{
    derive_seed, estimate_diagonal, estimate_full, estimate_matrix_variate, init_diagonal,
    init_full, init_matrix_variate, sample_noise_mat, sample_noise_vec, seeded_rng,
    transform_diagonal, transform_full, transform_matrix_variate, update_diagonal, update_full,
    update_matrix_variate, DiagonalPosterior, FullPosterior, MatrixVariatePosterior, McBatch,
    PosteriorError, DEFAULT_MAX_FULL_DIM,
};
use crate::stream::{next_batch, Dataset, MixtureSchedule, StreamError, TaskDef};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("numerical abort at iteration {iteration}, layer {layer}: {source}")]
    Numeric {
        iteration: usize,
        layer: usize,
        source: PosteriorError,
    },
    #[error("wrong posterior variant: expected {expected}")]
    WrongVariant { expected: &'static str },
    #[error("empty test set")]
    EmptyTestSet,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Posterior(#[from] PosteriorError),
    #[error(transparent)]
    Stream(#[from] StreamError),
}

pub type Result<T> = std::result::Result<T, TrainError>;

/// Posterior family used for training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Diagonal,
    MatrixVariate,
    Full,
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Variant::Diagonal => write!(f, "diagonal"),
            Variant::MatrixVariate => write!(f, "matrix_variate"),
            Variant::Full => write!(f, "full"),
        }
    }
}

/// Training hyperparameters. `sigma_init` feeds the diagonal and full
/// variants, `alpha` the matrix-variate mean/covariance split.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainerConfig {
    pub variant: Variant,
    pub k_train: usize,
    pub k_eval: usize,
    pub batch_size: usize,
    pub total_iters: usize,
    pub iters_per_task: usize,
    pub sigma_init: f64,
    pub alpha: f64,
    pub eval_every: usize,
    pub seed: u64,
    pub loss_reduction: LossReduction,
    /// Defensive lower bound on sigma after each diagonal update; 0 disables.
    pub sigma_floor: f64,
    /// Cap on the flattened per-layer dimension of the full variant.
    pub max_full_dim: usize,
    /// Learning rate of the SGD baseline.
    pub sgd_lr: f64,
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_train == 0 {
            return Err(TrainError::InvalidConfig("k_train must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(TrainError::InvalidConfig("batch_size must be >= 1".into()));
        }
        if self.eval_every == 0 || self.iters_per_task == 0 {
            return Err(TrainError::InvalidConfig(
                "eval_every and iters_per_task must be >= 1".into(),
            ));
        }
        match self.variant {
            Variant::Diagonal | Variant::Full => {
                if !(self.sigma_init > 0.0) {
                    return Err(TrainError::InvalidConfig(
                        "sigma_init must be positive".into(),
                    ));
                }
            }
            Variant::MatrixVariate => {
                if !(self.alpha > 0.0 && self.alpha < 1.0) {
                    return Err(TrainError::InvalidConfig("alpha must lie in (0,1)".into()));
                }
            }
        }
        Ok(())
    }
}

/// Task-agnostic batch source: dataset, tasks, and schedule behind an API
/// that yields only `(inputs, labels)` batches. `iters_per_task` is exposed
/// purely as evaluation-cadence metadata; the training path never branches
/// on it or on the schedule type.
pub struct TaskStream {
    dataset: Dataset,
    tasks: Vec<TaskDef>,
    schedule: MixtureSchedule,
    rng: ChaCha8Rng,
}

impl TaskStream {
    pub fn new(
        dataset: Dataset,
        tasks: Vec<TaskDef>,
        schedule: MixtureSchedule,
        seed: u64,
    ) -> Self {
        Self {
            dataset,
            tasks,
            schedule,
            rng: seeded_rng(derive_seed(seed, &[0x57_12])),
        }
    }

    pub fn next(&mut self, iteration: usize, batch_size: usize) -> Batch {
        next_batch(
            &self.dataset,
            &self.tasks,
            &self.schedule,
            iteration,
            batch_size,
            &mut self.rng,
        )
    }

    pub fn total_iters(&self) -> usize {
        self.schedule.total_iters()
    }

    pub fn iters_per_task(&self) -> usize {
        self.schedule.iters_per_task()
    }

    pub fn num_tasks(&self) -> usize {
        self.schedule.num_tasks()
    }
}

/// A whole-network posterior in one of the three families. The diagonal
/// variant flattens the entire network; matrix-variate and full variants keep
/// one posterior per layer with the bias absorbed as an extra input column.
#[derive(Debug, Clone, PartialEq)]
pub enum NetPosterior {
    Diagonal(DiagonalPosterior),
    MatrixVariate(Vec<MatrixVariatePosterior>),
    Full(Vec<FullPosterior>),
}

impl NetPosterior {
    /// Initializes a posterior for the architecture under the given config.
    pub fn init(arch: &Architecture, config: &TrainerConfig) -> Result<NetPosterior> {
        config.validate()?;
        let mut rng = seeded_rng(derive_seed(config.seed, &[0x1_417]));
        let shapes = arch.layer_shapes();
        match config.variant {
            Variant::Diagonal => Ok(NetPosterior::Diagonal(init_diagonal(
                &shapes,
                config.sigma_init,
                &mut rng,
            )?)),
            Variant::MatrixVariate => {
                let mut layers = Vec::new();
                for &(n_in, n_out) in &shapes {
                    layers.push(init_matrix_variate(
                        n_in + 1,
                        n_out,
                        config.alpha,
                        &mut rng,
                    )?);
                }
                Ok(NetPosterior::MatrixVariate(layers))
            }
            Variant::Full => {
                let mut layers = Vec::new();
                for &(n_in, n_out) in &shapes {
                    let d = (n_in + 1) * n_out;
                    let mu_std = (2.0 / (n_in + n_out) as f64).sqrt();
                    layers.push(init_full(
                        d,
                        mu_std,
                        config.sigma_init,
                        config.max_full_dim,
                        &mut rng,
                    )?);
                }
                Ok(NetPosterior::Full(layers))
            }
        }
    }

    pub fn variant(&self) -> Variant {
        match self {
            NetPosterior::Diagonal(_) => Variant::Diagonal,
            NetPosterior::MatrixVariate(_) => Variant::MatrixVariate,
            NetPosterior::Full(_) => Variant::Full,
        }
    }

    /// Network parameters at the posterior mean.
    pub fn mean_params(&self, arch: &Architecture) -> Result<NetworkParams> {
        match self {
            NetPosterior::Diagonal(p) => Ok(NetworkParams::unflatten(arch, p.mu())?),
            NetPosterior::MatrixVariate(layers) => mv_params(arch, layers, None),
            NetPosterior::Full(layers) => full_params(arch, layers, None),
        }
    }

    /// Draws one weight sample; returns the parameters and the noise that
    /// produced them.
    pub fn sample_params(
        &self,
        arch: &Architecture,
        rng: &mut ChaCha8Rng,
    ) -> Result<(NetworkParams, NoiseSample)> {
        match self {
            NetPosterior::Diagonal(p) => {
                let eps = sample_noise_vec(p.len(), rng);
                let theta = transform_diagonal(p, &eps)?;
                Ok((
                    NetworkParams::unflatten(arch, &theta)?,
                    NoiseSample::Flat(eps),
                ))
            }
            NetPosterior::MatrixVariate(layers) => {
                let mut noises = Vec::with_capacity(layers.len());
                for post in layers {
                    let (d1, d2) = post.dims();
                    noises.push(sample_noise_mat(d2, d1, rng));
                }
                let params = mv_params(arch, layers, Some(&noises))?;
                Ok((params, NoiseSample::PerLayerMat(noises)))
            }
            NetPosterior::Full(layers) => {
                let mut noises = Vec::with_capacity(layers.len());
                for post in layers {
                    noises.push(sample_noise_vec(post.dim(), rng));
                }
                let params = full_params(arch, layers, Some(&noises))?;
                Ok((params, NoiseSample::PerLayerVec(noises)))
            }
        }
    }

    /// Histogram of per-weight sigmas (diagonal variant only).
    pub fn sigma_histogram(&self, bin_edges: &[f64]) -> Result<Vec<u64>> {
        match self {
            NetPosterior::Diagonal(p) => Ok(sigma_histogram(p, bin_edges)),
            _ => Err(TrainError::WrongVariant {
                expected: "diagonal",
            }),
        }
    }

    pub fn min_sigma(&self) -> Option<f64> {
        match self {
            NetPosterior::Diagonal(p) => p.sigma().iter().cloned().reduce(f64::min),
            _ => None,
        }
    }

    pub fn as_diagonal(&self) -> Option<&DiagonalPosterior> {
        match self {
            NetPosterior::Diagonal(p) => Some(p),
            _ => None,
        }
    }
}

/// Noise attached to one Monte-Carlo weight sample.
pub enum NoiseSample {
    Flat(DVector<f64>),
    PerLayerMat(Vec<DMatrix<f64>>),
    PerLayerVec(Vec<DVector<f64>>),
}

/// Splits a `d2 x (d1+1)`-style stacked layer matrix into weights and bias.
fn split_weight_bias(stacked: &DMatrix<f64>, n_in: usize) -> (DMatrix<f64>, DVector<f64>) {
    let w = stacked.columns(0, n_in).clone_owned();
    let b = stacked.column(n_in).clone_owned();
    (w, b)
}

fn mv_params(
    arch: &Architecture,
    layers: &[MatrixVariatePosterior],
    noises: Option<&[DMatrix<f64>]>,
) -> Result<NetworkParams> {
    let shapes = arch.layer_shapes();
    let mut weights = Vec::with_capacity(layers.len());
    let mut biases = Vec::with_capacity(layers.len());
    for (l, post) in layers.iter().enumerate() {
        let stacked = match noises {
            Some(phis) => transform_matrix_variate(post, &phis[l])?,
            None => post.mean().clone(),
        };
        let (w, b) = split_weight_bias(&stacked, shapes[l].0);
        weights.push(w);
        biases.push(b);
    }
    Ok(NetworkParams::new(weights, biases)?)
}

fn full_params(
    arch: &Architecture,
    layers: &[FullPosterior],
    noises: Option<&[DVector<f64>]>,
) -> Result<NetworkParams> {
    let shapes = arch.layer_shapes();
    let mut weights = Vec::with_capacity(layers.len());
    let mut biases = Vec::with_capacity(layers.len());
    for (l, post) in layers.iter().enumerate() {
        let theta = match noises {
            Some(eps) => transform_full(post, &eps[l])?,
            None => post.mu().clone(),
        };
        let (n_in, n_out) = shapes[l];
        let mut w = DMatrix::zeros(n_out, n_in);
        let mut pos = 0;
        for i in 0..n_out {
            for j in 0..n_in {
                w[(i, j)] = theta[pos];
                pos += 1;
            }
        }
        let b = DVector::from_fn(n_out, |i, _| theta[pos + i]);
        weights.push(w);
        biases.push(b);
    }
    Ok(NetworkParams::new(weights, biases)?)
}

/// Per-layer gradient reshaped as the stacked `[W | b]` matrix.
fn stacked_grad(grad: &NetworkParams, layer: usize) -> DMatrix<f64> {
    let w = grad.weight(layer);
    let b = grad.bias(layer);
    let mut out = DMatrix::zeros(w.nrows(), w.ncols() + 1);
    out.view_mut((0, 0), (w.nrows(), w.ncols())).copy_from(w);
    out.set_column(w.ncols(), b);
    out
}

/// Per-layer gradient flattened as `[W row-major, b]`.
fn flat_layer_grad(grad: &NetworkParams, layer: usize) -> DVector<f64> {
    let w = grad.weight(layer);
    let b = grad.bias(layer);
    let mut out = Vec::with_capacity(w.len() + b.len());
    for i in 0..w.nrows() {
        for j in 0..w.ncols() {
            out.push(w[(i, j)]);
        }
    }
    out.extend(b.iter().cloned());
    DVector::from_vec(out)
}

/// One evaluation record. Wall-clock timing is kept out of the metrics CSV
/// (it is the one nondeterministic field) and reported in the run summary.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MetricsRecord {
    pub iteration: usize,
    /// Test accuracy per seen task, task order.
    pub per_task_acc: Vec<f64>,
    pub avg_seen_acc: f64,
    pub first_task_acc: f64,
    /// Mean wall-clock seconds per iteration over the window since the
    /// previous record.
    pub secs_per_iter: f64,
    pub min_sigma: Option<f64>,
    pub sigma_hist: Option<Vec<u64>>,
}

/// Serialized metrics table. Deterministic for a fixed seed: the timing
/// column is deliberately excluded.
pub fn metrics_to_csv(records: &[MetricsRecord], num_tasks: usize) -> String {
    let mut out = String::from("iteration,avg_seen_acc,first_task_acc,min_sigma,sigma_hist");
    for t in 0..num_tasks {
        out.push_str(&format!(",acc_task_{t}"));
    }
    out.push('\n');
    for r in records {
        let hist = r
            .sigma_hist
            .as_ref()
            .map(|h| {
                h.iter()
                    .map(|c| c.to_string())
                    .collect::<Vec<_>>()
                    .join("|")
            })
            .unwrap_or_default();
        let min_sigma = r.min_sigma.map(|s| s.to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{}",
            r.iteration, r.avg_seen_acc, r.first_task_acc, min_sigma, hist
        ));
        for t in 0..num_tasks {
            out.push(',');
            if t < r.per_task_acc.len() {
                out.push_str(&r.per_task_acc[t].to_string());
            }
        }
        out.push('\n');
    }
    out
}

/// Histogram counts of sigma values over `bin_edges` (len = edges - 1).
/// Values outside the range are clamped into the boundary bins so counts
/// always sum to the weight count.
pub fn sigma_histogram(post: &DiagonalPosterior, bin_edges: &[f64]) -> Vec<u64> {
    assert!(bin_edges.len() >= 2, "need at least one bin");
    let bins = bin_edges.len() - 1;
    let mut counts = vec![0u64; bins];
    for &s in post.sigma().iter() {
        let mut idx = bins - 1;
        for b in 0..bins {
            if s < bin_edges[b + 1] {
                idx = b;
                break;
            }
        }
        counts[idx] += 1;
    }
    counts
}

/// Evenly spaced histogram edges fixed at run start for comparability.
pub fn default_hist_edges(sigma_init: f64, bins: usize) -> Vec<f64> {
    let hi = 2.0 * sigma_init;
    (0..=bins).map(|i| hi * i as f64 / bins as f64).collect()
}

/// Per-task accuracies of a posterior: the diagonal variant evaluates at the
/// posterior mean; matrix-variate and full variants average the accuracy of
/// `k_eval` sampled networks.
pub fn evaluate(
    posterior: &NetPosterior,
    arch: &Architecture,
    eval_sets: &[(DMatrix<f64>, Vec<usize>)],
    k_eval: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    if eval_sets.is_empty() {
        return Err(TrainError::EmptyTestSet);
    }
    match posterior {
        NetPosterior::Diagonal(_) => {
            let params = posterior.mean_params(arch)?;
            eval_sets
                .iter()
                .map(|(inputs, labels)| Ok(accuracy(&params, inputs, labels)?))
                .collect()
        }
        _ => {
            let k = k_eval.max(1);
            let mut acc = vec![0.0; eval_sets.len()];
            for _ in 0..k {
                let (params, _) = posterior.sample_params(arch, rng)?;
                for (t, (inputs, labels)) in eval_sets.iter().enumerate() {
                    acc[t] += accuracy(&params, inputs, labels)?;
                }
            }
            Ok(acc.into_iter().map(|a| a / k as f64).collect())
        }
    }
}

/// Timing summary over all iterations (monotonic clock).
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TimingStats {
    pub mean_secs_per_iter: f64,
    pub median_secs_per_iter: f64,
}

/// Output of [`train`] and [`train_sgd_baseline`].
pub struct TrainOutput {
    pub posterior: Option<NetPosterior>,
    pub params: Option<NetworkParams>,
    pub metrics: Vec<MetricsRecord>,
    pub timing: TimingStats,
}

fn median(xs: &mut [f64]) -> f64 {
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = xs.len();
    if n == 0 {
        return 0.0;
    }
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

fn record_due(iter1: usize, total: usize, eval_every: usize, iters_per_task: usize) -> bool {
    iter1 % eval_every == 0 || iter1 % iters_per_task == 0 || iter1 == total
}

/// Runs the fixed-point training loop over the stream.
///
/// Evaluation happens every `eval_every` iterations, at the end of each
/// nominal task window, and at the final iteration. Numerical failures abort
/// with the offending iteration and layer.
pub fn train(
    arch: &Architecture,
    config: &TrainerConfig,
    mut posterior: NetPosterior,
    stream: &mut TaskStream,
    eval_sets: &[(DMatrix<f64>, Vec<usize>)],
) -> Result<TrainOutput> {
    config.validate()?;
    let total = config.total_iters;
    let mut noise_rng = seeded_rng(derive_seed(config.seed, &[0x0_15E]));
    let hist_edges = default_hist_edges(config.sigma_init, 40);
    let mut metrics = Vec::new();
    let mut iter_secs = Vec::with_capacity(total);
    let mut window_secs = 0.0;
    let mut window_count = 0usize;

    for iter in 0..total {
        let t0 = Instant::now();
        let batch = stream.next(iter, config.batch_size);
        step(arch, config, &mut posterior, &batch, &mut noise_rng, iter)?;
        let dt = t0.elapsed().as_secs_f64();
        iter_secs.push(dt);
        window_secs += dt;
        window_count += 1;

        let iter1 = iter + 1;
        if record_due(iter1, total, config.eval_every, config.iters_per_task) {
            let seen = ((iter / config.iters_per_task) + 1).min(eval_sets.len());
            let mut eval_rng = seeded_rng(derive_seed(config.seed, &[0xE7A1, iter1 as u64]));
            let accs = evaluate(
                &posterior,
                arch,
                &eval_sets[..seen],
                config.k_eval,
                &mut eval_rng,
            )?;
            let avg = accs.iter().sum::<f64>() / accs.len() as f64;
            metrics.push(MetricsRecord {
                iteration: iter1,
                first_task_acc: accs[0],
                avg_seen_acc: avg,
                per_task_acc: accs,
                secs_per_iter: window_secs / window_count.max(1) as f64,
                min_sigma: posterior.min_sigma(),
                sigma_hist: posterior.sigma_histogram(&hist_edges).ok(),
            });
            window_secs = 0.0;
            window_count = 0;
        }
    }

    let mean = iter_secs.iter().sum::<f64>() / iter_secs.len().max(1) as f64;
    let med = median(&mut iter_secs);
    Ok(TrainOutput {
        posterior: Some(posterior),
        params: None,
        metrics,
        timing: TimingStats {
            mean_secs_per_iter: mean,
            median_secs_per_iter: med,
        },
    })
}

/// One optimizer step: K Monte-Carlo gradient draws, deterministic reduction,
/// variant update.
fn step(
    arch: &Architecture,
    config: &TrainerConfig,
    posterior: &mut NetPosterior,
    batch: &Batch,
    noise_rng: &mut ChaCha8Rng,
    iteration: usize,
) -> Result<()> {
    let k = config.k_train;
    match posterior {
        NetPosterior::Diagonal(p) => {
            let mut eps = Vec::with_capacity(k);
            let mut grads = Vec::with_capacity(k);
            for _ in 0..k {
                let e = sample_noise_vec(p.len(), noise_rng);
                let theta = transform_diagonal(p, &e)?;
                let params = NetworkParams::unflatten(arch, &theta)?;
                let (_, grad) = loss_and_grad(&params, batch, config.loss_reduction)?;
                grads.push(grad.flatten());
                eps.push(e);
            }
            let est = estimate_diagonal(&McBatch::new(eps, grads)?)?;
            let mut next = update_diagonal(p, &est).map_err(|source| TrainError::Numeric {
                iteration,
                layer: 0,
                source,
            })?;
            next.apply_sigma_floor(config.sigma_floor);
            *p = next;
        }
        NetPosterior::MatrixVariate(layers) => {
            let n_layers = layers.len();
            let mut eps: Vec<Vec<DMatrix<f64>>> = vec![Vec::with_capacity(k); n_layers];
            let mut grads: Vec<Vec<DMatrix<f64>>> = vec![Vec::with_capacity(k); n_layers];
            for _ in 0..k {
                let mut noises = Vec::with_capacity(n_layers);
                for post in layers.iter() {
                    let (d1, d2) = post.dims();
                    noises.push(sample_noise_mat(d2, d1, noise_rng));
                }
                let params = mv_params(arch, layers, Some(&noises))?;
                let (_, grad) = loss_and_grad(&params, batch, config.loss_reduction)?;
                for l in 0..n_layers {
                    grads[l].push(stacked_grad(&grad, l));
                }
                for (l, noise) in noises.into_iter().enumerate() {
                    eps[l].push(noise);
                }
            }
            let mut next = Vec::with_capacity(n_layers);
            for (l, post) in layers.iter().enumerate() {
                let mc = McBatch::new(std::mem::take(&mut eps[l]), std::mem::take(&mut grads[l]))?;
                let est = estimate_matrix_variate(&mc, post)?;
                next.push(update_matrix_variate(post, &est).map_err(|source| {
                    TrainError::Numeric {
                        iteration,
                        layer: l,
                        source,
                    }
                })?);
            }
            *layers = next;
        }
        NetPosterior::Full(layers) => {
            let n_layers = layers.len();
            let mut eps: Vec<Vec<DVector<f64>>> = vec![Vec::with_capacity(k); n_layers];
            let mut grads: Vec<Vec<DVector<f64>>> = vec![Vec::with_capacity(k); n_layers];
            for _ in 0..k {
                let mut noises = Vec::with_capacity(n_layers);
                for post in layers.iter() {
                    noises.push(sample_noise_vec(post.dim(), noise_rng));
                }
                let params = full_params(arch, layers, Some(&noises))?;
                let (_, grad) = loss_and_grad(&params, batch, config.loss_reduction)?;
                for l in 0..n_layers {
                    grads[l].push(flat_layer_grad(&grad, l));
                }
                for (l, noise) in noises.into_iter().enumerate() {
                    eps[l].push(noise);
                }
            }
            let mut next = Vec::with_capacity(n_layers);
            for (l, post) in layers.iter().enumerate() {
                let mc = McBatch::new(std::mem::take(&mut eps[l]), std::mem::take(&mut grads[l]))?;
                let est = estimate_full(&mc)?;
                next.push(
                    update_full(post, &est).map_err(|source| TrainError::Numeric {
                        iteration,
                        layer: l,
                        source,
                    })?,
                );
            }
            *layers = next;
        }
    }
    Ok(())
}

/// Plain SGD on the same stream and evaluation protocol, for forgetting-gap
/// comparisons.
pub fn train_sgd_baseline(
    arch: &Architecture,
    config: &TrainerConfig,
    stream: &mut TaskStream,
    eval_sets: &[(DMatrix<f64>, Vec<usize>)],
) -> Result<TrainOutput> {
    config.validate()?;
    let total = config.total_iters;
    let mut rng = seeded_rng(derive_seed(config.seed, &[0x1_417]));
    let mut params = {
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for (n_in, n_out) in arch.layer_shapes() {
            let std = (2.0 / (n_in + n_out) as f64).sqrt();
            weights.push(sample_noise_mat(n_out, n_in, &mut rng) * std);
            biases.push(DVector::zeros(n_out));
        }
        NetworkParams::new(weights, biases)?
    };
    let mut metrics = Vec::new();
    let mut iter_secs = Vec::with_capacity(total);
    let mut window_secs = 0.0;
    let mut window_count = 0usize;

    for iter in 0..total {
        let t0 = Instant::now();
        let batch = stream.next(iter, config.batch_size);
        let (_, grad) = loss_and_grad(&params, &batch, config.loss_reduction)?;
        for l in 0..params.num_layers() {
            let gw = grad.weight(l) * config.sgd_lr;
            *params.weight_mut(l) -= gw;
            let gb = grad.bias(l) * config.sgd_lr;
            *params.bias_mut(l) -= gb;
        }
        let dt = t0.elapsed().as_secs_f64();
        iter_secs.push(dt);
        window_secs += dt;
        window_count += 1;

        let iter1 = iter + 1;
        if record_due(iter1, total, config.eval_every, config.iters_per_task) {
            let seen = ((iter / config.iters_per_task) + 1).min(eval_sets.len());
            let accs: Vec<f64> = eval_sets[..seen]
                .iter()
                .map(|(inputs, labels)| accuracy(&params, inputs, labels))
                .collect::<std::result::Result<_, _>>()?;
            let avg = accs.iter().sum::<f64>() / accs.len() as f64;
            metrics.push(MetricsRecord {
                iteration: iter1,
                first_task_acc: accs[0],
                avg_seen_acc: avg,
                per_task_acc: accs,
                secs_per_iter: window_secs / window_count.max(1) as f64,
                min_sigma: None,
                sigma_hist: None,
            });
            window_secs = 0.0;
            window_count = 0;
        }
    }

    let mean = iter_secs.iter().sum::<f64>() / iter_secs.len().max(1) as f64;
    let med = median(&mut iter_secs);
    Ok(TrainOutput {
        posterior: None,
        params: Some(params),
        metrics,
        timing: TimingStats {
            mean_secs_per_iter: mean,
            median_secs_per_iter: med,
        },
    })
}

/// Ordinary least squares of `y = intercept + slope x`; returns
/// `(intercept, slope, r2)`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    for (&x, &y) in xs.iter().zip(ys.iter()) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
        syy += (y - my) * (y - my);
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let mut ss_res = 0.0;
    for (&x, &y) in xs.iter().zip(ys.iter()) {
        let r = y - (intercept + slope * x);
        ss_res += r * r;
    }
    let r2 = if syy > 0.0 { 1.0 - ss_res / syy } else { 1.0 };
    (intercept, slope, r2)
}

/// Result of the runtime probe: median seconds/iteration per K plus the
/// affine fit over K.
#[derive(Debug, Clone, serde::Serialize)]
pub struct RuntimeProbe {
    pub rows: Vec<(usize, f64)>,
    pub intercept: f64,
    pub slope: f64,
    pub r2: f64,
}

/// Measures median per-iteration wall-clock of the diagonal variant for each
/// Monte-Carlo sample count, on a fixed synthetic workload, single-threaded.
/// The first `warmup` iterations per K are discarded.
pub fn runtime_probe(
    k_values: &[usize],
    iters: usize,
    warmup: usize,
    seed: u64,
) -> Result<RuntimeProbe> {
    if k_values.is_empty() {
        return Err(TrainError::InvalidConfig(
            "k_values must be nonempty".into(),
        ));
    }
    let dataset = crate::stream::synth_dataset(256, 8, 10, seed)?;
    let arch = Architecture::new(vec![64, 24, 10])?;
    let tasks = vec![crate::stream::make_task(0, dataset.dim(), seed)];
    let mut rows = Vec::with_capacity(k_values.len());
    for &k in k_values {
        let config = TrainerConfig {
            variant: Variant::Diagonal,
            k_train: k,
            k_eval: 1,
            batch_size: 64,
            total_iters: warmup + iters,
            iters_per_task: warmup + iters,
            sigma_init: 0.047,
            alpha: 0.5,
            eval_every: warmup + iters,
            seed,
            loss_reduction: LossReduction::Mean,
            sigma_floor: 0.0,
            max_full_dim: DEFAULT_MAX_FULL_DIM,
            sgd_lr: 0.0,
        };
        let mut posterior = NetPosterior::init(&arch, &config)?;
        let mut stream = TaskStream::new(
            dataset.clone(),
            tasks.clone(),
            crate::stream::discrete_schedule(1, warmup + iters),
            seed,
        );
        let mut noise_rng = seeded_rng(derive_seed(seed, &[k as u64]));
        let mut secs = Vec::with_capacity(iters);
        for iter in 0..warmup + iters {
            let batch = stream.next(iter, config.batch_size);
            let t0 = Instant::now();
            step(&arch, &config, &mut posterior, &batch, &mut noise_rng, iter)?;
            let dt = t0.elapsed().as_secs_f64();
            if iter >= warmup {
                secs.push(dt);
            }
        }
        rows.push((k, median(&mut secs)));
    }
    let xs: Vec<f64> = rows.iter().map(|&(k, _)| k as f64).collect();
    let ys: Vec<f64> = rows.iter().map(|&(_, s)| s).collect();
    let (intercept, slope, r2) = linear_fit(&xs, &ys);
    Ok(RuntimeProbe {
        rows,
        intercept,
        slope,
        r2,
    })
}

/// Median per-iteration wall-clock of plain SGD on the same workload as
/// [`runtime_probe`], used as the 1x reference.
pub fn runtime_probe_sgd(iters: usize, warmup: usize, seed: u64) -> Result<f64> {
    let dataset = crate::stream::synth_dataset(256, 8, 10, seed)?;
    let arch = Architecture::new(vec![64, 24, 10])?;
    let tasks = vec![crate::stream::make_task(0, dataset.dim(), seed)];
    let mut stream = TaskStream::new(
        dataset,
        tasks,
        crate::stream::discrete_schedule(1, warmup + iters),
        seed,
    );
    let mut rng = seeded_rng(derive_seed(seed, &[0x56D]));
    let mut params = {
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for (n_in, n_out) in arch.layer_shapes() {
            let std = (2.0 / (n_in + n_out) as f64).sqrt();
            weights.push(sample_noise_mat(n_out, n_in, &mut rng) * std);
            biases.push(DVector::zeros(n_out));
        }
        NetworkParams::new(weights, biases)?
    };
    let mut secs = Vec::with_capacity(iters);
    for iter in 0..warmup + iters {
        let batch = stream.next(iter, 64);
        let t0 = Instant::now();
        let (_, grad) = loss_and_grad(&params, &batch, LossReduction::Mean)?;
        for l in 0..params.num_layers() {
            let gw = grad.weight(l) * 0.1;
            *params.weight_mut(l) -= gw;
            let gb = grad.bias(l) * 0.1;
            *params.bias_mut(l) -= gb;
        }
        let dt = t0.elapsed().as_secs_f64();
        if iter >= warmup {
            secs.push(dt);
        }
    }
    Ok(median(&mut secs))
}
