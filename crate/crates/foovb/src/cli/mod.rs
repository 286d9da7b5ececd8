//! Command implementations behind the `foovb` binary: `run`, `verify`,
//! `bench`, and `export-hist`.
//!
//! Exit codes: 0 success, 1 suite/assertion failure, 2 configuration or
//! usage error, 3 numerical abort during training.

pub mod config;

use std::path::{Path, PathBuf};

pub use config::{
    parse_config_text, profile_by_name, profile_names, ConfigError, DatasetKind, RunConfig,
    ScheduleKind,
};

use crate::checkpoint;
use crate::model::Architecture;
use crate::posterior::derive_seed;
use crate::stream::{
    continuous_schedule, discrete_schedule, load_idx, make_task, pad_to, synth_dataset, Dataset,
    MixtureSchedule, TaskDef,
};
use crate::trainer::{
    self, metrics_to_csv, runtime_probe, runtime_probe_sgd, train, train_sgd_baseline,
    MetricsRecord, NetPosterior, TaskStream, TimingStats, TrainError, TrainerConfig,
};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Stream(#[from] crate::stream::StreamError),
    #[error(transparent)]
    Checkpoint(#[from] checkpoint::CheckpointError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CliError {
    /// Maps errors onto the documented exit codes.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Usage(_) => 2,
            CliError::Train(TrainError::Numeric { .. }) => 3,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

/// Everything a run produces, in memory. `cmd_run` writes these to disk;
/// the verification suites consume them directly.
pub struct RunArtifacts {
    pub config: RunConfig,
    pub arch: Architecture,
    pub posterior: NetPosterior,
    pub metrics: Vec<MetricsRecord>,
    pub metrics_csv: String,
    pub timing: TimingStats,
    pub baseline_metrics: Option<Vec<MetricsRecord>>,
    pub baseline_metrics_csv: Option<String>,
    pub summary_json: String,
}

impl RunArtifacts {
    pub fn final_record(&self) -> &MetricsRecord {
        self.metrics.last().expect("training records at least once")
    }

    pub fn baseline_final_record(&self) -> Option<&MetricsRecord> {
        self.baseline_metrics.as_ref().and_then(|m| m.last())
    }
}

fn trainer_config(cfg: &RunConfig) -> TrainerConfig {
    TrainerConfig {
        variant: cfg.variant,
        k_train: cfg.k_train,
        k_eval: cfg.k_eval,
        batch_size: cfg.batch_size,
        total_iters: cfg.num_tasks * cfg.iters_per_task,
        iters_per_task: cfg.iters_per_task,
        sigma_init: cfg.sigma_init,
        alpha: cfg.alpha,
        eval_every: cfg.eval_every,
        seed: cfg.seed,
        loss_reduction: cfg.loss_reduction,
        sigma_floor: cfg.sigma_floor,
        max_full_dim: cfg.max_full_dim,
        sgd_lr: cfg.sgd_lr,
    }
}

fn load_dataset(cfg: &RunConfig) -> Result<(Dataset, Dataset)> {
    match cfg.dataset {
        DatasetKind::Synth => {
            let total = cfg.synth_n + cfg.synth_test;
            let ds = synth_dataset(
                total,
                cfg.synth_side,
                cfg.synth_classes,
                derive_seed(cfg.seed, &[0xDA7A]),
            )?;
            let (train_ds, test_ds) = ds.split_at(cfg.synth_n)?;
            Ok((train_ds, test_ds))
        }
        DatasetKind::Idx => {
            let dir = cfg
                .data_dir
                .clone()
                .or_else(|| std::env::var("FOOVB_DATA_DIR").ok())
                .ok_or_else(|| {
                    CliError::Usage(
                        "idx dataset needs data_dir or the FOOVB_DATA_DIR environment variable"
                            .into(),
                    )
                })?;
            let dir = PathBuf::from(dir);
            let mut train_ds = load_idx(
                &dir.join("train-images-idx3-ubyte"),
                &dir.join("train-labels-idx1-ubyte"),
            )?;
            let mut test_ds = load_idx(
                &dir.join("t10k-images-idx3-ubyte"),
                &dir.join("t10k-labels-idx1-ubyte"),
            )?;
            if cfg.pad_side > 0 {
                train_ds = pad_to(&train_ds, cfg.pad_side)?;
                test_ds = pad_to(&test_ds, cfg.pad_side)?;
            }
            Ok((train_ds, test_ds))
        }
    }
}

fn build_schedule(cfg: &RunConfig) -> Result<MixtureSchedule> {
    Ok(match cfg.schedule {
        ScheduleKind::Discrete => discrete_schedule(cfg.num_tasks, cfg.iters_per_task),
        ScheduleKind::Continuous => {
            continuous_schedule(cfg.num_tasks, cfg.iters_per_task, cfg.crossfade_frac)?
        }
    })
}

/// Runs one experiment end to end, plus the SGD baseline when configured.
pub fn execute_run(cfg: &RunConfig) -> Result<RunArtifacts> {
    let (train_ds, test_ds) = load_dataset(cfg)?;
    let tasks: Vec<TaskDef> = (0..cfg.num_tasks)
        .map(|t| make_task(t, train_ds.dim(), derive_seed(cfg.seed, &[0x7A5C])))
        .collect();
    let mut sizes = vec![train_ds.dim()];
    sizes.extend(cfg.hidden.iter().copied());
    sizes.push(train_ds.classes());
    let arch = Architecture::new(sizes).map_err(TrainError::Model)?;
    let eval_sets: Vec<_> = tasks
        .iter()
        .map(|t| crate::stream::task_testset(&test_ds, t))
        .collect();

    let tconfig = trainer_config(cfg);
    let posterior = NetPosterior::init(&arch, &tconfig)?;
    let mut stream = TaskStream::new(
        train_ds.clone(),
        tasks.clone(),
        build_schedule(cfg)?,
        cfg.seed,
    );
    let out = train(&arch, &tconfig, posterior, &mut stream, &eval_sets)?;
    let metrics_csv = metrics_to_csv(&out.metrics, cfg.num_tasks);

    let (baseline_metrics, baseline_csv) = if cfg.baseline {
        let mut stream = TaskStream::new(
            train_ds.clone(),
            tasks.clone(),
            build_schedule(cfg)?,
            cfg.seed,
        );
        let sgd = train_sgd_baseline(&arch, &tconfig, &mut stream, &eval_sets)?;
        let csv = metrics_to_csv(&sgd.metrics, cfg.num_tasks);
        (Some(sgd.metrics), Some(csv))
    } else {
        (None, None)
    };

    let posterior = out
        .posterior
        .expect("fixed-point training returns a posterior");
    let final_rec = out.metrics.last().expect("at least one record");
    let summary = serde_json::json!({
        "version": crate::version_string(),
        "config": cfg,
        "final": final_rec,
        "timing": out.timing,
        "baseline_final": baseline_metrics.as_ref().and_then(|m| m.last()),
    });
    let summary_json = serde_json::to_string_pretty(&summary).expect("serializable summary");

    Ok(RunArtifacts {
        config: cfg.clone(),
        arch,
        posterior,
        metrics: out.metrics,
        metrics_csv,
        timing: out.timing,
        baseline_metrics,
        baseline_metrics_csv: baseline_csv,
        summary_json,
    })
}

/// Exclusive ownership of an output directory for the lifetime of a command.
struct DirLock {
    path: PathBuf,
}

impl DirLock {
    fn acquire(dir: &Path) -> Result<DirLock> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(".lock");
        match std::fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
        {
            Ok(_) => Ok(DirLock { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(CliError::Usage(
                format!("output directory is locked by {}", path.display()),
            )),
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

/// Executes a config file and writes metrics CSV, summary JSON, a posterior
/// checkpoint, and (diagonal variant) a sigma histogram CSV into the
/// configured output directory.
pub fn cmd_run(config_path: &Path) -> i32 {
    match run_inner(config_path) {
        Ok(out_dir) => {
            println!("run complete; artifacts in {}", out_dir.display());
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn run_inner(config_path: &Path) -> Result<PathBuf> {
    let text = std::fs::read_to_string(config_path).map_err(|e| {
        CliError::Usage(format!(
            "cannot read config file {}: {e}",
            config_path.display()
        ))
    })?;
    let cfg = parse_config_text(&text, &config_path.display().to_string())?;
    let out_dir = PathBuf::from(&cfg.out_dir);
    let _lock = DirLock::acquire(&out_dir)?;
    let artifacts = execute_run(&cfg)?;

    std::fs::write(out_dir.join("metrics.csv"), &artifacts.metrics_csv)?;
    std::fs::write(out_dir.join("summary.json"), &artifacts.summary_json)?;
    checkpoint::save(
        &out_dir.join("posterior.ckpt"),
        &artifacts.arch,
        &artifacts.posterior,
    )?;
    if let Some(csv) = &artifacts.baseline_metrics_csv {
        std::fs::write(out_dir.join("baseline_metrics.csv"), csv)?;
    }
    if let NetPosterior::Diagonal(p) = &artifacts.posterior {
        let edges = trainer::default_hist_edges(cfg.sigma_init, 40);
        let counts = trainer::sigma_histogram(p, &edges);
        std::fs::write(out_dir.join("sigma_hist.csv"), hist_csv(&edges, &counts))?;
    }
    Ok(out_dir)
}

fn hist_csv(edges: &[f64], counts: &[u64]) -> String {
    let mut out = String::from("bin_left,bin_right,count\n");
    for (i, &c) in counts.iter().enumerate() {
        out.push_str(&format!("{},{},{}\n", edges[i], edges[i + 1], c));
    }
    out
}

/// Runs the named verification suite (or all of them) and prints one
/// PASS/FAIL line per suite with its residual statistics.
pub fn cmd_verify(filter: Option<&str>) -> i32 {
    let names: Vec<&'static str> = match filter {
        None => crate::verify::suite_names().to_vec(),
        Some(f) => {
            let matched: Vec<_> = crate::verify::suite_names()
                .iter()
                .copied()
                .filter(|n| *n == f)
                .collect();
            if matched.is_empty() {
                eprintln!(
                    "unknown suite `{f}`; valid suites: {}",
                    crate::verify::suite_names().join(", ")
                );
                return 2;
            }
            matched
        }
    };
    let mut all_passed = true;
    for name in names {
        let report = crate::verify::run_suite(name);
        println!(
            "suite {:<16} {}",
            report.name,
            if report.passed { "PASS" } else { "FAIL" }
        );
        for line in &report.lines {
            println!("    {line}");
        }
        all_passed &= report.passed;
    }
    if all_passed {
        0
    } else {
        1
    }
}

/// Benchmarks seconds/iteration against the Monte-Carlo sample count and
/// writes the table plus an affine fit. Non-monotone timings exit 1.
pub fn cmd_bench(k_list: &[usize], iters: usize, out_dir: &Path) -> i32 {
    match bench_inner(k_list, iters, out_dir) {
        Ok(monotone) => {
            if monotone {
                0
            } else {
                eprintln!("error: seconds/iteration not monotone in K");
                1
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn bench_inner(k_list: &[usize], iters: usize, out_dir: &Path) -> Result<bool> {
    if k_list.is_empty() {
        return Err(CliError::Usage("--k needs at least one value".into()));
    }
    std::fs::create_dir_all(out_dir)?;
    let probe = runtime_probe(k_list, iters, 10, 7)?;
    let sgd_secs = runtime_probe_sgd(iters, 10, 7)?;
    let mut csv = String::from("k,secs_per_iter,ratio_vs_sgd\n");
    for &(k, secs) in &probe.rows {
        csv.push_str(&format!("{},{},{}\n", k, secs, secs / sgd_secs));
        println!(
            "K = {:>3}: {:.6} s/iter ({:.2}x SGD)",
            k,
            secs,
            secs / sgd_secs
        );
    }
    std::fs::write(out_dir.join("bench.csv"), &csv)?;
    println!("sgd baseline: {sgd_secs:.6} s/iter");
    println!(
        "affine fit: secs/iter = {:.3e} + {:.3e} * K, R^2 = {:.4}",
        probe.intercept, probe.slope, probe.r2
    );
    println!("reference ratios at desk scale are hardware-dependent; typical published figures are ~3.1x SGD at K = 2 and ~12x at K = 10");
    let monotone = probe.rows.windows(2).all(|w| w[1].1 >= w[0].1);
    Ok(monotone)
}

/// Exports the sigma histogram of a diagonal checkpoint as CSV.
pub fn cmd_export_hist(ckpt: &Path, bins: usize, out: Option<&Path>) -> i32 {
    match export_hist_inner(ckpt, bins, out) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn export_hist_inner(ckpt: &Path, bins: usize, out: Option<&Path>) -> Result<()> {
    if bins == 0 {
        return Err(CliError::Usage("--bins must be at least 1".into()));
    }
    let (_, posterior) = checkpoint::load(ckpt)?;
    let diag = match &posterior {
        NetPosterior::Diagonal(p) => p,
        other => {
            return Err(CliError::Usage(format!(
                "checkpoint holds a {} posterior; sigma histograms need the diagonal variant",
                match other {
                    NetPosterior::MatrixVariate(_) => "matrix_variate",
                    NetPosterior::Full(_) => "full",
                    NetPosterior::Diagonal(_) => unreachable!(),
                }
            )))
        }
    };
    let max_sigma = diag
        .sigma()
        .iter()
        .cloned()
        .fold(f64::MIN_POSITIVE, f64::max);
    let hi = max_sigma * (1.0 + 1e-9);
    let edges: Vec<f64> = (0..=bins).map(|i| hi * i as f64 / bins as f64).collect();
    let counts = trainer::sigma_histogram(diag, &edges);
    let csv = hist_csv(&edges, &counts);
    match out {
        Some(path) => std::fs::write(path, csv)?,
        None => print!("{csv}"),
    }
    Ok(())
}
