//! Run configuration: flat `key = value` text files with named profiles.
//!
//! A config file selects a base profile (`profile = desk-small` by default)
//! and overrides individual keys. Unknown keys are rejected with the file and
//! line of the offense, so typos cannot silently fall back to defaults.

use serde::{Deserialize, Serialize};

use crate::model::LossReduction;
use crate::posterior::DEFAULT_MAX_FULL_DIM;
use crate::trainer::Variant;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Synth,
    Idx,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Discrete,
    Continuous,
}

/// Full description of one experiment run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub profile: String,
    pub variant: Variant,
    pub dataset: DatasetKind,
    pub schedule: ScheduleKind,
    pub num_tasks: usize,
    pub iters_per_task: usize,
    pub crossfade_frac: f64,
    pub k_train: usize,
    pub k_eval: usize,
    pub batch_size: usize,
    pub sigma_init: f64,
    pub alpha: f64,
    pub eval_every: usize,
    pub seed: u64,
    pub loss_reduction: LossReduction,
    pub sigma_floor: f64,
    pub max_full_dim: usize,
    pub sgd_lr: f64,
    /// Hidden layer widths.
    pub hidden: Vec<usize>,
    pub synth_n: usize,
    pub synth_side: usize,
    pub synth_classes: usize,
    pub synth_test: usize,
    /// Zero-pad images to this side length; 0 disables.
    pub pad_side: usize,
    /// IDX data directory; falls back to the FOOVB_DATA_DIR environment
    /// variable when unset.
    pub data_dir: Option<String>,
    pub out_dir: String,
    /// Also run the SGD baseline on an identical stream.
    pub baseline: bool,
}

#[derive(Debug, thiserror::Error)]
#[error("{file}:{line}: {message}")]
pub struct ConfigError {
    pub file: String,
    pub line: usize,
    pub message: String,
}

/// Small synthetic benchmark: 8x8 ten-class prototypes, three permuted
/// tasks, hidden widths 32. Completes in well under five minutes.
pub fn profile_desk_small() -> RunConfig {
    RunConfig {
        profile: "desk-small".into(),
        variant: Variant::Diagonal,
        dataset: DatasetKind::Synth,
        schedule: ScheduleKind::Discrete,
        num_tasks: 3,
        iters_per_task: 4000,
        crossfade_frac: 0.25,
        k_train: 10,
        k_eval: 64,
        batch_size: 128,
        sigma_init: 0.047,
        alpha: 0.5,
        eval_every: 500,
        seed: 1234,
        loss_reduction: LossReduction::Mean,
        sigma_floor: 0.0,
        max_full_dim: DEFAULT_MAX_FULL_DIM,
        sgd_lr: 0.1,
        hidden: vec![32, 32],
        synth_n: 2000,
        synth_side: 8,
        synth_classes: 10,
        synth_test: 400,
        pad_side: 0,
        data_dir: None,
        out_dir: "runs/desk-small".into(),
        baseline: true,
    }
}

/// Desk-small with gradual task transitions.
pub fn profile_desk_continuous() -> RunConfig {
    RunConfig {
        profile: "desk-continuous".into(),
        schedule: ScheduleKind::Continuous,
        out_dir: "runs/desk-continuous".into(),
        ..profile_desk_small()
    }
}

/// Ten-task permuted MNIST with hard task switches: hidden widths 100,
/// inputs padded to 32x32, sigma_init 0.047, twenty nominal epochs per task.
/// Requires IDX files under `data_dir` / FOOVB_DATA_DIR. The matrix-variate
/// preset for this benchmark is alpha = 0.5 with k_train = k_eval = 2500.
pub fn profile_mnist_discrete() -> RunConfig {
    RunConfig {
        profile: "mnist-discrete".into(),
        variant: Variant::Diagonal,
        dataset: DatasetKind::Idx,
        schedule: ScheduleKind::Discrete,
        num_tasks: 10,
        iters_per_task: 9380,
        crossfade_frac: 0.25,
        k_train: 10,
        k_eval: 2500,
        batch_size: 128,
        sigma_init: 0.047,
        alpha: 0.5,
        eval_every: 2000,
        seed: 1234,
        loss_reduction: LossReduction::Mean,
        sigma_floor: 0.0,
        max_full_dim: DEFAULT_MAX_FULL_DIM,
        sgd_lr: 0.01,
        hidden: vec![100, 100],
        synth_n: 2000,
        synth_side: 8,
        synth_classes: 10,
        synth_test: 400,
        pad_side: 32,
        data_dir: None,
        out_dir: "runs/mnist-discrete".into(),
        baseline: false,
    }
}

/// Ten-task permuted MNIST with gradual transitions: hidden widths 200,
/// sigma_init 0.06; the matrix-variate preset uses alpha = 0.6.
pub fn profile_mnist_continuous() -> RunConfig {
    RunConfig {
        profile: "mnist-continuous".into(),
        schedule: ScheduleKind::Continuous,
        sigma_init: 0.06,
        alpha: 0.6,
        hidden: vec![200, 200],
        out_dir: "runs/mnist-continuous".into(),
        ..profile_mnist_discrete()
    }
}

pub fn profile_by_name(name: &str) -> Option<RunConfig> {
    match name {
        "desk-small" => Some(profile_desk_small()),
        "desk-continuous" => Some(profile_desk_continuous()),
        "mnist-discrete" => Some(profile_mnist_discrete()),
        "mnist-continuous" => Some(profile_mnist_continuous()),
        _ => None,
    }
}

pub fn profile_names() -> &'static [&'static str] {
    &[
        "desk-small",
        "desk-continuous",
        "mnist-discrete",
        "mnist-continuous",
    ]
}

/// Parses `key = value` text. Lines are trimmed; blank lines and lines
/// starting with `#` are ignored; inline `#` comments are stripped.
pub fn parse_config_text(text: &str, file_label: &str) -> Result<RunConfig, ConfigError> {
    let err = |line: usize, message: String| ConfigError {
        file: file_label.to_string(),
        line,
        message,
    };

    let mut pairs = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let stripped = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        };
        let stripped = stripped.trim();
        if stripped.is_empty() {
            continue;
        }
        let Some((key, value)) = stripped.split_once('=') else {
            return Err(err(
                line_no,
                format!("expected `key = value`, got `{stripped}`"),
            ));
        };
        pairs.push((line_no, key.trim().to_string(), value.trim().to_string()));
    }

    let mut config = profile_desk_small();
    for (line_no, key, value) in &pairs {
        if key == "profile" {
            config = profile_by_name(value).ok_or_else(|| {
                err(
                    *line_no,
                    format!(
                        "unknown profile `{value}`; valid profiles: {}",
                        profile_names().join(", ")
                    ),
                )
            })?;
        }
    }
    for (line_no, key, value) in &pairs {
        if key == "profile" {
            continue;
        }
        apply_key(&mut config, key, value).map_err(|message| err(*line_no, message))?;
    }
    Ok(config)
}

fn apply_key(config: &mut RunConfig, key: &str, value: &str) -> Result<(), String> {
    fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, String>
    where
        T::Err: std::fmt::Display,
    {
        value
            .parse::<T>()
            .map_err(|e| format!("invalid value `{value}` for `{key}`: {e}"))
    }

    match key {
        "variant" => {
            config.variant = match value {
                "diagonal" => Variant::Diagonal,
                "matrix_variate" => Variant::MatrixVariate,
                "full" => Variant::Full,
                _ => {
                    return Err(format!(
                        "invalid variant `{value}` (diagonal, matrix_variate, full)"
                    ))
                }
            }
        }
        "dataset" => {
            config.dataset = match value {
                "synth" => DatasetKind::Synth,
                "idx" => DatasetKind::Idx,
                _ => return Err(format!("invalid dataset `{value}` (synth, idx)")),
            }
        }
        "schedule" => {
            config.schedule = match value {
                "discrete" => ScheduleKind::Discrete,
                "continuous" => ScheduleKind::Continuous,
                _ => return Err(format!("invalid schedule `{value}` (discrete, continuous)")),
            }
        }
        "loss_reduction" => {
            config.loss_reduction = match value {
                "mean" => LossReduction::Mean,
                "sum" => LossReduction::Sum,
                _ => return Err(format!("invalid loss_reduction `{value}` (mean, sum)")),
            }
        }
        "num_tasks" => config.num_tasks = parse(key, value)?,
        "iters_per_task" => config.iters_per_task = parse(key, value)?,
        "crossfade_frac" => config.crossfade_frac = parse(key, value)?,
        "k_train" => config.k_train = parse(key, value)?,
        "k_eval" => config.k_eval = parse(key, value)?,
        "batch_size" => config.batch_size = parse(key, value)?,
        "sigma_init" => config.sigma_init = parse(key, value)?,
        "alpha" => config.alpha = parse(key, value)?,
        "eval_every" => config.eval_every = parse(key, value)?,
        "seed" => config.seed = parse(key, value)?,
        "sigma_floor" => config.sigma_floor = parse(key, value)?,
        "max_full_dim" => config.max_full_dim = parse(key, value)?,
        "sgd_lr" => config.sgd_lr = parse(key, value)?,
        "hidden" => {
            let widths: Result<Vec<usize>, _> = value
                .split(',')
                .map(|s| s.trim().parse::<usize>())
                .collect();
            config.hidden =
                widths.map_err(|e| format!("invalid value `{value}` for `hidden`: {e}"))?;
            if config.hidden.is_empty() {
                return Err("hidden needs at least one width".into());
            }
        }
        "synth_n" => config.synth_n = parse(key, value)?,
        "synth_side" => config.synth_side = parse(key, value)?,
        "synth_classes" => config.synth_classes = parse(key, value)?,
        "synth_test" => config.synth_test = parse(key, value)?,
        "pad_side" => config.pad_side = parse(key, value)?,
        "data_dir" => config.data_dir = Some(value.to_string()),
        "out_dir" => config.out_dir = value.to_string(),
        "baseline" => config.baseline = parse(key, value)?,
        other => {
            return Err(format!(
                "unknown key `{other}`; see the documented key list"
            ))
        }
    }
    Ok(())
}
