//! Dataset ingestion and task-agnostic stream generation.
//!
//! Tasks are pixel permutations of a base image dataset. Streams are defined
//! by a per-iteration mixture distribution over tasks: one-hot with hard
//! switches (discrete) or trapezoidal crossfades where adjacent tasks blend
//! linearly (continuous). Consumers of [`next_batch`] never see task
//! identity; per-task test sets for evaluation are built separately through
//! [`task_testset`].

use nalgebra::DMatrix;
use rand::Rng;
use thiserror::Error;

use crate::model::Batch;
use crate::posterior::derive_seed;

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Error)]
pub enum StreamError {
    #[error("bad magic number: expected {expected:#010x}, found {found:#010x}")]
    BadMagic { expected: u32, found: u32 },
    #[error("truncated file: needed {needed} bytes, got {got}")]
    TruncatedFile { needed: usize, got: usize },
    #[error("image/label count mismatch: {images} images vs {labels} labels")]
    CountMismatch { images: usize, labels: usize },
    #[error("cannot shrink from side {from} to {to}")]
    ShrinkNotAllowed { from: usize, to: usize },
    #[error("invalid argument: {0}")]
    InvalidArg(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, StreamError>;

/// Labeled image collection; pixels live in [0,1], images are square.
#[derive(Debug, Clone)]
pub struct Dataset {
    images: DMatrix<f64>,
    labels: Vec<usize>,
    side: usize,
    classes: usize,
}

impl Dataset {
    pub fn new(
        images: DMatrix<f64>,
        labels: Vec<usize>,
        side: usize,
        classes: usize,
    ) -> Result<Self> {
        if images.nrows() == 0 {
            return Err(StreamError::InvalidArg("dataset is empty".into()));
        }
        if images.nrows() != labels.len() {
            return Err(StreamError::CountMismatch {
                images: images.nrows(),
                labels: labels.len(),
            });
        }
        if images.ncols() != side * side {
            return Err(StreamError::InvalidArg(format!(
                "side {side} implies {} pixels, images have {}",
                side * side,
                images.ncols()
            )));
        }
        if images.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
            return Err(StreamError::InvalidArg("pixels must lie in [0,1]".into()));
        }
        Ok(Self {
            images,
            labels,
            side,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.images.ncols()
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn images(&self) -> &DMatrix<f64> {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Splits off the first `k` examples, returning `(head, tail)`.
    pub fn split_at(&self, k: usize) -> Result<(Dataset, Dataset)> {
        if k == 0 || k >= self.len() {
            return Err(StreamError::InvalidArg(format!(
                "split point {k} outside (0, {})",
                self.len()
            )));
        }
        let head = Dataset {
            images: self.images.rows(0, k).clone_owned(),
            labels: self.labels[..k].to_vec(),
            side: self.side,
            classes: self.classes,
        };
        let tail = Dataset {
            images: self.images.rows(k, self.len() - k).clone_owned(),
            labels: self.labels[k..].to_vec(),
            side: self.side,
            classes: self.classes,
        };
        Ok((head, tail))
    }
}

/// One pixel-permutation task. Task 0 is the identity permutation by
/// convention; higher ids use a seeded Fisher-Yates shuffle.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskDef {
    task_id: usize,
    permutation: Vec<usize>,
    seed: u64,
}

impl TaskDef {
    pub fn task_id(&self) -> usize {
        self.task_id
    }

    pub fn permutation(&self) -> &[usize] {
        &self.permutation
    }

    /// Applies the permutation to one flat image: `out[i] = img[perm[i]]`.
    pub fn apply(&self, img: &[f64]) -> Vec<f64> {
        self.permutation.iter().map(|&p| img[p]).collect()
    }

    /// Permutation sending `apply` output back to the original layout.
    pub fn inverse(&self) -> TaskDef {
        let mut inv = vec![0usize; self.permutation.len()];
        for (i, &p) in self.permutation.iter().enumerate() {
            inv[p] = i;
        }
        TaskDef {
            task_id: self.task_id,
            permutation: inv,
            seed: self.seed,
        }
    }
}

/// Builds the permutation task with the given id over `dim` pixels.
pub fn make_task(task_id: usize, dim: usize, base_seed: u64) -> TaskDef {
    let mut permutation: Vec<usize> = (0..dim).collect();
    if task_id > 0 {
        let mut rng = crate::posterior::seeded_rng(derive_seed(base_seed, &[task_id as u64]));
        // Fisher-Yates
        for i in (1..dim).rev() {
            let j = rng.random_range(0..=i);
            permutation.swap(i, j);
        }
    }
    TaskDef {
        task_id,
        permutation,
        seed: base_seed,
    }
}

/// Per-iteration task-mixture distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureSchedule {
    num_tasks: usize,
    iters_per_task: usize,
    total_iters: usize,
    /// None for hard switches; Some(fraction of a task window) for linear
    /// crossfades centered on each nominal boundary.
    crossfade_frac: Option<f64>,
}

impl MixtureSchedule {
    pub fn num_tasks(&self) -> usize {
        self.num_tasks
    }

    pub fn total_iters(&self) -> usize {
        self.total_iters
    }

    pub fn iters_per_task(&self) -> usize {
        self.iters_per_task
    }

    /// Probability vector over tasks at the given iteration. Sums to one;
    /// at most two adjacent tasks are active.
    pub fn probs(&self, iteration: usize) -> Vec<f64> {
        let mut probs = vec![0.0; self.num_tasks];
        let p = self.iters_per_task as f64;
        let t = iteration as f64;
        let current = ((t / p).floor() as usize).min(self.num_tasks - 1);
        if let Some(frac) = self.crossfade_frac {
            let l = frac * p;
            let left = current as f64 * p;
            let right = (current + 1) as f64 * p;
            if current > 0 && t < left + l / 2.0 {
                let u = (t - (left - l / 2.0)) / l;
                probs[current - 1] = 1.0 - u;
                probs[current] = u;
                return probs;
            }
            if current + 1 < self.num_tasks && t >= right - l / 2.0 {
                let u = (t - (right - l / 2.0)) / l;
                probs[current] = 1.0 - u;
                probs[current + 1] = u;
                return probs;
            }
        }
        probs[current] = 1.0;
        probs
    }
}

/// Hard task switches every `iters_per_task` iterations; consumers receive
/// no boundary signal.
pub fn discrete_schedule(num_tasks: usize, iters_per_task: usize) -> MixtureSchedule {
    assert!(num_tasks > 0 && iters_per_task > 0);
    MixtureSchedule {
        num_tasks,
        iters_per_task,
        total_iters: num_tasks * iters_per_task,
        crossfade_frac: None,
    }
}

/// Gradual transitions: adjacent tasks crossfade linearly over a window of
/// `crossfade_frac * iters_per_task` iterations centered on each nominal
/// boundary.
pub fn continuous_schedule(
    num_tasks: usize,
    iters_per_task: usize,
    crossfade_frac: f64,
) -> Result<MixtureSchedule> {
    assert!(num_tasks > 0 && iters_per_task > 0);
    if !(crossfade_frac > 0.0 && crossfade_frac < 1.0) {
        return Err(StreamError::InvalidArg(format!(
            "crossfade_frac must lie in (0,1), got {crossfade_frac}"
        )));
    }
    Ok(MixtureSchedule {
        num_tasks,
        iters_per_task,
        total_iters: num_tasks * iters_per_task,
        crossfade_frac: Some(crossfade_frac),
    })
}

/// Draws one training batch: each slot independently samples a task from the
/// schedule's current mixture, then an example uniformly with replacement,
/// then applies that task's pixel permutation.
pub fn next_batch<R: Rng>(
    dataset: &Dataset,
    tasks: &[TaskDef],
    schedule: &MixtureSchedule,
    iteration: usize,
    batch_size: usize,
    rng: &mut R,
) -> Batch {
    assert!(batch_size > 0);
    assert_eq!(tasks.len(), schedule.num_tasks());
    let probs = schedule.probs(iteration);
    let d = dataset.dim();
    let mut inputs = DMatrix::zeros(batch_size, d);
    let mut labels = Vec::with_capacity(batch_size);
    for slot in 0..batch_size {
        let u: f64 = rng.random();
        let mut task_idx = probs.len() - 1;
        let mut acc = 0.0;
        for (i, &p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                task_idx = i;
                break;
            }
        }
        let example = rng.random_range(0..dataset.len());
        let perm = tasks[task_idx].permutation();
        for (j, &p) in perm.iter().enumerate() {
            inputs[(slot, j)] = dataset.images()[(example, p)];
        }
        labels.push(dataset.labels()[example]);
    }
    Batch::new(inputs, labels).expect("batch construction is shape-consistent")
}

/// Pure per-task evaluation set: every image permuted by exactly this task.
pub fn task_testset(dataset: &Dataset, task: &TaskDef) -> (DMatrix<f64>, Vec<usize>) {
    let n = dataset.len();
    let d = dataset.dim();
    let mut inputs = DMatrix::zeros(n, d);
    for e in 0..n {
        for (j, &p) in task.permutation().iter().enumerate() {
            inputs[(e, j)] = dataset.images()[(e, p)];
        }
    }
    (inputs, dataset.labels().to_vec())
}

/// Parses a big-endian IDX image/label pair into a dataset; pixel bytes are
/// scaled by 1/255.
pub fn load_idx(images_path: &std::path::Path, labels_path: &std::path::Path) -> Result<Dataset> {
    let image_bytes = std::fs::read(images_path)?;
    let label_bytes = std::fs::read(labels_path)?;
    parse_idx(&image_bytes, &label_bytes)
}

fn read_u32_be(bytes: &[u8], pos: usize) -> Result<u32> {
    if bytes.len() < pos + 4 {
        return Err(StreamError::TruncatedFile {
            needed: pos + 4,
            got: bytes.len(),
        });
    }
    Ok(u32::from_be_bytes([
        bytes[pos],
        bytes[pos + 1],
        bytes[pos + 2],
        bytes[pos + 3],
    ]))
}

/// Parses raw IDX byte buffers (exposed for fixture-based tests).
pub fn parse_idx(image_bytes: &[u8], label_bytes: &[u8]) -> Result<Dataset> {
    let magic = read_u32_be(image_bytes, 0)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(StreamError::BadMagic {
            expected: IDX_IMAGES_MAGIC,
            found: magic,
        });
    }
    let n = read_u32_be(image_bytes, 4)? as usize;
    let rows = read_u32_be(image_bytes, 8)? as usize;
    let cols = read_u32_be(image_bytes, 12)? as usize;
    if rows != cols {
        return Err(StreamError::InvalidArg(format!(
            "expected square images, got {rows}x{cols}"
        )));
    }
    let needed = 16 + n * rows * cols;
    if image_bytes.len() < needed {
        return Err(StreamError::TruncatedFile {
            needed,
            got: image_bytes.len(),
        });
    }

    let lmagic = read_u32_be(label_bytes, 0)?;
    if lmagic != IDX_LABELS_MAGIC {
        return Err(StreamError::BadMagic {
            expected: IDX_LABELS_MAGIC,
            found: lmagic,
        });
    }
    let ln = read_u32_be(label_bytes, 4)? as usize;
    if ln != n {
        return Err(StreamError::CountMismatch {
            images: n,
            labels: ln,
        });
    }
    let lneeded = 8 + ln;
    if label_bytes.len() < lneeded {
        return Err(StreamError::TruncatedFile {
            needed: lneeded,
            got: label_bytes.len(),
        });
    }

    let d = rows * cols;
    let mut images = DMatrix::zeros(n, d);
    for e in 0..n {
        for px in 0..d {
            images[(e, px)] = image_bytes[16 + e * d + px] as f64 / 255.0;
        }
    }
    let labels: Vec<usize> = label_bytes[8..8 + ln].iter().map(|&b| b as usize).collect();
    let classes = labels.iter().copied().max().unwrap_or(0) + 1;
    Dataset::new(images, labels, rows, classes)
}

/// Zero-pads every image, centered, to the requested side length.
pub fn pad_to(dataset: &Dataset, side: usize) -> Result<Dataset> {
    let old = dataset.side();
    if side < old {
        return Err(StreamError::ShrinkNotAllowed {
            from: old,
            to: side,
        });
    }
    if side == old {
        return Ok(dataset.clone());
    }
    let off = (side - old) / 2;
    let n = dataset.len();
    let mut images = DMatrix::zeros(n, side * side);
    for e in 0..n {
        for r in 0..old {
            for c in 0..old {
                images[(e, (r + off) * side + (c + off))] = dataset.images()[(e, r * old + c)];
            }
        }
    }
    Dataset::new(images, dataset.labels().to_vec(), side, dataset.classes())
}

/// Deterministic synthetic dataset: per-class Gaussian prototypes with pixel
/// noise, clipped to [0,1]. Labels are assigned round-robin so classes stay
/// balanced to within one example. Requires no download and is learnable by
/// a small MLP.
pub fn synth_dataset(n: usize, side: usize, classes: usize, seed: u64) -> Result<Dataset> {
    if n == 0 || classes == 0 {
        return Err(StreamError::InvalidArg(
            "n and classes must be positive".into(),
        ));
    }
    let d = side * side;
    let mut rng = crate::posterior::seeded_rng(derive_seed(seed, &[0x5_E7]));
    let mut prototypes = Vec::with_capacity(classes);
    for _ in 0..classes {
        let proto: Vec<f64> = (0..d).map(|_| 0.15 + 0.7 * rng.random::<f64>()).collect();
        prototypes.push(proto);
    }
    let noise = 0.1;
    let mut images = DMatrix::zeros(n, d);
    let mut labels = Vec::with_capacity(n);
    for e in 0..n {
        let class = e % classes;
        for px in 0..d {
            let z: f64 = rng.sample(rand_distr::StandardNormal);
            images[(e, px)] = (prototypes[class][px] + noise * z).clamp(0.0, 1.0);
        }
        labels.push(class);
    }
    Dataset::new(images, labels, side, classes)
}
