//! Binary posterior checkpoints.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! "FVBC" | u32 version=1 | u8 variant | u32 n_sizes | u32 layer_size ...
//! variant 0 (diagonal):       u64 len | mu f64*len | sigma f64*len
//! variant 1 (matrix-variate): u32 layers | per layer:
//!                             u32 d1 | u32 d2 | mean (d2*d1, row-major)
//!                             | a (d1*d1) | b (d2*d2)
//! variant 2 (full):           u32 layers | per layer:
//!                             u64 d | mu f64*d | a (d*d, row-major)
//! ```

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::model::Architecture;
use crate::posterior::{DiagonalPosterior, FullPosterior, MatrixVariatePosterior};
use crate::trainer::NetPosterior;

const MAGIC: &[u8; 4] = b"FVBC";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("bad checkpoint magic")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("invalid posterior data: {0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, CheckpointError>;

fn push_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn push_u64(buf: &mut Vec<u8>, v: u64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn push_f64(buf: &mut Vec<u8>, v: f64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn push_matrix_row_major(buf: &mut Vec<u8>, m: &DMatrix<f64>) {
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            push_f64(buf, m[(i, j)]);
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(CheckpointError::Corrupt(format!(
                "needed {} bytes at offset {}, file has {}",
                n,
                self.pos,
                self.bytes.len()
            )));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn f64_vec(&mut self, n: usize) -> Result<DVector<f64>> {
        let raw = self.take(8 * n)?;
        Ok(DVector::from_fn(n, |i, _| {
            f64::from_le_bytes(raw[8 * i..8 * i + 8].try_into().unwrap())
        }))
    }

    fn matrix_row_major(&mut self, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
        let raw = self.take(8 * rows * cols)?;
        Ok(DMatrix::from_fn(rows, cols, |i, j| {
            let k = (i * cols + j) * 8;
            f64::from_le_bytes(raw[k..k + 8].try_into().unwrap())
        }))
    }
}

/// Serializes architecture plus posterior.
pub fn encode(arch: &Architecture, posterior: &NetPosterior) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    push_u32(&mut buf, VERSION);
    let variant_tag = match posterior {
        NetPosterior::Diagonal(_) => 0u8,
        NetPosterior::MatrixVariate(_) => 1,
        NetPosterior::Full(_) => 2,
    };
    buf.push(variant_tag);
    push_u32(&mut buf, arch.layer_sizes().len() as u32);
    for &s in arch.layer_sizes() {
        push_u32(&mut buf, s as u32);
    }
    match posterior {
        NetPosterior::Diagonal(p) => {
            push_u64(&mut buf, p.len() as u64);
            for &x in p.mu().iter() {
                push_f64(&mut buf, x);
            }
            for &x in p.sigma().iter() {
                push_f64(&mut buf, x);
            }
        }
        NetPosterior::MatrixVariate(layers) => {
            push_u32(&mut buf, layers.len() as u32);
            for l in layers {
                let (d1, d2) = l.dims();
                push_u32(&mut buf, d1 as u32);
                push_u32(&mut buf, d2 as u32);
                push_matrix_row_major(&mut buf, l.mean());
                push_matrix_row_major(&mut buf, l.a_factor());
                push_matrix_row_major(&mut buf, l.b_factor());
            }
        }
        NetPosterior::Full(layers) => {
            push_u32(&mut buf, layers.len() as u32);
            for l in layers {
                push_u64(&mut buf, l.dim() as u64);
                for &x in l.mu().iter() {
                    push_f64(&mut buf, x);
                }
                push_matrix_row_major(&mut buf, l.a_factor());
            }
        }
    }
    buf
}

/// Parses a checkpoint buffer back into architecture plus posterior.
pub fn decode(bytes: &[u8]) -> Result<(Architecture, NetPosterior)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let variant = r.u8()?;
    let n_sizes = r.u32()? as usize;
    let mut sizes = Vec::with_capacity(n_sizes);
    for _ in 0..n_sizes {
        sizes.push(r.u32()? as usize);
    }
    let arch = Architecture::new(sizes).map_err(|e| CheckpointError::Invalid(e.to_string()))?;
    let posterior = match variant {
        0 => {
            let len = r.u64()? as usize;
            let mu = r.f64_vec(len)?;
            let sigma = r.f64_vec(len)?;
            NetPosterior::Diagonal(
                DiagonalPosterior::new(mu, sigma)
                    .map_err(|e| CheckpointError::Invalid(e.to_string()))?,
            )
        }
        1 => {
            let n_layers = r.u32()? as usize;
            let mut layers = Vec::with_capacity(n_layers);
            for _ in 0..n_layers {
                let d1 = r.u32()? as usize;
                let d2 = r.u32()? as usize;
                let mean = r.matrix_row_major(d2, d1)?;
                let a = r.matrix_row_major(d1, d1)?;
                let b = r.matrix_row_major(d2, d2)?;
                layers.push(
                    MatrixVariatePosterior::new(mean, a, b)
                        .map_err(|e| CheckpointError::Invalid(e.to_string()))?,
                );
            }
            NetPosterior::MatrixVariate(layers)
        }
        2 => {
            let n_layers = r.u32()? as usize;
            let mut layers = Vec::with_capacity(n_layers);
            for _ in 0..n_layers {
                let d = r.u64()? as usize;
                let mu = r.f64_vec(d)?;
                let a = r.matrix_row_major(d, d)?;
                layers.push(
                    FullPosterior::new(mu, a, usize::MAX)
                        .map_err(|e| CheckpointError::Invalid(e.to_string()))?,
                );
            }
            NetPosterior::Full(layers)
        }
        other => {
            return Err(CheckpointError::Corrupt(format!(
                "unknown variant tag {other}"
            )))
        }
    };
    if r.pos != bytes.len() {
        return Err(CheckpointError::Corrupt(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    Ok((arch, posterior))
}

pub fn save(path: &Path, arch: &Architecture, posterior: &NetPosterior) -> Result<()> {
    std::fs::write(path, encode(arch, posterior))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<(Architecture, NetPosterior)> {
    let bytes = std::fs::read(path)?;
    decode(&bytes)
}
