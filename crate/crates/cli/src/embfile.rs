//! `EMB1` embedding files.
//!
//! Layout, all little-endian: `"EMB1"`, `n: u32`, `d: u32`, then `n * d`
//! `f32` values row-major. An optional trailer `"LBL1"` followed by `n`
//! `u32` class ids may follow.

use std::path::Path;

use gaplab_core::geometry::{EmbeddingBatch, Modality};
use gaplab_core::Matrix;

use crate::error::{CliError, CliResult};
use crate::io::{read_bytes, write_atomic};

pub const MAGIC: &[u8; 4] = b"EMB1";
pub const LABEL_MAGIC: &[u8; 4] = b"LBL1";
const HEADER: usize = 12;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbFile {
    pub n: usize,
    pub d: usize,
    pub values: Vec<f32>,
    pub labels: Option<Vec<u32>>,
}

fn u32_at(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"))
}

impl EmbFile {
    /// Cast a matrix to 32-bit storage. Values outside the `f32` range are
    /// rejected rather than stored as infinities.
    pub fn from_matrix(m: &Matrix, labels: Option<&[usize]>) -> CliResult<Self> {
        let values: Vec<f32> = m.data().iter().map(|&x| x as f32).collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(CliError::Numerical(
                "embedding values overflow 32-bit floats".into(),
            ));
        }
        let labels = match labels {
            None => None,
            Some(l) => {
                if l.len() != m.rows() {
                    return Err(CliError::Input(format!(
                        "{} labels for {} rows",
                        l.len(),
                        m.rows()
                    )));
                }
                Some(
                    l.iter()
                        .map(|&x| {
                            u32::try_from(x).map_err(|_| {
                                CliError::Input(format!("label {x} does not fit in u32"))
                            })
                        })
                        .collect::<CliResult<Vec<_>>>()?,
                )
            }
        };
        if u32::try_from(m.rows()).is_err() || u32::try_from(m.cols()).is_err() {
            return Err(CliError::Input("matrix too large for EMB1".into()));
        }
        Ok(Self {
            n: m.rows(),
            d: m.cols(),
            values,
            labels,
        })
    }

    pub fn from_batch(batch: &EmbeddingBatch) -> CliResult<Self> {
        Self::from_matrix(batch.vectors(), batch.labels())
    }

    pub fn to_matrix(&self) -> CliResult<Matrix> {
        Matrix::new(
            self.n,
            self.d,
            self.values.iter().map(|&v| f64::from(v)).collect(),
        )
        .map_err(CliError::from_input)
    }

    pub fn to_batch(&self, modality: Modality) -> CliResult<EmbeddingBatch> {
        let labels = self
            .labels
            .as_ref()
            .map(|l| l.iter().map(|&x| x as usize).collect());
        EmbeddingBatch::new(self.to_matrix()?, labels, modality).map_err(CliError::from_input)
    }

    pub fn encode(&self) -> Vec<u8> {
        let label_len = self.labels.as_ref().map_or(0, |l| 4 + 4 * l.len());
        let mut out = Vec::with_capacity(HEADER + 4 * self.values.len() + label_len);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.n as u32).to_le_bytes());
        out.extend_from_slice(&(self.d as u32).to_le_bytes());
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        if let Some(labels) = &self.labels {
            out.extend_from_slice(LABEL_MAGIC);
            for l in labels {
                out.extend_from_slice(&l.to_le_bytes());
            }
        }
        out
    }

    /// Parse an in-memory file. `name` is used in error messages.
    pub fn decode(bytes: &[u8], name: &str) -> CliResult<Self> {
        let bad = |msg: String| CliError::Input(format!("{name}: {msg}"));
        if bytes.len() < HEADER {
            return Err(bad(format!("truncated header ({} bytes)", bytes.len())));
        }
        if &bytes[..4] != MAGIC {
            return Err(bad("not an EMB1 file (bad magic)".into()));
        }
        let n = u32_at(bytes, 4) as usize;
        let d = u32_at(bytes, 8) as usize;
        if n == 0 || d == 0 {
            return Err(bad(format!("empty embedding block ({n} x {d})")));
        }
        let payload = n
            .checked_mul(d)
            .and_then(|nd| nd.checked_mul(4))
            .ok_or_else(|| bad("header dimensions overflow".into()))?;
        let body_end = HEADER + payload;
        let with_labels = body_end + 4 + 4 * n;
        let has_labels = if bytes.len() == body_end {
            false
        } else if bytes.len() == with_labels && &bytes[body_end..body_end + 4] == LABEL_MAGIC {
            true
        } else {
            return Err(bad(format!(
                "size {} does not match {n} x {d} (expected {body_end} or {with_labels} bytes)",
                bytes.len()
            )));
        };
        let values: Vec<f32> = bytes[HEADER..body_end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(bad(format!("non-finite value at row {}", i / d)));
        }
        let labels = has_labels.then(|| {
            (0..n)
                .map(|i| u32_at(bytes, body_end + 4 + 4 * i))
                .collect()
        });
        Ok(Self { n, d, values, labels })
    }

    pub fn read(path: &Path) -> CliResult<Self> {
        Self::decode(&read_bytes(path)?, &path.display().to_string())
    }

    pub fn write(&self, path: &Path) -> CliResult<()> {
        write_atomic(path, &self.encode())
    }
}

/// Read two files that must describe the same number of pairs in the same
/// dimension.
pub fn read_pair(images: &Path, texts: &Path) -> CliResult<(EmbeddingBatch, EmbeddingBatch)> {
    let a = EmbFile::read(images)?;
    let b = EmbFile::read(texts)?;
    if (a.n, a.d) != (b.n, b.d) {
        return Err(CliError::Input(format!(
            "shape mismatch: {} is {} x {} but {} is {} x {}",
            images.display(),
            a.n,
            a.d,
            texts.display(),
            b.n,
            b.d
        )));
    }
    Ok((a.to_batch(Modality::Image)?, b.to_batch(Modality::Text)?))
}
