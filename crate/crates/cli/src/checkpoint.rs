//! `ENC1` encoder checkpoints: `"ENC1"`, `input_dim`, `hidden_dim`,
//! `output_dim` as little-endian `u32`, then the flat parameters as
//! little-endian `f64` in the order `W1, b1, W2, b2`.

use std::path::Path;

use gaplab_core::trainkit::Encoder;
use gaplab_core::Matrix;

use crate::error::{CliError, CliResult};
use crate::io::{read_bytes, write_atomic};

pub const MAGIC: &[u8; 4] = b"ENC1";

pub fn encode(encoder: &Encoder) -> Vec<u8> {
    let flat = encoder.to_flat();
    let mut out = Vec::with_capacity(16 + 8 * flat.len());
    out.extend_from_slice(MAGIC);
    for dim in [encoder.input_dim(), encoder.hidden_dim(), encoder.output_dim()] {
        out.extend_from_slice(&(dim as u32).to_le_bytes());
    }
    for v in flat {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8], name: &str) -> CliResult<Encoder> {
    let bad = |msg: &str| CliError::Input(format!("{name}: {msg}"));
    if bytes.len() < 16 || &bytes[..4] != MAGIC {
        return Err(bad("not an ENC1 checkpoint"));
    }
    let dim = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    let (input, hidden, output) = (dim(0), dim(1), dim(2));
    if input == 0 || hidden == 0 || output == 0 {
        return Err(bad("zero layer width"));
    }
    let count = input * hidden + hidden + hidden * output + output;
    if bytes.len() != 16 + 8 * count {
        return Err(bad("size does not match layer widths"));
    }
    let flat: Vec<f64> = bytes[16..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let mut enc = Encoder::from_parts(
        Matrix::zeros(input, hidden),
        vec![0.0; hidden],
        Matrix::zeros(hidden, output),
        vec![0.0; output],
    )
    .map_err(CliError::from_input)?;
    enc.set_flat(&flat).map_err(|e| bad(&e.to_string()))?;
    Ok(enc)
}

pub fn write(path: &Path, encoder: &Encoder) -> CliResult<()> {
    write_atomic(path, &encode(encoder))
}

pub fn read(path: &Path) -> CliResult<Encoder> {
    decode(&read_bytes(path)?, &path.display().to_string())
}
