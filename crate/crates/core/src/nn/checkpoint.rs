//! Parameter blobs: a headerless sequence of little-endian `f64` values.
//! Each network contributes, layer by layer, its weight matrix in row-major
//! `fan_in x fan_out` order followed by its bias vector. Whatever else a
//! model stores (reference embeddings, for instance) follows the networks;
//! the JSON manifest next to the blob records the shapes needed to split it.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub fn encode_f64s(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn decode_f64s(bytes: &[u8]) -> Result<Vec<f64>> {
    if !bytes.len().is_multiple_of(8) {
        return Err(Error::Format {
            what: "parameter blob",
            detail: format!("{} bytes is not a whole number of f64 values", bytes.len()),
        });
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

pub fn write_blob(path: &Path, values: &[f64]) -> Result<()> {
    fs::write(path, encode_f64s(values)).map_err(|e| Error::io(path, e))
}

pub fn read_blob(path: &Path) -> Result<Vec<f64>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_f64s(&bytes)
}
