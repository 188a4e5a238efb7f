//! File-level STC encoding. Raw tensors are flat little-endian `f32` arrays.

use std::fs;
use std::path::Path;

use stc_core::codec::{golomb_encode, measure_bits, EncodedUpdate};
use stc_core::compress::{stc_compress, Densify};
use stc_core::{Error, FlatTensor, Result};

pub fn read_raw_tensor(path: &Path) -> Result<FlatTensor> {
    let bytes = fs::read(path)?;
    if bytes.len() % 4 != 0 {
        return Err(Error::Decode(format!(
            "{}: {} bytes is not a whole number of f32 values",
            path.display(),
            bytes.len()
        )));
    }
    let values = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    FlatTensor::from_vec(values).map_err(|e| Error::Decode(e.to_string()))
}

pub fn write_raw_tensor(path: &Path, t: &FlatTensor) -> Result<()> {
    let bytes: Vec<u8> = t.iter().flat_map(|v| v.to_le_bytes()).collect();
    fs::write(path, bytes)?;
    Ok(())
}

/// Compresses a raw tensor at sparsity `p` and writes it as STC1.
pub fn encode_file(input: &Path, output: &Path, p: f64) -> Result<EncodedUpdate> {
    let t = read_raw_tensor(input)?;
    let e = golomb_encode(&stc_compress(&t, p)?, p)?;
    fs::write(output, e.to_file_bytes())?;
    Ok(e)
}

pub fn read_stc1(path: &Path) -> Result<EncodedUpdate> {
    EncodedUpdate::from_file_bytes(&fs::read(path)?)
}

/// Expands an STC1 file back into a dense raw tensor.
pub fn decode_file(input: &Path, output: &Path) -> Result<FlatTensor> {
    let e = read_stc1(input)?;
    let dense = stc_core::codec::golomb_decode(&e)?.densify();
    write_raw_tensor(output, &dense)?;
    Ok(dense)
}

/// One-line summary of an STC1 file.
pub fn inspect(path: &Path) -> Result<String> {
    let bytes = fs::read(path)?;
    let e = EncodedUpdate::from_file_bytes(&bytes)?;
    Ok(format!(
        "len={} k={} bstar={} mu={} position_bits={} total_bits={} file_bytes={}",
        e.len,
        e.count,
        e.bstar,
        e.mu,
        e.positions.len(),
        measure_bits(&e),
        bytes.len()
    ))
}
