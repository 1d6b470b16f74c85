//! Self-describing binary parameter files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic "GALP" | format version u16 | model-config hash [u8; 32]
//! | P u64 | P little-endian f64 values | FNV-1a 64 checksum u64
//! ```
//!
//! The checksum covers every byte before it. The model-config hash guards
//! against loading a vector into a differently-shaped model.

use std::path::Path;

use gal_core::ParameterVector;

use crate::error::{HarnessError, Result};

pub const MAGIC: [u8; 4] = *b"GALP";
pub const FORMAT_VERSION: u16 = 1;

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325_u64;
    for b in bytes {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Serialize `params` to `path`, tagged with the owning model's config hash.
pub fn save_params(path: &Path, params: &ParameterVector, model_hash: &[u8; 32]) -> Result<()> {
    let mut bytes = Vec::with_capacity(4 + 2 + 32 + 8 + params.len() * 8 + 8);
    bytes.extend_from_slice(&MAGIC);
    bytes.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    bytes.extend_from_slice(model_hash);
    bytes.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for v in params.as_slice() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    let checksum = fnv1a64(&bytes);
    bytes.extend_from_slice(&checksum.to_le_bytes());
    std::fs::write(path, bytes)?;
    Ok(())
}

/// Read a parameter file, returning the vector and its embedded model hash.
pub fn load_params_raw(path: &Path) -> Result<(ParameterVector, [u8; 32])> {
    let bytes = std::fs::read(path).map_err(|err| {
        HarnessError::Config(format!("cannot read parameter file {}: {err}", path.display()))
    })?;
    let header_len = 4 + 2 + 32 + 8;
    if bytes.len() < header_len + 8 {
        return Err(HarnessError::Corrupted(format!(
            "{} is truncated ({} bytes)",
            path.display(),
            bytes.len()
        )));
    }
    if bytes[0..4] != MAGIC {
        return Err(HarnessError::Corrupted(format!("{} has wrong magic bytes", path.display())));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != FORMAT_VERSION {
        return Err(HarnessError::Incompatible(format!(
            "{} has format version {version}, expected {FORMAT_VERSION}",
            path.display()
        )));
    }
    let mut model_hash = [0u8; 32];
    model_hash.copy_from_slice(&bytes[6..38]);
    let count = u64::from_le_bytes(bytes[38..46].try_into().unwrap()) as usize;
    let expected_len = header_len + count * 8 + 8;
    if bytes.len() != expected_len {
        return Err(HarnessError::Corrupted(format!(
            "{} has {} bytes, expected {expected_len} for {count} parameters",
            path.display(),
            bytes.len()
        )));
    }
    let payload_end = header_len + count * 8;
    let stored = u64::from_le_bytes(bytes[payload_end..].try_into().unwrap());
    let actual = fnv1a64(&bytes[..payload_end]);
    if stored != actual {
        return Err(HarnessError::Corrupted(format!(
            "{} checksum mismatch (stored {stored:016x}, computed {actual:016x})",
            path.display()
        )));
    }
    let values: Vec<f64> = bytes[header_len..payload_end]
        .chunks_exact(8)
        .map(|chunk| f64::from_le_bytes(chunk.try_into().unwrap()))
        .collect();
    let params = ParameterVector::new(values)
        .map_err(|err| HarnessError::Corrupted(format!("{}: {err}", path.display())))?;
    Ok((params, model_hash))
}

/// Load and verify that the file belongs to the expected model configuration.
pub fn load_params(path: &Path, expected_model_hash: &[u8; 32]) -> Result<ParameterVector> {
    let (params, stored_hash) = load_params_raw(path)?;
    if &stored_hash != expected_model_hash {
        return Err(HarnessError::Incompatible(format!(
            "{} was saved for a different model configuration",
            path.display()
        )));
    }
    Ok(params)
}
