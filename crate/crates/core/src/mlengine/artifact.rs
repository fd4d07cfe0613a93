//! Portable model artifact file.
//!
//! Layout (little-endian):
//!
//! | offset | size | field                                   |
//! |--------|------|-----------------------------------------|
//! | 0      | 8    | magic `RFMODEL\n`                       |
//! | 8      | 2    | format version (`u16`)                  |
//! | 10     | 4    | payload length in bytes (`u32`)         |
//! | 14     | 32   | SHA-256 of the payload                  |
//! | 46     | n    | payload: [`ModelArtifact`] as JSON      |
//!
//! The payload never contains a measured latency, so exporting the same
//! trained model twice yields identical bytes. `report.size_bytes` always
//! equals the file length.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{MlError, ModelArtifact};

pub const MAGIC: &[u8; 8] = b"RFMODEL\n";
pub const FORMAT_VERSION: u16 = 1;
pub const HEADER_LEN: usize = 8 + 2 + 4 + 32;

fn encode(artifact: &ModelArtifact) -> Vec<u8> {
    let mut clean = artifact.clone();
    clean.report.latency_us_p99 = None;
    let payload = serde_json::to_vec(&clean).expect("artifact serializes");
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&clean.format_version.to_le_bytes());
    out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    out.extend_from_slice(&Sha256::digest(&payload));
    out.extend_from_slice(&payload);
    out
}

/// Set `report.size_bytes` to the encoded length (a fixed point: the size is
/// part of the payload) and return the encoding.
pub fn to_bytes(artifact: &mut ModelArtifact) -> Vec<u8> {
    loop {
        let bytes = encode(artifact);
        if artifact.report.size_bytes == bytes.len() as u64 {
            return bytes;
        }
        artifact.report.size_bytes = bytes.len() as u64;
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<ModelArtifact, MlError> {
    if bytes.len() < HEADER_LEN {
        return Err(MlError::Checksum(format!("file truncated: {} bytes, header needs {HEADER_LEN}", bytes.len())));
    }
    if &bytes[..8] != MAGIC {
        return Err(MlError::Format("not a model artifact (bad magic)".into()));
    }
    let version = u16::from_le_bytes([bytes[8], bytes[9]]);
    if version != FORMAT_VERSION {
        return Err(MlError::Version { found: version, supported: FORMAT_VERSION });
    }
    let len = u32::from_le_bytes(bytes[10..14].try_into().expect("4 bytes")) as usize;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != len {
        return Err(MlError::Checksum(format!("payload is {} bytes, header declares {len}", payload.len())));
    }
    if Sha256::digest(payload).as_slice() != &bytes[14..HEADER_LEN] {
        return Err(MlError::Checksum("payload digest mismatch".into()));
    }
    let artifact: ModelArtifact =
        serde_json::from_slice(payload).map_err(|e| MlError::Format(format!("payload: {e}")))?;
    if artifact.format_version != version {
        return Err(MlError::Format("payload and header versions disagree".into()));
    }
    if artifact.window_len < 2 {
        return Err(MlError::Format(format!("window length {} is below 2", artifact.window_len)));
    }
    artifact.model.validate(artifact.feature_schema.len())?;
    Ok(artifact)
}

/// Write the artifact; returns the file size.
pub fn export_artifact(artifact: &mut ModelArtifact, path: &Path) -> Result<u64, MlError> {
    let bytes = to_bytes(artifact);
    fs::write(path, &bytes).map_err(|source| MlError::Io { path: path.display().to_string(), source })?;
    Ok(bytes.len() as u64)
}

pub fn load_artifact(path: &Path) -> Result<ModelArtifact, MlError> {
    let bytes = fs::read(path).map_err(|source| MlError::Io { path: path.display().to_string(), source })?;
    from_bytes(&bytes)
}

/// Hex SHA-256 of a whole file.
pub fn file_sha256(path: &Path) -> Result<String, MlError> {
    let bytes = fs::read(path).map_err(|source| MlError::Io { path: path.display().to_string(), source })?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}
