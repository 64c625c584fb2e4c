//! Dataset ingestion and the on-disk formats.
//!
//! Our own formats are little-endian and are written atomically: bytes go to
//! a temporary file in the destination directory, which is then renamed over
//! the target.

pub mod checkpoint;
pub mod config;
pub mod idx;
pub mod logits;

use std::io::Write;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub type Checksum = [u8; 32];

pub fn sha256(bytes: &[u8]) -> Checksum {
    Sha256::digest(bytes).into()
}

pub fn file_checksum(path: &Path) -> Result<Checksum> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256(&bytes))
}

pub fn checksum_hex(sum: &Checksum) -> String {
    hex::encode(sum)
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(tmp.path(), e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(tmp.path(), e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}
