//! Logits store: a header followed by fixed-size records.
//!
//! ```text
//! "LGT1" | version u32 | count u32 | classes u32
//! | attack-id length u32 | attack-id bytes | classifier sha256 (32 bytes)
//! then per record: label u32 | flags u32 | z (C × f32) | z* (C × f32)
//! then sha256 of everything before it (32 bytes)
//! ```

use std::path::Path;

use super::{sha256, write_atomic, Checksum};
use crate::attacks::AttackKind;
use crate::defender::{LogitsRecord, LogitsSet};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"LGT1";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct LogitsStore {
    pub classes: usize,
    /// sha256 of the classifier checkpoint that produced the logits.
    pub classifier_checksum: Checksum,
    pub set: LogitsSet,
}

impl LogitsStore {
    pub fn new(set: LogitsSet, classes: usize, classifier_checksum: Checksum) -> Result<Self> {
        for r in &set.records {
            if r.z.len() != classes || r.z_adv.len() != classes {
                return Err(Error::Shape {
                    expected: vec![classes],
                    actual: vec![if r.z.len() != classes { r.z.len() } else { r.z_adv.len() }],
                });
            }
            if r.label >= classes {
                return Err(Error::LabelOutOfRange {
                    label: r.label,
                    classes,
                });
            }
        }
        Ok(Self {
            classes,
            classifier_checksum,
            set,
        })
    }

    pub fn encode(&self) -> Vec<u8> {
        let id = self.set.attack.id().as_bytes();
        let mut out = Vec::with_capacity(84 + id.len() + self.set.records.len() * (8 + 8 * self.classes));
        out.extend_from_slice(MAGIC);
        for v in [
            VERSION,
            self.set.records.len() as u32,
            self.classes as u32,
            id.len() as u32,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(id);
        out.extend_from_slice(&self.classifier_checksum);
        for r in &self.set.records {
            out.extend_from_slice(&(r.label as u32).to_le_bytes());
            out.extend_from_slice(&r.flags().to_le_bytes());
            for v in r.z.data().iter().chain(r.z_adv.data()) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let digest = sha256(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn decode(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader { bytes, at: 0, path };
        let magic = r.take(4)?;
        if magic != MAGIC {
            return Err(Error::BadMagic {
                path: path.to_path_buf(),
                expected: u32::from_be_bytes(*MAGIC),
                found: u32::from_be_bytes([magic[0], magic[1], magic[2], magic[3]]),
            });
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Version {
                expected: VERSION,
                found: version,
            });
        }
        let count = r.u32()? as usize;
        let classes = r.u32()? as usize;
        let id_len = r.u32()? as usize;
        let id = std::str::from_utf8(r.take(id_len)?).map_err(|_| r.corrupt("attack id is not UTF-8"))?;
        let attack: AttackKind = id
            .parse()
            .map_err(|_| r.corrupt(&format!("unknown attack id '{id}'")))?;
        let mut classifier_checksum = [0u8; 32];
        classifier_checksum.copy_from_slice(r.take(32)?);
        if classes == 0 {
            return Err(r.corrupt("zero classes"));
        }
        let need = count * (8 + 8 * classes) + 32;
        let remaining = bytes.len() - r.at;
        if remaining != need {
            return Err(if remaining < need {
                Error::Truncated {
                    path: path.to_path_buf(),
                    detail: format!("{count} records and digest need {need} bytes, found {remaining}"),
                }
            } else {
                r.corrupt(&format!("{} trailing bytes", remaining - need))
            });
        }
        let (content, digest) = bytes.split_at(bytes.len() - 32);
        if sha256(content) != digest {
            return Err(r.corrupt("content digest mismatch"));
        }
        let mut records = Vec::with_capacity(count);
        for i in 0..count {
            let label = r.u32()? as usize;
            let flags = r.u32()?;
            if label >= classes {
                return Err(r.corrupt(&format!("record {i}: label {label} out of range")));
            }
            if flags & !(LogitsRecord::FLAG_SUCCESS | LogitsRecord::FLAG_ATTACK_FAILED) != 0 {
                return Err(r.corrupt(&format!("record {i}: unknown flag bits {flags:#x}")));
            }
            let z = r.f32s(classes)?;
            let z_adv = r.f32s(classes)?;
            if z.iter().chain(&z_adv).any(|v| !v.is_finite()) {
                return Err(r.corrupt(&format!("record {i}: non-finite logit")));
            }
            records.push(LogitsRecord {
                z: Tensor::from_vec(z),
                z_adv: Tensor::from_vec(z_adv),
                label,
                success: flags & LogitsRecord::FLAG_SUCCESS != 0,
                attack_failed: flags & LogitsRecord::FLAG_ATTACK_FAILED != 0,
            });
        }
        Ok(Self {
            classes,
            classifier_checksum,
            set: LogitsSet { attack, records },
        })
    }

    /// Fails unless the store was produced by the checkpoint with `checksum`.
    pub fn verify_classifier(&self, checksum: &Checksum) -> Result<()> {
        if &self.classifier_checksum != checksum {
            return Err(Error::Checksum {
                expected: hex::encode(self.classifier_checksum),
                found: hex::encode(checksum),
            });
        }
        Ok(())
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let out = self.bytes.get(self.at..self.at + n).ok_or_else(|| Error::Truncated {
            path: self.path.to_path_buf(),
            detail: format!("needed {n} bytes at offset {}", self.at),
        })?;
        self.at += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        Ok(self
            .take(4 * n)?
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect())
    }

    fn corrupt(&self, detail: &str) -> Error {
        Error::Corrupt {
            path: self.path.to_path_buf(),
            detail: detail.to_string(),
        }
    }
}

pub fn save_logits_store(path: &Path, store: &LogitsStore) -> Result<()> {
    write_atomic(path, &store.encode())
}

pub fn load_logits_store(path: &Path) -> Result<LogitsStore> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    LogitsStore::decode(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(n: usize) -> LogitsStore {
        let records = (0..n)
            .map(|i| LogitsRecord {
                z: Tensor::from_vec(vec![i as f32, -0.5, f32::MIN_POSITIVE]),
                z_adv: Tensor::from_vec(vec![1e-30, 7.25, -0.0]),
                label: i % 3,
                success: i % 2 == 0,
                attack_failed: i == 1,
            })
            .collect();
        LogitsStore::new(
            LogitsSet {
                attack: AttackKind::Mim,
                records,
            },
            3,
            [7u8; 32],
        )
        .unwrap()
    }

    #[test]
    fn encode_decode_round_trip() {
        for n in [0, 3] {
            let s = store(n);
            let back = LogitsStore::decode(&s.encode(), Path::new("mem")).unwrap();
            assert_eq!(back.encode(), s.encode());
            assert_eq!(back, s);
        }
    }

    #[test]
    fn header_damage_is_detected() {
        let bytes = store(3).encode();
        let path = Path::new("mem");
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert_eq!(LogitsStore::decode(&bad, path).unwrap_err().kind(), "bad-magic");
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert_eq!(LogitsStore::decode(&bad, path).unwrap_err().kind(), "version");
        assert_eq!(
            LogitsStore::decode(&bytes[..bytes.len() - 1], path).unwrap_err().kind(),
            "truncated"
        );
        let mut long = bytes.clone();
        long.push(0);
        assert_eq!(LogitsStore::decode(&long, path).unwrap_err().kind(), "corrupt");
    }

    #[test]
    fn checksum_verification() {
        let s = store(1);
        assert!(s.verify_classifier(&[7u8; 32]).is_ok());
        assert_eq!(s.verify_classifier(&[0u8; 32]).unwrap_err().kind(), "checksum");
    }
}
