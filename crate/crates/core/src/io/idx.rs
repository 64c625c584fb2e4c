//! IDX (MNIST-style) image/label files. Multi-byte header fields are
//! big-endian; payloads are unsigned bytes. Gzip-compressed files are detected
//! by their magic bytes and decompressed transparently.

use std::fs;
use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;

use crate::classifier::LabeledExample;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::Truncated {
                path: path.to_path_buf(),
                detail: format!("gzip stream: {e}"),
            })?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Truncated {
            path: path.to_path_buf(),
            detail: format!("header ends before byte {}", at + 4),
        })
}

fn check_magic(bytes: &[u8], expected: u32, path: &Path) -> Result<()> {
    let found = be_u32(bytes, 0, path)?;
    if found != expected {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            expected,
            found,
        });
    }
    Ok(())
}

fn payload<'a>(bytes: &'a [u8], offset: usize, len: usize, path: &Path) -> Result<&'a [u8]> {
    bytes.get(offset..offset + len).ok_or_else(|| Error::Truncated {
        path: path.to_path_buf(),
        detail: format!(
            "expected {len} payload bytes, found {}",
            bytes.len().saturating_sub(offset)
        ),
    })
}

/// Returns the image count, the per-image shape `[1, rows, cols]` and the
/// pixels scaled by `1/255`.
pub fn load_idx_images(path: &Path) -> Result<(usize, Vec<usize>, Vec<f32>)> {
    let bytes = read_bytes(path)?;
    check_magic(&bytes, IMAGES_MAGIC, path)?;
    let n = be_u32(&bytes, 4, path)? as usize;
    let rows = be_u32(&bytes, 8, path)? as usize;
    let cols = be_u32(&bytes, 12, path)? as usize;
    let pixels = payload(&bytes, 16, n * rows * cols, path)?;
    let data = pixels.iter().map(|&p| f32::from(p) / 255.0).collect();
    Ok((n, vec![1, rows, cols], data))
}

pub fn load_idx_labels(path: &Path) -> Result<Vec<u8>> {
    let bytes = read_bytes(path)?;
    check_magic(&bytes, LABELS_MAGIC, path)?;
    let n = be_u32(&bytes, 4, path)? as usize;
    Ok(payload(&bytes, 8, n, path)?.to_vec())
}

pub fn load_idx_dataset(images: &Path, labels: &Path) -> Result<Vec<LabeledExample>> {
    let (n, shape, data) = load_idx_images(images)?;
    let labels = load_idx_labels(labels)?;
    if labels.len() != n {
        return Err(Error::CountMismatch {
            images: n,
            labels: labels.len(),
        });
    }
    let per: usize = shape.iter().product();
    let mut out = Vec::with_capacity(n);
    for (i, &label) in labels.iter().enumerate() {
        let image = Tensor::new(shape.clone(), data[i * per..(i + 1) * per].to_vec())?;
        out.push(LabeledExample::new(image, usize::from(label))?);
    }
    Ok(out)
}

/// Encodes images (`[n, rows, cols]` bytes) in IDX form.
pub fn encode_idx_images(rows: usize, cols: usize, pixels: &[u8]) -> Vec<u8> {
    let n = pixels.len() / (rows * cols).max(1);
    let mut out = Vec::with_capacity(16 + pixels.len());
    for v in [IMAGES_MAGIC, n as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// Given an images file name, the conventional labels file next to it
/// (`…-images-idx3-ubyte…` → `…-labels-idx1-ubyte…`).
pub fn sibling_labels_path(images: &Path) -> Option<std::path::PathBuf> {
    let name = images.file_name()?.to_str()?;
    if !name.contains("images-idx3") {
        return None;
    }
    Some(images.with_file_name(name.replace("images-idx3", "labels-idx1")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(dir: &Path, name: &str, bytes: &[u8]) -> std::path::PathBuf {
        let p = dir.join(name);
        fs::write(&p, bytes).unwrap();
        p
    }

    #[test]
    fn single_image_pair() {
        let dir = tempfile::tempdir().unwrap();
        let mut px = vec![0u8; 4];
        px[1] = 255;
        px[2] = 51;
        let img = write(dir.path(), "i", &encode_idx_images(2, 2, &px));
        let lab = write(dir.path(), "l", &encode_idx_labels(&[7]));
        let data = load_idx_dataset(&img, &lab).unwrap();
        assert_eq!(data.len(), 1);
        assert_eq!(data[0].label, 7);
        assert_eq!(data[0].image.shape(), &[1, 2, 2]);
        assert_eq!(data[0].image.data(), &[0.0, 1.0, 0.2, 0.0]);
    }

    #[test]
    fn gzip_is_transparent() {
        let dir = tempfile::tempdir().unwrap();
        let raw = encode_idx_labels(&[1, 2, 3]);
        let mut enc = flate2::write::GzEncoder::new(Vec::new(), flate2::Compression::default());
        enc.write_all(&raw).unwrap();
        let p = write(dir.path(), "l.gz", &enc.finish().unwrap());
        assert_eq!(load_idx_labels(&p).unwrap(), vec![1, 2, 3]);
    }

    #[test]
    fn count_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let img = write(dir.path(), "i", &encode_idx_images(1, 1, &[0, 0]));
        let lab = write(dir.path(), "l", &encode_idx_labels(&[1]));
        assert!(matches!(
            load_idx_dataset(&img, &lab),
            Err(Error::CountMismatch { images: 2, labels: 1 })
        ));
    }

    #[test]
    fn bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let lab = write(dir.path(), "l", &encode_idx_labels(&[1]));
        let err = load_idx_images(&lab).unwrap_err();
        assert!(matches!(
            err,
            Error::BadMagic {
                expected: IMAGES_MAGIC,
                found: LABELS_MAGIC,
                ..
            }
        ));
    }

    #[test]
    fn truncated_payload_and_header() {
        let dir = tempfile::tempdir().unwrap();
        let mut bytes = encode_idx_images(2, 2, &[1, 2, 3, 4]);
        bytes.pop();
        let p = write(dir.path(), "i", &bytes);
        assert!(matches!(load_idx_images(&p), Err(Error::Truncated { .. })));
        let p = write(dir.path(), "h", &IMAGES_MAGIC.to_be_bytes());
        assert!(matches!(load_idx_images(&p), Err(Error::Truncated { .. })));
    }

    #[test]
    fn sibling_path() {
        let p = Path::new("data/mnist/test-images-idx3-ubyte.gz");
        assert_eq!(
            sibling_labels_path(p).unwrap(),
            Path::new("data/mnist/test-labels-idx1-ubyte.gz")
        );
        assert!(sibling_labels_path(Path::new("x.bin")).is_none());
    }
}
