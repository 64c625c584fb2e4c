//! Network checkpoints: a UTF-8 `key=value` header terminated by an `end`
//! line, then every parameter as little-endian f32 (weight then bias, layer
//! by layer).
//!
//! ```text
//! logitfix-checkpoint
//! version=1
//! input=1,28,28
//! classes=10
//! seed=0
//! layers=conv2d:1:16:3;relu;maxpool2x2;...;dense:128:10
//! config.epochs=8
//! weight_bytes=...
//! end
//! ```

use std::path::Path;

use super::{sha256, write_atomic, Checksum};
use crate::error::{Error, Result};
use crate::nn::{Layer, Network};
use crate::tensor::Tensor;

const HEADER: &str = "logitfix-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub network: Network,
    /// Training configuration echo, without the `config.` prefix.
    pub config: Vec<(String, String)>,
}

fn list(v: &[usize]) -> String {
    v.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

pub fn encode_checkpoint(net: &Network, config: &[(String, String)]) -> Result<Vec<u8>> {
    let mut head = format!(
        "{HEADER}\nversion={VERSION}\ninput={}\nclasses={}\nseed={}\nlayers={}\n",
        list(net.input_shape()),
        net.classes(),
        net.seed(),
        net.describe()
    );
    for (k, v) in config {
        if k.contains(['=', '\n']) || v.contains('\n') {
            return Err(Error::Config(format!(
                "config entry '{k}' cannot be stored in a checkpoint header"
            )));
        }
        head.push_str(&format!("config.{k}={v}\n"));
    }
    head.push_str(&format!("weight_bytes={}\nend\n", 4 * net.parameter_count()));
    let mut out = head.into_bytes();
    for t in net.parameters() {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

fn mismatch(detail: String) -> Error {
    Error::ArchitectureMismatch(detail)
}

fn parse_num<T: std::str::FromStr>(field: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| mismatch(format!("{field}: cannot parse '{value}'")))
}

/// Layers with zeroed parameters, from a [`Network::describe`] string.
fn parse_layers(spec: &str) -> Result<Vec<Layer>> {
    spec.split(';')
        .map(|part| {
            let f: Vec<&str> = part.split(':').collect();
            Ok(match f.as_slice() {
                ["dense", i, o] => {
                    let (i, o): (usize, usize) = (parse_num("dense", i)?, parse_num("dense", o)?);
                    Layer::Dense {
                        weight: Tensor::zeros(vec![o, i]),
                        bias: Tensor::zeros(vec![o]),
                    }
                }
                ["conv2d", i, o, k] => {
                    let (i, o, k): (usize, usize, usize) = (
                        parse_num("conv2d", i)?,
                        parse_num("conv2d", o)?,
                        parse_num("conv2d", k)?,
                    );
                    Layer::Conv2d {
                        weight: Tensor::zeros(vec![o, i, k, k]),
                        bias: Tensor::zeros(vec![o]),
                    }
                }
                ["relu"] => Layer::Relu,
                ["maxpool2x2"] => Layer::MaxPool2x2,
                ["dropout", keep] => Layer::Dropout {
                    keep: parse_num("dropout", keep)?,
                },
                _ => return Err(mismatch(format!("unknown layer '{part}'"))),
            })
        })
        .collect()
}

pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<Checkpoint> {
    let corrupt = |detail: String| Error::Corrupt {
        path: path.to_path_buf(),
        detail,
    };
    let end = bytes
        .windows(5)
        .position(|w| w == b"\nend\n")
        .ok_or_else(|| corrupt("header terminator not found".into()))?;
    let head = std::str::from_utf8(&bytes[..end]).map_err(|_| corrupt("header is not UTF-8".into()))?;
    let payload = &bytes[end + 5..];
    let mut lines = head.lines();
    if lines.next() != Some(HEADER) {
        return Err(corrupt("not a checkpoint".into()));
    }
    let mut fields = std::collections::BTreeMap::new();
    let mut config = Vec::new();
    for line in lines {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| corrupt(format!("malformed header line '{line}'")))?;
        if let Some(key) = k.strip_prefix("config.") {
            config.push((key.to_string(), v.to_string()));
        } else if fields.insert(k, v).is_some() {
            return Err(corrupt(format!("duplicate header field '{k}'")));
        }
    }
    let field = |k: &str| {
        fields
            .get(k)
            .copied()
            .ok_or_else(|| corrupt(format!("missing header field '{k}'")))
    };
    let version: u32 = field("version")?.parse().map_err(|_| corrupt("bad version".into()))?;
    if version != VERSION {
        return Err(Error::Version {
            expected: VERSION,
            found: version,
        });
    }
    let input: Vec<usize> = field("input")?
        .split(',')
        .map(|d| parse_num("input", d))
        .collect::<Result<_>>()?;
    let classes: usize = parse_num("classes", field("classes")?)?;
    let seed: u64 = parse_num("seed", field("seed")?)?;
    let declared: usize = parse_num("weight_bytes", field("weight_bytes")?)?;
    let layers = parse_layers(field("layers")?)?;
    let mut net = Network::new(layers, input, seed).map_err(|e| mismatch(e.to_string()))?;
    if net.classes() != classes {
        return Err(mismatch(format!(
            "header declares {classes} classes, layers produce {}",
            net.classes()
        )));
    }
    if declared != 4 * net.parameter_count() {
        return Err(mismatch(format!(
            "layers need {} weight bytes, header declares {declared}",
            4 * net.parameter_count()
        )));
    }
    if payload.len() != declared {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            detail: format!("expected {declared} weight bytes, found {}", payload.len()),
        });
    }
    let mut values = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]));
    for t in net.parameters_mut() {
        for slot in t.data_mut() {
            *slot = values.next().expect("length checked");
        }
    }
    Ok(Checkpoint { network: net, config })
}

/// Writes the checkpoint and returns the sha256 of the bytes written.
pub fn save_checkpoint(path: &Path, net: &Network, config: &[(String, String)]) -> Result<Checksum> {
    let bytes = encode_checkpoint(net, config)?;
    write_atomic(path, &bytes)?;
    Ok(sha256(&bytes))
}

/// Loads a checkpoint and the sha256 of its bytes.
pub fn load_checkpoint(path: &Path) -> Result<(Checkpoint, Checksum)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok((decode_checkpoint(&bytes, path)?, sha256(&bytes)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn net() -> Network {
        Network::builder(vec![1, 4, 4], 11)
            .conv2d(2, 3)
            .relu()
            .maxpool2x2()
            .dropout(0.3)
            .dense(3)
            .build()
            .unwrap()
    }

    #[test]
    fn round_trip_is_bitwise() {
        let n = net();
        let cfg = vec![("epochs".to_string(), "3".to_string())];
        let bytes = encode_checkpoint(&n, &cfg).unwrap();
        let back = decode_checkpoint(&bytes, Path::new("mem")).unwrap();
        assert_eq!(back.network, n);
        assert_eq!(back.config, cfg);
        assert_eq!(encode_checkpoint(&back.network, &back.config).unwrap(), bytes);
    }

    #[test]
    fn edited_width_is_an_architecture_mismatch() {
        let bytes = encode_checkpoint(&net(), &[]).unwrap();
        let text = String::from_utf8_lossy(&bytes).into_owned();
        let edited = text.replacen("dense:8:3", "dense:8:4", 1);
        let err = decode_checkpoint(edited.as_bytes(), Path::new("mem")).unwrap_err();
        assert_eq!(err.kind(), "architecture-mismatch");
    }

    #[test]
    fn short_payload_is_truncated() {
        let bytes = encode_checkpoint(&net(), &[]).unwrap();
        let err = decode_checkpoint(&bytes[..bytes.len() - 4], Path::new("mem")).unwrap_err();
        assert_eq!(err.kind(), "truncated");
    }
}
