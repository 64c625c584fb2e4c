//! Flat `key = value` configuration files and run manifests.
//!
//! Blank lines and lines starting with `#` are ignored. Keys may repeat
//! neither in a file nor in a manifest.

use std::collections::BTreeMap;
use std::path::Path;

use super::write_atomic;
use crate::error::{Error, Result};

pub fn parse_config(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got '{line}'", n + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", n + 1)));
        }
        if out.insert(k.to_string(), v.to_string()).is_some() {
            return Err(Error::Config(format!("line {}: duplicate key '{k}'", n + 1)));
        }
    }
    Ok(out)
}

pub fn load_config(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text)
}

/// Everything needed to re-run a command: its argv, the resolved
/// configuration, seeds, input checksums and outputs. Written as flat
/// `key=value` text, so the `config.*` lines can be fed back as a config
/// file after stripping the prefix.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    pub command: String,
    pub argv: Vec<String>,
    pub config: Vec<(String, String)>,
    pub seeds: Vec<(String, u64)>,
    /// Input path and its sha256 (hex).
    pub inputs: Vec<(String, String)>,
    pub outputs: Vec<String>,
    pub wall_time_secs: f64,
}

impl Manifest {
    pub fn render(&self) -> String {
        let mut s = format!("command={}\n", self.command);
        for (i, a) in self.argv.iter().enumerate() {
            s.push_str(&format!("argv.{i}={}\n", a.replace('\n', "\\n")));
        }
        for (k, v) in &self.config {
            s.push_str(&format!("config.{k}={v}\n"));
        }
        for (k, v) in &self.seeds {
            s.push_str(&format!("seed.{k}={v}\n"));
        }
        for (p, sum) in &self.inputs {
            s.push_str(&format!("input.{p}={sum}\n"));
        }
        for (i, p) in self.outputs.iter().enumerate() {
            s.push_str(&format!("output.{i}={p}\n"));
        }
        s.push_str(&format!("wall_time_secs={:.3}\n", self.wall_time_secs));
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.render().as_bytes())
    }
}
