use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::str::FromStr;

use logitfix_core::io::config::load_config;
use logitfix_core::{Error, Result};

/// Resolves each setting from its flag, else the config file. Tracks which
/// file keys were consumed so that leftovers can be rejected.
pub struct Settings {
    file: BTreeMap<String, String>,
    used: RefCell<BTreeSet<String>>,
}

impl Settings {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        Ok(Self {
            file: match path {
                Some(p) => load_config(p)?,
                None => BTreeMap::new(),
            },
            used: RefCell::new(BTreeSet::new()),
        })
    }

    pub fn get<T: FromStr>(&self, key: &str, flag: Option<T>) -> Result<Option<T>> {
        let from_file = self.file.get(key);
        if from_file.is_some() {
            self.used.borrow_mut().insert(key.to_string());
        }
        match (flag, from_file) {
            (Some(v), _) => Ok(Some(v)),
            (None, Some(raw)) => raw
                .parse()
                .map(Some)
                .map_err(|_| Error::Config(format!("bad value '{raw}' for {key} in config file"))),
            (None, None) => Ok(None),
        }
    }

    pub fn or<T: FromStr>(&self, key: &str, flag: Option<T>, default: T) -> Result<T> {
        Ok(self.get(key, flag)?.unwrap_or(default))
    }

    /// File entries not yet consumed, in key order.
    pub fn remaining(&self) -> Vec<(String, String)> {
        let used = self.used.borrow();
        self.file
            .iter()
            .filter(|(k, _)| !used.contains(*k))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect()
    }

    pub fn mark_used(&self, key: &str) {
        self.used.borrow_mut().insert(key.to_string());
    }

    pub fn finish(&self) -> Result<()> {
        match self.remaining().first() {
            Some((k, _)) => Err(Error::Config(format!("unknown config key '{k}'"))),
            None => Ok(()),
        }
    }
}

/// Splits `KEY=VALUE`.
pub fn split_pair(raw: &str) -> Result<(&str, &str)> {
    raw.split_once('=')
        .filter(|(k, _)| !k.is_empty())
        .ok_or_else(|| Error::Config(format!("expected KEY=VALUE, got '{raw}'")))
}

pub fn parse_list(raw: &str) -> Result<Vec<usize>> {
    raw.split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad list entry '{s}' in '{raw}'")))
        })
        .collect()
}
