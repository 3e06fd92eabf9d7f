//! Flat key=value run configuration: file values overridden by command-line
//! flags, unknown keys rejected, and the resolved result echoed next to every
//! run's outputs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// Every key any command understands. Lookups against this list reject
/// typos in config files and `--set` overrides.
pub const KNOWN_KEYS: &[&str] = &[
    "data",
    "corpus",
    "model",
    "features",
    "pred",
    "out",
    "token_column",
    "label_column",
    "method",
    "methods",
    "c1",
    "c2",
    "cl",
    "cl_list",
    "p",
    "p_list",
    "w",
    "k",
    "eps",
    "eps1",
    "tol",
    "seed",
    "folds",
    "repeats",
    "jobs",
    "max_alternations",
    "max_qp_sweeps",
    "epochs",
    "rounds",
    "init",
    "update",
    "floor",
    "task",
    "grid",
    "heldout",
    "set_energy",
    "clpl_sign",
    "dump_confidences",
    "dump_sweeps",
    "hash_bits",
    "seqs",
    "seq_len",
    "cand",
    "labels",
];

#[derive(Clone, Debug, Default)]
pub struct RunConfig {
    map: BTreeMap<String, String>,
}

impl RunConfig {
    /// Builds a config from an optional file plus override pairs (applied in
    /// order, later wins).
    pub fn from_sources(file: Option<&Path>, overrides: &[(String, String)]) -> Result<RunConfig> {
        let mut map = BTreeMap::new();
        if let Some(path) = file {
            let text = std::fs::read_to_string(path)?;
            for (lineno, line) in text.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                    line: lineno + 1,
                    message: format!("expected key=value, got '{line}'"),
                })?;
                let key = key.trim();
                Self::check_key(key)?;
                map.insert(key.to_string(), value.trim().to_string());
            }
        }
        for (key, value) in overrides {
            Self::check_key(key)?;
            map.insert(key.clone(), value.clone());
        }
        Ok(RunConfig { map })
    }

    fn check_key(key: &str) -> Result<()> {
        if KNOWN_KEYS.contains(&key) {
            Ok(())
        } else {
            Err(Error::config(format!("unknown configuration key '{key}'")))
        }
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.map.insert(key.to_string(), value.into());
    }

    /// Records a default so it appears in the resolved echo.
    pub fn default_value(&mut self, key: &str, value: impl Into<String>) {
        self.map.entry(key.to_string()).or_insert_with(|| value.into());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(String::as_str)
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| Error::config(format!("missing required configuration key '{key}'")))
    }

    pub fn get_usize(&self, key: &str, default: usize) -> Result<usize> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| Error::config(format!("key '{key}' expects an integer, got '{v}'"))),
        }
    }

    pub fn get_u64(&self, key: &str, default: u64) -> Result<u64> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| Error::config(format!("key '{key}' expects an integer, got '{v}'"))),
        }
    }

    pub fn get_f64(&self, key: &str, default: f64) -> Result<f64> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| Error::config(format!("key '{key}' expects a number, got '{v}'"))),
        }
    }

    pub fn get_bool(&self, key: &str, default: bool) -> Result<bool> {
        match self.get(key) {
            None => Ok(default),
            Some("true") | Some("1") => Ok(true),
            Some("false") | Some("0") => Ok(false),
            Some(v) => Err(Error::config(format!("key '{key}' expects true/false, got '{v}'"))),
        }
    }

    /// Comma-separated list of numbers.
    pub fn get_list_f64(&self, key: &str, default: &[f64]) -> Result<Vec<f64>> {
        match self.get(key) {
            None => Ok(default.to_vec()),
            Some(v) => v
                .split(',')
                .map(|item| {
                    item.trim()
                        .parse()
                        .map_err(|_| Error::config(format!("key '{key}' has a bad number '{item}'")))
                })
                .collect(),
        }
    }

    pub fn get_list_usize(&self, key: &str, default: &[usize]) -> Result<Vec<usize>> {
        match self.get(key) {
            None => Ok(default.to_vec()),
            Some(v) => v
                .split(',')
                .map(|item| {
                    item.trim()
                        .parse()
                        .map_err(|_| Error::config(format!("key '{key}' has a bad integer '{item}'")))
                })
                .collect(),
        }
    }

    /// Writes the resolved configuration as sorted key=value lines.
    pub fn write_resolved(&self, dir: &Path) -> Result<()> {
        let mut out = String::new();
        for (key, value) in &self.map {
            let _ = writeln!(out, "{key}={value}");
        }
        std::fs::write(dir.join("config.resolved"), out)?;
        Ok(())
    }
}
