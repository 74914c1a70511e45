//! Flat `key=value` run configuration.
//!
//! One key per line, `#` comments, no nesting. Unknown keys are rejected by
//! name and missing required keys are reported by name, so a typo never
//! silently falls back to a default. Command-line flags overwrite file
//! values through the same validated path.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};

/// Every key the configuration understands.
pub const ALLOWED_KEYS: &[&str] = &[
    // objective and loss weights
    "objective",
    "alpha",
    "beta",
    "s",
    "m",
    // optimizer schedule
    "epochs",
    "batch_size",
    "lr",
    "momentum",
    "weight_decay",
    "lr_decay_points",
    "seed",
    // architecture
    "layer_dims",
    // training attack
    "attack_epsilon",
    "attack_step_size",
    "attack_iterations",
    "attack_random_start",
    "attack_seed",
    "spsa_perturbation",
    "spsa_samples",
    "spsa_lr",
    // artifacts
    "train_data",
    "test_data",
    "checkpoint",
    "out_dir",
    "run_id",
    // evaluation
    "attacks",
];

fn check_key(key: &str) -> Result<()> {
    if ALLOWED_KEYS.contains(&key) {
        Ok(())
    } else {
        Err(Error::Config {
            message: format!("unknown config key '{key}'"),
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Config {
    values: BTreeMap<String, String>,
}

impl Config {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Config::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Config {
                message: format!("line {}: expected key=value, got '{line}'", lineno + 1),
            })?;
            cfg.set(key.trim(), value.trim())?;
        }
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config { message } => Error::Config {
                message: format!("{}: {message}", path.display()),
            },
            other => other,
        })
    }

    /// Set (or override) one key through the same validation as the file.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        check_key(key)?;
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key).ok_or_else(|| Error::Config {
            message: format!("missing required config key '{key}'"),
        })
    }

    fn parse_with<T, F>(&self, key: &str, what: &str, f: F) -> Result<Option<T>>
    where
        F: FnOnce(&str) -> Option<T>,
    {
        match self.get(key) {
            None => Ok(None),
            Some(raw) => f(raw).map(Some).ok_or_else(|| Error::Config {
                message: format!("config key '{key}' must be {what}, got '{raw}'"),
            }),
        }
    }

    pub fn get_f64(&self, key: &str) -> Result<Option<f64>> {
        self.parse_with(key, "a number", |s| s.parse().ok())
    }

    pub fn get_usize(&self, key: &str) -> Result<Option<usize>> {
        self.parse_with(key, "a non-negative integer", |s| s.parse().ok())
    }

    pub fn get_u64(&self, key: &str) -> Result<Option<u64>> {
        self.parse_with(key, "a non-negative integer", |s| s.parse().ok())
    }

    pub fn get_bool(&self, key: &str) -> Result<Option<bool>> {
        self.parse_with(key, "true or false", |s| match s {
            "true" | "1" => Some(true),
            "false" | "0" => Some(false),
            _ => None,
        })
    }

    /// Comma-separated list of numbers, e.g. `lr_decay_points=0.75,0.9`.
    pub fn get_f64_list(&self, key: &str) -> Result<Option<Vec<f64>>> {
        self.parse_with(key, "comma-separated numbers", |s| {
            s.split(',')
                .map(|t| t.trim().parse().ok())
                .collect::<Option<Vec<f64>>>()
        })
    }

    /// Comma-separated list of integers, e.g. `layer_dims=2,128,64,32`.
    pub fn get_usize_list(&self, key: &str) -> Result<Option<Vec<usize>>> {
        self.parse_with(key, "comma-separated integers", |s| {
            s.split(',')
                .map(|t| t.trim().parse().ok())
                .collect::<Option<Vec<usize>>>()
        })
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.values.keys().map(String::as_str)
    }
}
