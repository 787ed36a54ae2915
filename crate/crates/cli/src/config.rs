//! Line-oriented `key = value` run configuration.
//!
//! Blank lines and `#` comments are skipped. Keys use the long flag names
//! with `-` or `_` interchangeably; a flag given on the command line wins.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};

pub const KNOWN_KEYS: &[&str] = &[
    "seed",
    "arch",
    "out",
    "data",
    "split",
    "weighting",
    "iterations",
    "batch_size",
    "max_batches",
    "learning_rate",
    "embedding",
    "checkpoint",
    "naive",
    "labels",
    "pred",
    "stride",
    "perplexity",
    "tsne_iterations",
    "count",
    "duration",
    "prefix",
];

#[derive(Debug, Clone, Default)]
pub struct Settings {
    values: BTreeMap<String, String>,
    /// Directory of the config file; relative paths inside it resolve here.
    base: Option<PathBuf>,
}

fn normalize_key(k: &str) -> String {
    k.trim().replace('-', "_")
}

impl Settings {
    pub fn parse(text: &str, base: Option<PathBuf>) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("config line {}: expected `key = value`", i + 1))?;
            let key = normalize_key(k);
            if !KNOWN_KEYS.contains(&key.as_str()) {
                bail!("config line {}: unknown key `{key}`", i + 1);
            }
            if values.insert(key.clone(), v.trim().to_string()).is_some() {
                bail!("config line {}: duplicate key `{key}`", i + 1);
            }
        }
        Ok(Self { values, base })
    }

    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text, path.parent().map(Path::to_path_buf))
    }

    /// `flag` if given, else the parsed config value, else `None`.
    pub fn pick<T>(&self, flag: Option<T>, key: &str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        if flag.is_some() {
            return Ok(flag);
        }
        match self.values.get(key) {
            None => Ok(None),
            Some(v) => v.parse().map(Some).map_err(|e| anyhow!("config key `{key}` = {v:?}: {e}")),
        }
    }

    pub fn pick_or<T>(&self, flag: Option<T>, key: &str, default: T) -> Result<T>
    where
        T: FromStr,
        T::Err: Display,
    {
        Ok(self.pick(flag, key)?.unwrap_or(default))
    }

    /// Boolean switches: the flag turns it on, otherwise `true`/`false` from
    /// the config.
    pub fn switch(&self, flag: bool, key: &str) -> Result<bool> {
        Ok(flag || self.pick::<bool>(None, key)?.unwrap_or(false))
    }

    pub fn path(&self, flag: Option<PathBuf>, key: &str) -> Result<Option<PathBuf>> {
        if flag.is_some() {
            return Ok(flag);
        }
        Ok(self.values.get(key).map(|v| match &self.base {
            Some(base) if Path::new(v).is_relative() => base.join(v),
            _ => PathBuf::from(v),
        }))
    }

    pub fn require_path(&self, flag: Option<PathBuf>, key: &str) -> Result<PathBuf> {
        self.path(flag, key)?
            .ok_or_else(|| anyhow!("missing `--{}` (or `{key}` in the config file)", key.replace('_', "-")))
    }
}
