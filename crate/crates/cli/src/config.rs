//! `key = value` configuration files.
//!
//! A value given on the command line wins over the file, which wins over the
//! built-in default. Keys use underscores where flags use dashes, so
//! `--d-min` reads `d_min`.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Default)]
pub struct Config {
    values: BTreeMap<String, String>,
}

impl Config {
    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config file: {e}")).at(path))?;
        Self::parse(&text).map_err(|e| e.at(path))
    }

    /// Blank lines and lines starting with `#` are skipped.
    pub fn parse(text: &str) -> CliResult<Self> {
        let mut values = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(CliError::Config(format!("line {}: expected key = value", n + 1)));
            };
            let key = key.trim().replace('-', "_");
            if key.is_empty() {
                return Err(CliError::Config(format!("line {}: empty key", n + 1)));
            }
            if values.insert(key.clone(), value.trim().to_string()).is_some() {
                return Err(CliError::Config(format!("line {}: duplicate key `{key}`", n + 1)));
            }
        }
        Ok(Self { values })
    }

    pub fn pick_opt<T>(&self, flag: Option<T>, key: &str) -> CliResult<Option<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        if flag.is_some() {
            return Ok(flag);
        }
        self.values
            .get(key)
            .map(|raw| {
                raw.parse()
                    .map_err(|e| CliError::Config(format!("config key `{key}` = `{raw}`: {e}")))
            })
            .transpose()
    }

    pub fn pick<T>(&self, flag: Option<T>, key: &str, default: T) -> CliResult<T>
    where
        T: FromStr,
        T::Err: Display,
    {
        Ok(self.pick_opt(flag, key)?.unwrap_or(default))
    }
}
