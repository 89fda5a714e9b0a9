//! `key = value` run-configuration files.
//!
//! Keys are the long flag names without the leading dashes; underscores work
//! in place of hyphens, and `step_mode` and `base_learner` are accepted for
//! `step` and `learner`. Blank lines and
//! lines starting with `#` are ignored. Flags given on the command line win
//! over the file, and the file wins over built-in defaults.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::CliError;

#[derive(Debug, Default, Clone)]
pub struct ConfigFile {
    entries: BTreeMap<String, String>,
}

impl ConfigFile {
    pub fn load(path: &Path, allowed: &[&str]) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config `{}`: {e}", path.display())))?;
        Self::parse(&text, allowed)
    }

    pub fn parse(text: &str, allowed: &[&str]) -> Result<Self, CliError> {
        let mut entries = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("config line {}: expected `key = value`", lineno + 1)))?;
            let key = match key.trim().trim_start_matches("--").replace('_', "-").as_str() {
                "step-mode" => "step".to_string(),
                "base-learner" => "learner".to_string(),
                other => other.to_string(),
            };
            if !allowed.contains(&key.as_str()) {
                return Err(CliError::Config(format!("config line {}: unknown key `{key}`", lineno + 1)));
            }
            if entries.insert(key.clone(), value.trim().to_string()).is_some() {
                return Err(CliError::Config(format!("config line {}: duplicate key `{key}`", lineno + 1)));
            }
        }
        Ok(Self { entries })
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, CliError> {
        match self.entries.get(key) {
            None => Ok(None),
            Some(v) => {
                v.parse().map(Some).map_err(|_| CliError::Config(format!("config key `{key}`: cannot parse `{v}`")))
            }
        }
    }

    pub fn flag(&self, key: &str) -> Result<bool, CliError> {
        match self.entries.get(key).map(|v| v.to_ascii_lowercase()) {
            None => Ok(false),
            Some(v) if matches!(v.as_str(), "true" | "yes" | "1" | "on") => Ok(true),
            Some(v) if matches!(v.as_str(), "false" | "no" | "0" | "off") => Ok(false),
            Some(v) => Err(CliError::Config(format!("config key `{key}`: expected a boolean, got `{v}`"))),
        }
    }
}

/// Command-line value if given, else the config entry.
pub fn pick<T: FromStr>(flag: Option<T>, file: &ConfigFile, key: &str) -> Result<Option<T>, CliError> {
    match flag {
        Some(v) => Ok(Some(v)),
        None => file.get(key),
    }
}
