//! `--config` files.
//!
//! Two formats are accepted: `key = value` lines (`#` starts a comment) and
//! a `manifest.json` written by an earlier run, whose `config` object is
//! read back so that the run can be repeated.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigFile {
    source: String,
    values: BTreeMap<String, String>,
}

fn normalize_key(k: &str) -> String {
    k.trim().replace('-', "_")
}

impl ConfigFile {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io("read config file", path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn parse(text: &str, source: &str) -> CliResult<Self> {
        if text.trim_start().starts_with('{') {
            return Self::from_manifest(text, source);
        }
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(CliError::Input(format!(
                    "{source}: line {}: expected key = value, got '{line}'",
                    i + 1
                )));
            };
            values.insert(normalize_key(k), v.trim().to_string());
        }
        Ok(Self {
            source: source.to_string(),
            values,
        })
    }

    fn from_manifest(text: &str, source: &str) -> CliResult<Self> {
        let doc: serde_json::Value = serde_json::from_str(text)
            .map_err(|e| CliError::Input(format!("{source}: invalid JSON: {e}")))?;
        let config = doc
            .get("config")
            .and_then(|c| c.as_object())
            .ok_or_else(|| CliError::Input(format!("{source}: manifest has no config object")))?;
        let mut values = BTreeMap::new();
        for (k, v) in config {
            let s = match v {
                serde_json::Value::Null => continue,
                serde_json::Value::String(s) => s.clone(),
                serde_json::Value::Array(items) => items
                    .iter()
                    .map(|x| x.to_string())
                    .collect::<Vec<_>>()
                    .join(","),
                other => other.to_string(),
            };
            values.insert(normalize_key(k), s);
        }
        Ok(Self {
            source: source.to_string(),
            values,
        })
    }

    /// Rejects keys outside `allowed`, so typos do not go unnoticed.
    pub fn check_keys(&self, allowed: &[&str]) -> CliResult<()> {
        match self.values.keys().find(|k| !allowed.contains(&k.as_str())) {
            Some(k) => Err(CliError::Input(format!(
                "{}: unknown key '{k}' (expected one of: {})",
                self.source,
                allowed.join(", ")
            ))),
            None => Ok(()),
        }
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> CliResult<Option<T>> {
        match self.values.get(key) {
            None => Ok(None),
            Some(v) => v.parse().map(Some).map_err(|_| {
                CliError::Input(format!("{}: cannot parse {key} = '{v}'", self.source))
            }),
        }
    }

    pub fn get_list(&self, key: &str) -> CliResult<Option<Vec<f64>>> {
        match self.values.get(key) {
            None => Ok(None),
            Some(v) => parse_list(v).map(Some),
        }
    }

    pub fn get_strings(&self, key: &str) -> Option<Vec<String>> {
        self.values.get(key).map(|v| {
            v.split(',')
                .map(|s| s.trim().trim_matches('"').to_string())
                .filter(|s| !s.is_empty())
                .collect()
        })
    }
}

pub fn parse_list(v: &str) -> CliResult<Vec<f64>> {
    v.split(',')
        .map(|s| {
            let s = s.trim();
            s.parse::<f64>()
                .map_err(|_| CliError::Input(format!("cannot parse '{s}' as a number in '{v}'")))
        })
        .collect()
}
