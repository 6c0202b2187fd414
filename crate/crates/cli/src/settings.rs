//! Flat `key = value` config files and flag/file/default resolution.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use anyhow::{Context, Result};

use crate::failure::UsageError;

/// Values read from a config file plus the resolved snapshot of every key.
#[derive(Debug, Default)]
pub struct Settings {
    file: BTreeMap<String, String>,
    resolved: BTreeMap<String, String>,
}

/// Parses `key = value` lines. Blank lines and `#` comments are skipped;
/// keys use the long flag names.
pub fn parse_flat(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(UsageError(format!("config line {}: expected key = value", n + 1)).into());
        };
        let key = k.trim().to_string();
        if key.is_empty() {
            return Err(UsageError(format!("config line {}: empty key", n + 1)).into());
        }
        if out.insert(key.clone(), v.trim().to_string()).is_some() {
            return Err(UsageError(format!("config line {}: duplicate key '{key}'", n + 1)).into());
        }
    }
    Ok(out)
}

impl Settings {
    pub fn load(path: Option<&Path>, allowed: &[&str]) -> Result<Self> {
        let file = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                parse_flat(&text)?
            }
            None => BTreeMap::new(),
        };
        if let Some(bad) = file.keys().find(|k| !allowed.contains(&k.as_str())) {
            return Err(UsageError(format!("unknown config key '{bad}'")).into());
        }
        Ok(Self {
            file,
            resolved: BTreeMap::new(),
        })
    }

    fn from_file<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        self.file
            .get(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|e| UsageError(format!("config key '{key}': {e}")).into())
            })
            .transpose()
    }

    /// Flag if given, else the file value, else `default`.
    pub fn pick<T: FromStr + Display>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T>
    where
        T::Err: Display,
    {
        let v = match flag {
            Some(v) => v,
            None => self.from_file(key)?.unwrap_or(default),
        };
        self.resolved.insert(key.to_string(), v.to_string());
        Ok(v)
    }

    /// Like [`pick`](Self::pick) without a default; missing is a usage error.
    pub fn require<T: FromStr + Display>(&mut self, key: &str, flag: Option<T>) -> Result<T>
    where
        T::Err: Display,
    {
        let v = match flag {
            Some(v) => v,
            None => self
                .from_file(key)?
                .ok_or_else(|| UsageError(format!("--{key} is required")))?,
        };
        self.resolved.insert(key.to_string(), v.to_string());
        Ok(v)
    }

    pub fn optional<T: FromStr + Display>(&mut self, key: &str, flag: Option<T>) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        let v = match flag {
            Some(v) => Some(v),
            None => self.from_file(key)?,
        };
        if let Some(v) = &v {
            self.resolved.insert(key.to_string(), v.to_string());
        }
        Ok(v)
    }

    /// Repeatable flag; the file form is a comma-separated list.
    pub fn list<T: FromStr + Display>(&mut self, key: &str, flag: Vec<T>) -> Result<Vec<T>>
    where
        T::Err: Display,
    {
        let v = if !flag.is_empty() {
            flag
        } else {
            match self.file.get(key) {
                Some(s) => s
                    .split(',')
                    .map(|p| {
                        p.trim()
                            .parse::<T>()
                            .map_err(|e| UsageError(format!("config key '{key}': {e}")).into())
                    })
                    .collect::<Result<Vec<T>>>()?,
                None => Vec::new(),
            }
        };
        if !v.is_empty() {
            let joined: Vec<String> = v.iter().map(|x| x.to_string()).collect();
            self.resolved.insert(key.to_string(), joined.join(","));
        }
        Ok(v)
    }

    pub fn snapshot(&self) -> BTreeMap<String, String> {
        self.resolved.clone()
    }
}
