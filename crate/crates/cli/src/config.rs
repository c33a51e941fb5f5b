//! Flat `key = value` run configuration, with command-line overrides.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use lbmha::{Error, Result};
use sha2::{Digest, Sha256};

/// Keys that never influence results and are left out of the config hash.
const UNHASHED: [&str; 2] = ["workers", "output"];

#[derive(Clone, Debug, Default)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

impl Settings {
    /// Parse a config file. `#` starts a comment; keys may use `-` or `_`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("config line {}: expected key = value", i + 1)))?;
            let key = normalize(k);
            if key.is_empty() {
                return Err(Error::Config(format!("config line {}: empty key", i + 1)));
            }
            if values.insert(key.clone(), v.trim().to_string()).is_some() {
                return Err(Error::Config(format!("config line {}: duplicate key '{key}'", i + 1)));
            }
        }
        Ok(Settings { values })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.values.insert(normalize(key), value.into());
    }

    /// Reject keys the running command does not understand.
    pub fn check_keys(&self, allowed: &[&str]) -> Result<()> {
        let unknown: Vec<&str> = self
            .values
            .keys()
            .map(String::as_str)
            .filter(|k| !allowed.contains(k) && !["seed", "workers", "output"].contains(k))
            .collect();
        if !unknown.is_empty() {
            return Err(Error::Config(format!(
                "unknown config keys: {} (expected one of: {})",
                unknown.join(", "),
                allowed.join(", ")
            )));
        }
        Ok(())
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str).filter(|v| !v.is_empty())
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        self.raw(key)
            .map(|v| v.parse().map_err(|e| Error::Config(format!("invalid {key} '{v}': {e}"))))
            .transpose()
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: Display,
    {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn flag(&self, key: &str) -> Result<bool> {
        match self.raw(key) {
            None => Ok(false),
            Some("true" | "yes" | "1") => Ok(true),
            Some("false" | "no" | "0") => Ok(false),
            Some(v) => Err(Error::Config(format!("invalid {key} '{v}': expected true or false"))),
        }
    }

    pub fn list<T: FromStr>(&self, key: &str, default: &str) -> Result<Vec<T>>
    where
        T::Err: Display,
    {
        self.raw(key)
            .unwrap_or(default)
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| s.parse().map_err(|e| Error::Config(format!("invalid {key} entry '{s}': {e}"))))
            .collect()
    }

    /// An input path that must exist.
    pub fn input(&self, key: &str) -> Result<Option<PathBuf>> {
        match self.raw(key) {
            None => Ok(None),
            Some(p) => {
                let path = PathBuf::from(p);
                if !path.exists() {
                    return Err(Error::Config(format!("{key} file not found: {p}")));
                }
                Ok(Some(path))
            }
        }
    }

    pub fn required_input(&self, key: &str) -> Result<PathBuf> {
        self.input(key)?.ok_or_else(|| Error::Config(format!("missing required input '{key}'")))
    }

    pub fn seed(&self) -> Result<u64> {
        self.get("seed")?.ok_or_else(|| Error::Config("this command is randomized and needs --seed".into()))
    }

    /// SHA-256 over the sorted settings, excluding worker count and output
    /// directory.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for (k, v) in &self.values {
            if !UNHASHED.contains(&k.as_str()) {
                h.update(format!("{k}={v}\n"));
            }
        }
        hex::encode(h.finalize())
    }

    pub fn entries(&self) -> impl Iterator<Item = (&String, &String)> {
        self.values.iter()
    }
}

fn normalize(key: &str) -> String {
    key.trim().to_ascii_lowercase().replace('_', "-")
}
