//! Flat `key = value` configuration files.
//!
//! One assignment per line; `#` starts a comment; blank lines are ignored.
//! Values are plain strings until a caller asks for a typed view. Unknown
//! keys are rejected by callers, not here, so error messages can list the
//! keys that actually apply to a given command.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}:{line}: expected `key = value`, got {text:?}")]
    Malformed {
        path: String,
        line: usize,
        text: String,
    },
    #[error("{path}:{line}: duplicate key {key:?}")]
    DuplicateKey {
        path: String,
        line: usize,
        key: String,
    },
    #[error("{path}: cannot read: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("key {key:?}: expected {expected}, got {value:?}")]
    BadValue {
        key: String,
        expected: &'static str,
        value: String,
    },
    #[error("missing required key {0:?}")]
    MissingKey(String),
    #[error("unknown key {key:?} (valid keys: {valid})")]
    UnknownKey { key: String, valid: String },
}

pub type Result<T> = std::result::Result<T, ConfigError>;

/// An ordered bag of `key = value` assignments.
#[derive(Debug, Clone, Default)]
pub struct KvConfig {
    source: String,
    entries: BTreeMap<String, String>,
}

impl KvConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            };
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Malformed {
                path: source.to_string(),
                line: i + 1,
                text: raw.to_string(),
            })?;
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if key.is_empty() {
                return Err(ConfigError::Malformed {
                    path: source.to_string(),
                    line: i + 1,
                    text: raw.to_string(),
                });
            }
            if entries.insert(key.clone(), value).is_some() {
                return Err(ConfigError::DuplicateKey {
                    path: source.to_string(),
                    line: i + 1,
                    key,
                });
            }
        }
        Ok(Self {
            source: source.to_string(),
            entries,
        })
    }

    /// Builds a config from explicit pairs, e.g. CLI `--set key=value`
    /// overrides layered on top of a file.
    pub fn from_pairs(pairs: &[(String, String)]) -> Self {
        let mut entries = BTreeMap::new();
        for (k, v) in pairs {
            entries.insert(k.clone(), v.clone());
        }
        Self {
            source: "<args>".to_string(),
            entries,
        }
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    /// Overlays `other` on top of `self`; keys in `other` win.
    pub fn merged_with(&self, other: &KvConfig) -> KvConfig {
        let mut entries = self.entries.clone();
        for (k, v) in &other.entries {
            entries.insert(k.clone(), v.clone());
        }
        KvConfig {
            source: format!("{} + {}", self.source, other.source),
            entries,
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|s| s.as_str())
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|s| s.as_str())
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| ConfigError::MissingKey(key.to_string()))
    }

    pub fn get_parsed<T>(&self, key: &str, expected: &'static str) -> Result<Option<T>>
    where
        T: std::str::FromStr,
        T::Err: fmt::Display,
    {
        match self.get(key) {
            None => Ok(None),
            Some(raw) => raw.parse::<T>().map(Some).map_err(|_| ConfigError::BadValue {
                key: key.to_string(),
                expected,
                value: raw.to_string(),
            }),
        }
    }

    pub fn f64_or(&self, key: &str, default: f64) -> Result<f64> {
        Ok(self.get_parsed(key, "a real number")?.unwrap_or(default))
    }

    pub fn usize_or(&self, key: &str, default: usize) -> Result<usize> {
        Ok(self
            .get_parsed(key, "a non-negative integer")?
            .unwrap_or(default))
    }

    pub fn u64_or(&self, key: &str, default: u64) -> Result<u64> {
        Ok(self
            .get_parsed(key, "a non-negative integer")?
            .unwrap_or(default))
    }

    pub fn bool_or(&self, key: &str, default: bool) -> Result<bool> {
        match self.get(key) {
            None => Ok(default),
            Some("true") | Some("1") | Some("yes") => Ok(true),
            Some("false") | Some("0") | Some("no") => Ok(false),
            Some(other) => Err(ConfigError::BadValue {
                key: key.to_string(),
                expected: "true or false",
                value: other.to_string(),
            }),
        }
    }

    /// Comma-separated list; empty value gives an empty list.
    pub fn list_or(&self, key: &str, default: &[&str]) -> Vec<String> {
        match self.get(key) {
            None => default.iter().map(|s| s.to_string()).collect(),
            Some("") => Vec::new(),
            Some(raw) => raw.split(',').map(|s| s.trim().to_string()).collect(),
        }
    }

    /// Errors if any present key is outside `valid`. Call after all reads so
    /// the valid list is the single source of truth per command.
    pub fn reject_unknown(&self, valid: &[&str]) -> Result<()> {
        for key in self.entries.keys() {
            if !valid.contains(&key.as_str()) {
                return Err(ConfigError::UnknownKey {
                    key: key.clone(),
                    valid: valid.join(", "),
                });
            }
        }
        Ok(())
    }
}
