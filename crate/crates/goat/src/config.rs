//! `key = value` run configuration with per-command key whitelists.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{origin}:{line}: expected `key = value`, got `{text}`")]
    Syntax {
        origin: String,
        line: usize,
        text: String,
    },
    #[error("unknown key `{key}` for `{command}` (known: {known})")]
    UnknownKey {
        key: String,
        command: &'static str,
        known: String,
    },
    #[error("invalid value `{value}` for `{key}`: {reason}")]
    Invalid {
        key: String,
        value: String,
        reason: String,
    },
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Parsed settings for one command. Later assignments override earlier
/// ones, so flags applied after the file take precedence.
#[derive(Debug, Clone)]
pub struct RunConfig {
    command: &'static str,
    allowed: &'static [&'static str],
    values: BTreeMap<String, String>,
}

impl RunConfig {
    pub fn new(command: &'static str, allowed: &'static [&'static str]) -> Self {
        Self {
            command,
            allowed,
            values: BTreeMap::new(),
        }
    }

    /// Reads `key = value` lines; blank lines and `#` comments are skipped.
    pub fn merge_str(&mut self, text: &str, origin: &str) -> Result<(), ConfigError> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ConfigError::Syntax {
                    origin: origin.into(),
                    line: n + 1,
                    text: raw.trim().into(),
                });
            };
            let key = key.trim();
            if key.is_empty() {
                return Err(ConfigError::Syntax {
                    origin: origin.into(),
                    line: n + 1,
                    text: raw.trim().into(),
                });
            }
            self.set(key, value.trim())?;
        }
        Ok(())
    }

    pub fn merge_file(&mut self, path: &Path) -> Result<(), ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        self.merge_str(&text, &path.display().to_string())
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) -> Result<(), ConfigError> {
        if !self.allowed.contains(&key) {
            return Err(ConfigError::UnknownKey {
                key: key.into(),
                command: self.command,
                known: self.allowed.join(", "),
            });
        }
        self.values.insert(key.into(), value.into());
        Ok(())
    }

    /// Parses a `KEY=VALUE` override.
    pub fn set_pair(&mut self, pair: &str) -> Result<(), ConfigError> {
        let (k, v) = pair.split_once('=').ok_or_else(|| ConfigError::Syntax {
            origin: "--set".into(),
            line: 1,
            text: pair.into(),
        })?;
        self.set(k.trim(), v.trim())
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, ConfigError>
    where
        T::Err: Display,
    {
        self.raw(key)
            .map(|v| {
                v.parse().map_err(|e: T::Err| ConfigError::Invalid {
                    key: key.into(),
                    value: v.into(),
                    reason: e.to_string(),
                })
            })
            .transpose()
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T, ConfigError>
    where
        T::Err: Display,
    {
        Ok(self.get(key)?.unwrap_or(default))
    }

    /// Comma-separated list.
    pub fn get_list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>, ConfigError>
    where
        T::Err: Display,
    {
        self.raw(key)
            .map(|v| {
                v.split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|item| {
                        item.parse().map_err(|e: T::Err| ConfigError::Invalid {
                            key: key.into(),
                            value: v.into(),
                            reason: e.to_string(),
                        })
                    })
                    .collect()
            })
            .transpose()
    }

    pub fn invalid(&self, key: &str, reason: impl Into<String>) -> ConfigError {
        ConfigError::Invalid {
            key: key.into(),
            value: self.raw(key).unwrap_or("").into(),
            reason: reason.into(),
        }
    }
}
