//! Flat `key = value` settings: config file first, command-line flags on top.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::parser::ValueSource;
use clap::ArgMatches;

use crate::CliError;

/// Flags that are not settings and never come from a config file.
const NOT_SETTINGS: &[&str] = &["config", "input"];

#[derive(Debug, Default, Clone)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

pub fn normalize_key(key: &str) -> String {
    key.trim().replace('-', "_")
}

impl Settings {
    pub fn parse_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("cannot read config file {}: {e}", path.display())))?;
        let mut values = BTreeMap::new();
        for (k, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(CliError::parse(format!(
                    "{}:{}: expected `key = value`",
                    path.display(),
                    k + 1
                )));
            };
            values.insert(normalize_key(key), value.trim().to_string());
        }
        Ok(Settings { values })
    }

    /// Overlays every flag given explicitly on the command line.
    pub fn overlay(&mut self, matches: &ArgMatches) {
        for id in matches.ids() {
            let id = id.as_str();
            if NOT_SETTINGS.contains(&id) || matches.value_source(id) != Some(ValueSource::CommandLine) {
                continue;
            }
            let key = normalize_key(id);
            if let Ok(Some(mut raw)) = matches.try_get_raw(id) {
                if let Some(v) = raw.next() {
                    self.values.insert(key, v.to_string_lossy().into_owned());
                }
            }
        }
    }

    pub fn keys(&self) -> impl Iterator<Item = (&str, &str)> {
        self.values.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, CliError>
    where
        T::Err: std::fmt::Display,
    {
        self.raw(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|e| CliError::usage(format!("invalid value `{v}` for `{key}`: {e}")))
            })
            .transpose()
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T, CliError>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn require(&self, key: &str) -> Result<&str, CliError> {
        self.raw(key)
            .ok_or_else(|| CliError::usage(format!("missing required setting `--{}`", key.replace('_', "-"))))
    }

    /// A required path that must exist.
    pub fn existing_path(&self, key: &str) -> Result<PathBuf, CliError> {
        let p = PathBuf::from(self.require(key)?);
        if !p.exists() {
            return Err(CliError::usage(format!("`--{}` path {} does not exist", key.replace('_', "-"), p.display())));
        }
        Ok(p)
    }

    /// An optional path that must exist when given.
    pub fn optional_path(&self, key: &str) -> Result<Option<PathBuf>, CliError> {
        match self.raw(key) {
            None => Ok(None),
            Some(_) => self.existing_path(key).map(Some),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::{Arg, Command};

    #[test]
    fn flags_win_over_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.conf");
        std::fs::write(&path, "# comment\nlearning-rate = 0.5\nseed=7\n").unwrap();
        let mut s = Settings::parse_file(&path).unwrap();
        let cmd = Command::new("t")
            .arg(Arg::new("learning-rate").long("learning-rate"))
            .arg(Arg::new("seed").long("seed").default_value("42"));
        let m = cmd.get_matches_from(["t", "--learning-rate", "0.01"]);
        s.overlay(&m);
        assert_eq!(s.raw("learning_rate"), Some("0.01"));
        // defaults do not override the file
        assert_eq!(s.get::<u64>("seed").unwrap(), Some(7));
        assert!(s.get::<u64>("learning_rate").is_err());
    }

    #[test]
    fn malformed_file_is_a_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.conf");
        std::fs::write(&path, "seed 7\n").unwrap();
        assert_eq!(Settings::parse_file(&path).unwrap_err().code, crate::EXIT_PARSE);
    }
}
