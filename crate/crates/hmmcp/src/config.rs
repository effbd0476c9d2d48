//! Plain-text configuration files.
//!
//! One `key = value` pair per line. Blank lines and lines starting with `#`
//! are skipped, and so is anything after ` #` on a line. Keys are the long
//! flag names without the leading dashes; `_` and `-` are interchangeable.
//!
//! ```text
//! # two-state sweep
//! preset = two-state
//! p = 0.9
//! b = 0.75
//! T = 200
//! alpha = 0.2
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ConfigFile {
    path: PathBuf,
    /// Normalized key to `(value, line)`.
    entries: BTreeMap<String, (String, usize)>,
}

fn normalize(key: &str) -> String {
    key.trim().replace('_', "-")
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = match raw.find(" #") {
                Some(cut) => &raw[..cut],
                None => raw,
            }
            .trim();
            if content.is_empty() || content.starts_with('#') {
                continue;
            }
            let Some((key, value)) = content.split_once('=') else {
                return Err(Error::Config(format!(
                    "{}:{line}: expected key = value",
                    path.display()
                )));
            };
            let key = normalize(key);
            if key.is_empty() {
                return Err(Error::Config(format!("{}:{line}: empty key", path.display())));
            }
            if let Some((_, first)) = entries.insert(key.clone(), (value.trim().to_owned(), line)) {
                return Err(Error::Config(format!(
                    "{}:{line}: {key} already set on line {first}",
                    path.display()
                )));
            }
        }
        Ok(Self {
            path: path.to_owned(),
            entries,
        })
    }

    /// Rejects keys outside `known`.
    pub fn check_known(&self, known: &[&str]) -> Result<()> {
        match self.entries.iter().find(|(k, _)| !known.contains(&k.as_str())) {
            Some((key, (_, line))) => Err(Error::Config(format!(
                "{}:{line}: unknown key {key}; accepted keys: {}",
                self.path.display(),
                known.join(", ")
            ))),
            None => Ok(()),
        }
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(&normalize(key)).map(|(v, _)| v.as_str())
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        let Some((value, line)) = self.entries.get(&normalize(key)) else {
            return Ok(None);
        };
        value.parse().map(Some).map_err(|_| {
            Error::Config(format!(
                "{}:{line}: invalid value {value:?} for {key}",
                self.path.display()
            ))
        })
    }
}

/// Flag value if given, else the file's value.
pub fn layered<T: FromStr>(flag: Option<T>, file: Option<&ConfigFile>, key: &str) -> Result<Option<T>> {
    match (flag, file) {
        (Some(v), _) => Ok(Some(v)),
        (None, Some(f)) => f.get(key),
        (None, None) => Ok(None),
    }
}
