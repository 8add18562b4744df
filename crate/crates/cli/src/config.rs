//! Plain key=value configuration files. Precedence is command-line flag,
//! then file key, then built-in default; unknown file keys are rejected.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::str::FromStr;

use panprivacy::error::{Error, Result};

#[derive(Debug, Default)]
pub struct FileConfig {
    values: BTreeMap<String, String>,
    used: RefCell<BTreeSet<String>>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut values = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::domain(format!(
                    "{}:{}: expected key=value, got {raw:?}",
                    path.display(),
                    lineno + 1
                )));
            };
            values.insert(key.trim().to_string(), value.trim().to_string());
        }
        Ok(FileConfig {
            values,
            used: RefCell::new(BTreeSet::new()),
        })
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        let hit = self.values.get(key);
        if hit.is_some() {
            self.used.borrow_mut().insert(key.to_string());
        }
        hit.map(|s| s.as_str())
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.raw(key) {
            None => Ok(None),
            Some(text) => text
                .parse::<T>()
                .map(Some)
                .map_err(|_| Error::domain(format!("config key {key}: cannot parse {text:?}"))),
        }
    }

    /// Any key never looked up by the active command is a config error.
    pub fn reject_unknown(&self) -> Result<()> {
        let used = self.used.borrow();
        let unknown: Vec<&String> = self.values.keys().filter(|k| !used.contains(*k)).collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(Error::domain(format!(
                "unknown config keys: {}",
                unknown
                    .iter()
                    .map(|s| s.as_str())
                    .collect::<Vec<_>>()
                    .join(", ")
            )))
        }
    }
}

/// flag value, else file key, else default.
pub fn resolve<T: FromStr>(flag: Option<T>, file: &FileConfig, key: &str, default: T) -> Result<T> {
    if let Some(v) = flag {
        // still mark the file key as consumed so a redundant entry is not
        // reported as unknown
        let _ = file.raw(key);
        return Ok(v);
    }
    Ok(file.get(key)?.unwrap_or(default))
}

pub fn resolve_required<T: FromStr>(flag: Option<T>, file: &FileConfig, key: &str) -> Result<T> {
    if let Some(v) = flag {
        let _ = file.raw(key);
        return Ok(v);
    }
    file.get(key)?
        .ok_or_else(|| Error::domain(format!("missing required parameter: {key}")))
}
