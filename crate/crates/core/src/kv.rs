//! Flat `key = value` config file parsing.
//!
//! Both the optical config and scenario files use the same format: one
//! `key = value` pair per line, `#` comments, blank lines ignored. Keys are
//! case-sensitive and match the symbol names documented on the types that
//! consume them.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::Error;
use crate::Result;

/// Parsed key/value pairs, in a deterministic (sorted) map.
#[derive(Debug, Clone, Default)]
pub struct KvFile {
    pub pairs: BTreeMap<String, String>,
    source: String,
}

impl KvFile {
    pub fn parse_str(text: &str, source: &str) -> Result<Self> {
        let mut pairs = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(i) => &raw[..i],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::parse(source, format!("line {}: expected `key = value`", lineno + 1))
            })?;
            let key = key.trim();
            if key.is_empty() {
                return Err(Error::parse(source, format!("line {}: empty key", lineno + 1)));
            }
            if pairs.insert(key.to_string(), value.trim().to_string()).is_some() {
                return Err(Error::parse(
                    source,
                    format!("line {}: duplicate key `{key}`", lineno + 1),
                ));
            }
        }
        Ok(KvFile {
            pairs,
            source: source.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::parse_str(&text, &path.display().to_string())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.pairs.get(key).map(|s| s.as_str())
    }

    pub fn get_f64(&self, key: &str) -> Result<Option<f64>> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => v.parse::<f64>().map(Some).map_err(|_| {
                Error::parse(&self.source, format!("key `{key}`: `{v}` is not a number"))
            }),
        }
    }

    pub fn get_usize(&self, key: &str) -> Result<Option<usize>> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => v.parse::<usize>().map(Some).map_err(|_| {
                Error::parse(&self.source, format!("key `{key}`: `{v}` is not an integer"))
            }),
        }
    }

    pub fn get_u64(&self, key: &str) -> Result<Option<u64>> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => v.parse::<u64>().map(Some).map_err(|_| {
                Error::parse(&self.source, format!("key `{key}`: `{v}` is not an integer"))
            }),
        }
    }

    /// Comma-separated list of floats.
    pub fn get_f64_list(&self, key: &str) -> Result<Option<Vec<f64>>> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => {
                let mut out = Vec::new();
                for item in v.split(',') {
                    let item = item.trim();
                    if item.is_empty() {
                        continue;
                    }
                    out.push(item.parse::<f64>().map_err(|_| {
                        Error::parse(&self.source, format!("key `{key}`: `{item}` is not a number"))
                    })?);
                }
                Ok(Some(out))
            }
        }
    }

    /// Reject keys outside the allowed set; typo guard.
    pub fn check_known(&self, known: &[&str]) -> Result<()> {
        for key in self.pairs.keys() {
            if !known.contains(&key.as_str()) {
                return Err(Error::parse(
                    &self.source,
                    format!("unknown key `{key}` (known keys: {})", known.join(", ")),
                ));
            }
        }
        Ok(())
    }
}
