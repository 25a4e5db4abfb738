//! `key = value` configuration files.
//!
//! Blank lines and lines starting with `#` are ignored. Keys may not repeat.
//! Consumers take values out with the typed getters and finish with
//! [`KvConfig::finish`], which rejects any key nobody asked for.

use std::collections::BTreeMap;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default)]
pub struct KvConfig {
    entries: BTreeMap<String, (usize, String)>,
}

impl KvConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let lineno = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(lineno, "expected `key = value`"))?;
            let key = k.trim();
            let value = v.trim();
            if key.is_empty() || key.chars().any(char::is_whitespace) {
                return Err(Error::parse(lineno, format!("invalid key `{key}`")));
            }
            if entries
                .insert(key.to_string(), (lineno, value.to_string()))
                .is_some()
            {
                return Err(Error::parse(lineno, format!("duplicate key `{key}`")));
            }
        }
        Ok(KvConfig { entries })
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.entries.insert(key.to_string(), (0, value.into()));
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    /// Removes and parses `key`, if present.
    pub fn take<T: FromStr>(&mut self, key: &str) -> Result<Option<T>> {
        match self.entries.remove(key) {
            None => Ok(None),
            Some((line, v)) => v
                .parse()
                .map(Some)
                .map_err(|_| Error::parse(line, format!("bad value `{v}` for `{key}`"))),
        }
    }

    pub fn take_or<T: FromStr>(&mut self, key: &str, default: T) -> Result<T> {
        Ok(self.take(key)?.unwrap_or(default))
    }

    /// Keys still unconsumed that start with `prefix`, in sorted order.
    pub fn keys_with_prefix(&self, prefix: &str) -> Vec<String> {
        self.entries
            .keys()
            .filter(|k| k.starts_with(prefix))
            .cloned()
            .collect()
    }

    /// Errors on the first leftover key.
    pub fn finish(self) -> Result<()> {
        match self.entries.into_iter().next() {
            None => Ok(()),
            Some((k, (line, _))) => Err(Error::parse(line, format!("unknown key `{k}`"))),
        }
    }

    pub fn to_text(&self) -> String {
        self.entries
            .iter()
            .map(|(k, (_, v))| format!("{k} = {v}\n"))
            .collect()
    }
}
