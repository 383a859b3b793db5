//! Flat `key = value` configuration files.
//!
//! Grammar, one entry per line:
//!
//! ```text
//! line  := blank | comment | entry
//! comment := '#' anything
//! entry := key '=' value
//! key   := [a-z0-9_.-]+
//! ```
//!
//! Whitespace around keys and values is trimmed. A key may appear once.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Keys understood by the CLI, with their defaults.
pub const KNOWN_KEYS: [(&str, &str); 13] = [
    ("seed", "0"),
    ("preset", "desk"),
    ("codec.steps", "200"),
    ("codec.tones", "8"),
    ("codec.lr", "0.002"),
    ("flow.steps", "0"),
    ("flow.lr", "0.002"),
    ("flow.euler_steps", "10"),
    ("flow.draws", "4"),
    ("gl.iters", "32"),
    ("stage.steps", "0"),
    ("synth.docs", "8"),
    ("model.size", "default"),
];

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KvConfig {
    values: BTreeMap<String, String>,
}

impl KvConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::Config(format!("line {}: expected key = value", n + 1)));
            };
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty()
                || !k
                    .chars()
                    .all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || "_.-".contains(c))
            {
                return Err(Error::Config(format!("line {}: bad key {k:?}", n + 1)));
            }
            if values.insert(k.to_string(), v.to_string()).is_some() {
                return Err(Error::Config(format!("line {}: duplicate key {k:?}", n + 1)));
            }
        }
        Ok(Self { values })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Rejects keys outside [`KNOWN_KEYS`].
    pub fn check_known(&self) -> Result<()> {
        match self
            .values
            .keys()
            .find(|k| !KNOWN_KEYS.iter().any(|(known, _)| known == k))
        {
            Some(k) => Err(Error::Config(format!("unknown key {k:?}"))),
            None => Ok(()),
        }
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.values.insert(key.to_string(), value.into());
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    /// Value of `key`, falling back to its [`KNOWN_KEYS`] default.
    pub fn get<T: FromStr>(&self, key: &str) -> Result<T> {
        let raw = self
            .raw(key)
            .or_else(|| KNOWN_KEYS.iter().find(|(k, _)| *k == key).map(|(_, v)| *v))
            .ok_or_else(|| Error::Config(format!("missing key {key:?}")))?;
        raw.parse()
            .map_err(|_| Error::Config(format!("key {key:?}: cannot parse {raw:?}")))
    }
}
