//! Line-based `key = value` text with `#` comments.
//!
//! Consumers `take` the keys they understand and then call `finish`, which
//! rejects anything left over with the line it appeared on.

use std::collections::HashSet;
use std::fmt::Display;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
struct Entry {
    line: usize,
    key: String,
    value: String,
    used: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct KeyValues {
    entries: Vec<Entry>,
}

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        let mut seen = HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let Some((k, v)) = body.split_once('=') else {
                return Err(Error::Config {
                    line,
                    reason: format!("expected `key = value`, got `{body}`"),
                });
            };
            let (key, value) = (k.trim(), v.trim());
            if key.is_empty() || key.contains(char::is_whitespace) {
                return Err(Error::Config {
                    line,
                    reason: format!("invalid key `{key}`"),
                });
            }
            if !seen.insert(key.to_string()) {
                return Err(Error::Config {
                    line,
                    reason: format!("duplicate key `{key}`"),
                });
            }
            entries.push(Entry {
                line,
                key: key.to_string(),
                value: value.to_string(),
                used: false,
            });
        }
        Ok(Self { entries })
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Line of `key`, if present.
    pub fn line_of(&self, key: &str) -> Option<usize> {
        self.entries.iter().find(|e| e.key == key).map(|e| e.line)
    }

    /// Raw value of `key`, marking it as understood.
    pub fn take_str(&mut self, key: &str) -> Option<(usize, String)> {
        let e = self.entries.iter_mut().find(|e| e.key == key)?;
        e.used = true;
        Some((e.line, e.value.clone()))
    }

    pub fn take<T>(&mut self, key: &str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        match self.take_str(key) {
            None => Ok(None),
            Some((line, v)) => v.parse().map(Some).map_err(|e| Error::Config {
                line,
                reason: format!("bad value `{v}` for `{key}`: {e}"),
            }),
        }
    }

    /// Like `take`, but the key must be present.
    pub fn require<T>(&mut self, key: &str) -> Result<T>
    where
        T: FromStr,
        T::Err: Display,
    {
        let last = self.entries.last().map_or(0, |e| e.line);
        self.take(key)?.ok_or_else(|| Error::Config {
            line: last,
            reason: format!("missing key `{key}`"),
        })
    }

    /// Overwrites `slot` if `key` is present.
    pub fn take_into<T>(&mut self, key: &str, slot: &mut T) -> Result<()>
    where
        T: FromStr,
        T::Err: Display,
    {
        if let Some(v) = self.take(key)? {
            *slot = v;
        }
        Ok(())
    }

    /// Fails on the first key nobody took.
    pub fn finish(self) -> Result<()> {
        match self.entries.iter().find(|e| !e.used) {
            Some(e) => Err(Error::Config {
                line: e.line,
                reason: format!("unknown key `{}`", e.key),
            }),
            None => Ok(()),
        }
    }
}
