//! Flat `key = value` experiment files.
//!
//! ```text
//! # comment
//! fixture = tanh
//! fixture = elu      # repeated keys form a list
//! k = 4
//! ```
//!
//! Blank lines and text after `#` are ignored. Keys are case-sensitive and
//! must belong to the command's key set.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Environment variable that overrides the base seed of every command.
pub const SEED_ENV: &str = "NLSE_SEED";

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Config {
    /// Values per key with the line each came from, in file order.
    entries: BTreeMap<String, Vec<(usize, String)>>,
}

impl Config {
    pub fn parse(text: &str, allowed: &[&str]) -> Result<Self> {
        let mut entries: BTreeMap<String, Vec<(usize, String)>> = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let (key, value) = body.split_once('=').ok_or_else(|| Error::Config {
                line,
                reason: format!("expected `key = value`, got `{body}`"),
            })?;
            let (key, value) = (key.trim(), value.trim());
            if key.is_empty() || value.is_empty() {
                return Err(Error::Config {
                    line,
                    reason: "empty key or value".into(),
                });
            }
            if !allowed.contains(&key) {
                return Err(Error::Config {
                    line,
                    reason: format!("unknown key `{key}` (expected one of: {})", allowed.join(", ")),
                });
            }
            entries.entry(key.to_string()).or_default().push((line, value.to_string()));
        }
        Ok(Config { entries })
    }

    pub fn load(path: &Path, allowed: &[&str]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, allowed)
    }

    /// Every value of `key`, or `default` if it is absent.
    pub fn list<T: FromStr>(&self, key: &str, default: Vec<T>) -> Result<Vec<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.entries.get(key) {
            None => Ok(default),
            Some(values) => values
                .iter()
                .map(|(line, v)| {
                    v.parse().map_err(|e: T::Err| Error::Config {
                        line: *line,
                        reason: format!("`{key} = {v}`: {e}"),
                    })
                })
                .collect(),
        }
    }

    /// The single value of `key`, or `default`. Repeating the key is an
    /// error.
    pub fn one<T: FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        match self.entries.get(key).map(Vec::as_slice) {
            None => Ok(default),
            Some([(line, _), (again, _), ..]) => Err(Error::Config {
                line: *again,
                reason: format!("`{key}` takes one value (first given on line {line})"),
            }),
            Some(_) => Ok(self.list(key, vec![])?.remove(0)),
        }
    }

    /// Resolved `(key, values)` pairs in key order.
    pub fn entries(&self) -> impl Iterator<Item = (&str, Vec<&str>)> {
        self.entries
            .iter()
            .map(|(k, v)| (k.as_str(), v.iter().map(|(_, s)| s.as_str()).collect()))
    }
}

/// `NLSE_SEED` if set, otherwise `fallback`.
pub fn resolve_seed(fallback: u64) -> Result<u64> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Error::param("NLSE_SEED", format!("`{v}` is not an unsigned 64-bit integer"))),
        Err(_) => Ok(fallback),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const KEYS: &[&str] = &["fixture", "k", "eps"];

    #[test]
    fn parses_lists_comments_and_defaults() {
        let c = Config::parse("# header\nfixture = tanh\n\nfixture=elu  # second\nk = 4\n", KEYS).unwrap();
        assert_eq!(c.list::<String>("fixture", vec![]).unwrap(), ["tanh", "elu"]);
        assert_eq!(c.one("k", 0usize).unwrap(), 4);
        assert_eq!(c.one("eps", 0.5f64).unwrap(), 0.5);
        assert_eq!(c.list("eps", vec![0.1f64]).unwrap(), [0.1]);
        let e: Vec<_> = c.entries().collect();
        assert_eq!(e[0], ("fixture", vec!["tanh", "elu"]));
    }

    #[test]
    fn rejects_bad_input() {
        let unknown = Config::parse("k = 1\nbogus = 2\n", KEYS).unwrap_err();
        assert!(matches!(unknown, Error::Config { line: 2, .. }), "{unknown}");
        assert!(matches!(Config::parse("k 1", KEYS), Err(Error::Config { line: 1, .. })));
        assert!(matches!(Config::parse("k =", KEYS), Err(Error::Config { .. })));
        let twice = Config::parse("k = 1\nk = 2", KEYS).unwrap();
        assert!(matches!(twice.one("k", 0usize), Err(Error::Config { line: 2, .. })));
        let typed = Config::parse("k = four", KEYS).unwrap();
        assert!(typed.one("k", 0usize).is_err());
    }
}
