//! Flat `key = value` configuration text.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Ordered key/value pairs. Later insertions override earlier ones.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct KeyValues {
    entries: BTreeMap<String, String>,
}

impl KeyValues {
    pub fn new() -> Self {
        Self::default()
    }

    /// Parses `key = value` lines; `#` starts a comment, blank lines are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut kv = Self::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value, got {raw:?}", n + 1)))?;
            let k = k.trim();
            if k.is_empty() {
                return Err(Error::Config(format!("line {}: empty key", n + 1)));
            }
            kv.set(k, v.trim());
        }
        Ok(kv)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.entries.insert(key.into(), value.into());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn merge(&mut self, other: &KeyValues) {
        for (k, v) in &other.entries {
            self.set(k.clone(), v.clone());
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn to_text(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

/// Parses one scalar value, naming the key on failure.
pub fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

/// Parses a comma-separated list.
pub fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| parse_value(key, v)).collect()
}

pub fn parse_triple(key: &str, value: &str) -> Result<[f64; 3]> {
    let v: Vec<f64> = parse_list(key, value)?;
    v.try_into()
        .map_err(|_| Error::Config(format!("{key}: expected three comma-separated values")))
}

pub fn format_list<T: ToString>(v: &[T]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

pub fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected a boolean, got {value:?}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_overrides() {
        let kv = KeyValues::parse("# header\na = 1\n\nb=two # trailing\na = 3\n").unwrap();
        assert_eq!(kv.get("a"), Some("3"));
        assert_eq!(kv.get("b"), Some("two"));
        assert_eq!(kv.len(), 2);
    }

    #[test]
    fn rejects_malformed_lines() {
        assert!(KeyValues::parse("no equals sign").is_err());
        assert!(KeyValues::parse(" = 4").is_err());
    }

    #[test]
    fn text_round_trip() {
        let kv = KeyValues::parse("x = 1.5\ny = a,b\n").unwrap();
        assert_eq!(KeyValues::parse(&kv.to_text()).unwrap(), kv);
    }

    #[test]
    fn typed_values() {
        assert_eq!(parse_value::<f64>("k", " 2.5 ").unwrap(), 2.5);
        assert!(parse_value::<u32>("k", "-1").is_err());
        assert_eq!(parse_triple("g", "1.1,1,0.9").unwrap(), [1.1, 1.0, 0.9]);
        assert!(parse_triple("g", "1,2").is_err());
        assert_eq!(parse_list::<usize>("s", "").unwrap(), Vec::<usize>::new());
        assert!(parse_bool("b", "true").unwrap());
        assert!(parse_bool("b", "maybe").is_err());
    }
}
