//! `key = value` files used for run configuration and sweep grids.

use std::collections::BTreeMap;
use std::str::FromStr;

use bata_core::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeyValues {
    entries: BTreeMap<String, (usize, String)>,
}

fn normalize_key(k: &str) -> String {
    k.trim().trim_start_matches("--").replace('-', "_").to_ascii_lowercase()
}

impl KeyValues {
    /// One `key = value` per line; `#` starts a comment. Keys accept `-` or `_`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (k, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: k + 1,
                msg: format!("expected 'key = value', found '{line}'"),
            })?;
            let key = normalize_key(key);
            if key.is_empty() {
                return Err(Error::Parse { line: k + 1, msg: "empty key".into() });
            }
            if entries.insert(key.clone(), (k + 1, value.trim().to_string())).is_some() {
                return Err(Error::Parse { line: k + 1, msg: format!("key '{key}' given twice") });
            }
        }
        Ok(Self { entries })
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(&normalize_key(key)).map(|(_, v)| v.as_str())
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.entries.get(&normalize_key(key)) {
            None => Ok(None),
            Some((line, v)) => v.parse().map(Some).map_err(|_| Error::Parse {
                line: *line,
                msg: format!("invalid value '{v}' for '{key}'"),
            }),
        }
    }

    /// Comma-separated list.
    pub fn get_list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>> {
        match self.entries.get(&normalize_key(key)) {
            None => Ok(None),
            Some((line, v)) => parse_list(v)
                .map(Some)
                .map_err(|_| Error::Parse { line: *line, msg: format!("invalid list '{v}' for '{key}'") }),
        }
    }

    /// Rejects keys outside `allowed`, naming the line of the first stray key.
    pub fn check_keys(&self, allowed: &[&str]) -> Result<()> {
        for (k, (line, _)) in &self.entries {
            if !allowed.contains(&k.as_str()) {
                return Err(Error::Parse { line: *line, msg: format!("unknown key '{k}'") });
            }
        }
        Ok(())
    }
}

pub fn parse_list<T: FromStr>(s: &str) -> std::result::Result<Vec<T>, T::Err> {
    s.split(',').map(str::trim).filter(|x| !x.is_empty()).map(str::parse).collect()
}
