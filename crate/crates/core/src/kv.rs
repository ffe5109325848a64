//! Flat `key = value` configuration files with `#` comments.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Parsed key/value pairs. Keys are tracked as they are consumed so that
/// leftovers can be rejected as unknown.
#[derive(Debug, Clone, Default)]
pub struct KeyValues {
    entries: BTreeMap<String, String>,
}

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Invalid(format!("line {}: expected key = value, got {raw:?}", lineno + 1))
            })?;
            let key = k.trim().to_string();
            if key.is_empty() {
                return Err(Error::Invalid(format!("line {}: empty key", lineno + 1)));
            }
            if entries.insert(key.clone(), v.trim().to_string()).is_some() {
                return Err(Error::config(key, "specified more than once"));
            }
        }
        Ok(KeyValues { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| Error::format(path, e.to_string()))
    }

    pub fn take_str(&mut self, key: &str) -> Option<String> {
        self.entries.remove(key)
    }

    pub fn take<T>(&mut self, key: &str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        self.entries
            .remove(key)
            .map(|v| v.parse().map_err(|e| Error::config(key, format!("{v:?}: {e}"))))
            .transpose()
    }

    pub fn take_list<T>(&mut self, key: &str) -> Result<Option<Vec<T>>>
    where
        T: FromStr,
        T::Err: Display,
    {
        self.entries
            .remove(key)
            .map(|v| {
                v.split(',')
                    .map(|p| {
                        p.trim()
                            .parse()
                            .map_err(|e| Error::config(key, format!("{p:?}: {e}")))
                    })
                    .collect()
            })
            .transpose()
    }

    /// Fails if any key was never consumed.
    pub fn finish(self) -> Result<()> {
        match self.entries.keys().next() {
            Some(k) => Err(Error::config(k.clone(), "unknown key")),
            None => Ok(()),
        }
    }
}

/// Serialises pairs in the order given, one per line.
pub fn render(pairs: &[(&str, String)]) -> String {
    pairs.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_lists() {
        let mut kv = KeyValues::parse("# header\na = 3  # trailing\n\nb = 1, 2,3\n").unwrap();
        assert_eq!(kv.take::<u32>("a").unwrap(), Some(3));
        assert_eq!(kv.take_list::<u32>("b").unwrap(), Some(vec![1, 2, 3]));
        assert_eq!(kv.take::<u32>("missing").unwrap(), None);
        kv.finish().unwrap();
    }

    #[test]
    fn rejects_unknown_and_duplicate_keys() {
        let kv = KeyValues::parse("x = 1").unwrap();
        assert!(kv.finish().is_err());
        assert!(KeyValues::parse("x = 1\nx = 2").is_err());
        assert!(KeyValues::parse("no equals sign").is_err());
    }

    #[test]
    fn bad_value_names_key() {
        let mut kv = KeyValues::parse("depth = seven").unwrap();
        let err = kv.take::<u32>("depth").unwrap_err().to_string();
        assert!(err.contains("depth"), "{err}");
    }
}
