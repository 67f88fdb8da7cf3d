//! `key = value` text files used for configs. `#` starts a comment.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeyValues {
    source: Option<PathBuf>,
    entries: BTreeMap<String, String>,
}

impl KeyValues {
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::parse(path, format!("line {}: expected key = value", n + 1)));
            };
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() {
                return Err(Error::parse(path, format!("line {}: empty key", n + 1)));
            }
            if entries.insert(k.to_owned(), v.to_owned()).is_some() {
                return Err(Error::parse(path, format!("line {}: duplicate key {k}", n + 1)));
            }
        }
        Ok(KeyValues {
            source: Some(path.to_owned()),
            entries,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn insert(&mut self, key: &str, value: impl Display) {
        self.entries.insert(key.to_owned(), value.to_string());
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Removes `key` and parses its value.
    pub fn take<T: FromStr>(&mut self, key: &str) -> Result<Option<T>> {
        let Some(raw) = self.entries.remove(key) else { return Ok(None) };
        raw.parse().map(Some).map_err(|_| {
            let msg = format!("cannot parse {key} = {raw:?}");
            match &self.source {
                Some(p) => Error::parse(p, msg),
                None => Error::InvalidParam(msg),
            }
        })
    }

    /// Overwrites `slot` when `key` is present.
    pub fn take_into<T: FromStr>(&mut self, key: &str, slot: &mut T) -> Result<()> {
        if let Some(v) = self.take(key)? {
            *slot = v;
        }
        Ok(())
    }

    /// Errors on any key nobody consumed.
    pub fn finish(self) -> Result<()> {
        if self.entries.is_empty() {
            return Ok(());
        }
        let keys: Vec<&str> = self.entries.keys().map(String::as_str).collect();
        let msg = format!("unknown keys: {}", keys.join(", "));
        Err(match self.source {
            Some(p) => Error::parse(&p, msg),
            None => Error::InvalidParam(msg),
        })
    }

    pub fn to_text(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_spacing() {
        let text = "# header\n gamma=0.5 \n\nlr = 1e-3 # inline\n";
        let mut kv = KeyValues::parse(text, Path::new("a.cfg")).unwrap();
        assert_eq!(kv.take::<f64>("gamma").unwrap(), Some(0.5));
        let mut lr = 0.0;
        kv.take_into("lr", &mut lr).unwrap();
        assert_eq!(lr, 1e-3);
        assert_eq!(kv.take::<f64>("gone").unwrap(), None);
        kv.finish().unwrap();
    }

    #[test]
    fn rejects_bad_lines() {
        assert!(KeyValues::parse("novalue\n", Path::new("x")).is_err());
        assert!(KeyValues::parse("a=1\na=2\n", Path::new("x")).is_err());
        assert!(KeyValues::parse("=1\n", Path::new("x")).is_err());
    }

    #[test]
    fn unknown_keys_are_reported() {
        let kv = KeyValues::parse("bogus = 1\nzeta = 2\n", Path::new("c.cfg")).unwrap();
        let err = kv.finish().unwrap_err().to_string();
        assert!(err.contains("bogus, zeta") && err.contains("c.cfg"), "{err}");
    }

    #[test]
    fn type_errors_name_the_key() {
        let mut kv = KeyValues::parse("batch = many\n", Path::new("c")).unwrap();
        assert!(kv.take::<usize>("batch").unwrap_err().to_string().contains("batch"));
    }

    #[test]
    fn text_round_trip() {
        let mut kv = KeyValues::default();
        kv.insert("b", 2);
        kv.insert("a", "x y");
        let text = kv.to_text();
        assert_eq!(text, "a = x y\nb = 2\n");
        let back = KeyValues::parse(&text, Path::new("t")).unwrap();
        assert_eq!(back.entries, kv.entries);
    }
}
