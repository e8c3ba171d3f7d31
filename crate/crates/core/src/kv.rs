//! Plain-text `key=value` documents: one pair per line, `#` comments, blank lines ignored.

use std::path::Path;

use crate::error::{Error, Result};

/// Ordered key/value pairs as they appeared in the source text.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KvDoc {
    entries: Vec<(String, String)>,
}

impl KvDoc {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> std::result::Result<Self, String> {
        let mut doc = KvDoc::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(format!(
                    "line {}: expected key=value, got `{line}`",
                    lineno + 1
                ));
            };
            let key = k.trim();
            if key.is_empty() {
                return Err(format!("line {}: empty key", lineno + 1));
            }
            if doc.get(key).is_some() {
                return Err(format!("line {}: duplicate key `{key}`", lineno + 1));
            }
            doc.entries.push((key.to_string(), v.trim().to_string()));
        }
        Ok(doc)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|m| Error::format(path, m))
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    /// Inserts or replaces, keeping the original position of an existing key.
    pub fn set(&mut self, key: impl Into<String>, value: impl ToString) {
        let key = key.into();
        let value = value.to_string();
        match self.entries.iter_mut().find(|(k, _)| *k == key) {
            Some(slot) => slot.1 = value,
            None => self.entries.push((key, value)),
        }
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(k, _)| k.as_str())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            out.push_str(k);
            out.push('=');
            out.push_str(v);
            out.push('\n');
        }
        out
    }

    pub fn require(&self, key: &str) -> std::result::Result<&str, String> {
        self.get(key).ok_or_else(|| format!("missing key `{key}`"))
    }

    pub fn parse_value<T: std::str::FromStr>(&self, key: &str) -> std::result::Result<T, String> {
        let raw = self.require(key)?;
        raw.parse::<T>()
            .map_err(|_| format!("key `{key}`: cannot parse `{raw}`"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_echo() {
        let doc = KvDoc::parse("# comment\na=1\n\n b = two words \n").unwrap();
        assert_eq!(doc.get("a"), Some("1"));
        assert_eq!(doc.get("b"), Some("two words"));
        assert_eq!(doc.to_text(), "a=1\nb=two words\n");
    }

    #[test]
    fn rejects_garbage_and_duplicates() {
        assert!(KvDoc::parse("novalue").is_err());
        assert!(KvDoc::parse("a=1\na=2").is_err());
        assert!(KvDoc::parse("=3").is_err());
    }

    #[test]
    fn set_replaces_in_place() {
        let mut doc = KvDoc::parse("a=1\nb=2").unwrap();
        doc.set("a", 5);
        doc.set("c", "x");
        assert_eq!(doc.to_text(), "a=5\nb=2\nc=x\n");
    }
}
