//! Flat `name=value` text files used for reports and configuration.

use std::fmt::Display;
use std::path::Path;

use crate::error::{Error, Result};

/// Ordered key-value pairs. Later duplicates override earlier ones on lookup.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeyValues {
    entries: Vec<(String, String)>,
}

impl KeyValues {
    pub fn new() -> Self {
        KeyValues::default()
    }

    pub fn push(&mut self, key: &str, value: impl Display) -> &mut Self {
        self.entries.push((key.to_string(), value.to_string()));
        self
    }

    /// Replaces an existing key in place, or appends it.
    pub fn set(&mut self, key: &str, value: impl Display) -> &mut Self {
        match self.entries.iter_mut().find(|(k, _)| k == key) {
            Some(e) => e.1 = value.to_string(),
            None => self.entries.push((key.to_string(), value.to_string())),
        }
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .rev()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(k, _)| k.as_str())
    }

    pub fn f64(&self, key: &str) -> Result<f64> {
        let v = self
            .get(key)
            .ok_or_else(|| Error::invalid(key, "missing"))?;
        v.parse()
            .map_err(|_| Error::invalid(key, format!("`{v}` is not a number")))
    }

    pub fn bool(&self, key: &str) -> Result<bool> {
        match self.get(key) {
            Some("true") => Ok(true),
            Some("false") => Ok(false),
            Some(v) => Err(Error::invalid(key, format!("`{v}` is not true/false"))),
            None => Err(Error::invalid(key, "missing")),
        }
    }

    pub fn usize(&self, key: &str) -> Result<usize> {
        let v = self
            .get(key)
            .ok_or_else(|| Error::invalid(key, "missing"))?;
        v.parse()
            .map_err(|_| Error::invalid(key, format!("`{v}` is not a non-negative integer")))
    }

    /// Parses `name=value` lines; blank lines and `#` comments are skipped.
    pub fn parse(text: &str, origin: &str) -> Result<KeyValues> {
        let mut out = KeyValues::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                path: origin.to_string(),
                line: idx + 1,
                reason: format!("expected `name=value`, found `{line}`"),
            })?;
            let k = k.trim();
            if k.is_empty() {
                return Err(Error::Parse {
                    path: origin.to_string(),
                    line: idx + 1,
                    reason: "empty key".into(),
                });
            }
            out.push(k, v.trim());
        }
        Ok(out)
    }

    pub fn read(path: &Path) -> Result<KeyValues> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        KeyValues::parse(&text, &path.display().to_string())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_string()).map_err(|e| Error::io(path, e))
    }
}

impl std::fmt::Display for KeyValues {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for (k, v) in &self.entries {
            writeln!(f, "{k}={v}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let mut kv = KeyValues::new();
        kv.push("h", 0.1 + 0.2).push("pass", true).push("n", 100);
        let back = KeyValues::parse(&kv.to_string(), "mem").unwrap();
        assert_eq!(back, kv);
        assert_eq!(back.f64("h").unwrap(), 0.1 + 0.2);
        assert!(back.bool("pass").unwrap());
        assert_eq!(back.usize("n").unwrap(), 100);
    }

    #[test]
    fn comments_and_errors() {
        let kv = KeyValues::parse("# c\n\na = 1\n", "f").unwrap();
        assert_eq!(kv.get("a"), Some("1"));
        let err = KeyValues::parse("a=1\nbogus\n", "cfg.txt").unwrap_err();
        assert_eq!(
            err,
            Error::Parse {
                path: "cfg.txt".into(),
                line: 2,
                reason: "expected `name=value`, found `bogus`".into()
            }
        );
        assert!(kv.f64("missing").is_err());
    }

    #[test]
    fn set_overrides() {
        let mut kv = KeyValues::new();
        kv.push("a", 1).push("b", 2);
        kv.set("a", 3).set("c", 4);
        assert_eq!(kv.to_string(), "a=3\nb=2\nc=4\n");
    }
}
