//! Plain-text `key = value` configuration files.
//!
//! Blank lines and `#` comments are ignored. Every key must be claimed by
//! one of the sections a command registers; anything left over is an error,
//! so typos never pass silently.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

/// A configuration section that knows its own keys.
pub trait KvSection {
    /// Applies one entry. Returns `Ok(false)` when the key is not part of
    /// this section.
    fn set(&mut self, key: &str, value: &str) -> Result<bool>;

    /// Current values, in a stable order, as `(key, value)` pairs.
    fn entries(&self) -> Vec<(&'static str, String)>;
}

/// Parsed but not yet interpreted key/value pairs, in file order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KvFile {
    pub entries: Vec<(String, String, usize)>,
}

impl KvFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {line_no}: expected `key = value`, got {raw:?}"))
            })?;
            let key = key.trim();
            if key.is_empty() {
                return Err(Error::Config(format!("line {line_no}: empty key")));
            }
            if entries.iter().any(|(k, _, _): &(String, String, usize)| k == key) {
                return Err(Error::Config(format!("line {line_no}: duplicate key `{key}`")));
            }
            entries.push((key.to_string(), value.trim().to_string(), line_no));
        }
        Ok(Self { entries })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Distributes entries over `sections`; the first section that accepts a
    /// key wins. Unclaimed keys are rejected.
    pub fn apply(&self, sections: &mut [&mut dyn KvSection]) -> Result<()> {
        for (key, value, line) in &self.entries {
            let mut claimed = false;
            for section in sections.iter_mut() {
                if section.set(key, value)? {
                    claimed = true;
                    break;
                }
            }
            if !claimed {
                return Err(Error::Config(format!("line {line}: unknown key `{key}`")));
            }
        }
        Ok(())
    }
}

pub fn render(section: &dyn KvSection) -> String {
    let mut out = String::new();
    for (key, value) in section.entries() {
        let _ = writeln!(out, "{key} = {value}");
    }
    out
}

pub fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for `{key}`")))
}

pub fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!("invalid boolean {value:?} for `{key}`"))),
    }
}

pub fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(|part| parse_value(key, part.trim()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Default)]
    struct Demo {
        alpha: f64,
        name: String,
    }

    impl KvSection for Demo {
        fn set(&mut self, key: &str, value: &str) -> Result<bool> {
            match key {
                "alpha" => self.alpha = parse_value(key, value)?,
                "name" => self.name = value.to_string(),
                _ => return Ok(false),
            }
            Ok(true)
        }

        fn entries(&self) -> Vec<(&'static str, String)> {
            vec![("alpha", self.alpha.to_string()), ("name", self.name.clone())]
        }
    }

    #[test]
    fn parses_comments_and_whitespace() {
        let kv = KvFile::parse("# header\nalpha = 0.5  # trailing\n\nname=walk\n").unwrap();
        let mut demo = Demo::default();
        kv.apply(&mut [&mut demo]).unwrap();
        assert_eq!(demo.alpha, 0.5);
        assert_eq!(demo.name, "walk");
        assert_eq!(render(&demo), "alpha = 0.5\nname = walk\n");
    }

    #[test]
    fn unknown_key_is_an_error() {
        let kv = KvFile::parse("alpah = 1\n").unwrap();
        let err = kv.apply(&mut [&mut Demo::default()]).unwrap_err();
        assert!(err.to_string().contains("unknown key `alpah`"), "{err}");
    }

    #[test]
    fn malformed_lines_are_rejected() {
        assert!(KvFile::parse("just words\n").is_err());
        assert!(KvFile::parse("a = 1\na = 2\n").is_err());
        let kv = KvFile::parse("alpha = many\n").unwrap();
        assert!(kv.apply(&mut [&mut Demo::default()]).is_err());
    }
}
