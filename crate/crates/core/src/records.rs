//! Newline-delimited text records.
//!
//! One record per line, `key=value` fields separated by single spaces, keys
//! in insertion order. Values are percent-escaped so prompts and paths with
//! spaces survive a round trip. Dataset manifests, metrics logs, shot
//! annotations and eval reports all use this format.

use crate::{Error, Result};

/// Ordered key-value record.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Record {
    fields: Vec<(String, String)>,
}

fn escape(v: &str) -> String {
    let mut out = String::with_capacity(v.len());
    for c in v.chars() {
        match c {
            ' ' => out.push_str("%20"),
            '%' => out.push_str("%25"),
            '=' => out.push_str("%3d"),
            '\n' => out.push_str("%0a"),
            _ => out.push(c),
        }
    }
    out
}

fn unescape(v: &str) -> Result<String> {
    let bytes = v.as_bytes();
    let mut out = String::with_capacity(v.len());
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'%' {
            if i + 3 > bytes.len() {
                return Err(Error::State(format!("truncated escape in record value {v:?}")));
            }
            let hex = std::str::from_utf8(&bytes[i + 1..i + 3])
                .map_err(|_| Error::State(format!("bad escape in record value {v:?}")))?;
            let code = u8::from_str_radix(hex, 16)
                .map_err(|_| Error::State(format!("bad escape in record value {v:?}")))?;
            out.push(code as char);
            i += 3;
        } else {
            out.push(bytes[i] as char);
            i += 1;
        }
    }
    Ok(out)
}

impl Record {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, key: &str, value: impl ToString) -> &mut Self {
        debug_assert!(!key.contains([' ', '=', '\n', '%']), "bad record key {key:?}");
        if let Some(slot) = self.fields.iter_mut().find(|(k, _)| k == key) {
            slot.1 = value.to_string();
        } else {
            self.fields.push((key.to_string(), value.to_string()));
        }
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.fields.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| Error::State(format!("record missing field {key:?}: {}", self.to_line())))
    }

    pub fn require_parsed<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.require(key)?;
        raw.parse().map_err(|_| {
            Error::State(format!("record field {key}={raw:?} failed to parse"))
        })
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.fields.iter().map(|(k, _)| k.as_str())
    }

    /// Serialize to one line (no trailing newline).
    pub fn to_line(&self) -> String {
        self.fields
            .iter()
            .map(|(k, v)| format!("{k}={}", escape(v)))
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn parse_line(line: &str) -> Result<Self> {
        let mut rec = Record::new();
        for field in line.split(' ').filter(|f| !f.is_empty()) {
            let (k, v) = field
                .split_once('=')
                .ok_or_else(|| Error::State(format!("malformed record field {field:?}")))?;
            rec.fields.push((k.to_string(), unescape(v)?));
        }
        Ok(rec)
    }
}

/// Parse a whole file of records, skipping blank lines and `#` comments.
pub fn read_records(path: &std::path::Path) -> Result<Vec<Record>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .map(Record::parse_line)
        .collect()
}

/// Write records, one per line.
pub fn write_records(path: &std::path::Path, records: &[Record]) -> Result<()> {
    let mut out = String::new();
    for r in records {
        out.push_str(&r.to_line());
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_with_spaces_and_equals() {
        let mut r = Record::new();
        r.set("id", "000123");
        r.set("prompt", "a red circle moves right = fast, 100% sure");
        r.set("loss", 0.125f64);
        let line = r.to_line();
        assert!(!line.contains(' ') || line.split(' ').count() == 3);
        let back = Record::parse_line(&line).unwrap();
        assert_eq!(back, r);
        assert_eq!(back.get("prompt").unwrap(), "a red circle moves right = fast, 100% sure");
    }

    #[test]
    fn missing_field_is_an_error() {
        let r = Record::parse_line("a=1").unwrap();
        assert!(r.require("b").is_err());
    }
}
