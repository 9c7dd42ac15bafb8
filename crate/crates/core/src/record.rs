//! Flat `key = value` text records grouped under `[section]` headers.
//!
//! ```text
//! # comment
//! kind = moons
//!
//! [train]
//! iterations = 400
//! lr = 0.003
//! ```
//!
//! Keys before the first header belong to the unnamed section `""`.
//! Section and key names use `[A-Za-z0-9_./-]`; values run to the end of the
//! line with surrounding whitespace trimmed. Duplicate sections or keys are
//! errors.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Record {
    sections: Vec<Section>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Section {
    pub name: String,
    pub entries: Vec<(String, String)>,
}

fn valid_name(s: &str) -> bool {
    !s.is_empty()
        && s.chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '.' | '-' | '/'))
}

impl Section {
    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }
}

impl Record {
    pub fn new() -> Self {
        Record::default()
    }

    pub fn sections(&self) -> &[Section] {
        &self.sections
    }

    pub fn section(&self, name: &str) -> Option<&Section> {
        self.sections.iter().find(|s| s.name == name)
    }

    fn section_mut(&mut self, name: &str) -> &mut Section {
        if let Some(i) = self.sections.iter().position(|s| s.name == name) {
            return &mut self.sections[i];
        }
        self.sections.push(Section {
            name: name.to_string(),
            entries: Vec::new(),
        });
        self.sections.last_mut().unwrap()
    }

    /// Sets `key` in `section`, replacing an existing value in place.
    ///
    /// Panics on names outside the allowed alphabet or values containing a
    /// line break, since those could not be read back.
    pub fn set(&mut self, section: &str, key: &str, value: impl ToString) {
        assert!(
            section.is_empty() || valid_name(section),
            "bad section name {section:?}"
        );
        assert!(valid_name(key), "bad key {key:?}");
        let value = value.to_string();
        assert!(!value.contains(['\n', '\r']), "value for {key} spans lines");
        let s = self.section_mut(section);
        match s.entries.iter_mut().find(|(k, _)| k == key) {
            Some(e) => e.1 = value,
            None => s.entries.push((key.to_string(), value)),
        }
    }

    pub fn get(&self, section: &str, key: &str) -> Option<&str> {
        self.section(section)?.get(key)
    }

    /// Parses the value of `section.key`, failing if it is missing or
    /// malformed.
    pub fn parse_value<T: FromStr>(&self, section: &str, key: &str) -> Result<T> {
        let raw = self
            .get(section, key)
            .ok_or_else(|| Error::parse(format!("missing key {}", dotted(section, key))))?;
        raw.parse()
            .map_err(|_| Error::parse(format!("bad value {raw:?} for {}", dotted(section, key))))
    }

    pub fn parse(text: &str) -> Result<Record> {
        let mut rec = Record::new();
        let mut current = String::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            let lineno = n + 1;
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| Error::parse(format!("line {lineno}: unclosed section header")))?
                    .trim();
                if !valid_name(name) {
                    return Err(Error::parse(format!("line {lineno}: bad section name {name:?}")));
                }
                if rec.section(name).is_some() {
                    return Err(Error::parse(format!("line {lineno}: duplicate section [{name}]")));
                }
                rec.section_mut(name);
                current = name.to_string();
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(format!("line {lineno}: expected key = value")))?;
            let (k, v) = (k.trim(), v.trim());
            if !valid_name(k) {
                return Err(Error::parse(format!("line {lineno}: bad key {k:?}")));
            }
            if rec.get(&current, k).is_some() {
                return Err(Error::parse(format!(
                    "line {lineno}: duplicate key {}",
                    dotted(&current, k)
                )));
            }
            rec.section_mut(&current).entries.push((k.to_string(), v.to_string()));
        }
        Ok(rec)
    }

    /// Every `(section, key)` pair in file order.
    pub fn keys(&self) -> impl Iterator<Item = (&str, &str)> {
        self.sections
            .iter()
            .flat_map(|s| s.entries.iter().map(move |(k, _)| (s.name.as_str(), k.as_str())))
    }
}

/// `section.key`, or just `key` for the unnamed section.
pub fn dotted(section: &str, key: &str) -> String {
    if section.is_empty() {
        key.to_string()
    } else {
        format!("{section}.{key}")
    }
}

impl std::fmt::Display for Record {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let mut out = String::new();
        let mut first = true;
        for s in &self.sections {
            if !s.name.is_empty() {
                if !first {
                    out.push('\n');
                }
                let _ = writeln!(out, "[{}]", s.name);
            }
            for (k, v) in &s.entries {
                let _ = writeln!(out, "{k} = {v}");
            }
            first = false;
        }
        f.write_str(&out)
    }
}

/// Formats a float so that parsing it back gives the same bits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

/// Space-separated list, the list syntax used inside record values.
pub fn fmt_list<T: ToString>(items: &[T]) -> String {
    items.iter().map(ToString::to_string).collect::<Vec<_>>().join(" ")
}

pub fn parse_list<T: FromStr>(raw: &str) -> Result<Vec<T>> {
    raw.split_whitespace()
        .map(|t| t.parse().map_err(|_| Error::parse(format!("bad list item {t:?}"))))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips() {
        let mut r = Record::new();
        r.set("", "kind", "moons");
        r.set("train", "lr", fmt_f64(0.1 + 0.2));
        r.set("train", "steps", 5);
        let text = r.to_string();
        let back = Record::parse(&text).unwrap();
        assert_eq!(back, r);
        assert_eq!(back.parse_value::<f64>("train", "lr").unwrap(), 0.1 + 0.2);
    }

    #[test]
    fn rejects_duplicates_and_garbage() {
        assert!(Record::parse("a = 1\na = 2").is_err());
        assert!(Record::parse("[x]\n[x]").is_err());
        assert!(Record::parse("no equals").is_err());
        assert!(Record::parse("[open").is_err());
        assert!(Record::parse("bad key = 1").is_err());
    }
}
