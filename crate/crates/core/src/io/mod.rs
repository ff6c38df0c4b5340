//! Text and binary file formats.
//!
//! Every text format is a magic line, `key=value` metadata lines, a fixed
//! column-header line and comma-separated records. Floats are written with
//! the shortest representation that parses back to the same value, so every
//! file round-trips exactly.

mod photons;
mod reports;
mod surfaces;
mod tags;

use std::str::FromStr;

pub use photons::{read_photons, write_photons, PhotonFile};
pub use reports::{read_fit_report, write_cut_csv, write_fit_report, write_matrix_csv};
pub use surfaces::{read_surface, write_coalescence, write_surface, SurfaceFile};
pub use tags::{read_tags, read_tags_binary, write_tags, write_tags_binary, TagFile};

use crate::error::{Error, Result};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Ordered `key=value` header entries.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Metadata {
    entries: Vec<(String, String)>,
    lines: Vec<usize>,
}

impl Metadata {
    pub fn new() -> Self {
        Self::default()
    }

    /// Sets `key`, replacing an earlier value.
    pub fn set(&mut self, key: &str, value: impl ToString) {
        let value = value.to_string();
        match self.entries.iter_mut().find(|(k, _)| k == key) {
            Some(e) => e.1 = value,
            None => {
                self.entries.push((key.to_string(), value));
                self.lines.push(0);
            }
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    /// Copies entries of `other` that are not set here.
    pub fn extend_missing(&mut self, other: &Metadata) {
        for (k, v) in other.entries() {
            if self.get(k).is_none() {
                self.set(k, v);
            }
        }
    }

    fn line_of(&self, key: &str) -> usize {
        self.entries
            .iter()
            .position(|(k, _)| k == key)
            .map_or(1, |i| self.lines[i])
    }

    pub(crate) fn require<T: FromStr>(&self, key: &str) -> Result<T> {
        let raw = self
            .get(key)
            .ok_or_else(|| Error::parse_line(2, format!("missing header key '{key}'")))?;
        raw.parse().map_err(|_| {
            Error::parse_line(self.line_of(key), format!("bad value '{raw}' for '{key}'"))
        })
    }

    pub(crate) fn optional<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.get(key) {
            None => Ok(None),
            Some(_) => self.require(key).map(Some),
        }
    }

    fn write(&self, out: &mut String) {
        for (k, v) in &self.entries {
            out.push_str(k);
            out.push('=');
            out.push_str(v);
            out.push('\n');
        }
    }
}

/// Splits a text file into metadata and `(line number, record)` pairs after
/// checking the magic line and the column header.
pub(crate) fn parse_document<'a>(
    text: &'a str,
    magic: &str,
    columns: &str,
) -> Result<(Metadata, Vec<(usize, &'a str)>)> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')));
    match lines.next() {
        Some((_, first)) if first == magic => {}
        Some((_, first)) => {
            return Err(Error::parse_line(
                1,
                format!("expected '{magic}', found '{first}'"),
            ));
        }
        None => return Err(Error::parse_line(1, "empty file")),
    }
    let mut meta = Metadata::new();
    loop {
        let Some((n, line)) = lines.next() else {
            return Err(Error::parse_line(
                text.lines().count() + 1,
                format!("missing column header '{columns}'"),
            ));
        };
        if line == columns {
            break;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::parse_line(
                n,
                format!("expected key=value or '{columns}'"),
            ));
        };
        if meta.get(k).is_some() {
            return Err(Error::parse_line(n, format!("duplicate key '{k}'")));
        }
        meta.entries.push((k.to_string(), v.to_string()));
        meta.lines.push(n);
    }
    let records = lines.filter(|(_, l)| !l.is_empty()).collect();
    Ok((meta, records))
}

/// Splits a record into exactly `N` comma-separated fields.
pub(crate) fn fields<const N: usize>(line_no: usize, line: &str) -> Result<[&str; N]> {
    let parts: Vec<&str> = line.split(',').collect();
    parts.try_into().map_err(|p: Vec<&str>| {
        Error::parse_line(line_no, format!("expected {N} fields, found {}", p.len()))
    })
}

pub(crate) fn parse_field<T: FromStr>(line_no: usize, name: &str, raw: &str) -> Result<T> {
    raw.trim()
        .parse()
        .map_err(|_| Error::parse_line(line_no, format!("bad {name} '{raw}'")))
}

pub(crate) fn write_document(magic: &str, meta: &Metadata, columns: &str, body: &str) -> String {
    let mut out = String::with_capacity(body.len() + 256);
    out.push_str(magic);
    out.push('\n');
    meta.write(&mut out);
    out.push_str(columns);
    out.push('\n');
    out.push_str(body);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn document_errors_carry_line_numbers() {
        let text = "#magic\na=1\nbogus\ncol\n";
        let err = parse_document(text, "#magic", "col")
            .unwrap_err()
            .to_string();
        assert!(err.contains("line 3"), "{err}");
        let err = parse_document("#other\n", "#magic", "col")
            .unwrap_err()
            .to_string();
        assert!(err.contains("line 1"), "{err}");
        let (meta, records) = parse_document("#magic\na=1\ncol\nx,y\n\n", "#magic", "col").unwrap();
        assert_eq!(meta.get("a"), Some("1"));
        assert_eq!(records, vec![(4, "x,y")]);
        let err = meta.require::<u64>("missing").unwrap_err().to_string();
        assert!(err.contains("missing header key"));
    }

    #[test]
    fn bad_field_counts_are_reported() {
        let err = fields::<3>(7, "1,2").unwrap_err().to_string();
        assert!(
            err.contains("line 7") && err.contains("expected 3 fields"),
            "{err}"
        );
    }
}
