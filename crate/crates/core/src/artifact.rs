//! Plain-text artifact container shared by the anchor, dataset and report-adjacent files.
//!
//! ```text
//! #anchorbridge <file-type>
//! version <u32>
//! <key> <value...>
//! ...
//! data
//! <whitespace separated f64 row>
//! ...
//! ```
//!
//! Floats are written with 17 significant digits so that a write/read cycle is bit exact.

use std::fmt::Write as _;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MAGIC_PREFIX: &str = "#anchorbridge";

/// Derives an independent 64-bit seed for a named stream from a root seed.
pub fn sub_seed(root: u64, stream: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(root.to_le_bytes());
    h.update(stream.as_bytes());
    u64::from_le_bytes(h.finalize()[..8].try_into().unwrap())
}

/// Formats a float with 17 significant digits (round-trips exactly through `str::parse`).
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// First 16 hex digits of the SHA-256 of `bytes`.
pub fn short_hash(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest[..8].iter().fold(String::with_capacity(16), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TextHeader {
    pub file_type: String,
    pub version: u32,
    entries: Vec<(String, String)>,
}

impl TextHeader {
    pub fn new(file_type: &str, version: u32) -> Self {
        Self {
            file_type: file_type.to_string(),
            version,
            entries: Vec::new(),
        }
    }

    pub fn set(&mut self, key: &str, value: impl ToString) -> &mut Self {
        let value = value.to_string();
        match self.entries.iter_mut().find(|(k, _)| k == key) {
            Some(entry) => entry.1 = value,
            None => self.entries.push((key.to_string(), value)),
        }
        self
    }

    pub fn get(&self, key: &str) -> Result<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| Error::Parse(format!("{} header lacks `{key}`", self.file_type)))
    }

    pub fn parse<T: FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.get(key)?;
        raw.parse()
            .map_err(|_| Error::Parse(format!("bad value `{raw}` for `{key}`")))
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }
}

pub fn write_text_artifact(header: &TextHeader, rows: &[Vec<f64>]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{MAGIC_PREFIX} {}", header.file_type);
    let _ = writeln!(out, "version {}", header.version);
    for (k, v) in &header.entries {
        let _ = writeln!(out, "{k} {v}");
    }
    out.push_str("data\n");
    for row in rows {
        let line: Vec<String> = row.iter().map(|v| fmt_f64(*v)).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

/// Parses a text artifact, checking its file type and schema version.
pub fn read_text_artifact(text: &str, file_type: &str, version: u32) -> Result<(TextHeader, Vec<Vec<f64>>)> {
    let mut lines = text.lines();
    let first = lines.next().ok_or_else(|| Error::Parse("empty artifact".into()))?;
    let found_type = first
        .strip_prefix(MAGIC_PREFIX)
        .map(str::trim)
        .ok_or_else(|| Error::Parse(format!("missing `{MAGIC_PREFIX}` magic line")))?;
    if found_type != file_type {
        return Err(Error::Mismatch(format!(
            "expected a `{file_type}` artifact, found `{found_type}`"
        )));
    }
    let mut header = TextHeader::new(file_type, 0);
    let mut saw_version = false;
    let mut in_data = false;
    let mut rows = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if in_data {
            if line.trim().is_empty() {
                continue;
            }
            let row = line
                .split_ascii_whitespace()
                .map(|tok| {
                    tok.parse::<f64>()
                        .map_err(|_| Error::Parse(format!("line {}: bad number `{tok}`", lineno + 2)))
                })
                .collect::<Result<Vec<f64>>>()?;
            rows.push(row);
            continue;
        }
        if line.trim() == "data" {
            in_data = true;
            continue;
        }
        let (key, value) = line.split_once(' ').unwrap_or((line, ""));
        if key == "version" {
            header.version = value
                .trim()
                .parse()
                .map_err(|_| Error::Parse(format!("bad version `{value}`")))?;
            saw_version = true;
        } else {
            header.set(key, value.trim());
        }
    }
    if !saw_version || !in_data {
        return Err(Error::Parse(format!(
            "truncated `{file_type}` artifact (missing version or data marker)"
        )));
    }
    if header.version != version {
        return Err(Error::Mismatch(format!(
            "`{file_type}` schema version {} is not supported (expected {version})",
            header.version
        )));
    }
    Ok((header, rows))
}
