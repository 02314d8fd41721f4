//! Line-delimited JSON helpers shared by the gallery, cluster-model and
//! embedder file formats.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

/// Decimal rendering with 17 significant digits; parses back to the same bits.
pub(crate) fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub(crate) fn push_f64_array(out: &mut String, xs: &[f64]) {
    out.push('[');
    for (i, x) in xs.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        out.push_str(&fmt_f64(*x));
    }
    out.push(']');
}

/// Appends `"key":value` where value is any serde-serializable scalar or map.
pub(crate) fn push_field<T: Serialize + ?Sized>(out: &mut String, key: &str, value: &T) {
    if !out.ends_with('{') {
        out.push(',');
    }
    let _ = write!(out, "\"{key}\":");
    out.push_str(&serde_json::to_string(value).expect("serializable value"));
}

pub(crate) fn push_f64_field(out: &mut String, key: &str, value: f64) {
    if !out.ends_with('{') {
        out.push(',');
    }
    let _ = write!(out, "\"{key}\":{}", fmt_f64(value));
}

pub(crate) fn push_array_field(out: &mut String, key: &str, xs: &[f64]) {
    if !out.ends_with('{') {
        out.push(',');
    }
    let _ = write!(out, "\"{key}\":");
    push_f64_array(out, xs);
}

/// A file split into numbered lines (1-based). Blank lines are skipped.
pub(crate) struct Lines {
    pub path: PathBuf,
    pub lines: Vec<(usize, String)>,
}

impl Lines {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Ok(Self::from_text(path, &text))
    }

    pub fn from_text(path: &Path, text: &str) -> Self {
        let lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| (i + 1, l.to_string()))
            .collect();
        Self { path: path.to_path_buf(), lines }
    }

    pub fn corrupt(&self, line: usize, reason: impl Into<String>) -> Error {
        Error::CorruptFile { path: self.path.clone(), line, reason: reason.into() }
    }

    pub fn parse<T: DeserializeOwned>(&self, line: usize, text: &str) -> Result<T> {
        serde_json::from_str(text).map_err(|e| self.corrupt(line, e.to_string()))
    }
}

/// Writes `contents` to a sibling temp file and renames it over `path`, so
/// readers observe either the old file or the complete new one.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(contents.as_bytes())?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}
