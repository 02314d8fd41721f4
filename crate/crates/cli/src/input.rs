use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use emgal::{Embedding, Error};
use serde::de::DeserializeOwned;
use serde::Deserialize;
use thiserror::Error as ThisError;

#[derive(Debug, ThisError)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("store is locked by another process ({}); remove the file if no emgal process is running", .0.display())]
    Locked(PathBuf),
    #[error("{}: line {line}: {source}", path.display())]
    AtLine { path: PathBuf, line: usize, source: Error },
    #[error(transparent)]
    Core(#[from] Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) | CliError::Locked(_) => 2,
            CliError::AtLine { source, .. } | CliError::Core(source) => core_code(source),
        }
    }
}

fn core_code(e: &Error) -> u8 {
    match e {
        Error::DimensionMismatch { .. } => 3,
        e if e.is_numeric() => 4,
        Error::InvalidMetricParams(_)
        | Error::InvalidMargins(_)
        | Error::UnsupportedMetric(_)
        | Error::InvalidConfig(_)
        | Error::InvalidGalleryConfig(_) => 1,
        _ => 2,
    }
}

/// `path` with `suffix` appended to the file name.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s: OsString = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// One record or query line. `class` is required for ingest only.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecordLine {
    #[serde(default)]
    pub id: Option<u64>,
    #[serde(default)]
    pub class: Option<String>,
    #[serde(default)]
    pub aux: BTreeMap<String, String>,
    pub vec: Vec<f64>,
}

impl RecordLine {
    pub fn embedding(&self) -> Result<Embedding, Error> {
        Embedding::new(self.vec.clone())
    }
}

/// Parses every non-blank line of a JSON-lines file, keeping 1-based line
/// numbers for diagnostics.
pub fn read_lines<T: DeserializeOwned>(path: &Path) -> Result<Vec<(usize, T)>, CliError> {
    let text = std::fs::read_to_string(path).map_err(Error::Io)?;
    parse_lines(path, &text)
}

pub fn parse_lines<T: DeserializeOwned>(path: &Path, text: &str) -> Result<Vec<(usize, T)>, CliError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(line).map_err(|e| Error::CorruptFile {
            path: path.to_path_buf(),
            line: i + 1,
            reason: e.to_string(),
        })?;
        out.push((i + 1, value));
    }
    Ok(out)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(Error::Io)?;
    serde_json::from_str(&text).map_err(|e| {
        let line = e.line();
        CliError::Core(Error::CorruptFile { path: path.to_path_buf(), line, reason: e.to_string() })
    })
}

/// Parses `variable=state` pairs.
pub fn parse_aux(pairs: &[String]) -> Result<BTreeMap<String, String>, CliError> {
    pairs
        .iter()
        .map(|p| match p.split_once('=') {
            Some((k, v)) if !k.is_empty() && !v.is_empty() => Ok((k.to_string(), v.to_string())),
            _ => Err(CliError::Usage(format!("--aux expects VAR=STATE, got '{p}'"))),
        })
        .collect()
}
