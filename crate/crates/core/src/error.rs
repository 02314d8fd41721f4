use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("embedding must have at least one component")]
    EmptyEmbedding,
    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },
    #[error("invalid metric parameters: {0}")]
    InvalidMetricParams(String),
    #[error("hamming distance requires entries in {{0, 1}}, found {value} at index {index}")]
    NonBinaryInput { index: usize, value: f64 },
    #[error("degenerate input: {0}")]
    DegenerateInput(&'static str),
    #[error("cannot normalize a zero vector")]
    ZeroVector,

    #[error("distances must be non-negative, got {0}")]
    NegativeDistance(f64),
    #[error("invalid margins: {0}")]
    InvalidMargins(String),
    #[error("unsupported metric for gradients: {0}")]
    UnsupportedMetric(String),

    #[error("batch needs at least two classes and a class with two samples")]
    InsufficientClasses,
    #[error("group-sensitive sampling requires a group tag on every sample (missing at index {index})")]
    MissingGroups { index: usize },
    #[error("loss became non-finite at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("empty input")]
    EmptyInput,

    #[error("unknown auxiliary variable '{0}'")]
    UnknownAuxVariable(String),
    #[error("state '{state}' is not admissible for auxiliary variable '{variable}'")]
    InvalidAuxState { variable: String, state: String },
    #[error("invalid auxiliary schema: {0}")]
    InvalidSchema(String),
    #[error("unknown class '{0}'")]
    UnknownClass(String),
    #[error("record id {0} already present")]
    DuplicateId(u64),
    #[error("no record with id {0}")]
    UnknownId(u64),
    #[error("invalid gallery configuration: {0}")]
    InvalidGalleryConfig(String),
    #[error("gallery is empty")]
    EmptyGallery,

    #[error("{}: corrupt file at line {line}: {reason}", path.display())]
    CorruptFile { path: PathBuf, line: usize, reason: String },
    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { expected: u32, found: u32 },
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("k = {k} exceeds the number of points ({n})")]
    KTooLarge { k: usize, n: usize },
    #[error("unknown variable '{0}'")]
    UnknownVariable(String),
    #[error("no class observes two or more states of '{0}'")]
    InsufficientStates(String),
    #[error("declared states do not include the model variable '{0}'")]
    UndeclaredVariable(String),

    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("requested {requested} components but at most {max} are available")]
    TooManyComponents { requested: usize, max: usize },

    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error("cell ({class}, {state}) has {count} samples, need at least 2")]
    CellTooSmall { class: String, state: String, count: usize },
}

impl Error {
    /// True for failures caused by numerics rather than by malformed input.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::NonFiniteLoss { .. } | Error::ZeroVector | Error::DegenerateInput(_) | Error::NonFinite { .. }
        )
    }
}
