use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the library can report.
///
/// Variants carry enough context to render a single-line, `key=value`
/// error record (see [`Error::kind`]).
#[derive(Debug, Error)]
pub enum Error {
    #[error("row {row} has norm {norm:e}, below the degeneracy threshold")]
    DegenerateVector { row: usize, norm: f64 },

    #[error("non-finite value in {context}")]
    Numerical { context: String },

    #[error("shape mismatch in {context}: expected {expected}, found {found}")]
    Shape {
        context: &'static str,
        expected: String,
        found: String,
    },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("class {class} has no support samples")]
    MissingClass { class: usize },

    #[error("operation requires the PHR penalty kind")]
    UnsupportedKind,

    #[error("bad magic in {path}: expected VLFEAT01")]
    MagicMismatch { path: PathBuf },

    #[error("size mismatch for {field}: expected {expected}, found {found}")]
    SizeMismatch {
        field: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("sidecar field {field} disagrees with payload: {detail}")]
    SidecarMismatch { field: &'static str, detail: String },

    #[error("class {class} has {available} base samples, {requested} requested")]
    InsufficientShots {
        class: usize,
        available: usize,
        requested: usize,
    },

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("class space mismatch: {0}")]
    ClassSpace(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("unsupported method for this protocol: {0}")]
    UnsupportedMethod(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error in {context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// Stable machine-readable tag for the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::DegenerateVector { .. } => "DegenerateVector",
            Error::Numerical { .. } => "NumericalError",
            Error::Shape { .. } => "ShapeError",
            Error::EmptyInput(_) => "EmptyInput",
            Error::Domain(_) => "DomainError",
            Error::MissingClass { .. } => "MissingClass",
            Error::UnsupportedKind => "UnsupportedKind",
            Error::MagicMismatch { .. } => "MagicMismatch",
            Error::SizeMismatch { .. } => "SizeMismatch",
            Error::SidecarMismatch { .. } => "SidecarMismatch",
            Error::InsufficientShots { .. } => "InsufficientShots",
            Error::Geometry(_) => "GeometryError",
            Error::ClassSpace(_) => "ClassSpaceError",
            Error::InvalidConfig(_) => "InvalidConfig",
            Error::UnsupportedMethod(_) => "UnsupportedMethod",
            Error::Io { .. } => "IoError",
            Error::Json { .. } => "JsonError",
            Error::Context { source, .. } => source.kind(),
        }
    }

    /// Wraps `self` with a description of what was being done.
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// The innermost error, skipping context wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Context { source, .. } => source.root(),
            other => other,
        }
    }

    pub(crate) fn shape(
        context: &'static str,
        expected: impl ToString,
        found: impl ToString,
    ) -> Self {
        Error::Shape {
            context,
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
