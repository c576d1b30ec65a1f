use std::path::PathBuf;

/// Errors raised anywhere in the library.
///
/// Variants are grouped by the kind of failure rather than by module so that
/// callers (the CLI, the C ABI) can map them onto a small set of exit/status
/// codes.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("malformed Y4M header: {0}")]
    MalformedHeader(String),
    #[error("unsupported pixel format: {0}")]
    UnsupportedFormat(String),
    #[error("truncated frame payload: frame {frame} expected {expected} bytes, got {got}")]
    TruncatedFrame {
        frame: usize,
        expected: usize,
        got: usize,
    },
    #[error("out of range: {0}")]
    OutOfRange(String),
    #[error("geometry mismatch: {0}")]
    GeometryMismatch(String),
    #[error("input too small: {0}")]
    TooSmall(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("did not converge: {0}")]
    NonConvergence(String),
    #[error("missing decay model for content `{content_id}` / encoder `{encoder}`")]
    MissingModel { content_id: String, encoder: String },
    #[error("rating tables disagree on keys: {0}")]
    KeyMismatch(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("backward called on a graph with no recorded forward pass")]
    NoForward,
    #[error("missing assets: {}", .0.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(", "))]
    MissingAssets(Vec<PathBuf>),
    #[error("uncovered (content, encoder) pairs: {}", .0.join(", "))]
    UncoveredPairs(Vec<String>),
    #[error("config error: {0}")]
    Config(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
    #[error("TOML error: {0}")]
    Toml(#[from] toml::de::Error),
}

impl Error {
    /// Short machine-readable tag, used in error JSON and the C ABI.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::MalformedHeader(_) => "malformed_header",
            Error::UnsupportedFormat(_) => "unsupported_format",
            Error::TruncatedFrame { .. } => "truncated_frame",
            Error::OutOfRange(_) => "out_of_range",
            Error::GeometryMismatch(_) => "geometry_mismatch",
            Error::TooSmall(_) => "too_small",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::Degenerate(_) => "degenerate",
            Error::NonConvergence(_) => "non_convergence",
            Error::MissingModel { .. } => "missing_model",
            Error::KeyMismatch(_) => "key_mismatch",
            Error::ShapeMismatch(_) => "shape_mismatch",
            Error::NoForward => "no_forward",
            Error::MissingAssets(_) => "missing_assets",
            Error::UncoveredPairs(_) => "uncovered_pairs",
            Error::Config(_) => "config",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
            Error::Toml(_) => "toml",
        }
    }

    /// Whether the failure is attributable to user input (as opposed to an
    /// internal fault).
    pub fn is_input_error(&self) -> bool {
        !matches!(self, Error::NonConvergence(_) | Error::NoForward)
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
