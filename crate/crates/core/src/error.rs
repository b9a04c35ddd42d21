use std::path::PathBuf;

/// Errors raised anywhere in the pipeline.
///
/// Every variant maps onto a short machine-readable category (see
/// [`Error::category`]) which the CLI prints on stderr.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("format error: {0}")]
    Format(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("invalid configuration: {}", .0.join("; "))]
    Config(Vec<String>),
    #[error("empty dataset: {0}")]
    EmptyDataset(String),
    #[error("alignment error: {0}")]
    Alignment(String),
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("training step {step}: {source}")]
    AtStep {
        step: usize,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(vec![msg.into()])
    }

    pub fn at_step(self, step: usize) -> Self {
        Error::AtStep {
            step,
            source: Box::new(self),
        }
    }

    /// Stable category name, e.g. `"shape"` or `"io"`.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Format(_) => "format",
            Error::Degenerate(_) => "degenerate",
            Error::Shape(_) => "shape",
            Error::Contract(_) => "contract",
            Error::Parameter(_) => "parameter",
            Error::Config(_) => "config",
            Error::EmptyDataset(_) => "empty-dataset",
            Error::Alignment(_) => "alignment",
            Error::Numerical(_) => "numerical",
            Error::AtStep { source, .. } => source.category(),
        }
    }
}
