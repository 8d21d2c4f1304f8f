use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("{what} = {value} is outside the open interval (0, 1)")]
    Domain { what: &'static str, value: f64 },

    #[error("{op} overflowed at z = {z} (g = {g}, h = {h})")]
    Overflow {
        op: &'static str,
        z: f64,
        g: f64,
        h: f64,
    },

    #[error(
        "could not bracket the inverse of tau at z_tilde = {z_tilde} (g = {g}, h = {h}) \
         after {doublings} doublings"
    )]
    BracketNotFound {
        z_tilde: f64,
        g: f64,
        h: f64,
        doublings: u32,
    },

    #[error("sample {index}: {source}")]
    AtSample {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("backward called without a cached train-mode forward pass")]
    NoForwardCache,

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("column `{0}` not found")]
    MissingColumn(String),

    #[error("row {row}, column `{column}`: cannot parse {value:?} as a number")]
    Parse {
        row: usize,
        column: String,
        value: String,
    },

    #[error("feature `{0}` has zero variance on the training split")]
    ZeroVariance(String),

    #[error("split produced an empty {0} set")]
    EmptySplit(&'static str),

    #[error("model format: {0}")]
    Format(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn at_sample(self, index: usize) -> Self {
        Error::AtSample {
            index,
            source: Box::new(self),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Numerical failures, as opposed to bad input data or configuration.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::Overflow { .. } | Error::BracketNotFound { .. } | Error::NonFiniteLoss { .. } => {
                true
            }
            Error::AtSample { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}
