use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty window")]
    EmptyWindow,
    #[error("shape: {0}")]
    Shape(String),
    #[error("non-finite input in {0}")]
    NonFinite(&'static str),
    #[error("kernel must be odd for same padding (got {0})")]
    EvenKernel(usize),
    #[error("backward already run on this tape; re-run the forward pass")]
    BackwardConsumed,
    #[error("loss must be a scalar, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("out of range: {0}")]
    OutOfRange(String),
    #[error("collinear design matrix")]
    Collinear,
    #[error("series too short: need at least {need} observations, got {got}")]
    TooShort { need: usize, got: usize },
    #[error("ill-conditioned ratio: reference statistic {0} is too close to zero")]
    IllConditionedRatio(f64),
    #[error("MAPE undefined at zero true arrival")]
    MapeUndefined,
    #[error("diverged: {0}")]
    Diverged(String),
    #[error("config: {0}")]
    Config(String),
    #[error("format: {0}")]
    Format(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(e.to_string())
    }
}

impl From<toml::de::Error> for Error {
    fn from(e: toml::de::Error) -> Self {
        Error::Config(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Format(e.to_string())
    }
}

pub(crate) fn shape_err(msg: impl Into<String>) -> Error {
    Error::Shape(msg.into())
}

pub(crate) fn ensure_finite(data: &[f64], what: &'static str) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}
