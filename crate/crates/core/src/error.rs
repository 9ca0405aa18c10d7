use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Invalid parameters (bad dimensions, non-positive bandwidths, ...).
    #[error("configuration error: {0}")]
    Config(String),

    /// Argument outside the mathematical domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// The target distribution does not provide the requested oracle.
    #[error("capability error: {0}")]
    Capability(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    /// Flow trajectory left the admissible ball.
    #[error("flow escaped radius {r_max} at t = {t}")]
    FlowEscape { t: f64, r_max: f64 },

    #[error("parse error at byte {offset}: {msg}")]
    Parse { offset: u64, msg: String },

    #[error("{path}: row {row}: {msg}")]
    Csv { path: PathBuf, row: usize, msg: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

pub(crate) fn ensure(cond: bool, make: impl FnOnce() -> Error) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(make())
    }
}

pub(crate) fn check_time(t: f64) -> Result<()> {
    ensure(t.is_finite() && t > 0.0, || {
        Error::Domain(format!("diffusion time must be positive and finite, got {t}"))
    })
}
