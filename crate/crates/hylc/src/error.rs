use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("parameter condition violated: {0}")]
    Parameter(String),
    #[error("integration diverged at t = {t}")]
    Divergence { t: f64 },
    #[error("no return to the jump set within the horizon")]
    NoReturn,
    #[error("solution left the region M")]
    LeftRegion,
    #[error("fixed-point search did not converge (residual {residual:e})")]
    NonConvergence { best: Vec<f64>, residual: f64 },
    #[error("transversality fails at the cycle's jump point (L_f h = {0:e})")]
    Transversality(f64),
    #[error("eigenvalue iteration did not converge")]
    EigenNonConvergence,
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("first impact time is zero; apply the jump first")]
    DegenerateStart,
    #[error("no matched samples between the two solutions")]
    InvalidPairing,
    #[error("unknown system '{0}'")]
    UnknownSystem(String),
    #[error("i/o: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::InvalidInput(e.to_string())
    }
}
