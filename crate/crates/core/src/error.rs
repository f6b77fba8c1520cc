use thiserror::Error;

/// Failure categories used by the command-line front end to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Config,
    Regime,
    Numeric,
    Io,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("unsupported regime: {0}")]
    UnsupportedRegime(String),

    #[error("regime violation: {0}")]
    RegimeViolation(String),

    #[error("trajectory starting at x0 = {x0} is already at or past X = {threshold}")]
    AlreadyPast { x0: f64, threshold: f64 },

    #[error("trajectory starting at x0 = {x0} never reaches X = {threshold}")]
    NeverArrives { x0: f64, threshold: f64 },

    #[error("x = {x} lies outside the grid [{lo}, {hi}]")]
    OutOfDomain { x: f64, lo: f64, hi: f64 },

    #[error("phase undefined at x = {x}, t = {t}: density {rho:e} at or below floor")]
    PhaseUndefined { x: f64, t: f64, rho: f64 },

    #[error("trajectory {index} entered a density node at t = {t}, x = {x}")]
    NodeCrossing { index: usize, t: f64, x: f64 },

    #[error("grid too small: boundary density ratio {ratio:e}; suggested half-width {suggested_half_width}")]
    GridTooSmall { ratio: f64, suggested_half_width: f64 },

    #[error("numerical degeneracy: {0}")]
    NumericalDegeneracy(String),

    #[error("degenerate mapping: {0}")]
    DegenerateMapping(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("distribution not normalized: total mass {mass}")]
    Unnormalized { mass: f64 },

    #[error("support coverage lost {lost:e} of the probability mass; raise the number of turns")]
    Coverage { lost: f64 },

    #[error("closed form requires beta_shape = 4/pi, got {0}")]
    UnsupportedShape(f64),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serialization(String),
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Config(_) | Error::UnsupportedShape(_) => ErrorCategory::Config,
            Error::UnsupportedRegime(_)
            | Error::RegimeViolation(_)
            | Error::AlreadyPast { .. }
            | Error::NeverArrives { .. }
            | Error::DegenerateMapping(_) => ErrorCategory::Regime,
            Error::Io(_) | Error::Serialization(_) => ErrorCategory::Io,
            _ => ErrorCategory::Numeric,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serialization(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
