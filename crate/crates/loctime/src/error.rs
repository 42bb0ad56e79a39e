use thiserror::Error;

/// Errors shared across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    Parameter { name: &'static str, reason: String },

    #[error("path left the grid [{x_min}, {x_max}] at position {position}")]
    GridExceeded {
        x_min: f64,
        x_max: f64,
        position: f64,
    },

    #[error("lag {h} is not an integer multiple of grid step {dx} (snap drift {drift:e})")]
    LagNotOnGrid { h: f64, dx: f64, drift: f64 },

    #[error("permutation sum over {n} points exceeds the limit of {max}")]
    TooManyPoints { n: usize, max: usize },

    #[error("quadrature error bound {achieved:e} exceeds requested tolerance {requested:e}")]
    QuadratureTolerance { requested: f64, achieved: f64 },

    #[error("calibration file {path}: {reason}")]
    Calibration { path: String, reason: String },

    #[error("experiment config: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::Parameter {
            name,
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
