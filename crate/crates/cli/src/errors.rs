//! Error taxonomy mapped onto process exit codes.
//!
//! 2 = configuration errors (bad flags, malformed manifests, impossible
//! sampler settings), 3 = data errors (unreadable or mismatched input
//! files), 4 = numerical failures inside a model run. Success is 0 and
//! clap's own usage errors also exit with 2.

use std::fmt;

use misalign_core::basis::BasisError;
use misalign_core::evaluate::EvaluateError;
use misalign_core::geometry::GeometryError;
use misalign_core::model::ModelError;
use misalign_core::predict::PredictError;
use misalign_core::sampler::SamplerError;
use misalign_core::simulate::SimError;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Data(String),
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "configuration error: {msg}"),
            CliError::Data(msg) => write!(f, "data error: {msg}"),
            CliError::Numeric(msg) => write!(f, "numerical error: {msg}"),
        }
    }
}

impl std::error::Error for CliError {}

/// Attach a file path to an I/O failure; unreadable inputs and unwritable
/// outputs are both data errors.
pub fn io_err(path: &std::path::Path, err: std::io::Error) -> CliError {
    CliError::Data(format!("{}: {err}", path.display()))
}

impl From<GeometryError> for CliError {
    fn from(err: GeometryError) -> Self {
        CliError::Data(err.to_string())
    }
}

impl From<BasisError> for CliError {
    fn from(err: BasisError) -> Self {
        CliError::Numeric(err.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(err: ModelError) -> Self {
        CliError::Numeric(err.to_string())
    }
}

impl From<SamplerError<f64>> for CliError {
    fn from(err: SamplerError<f64>) -> Self {
        match err {
            SamplerError::Config { message } => CliError::Config(message),
            other => CliError::Numeric(other.to_string()),
        }
    }
}

impl From<PredictError> for CliError {
    fn from(err: PredictError) -> Self {
        CliError::Numeric(err.to_string())
    }
}

impl From<EvaluateError> for CliError {
    fn from(err: EvaluateError) -> Self {
        CliError::Numeric(err.to_string())
    }
}

impl From<SimError> for CliError {
    fn from(err: SimError) -> Self {
        match err {
            SimError::Config { message } => CliError::Config(message),
            other => CliError::Numeric(other.to_string()),
        }
    }
}
