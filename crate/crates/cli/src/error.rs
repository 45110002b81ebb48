use std::process::ExitCode;

use hsps_core::coincidence::CoincidenceError;
use hsps_core::estimators::EstimatorError;
use hsps_core::ngwitness::WitnessError;
use hsps_core::simsource::SimError;
use hsps_core::tagstream::StreamError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad arguments or parameters; exit code 2.
    #[error("{0}")]
    Usage(String),
    /// Unreadable, malformed or unusable input data; exit code 3.
    #[error("{0}")]
    Data(String),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Usage(_) => ExitCode::from(2),
            CliError::Data(_) => ExitCode::from(3),
        }
    }
}

impl From<StreamError> for CliError {
    fn from(e: StreamError) -> Self {
        match e {
            StreamError::InvalidRoles(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<CoincidenceError> for CliError {
    fn from(e: CoincidenceError) -> Self {
        match e {
            CoincidenceError::MissingRole(_)
            | CoincidenceError::NoFarPeaks(_)
            | CoincidenceError::ZeroNormalization => CliError::Data(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<EstimatorError> for CliError {
    fn from(e: EstimatorError) -> Self {
        match e {
            EstimatorError::SplittingRatio(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<WitnessError> for CliError {
    fn from(e: WitnessError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}
