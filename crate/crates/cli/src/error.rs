use modred::datapipe::DataError;
use modred::disttrain::{ProtocolError, TrainError};
use modred::evalkit::EvalError;
use modred::mae1d::CheckpointError;
use modred::numcore::NumError;

/// Exit codes: 0 success, 2 usage/config, 3 data, 4 protocol, 5 numeric.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn usage(message: String) -> Self {
        CliError { code: 2, message }
    }
    pub fn data(message: String) -> Self {
        CliError { code: 3, message }
    }
    pub fn protocol(message: String) -> Self {
        CliError { code: 4, message }
    }
    pub fn numeric(message: String) -> Self {
        CliError { code: 5, message }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.message)
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::InvalidConfig(_) => CliError::usage(e.to_string()),
            _ => CliError::data(e.to_string()),
        }
    }
}

impl From<NumError> for CliError {
    fn from(e: NumError) -> Self {
        CliError::numeric(e.to_string())
    }
}

impl From<ProtocolError> for CliError {
    fn from(e: ProtocolError) -> Self {
        CliError::protocol(e.to_string())
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        CliError::data(e.to_string())
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Num(e) => e.into(),
            TrainError::Data(e) => e.into(),
            TrainError::Protocol(e) => e.into(),
            TrainError::Checkpoint(e) => e.into(),
            TrainError::Config(msg) => CliError::usage(msg),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Num(e) => e.into(),
            EvalError::Data(e) => e.into(),
            EvalError::ZeroVariance | EvalError::ZeroNorm => CliError::numeric(e.to_string()),
            EvalError::InvalidInput(_) => CliError::usage(e.to_string()),
            EvalError::Io { .. } => CliError::data(e.to_string()),
        }
    }
}
