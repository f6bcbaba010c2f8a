use thiserror::Error;

/// Failure classes, each with its own exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error {0}")]
    Config(String),
    #[error("numerical abort: {0}")]
    Numerical(String),
    #[error("check failed: {0}")]
    Check(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Io(_) => 1,
            CliError::Numerical(_) => 2,
            CliError::Check(_) => 3,
        }
    }
}

impl From<ampflow::MeasurementError> for CliError {
    fn from(e: ampflow::MeasurementError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<ampflow::SolverError> for CliError {
    fn from(e: ampflow::SolverError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<ampflow::SamplingError> for CliError {
    fn from(e: ampflow::SamplingError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<ampflow::LossError> for CliError {
    fn from(e: ampflow::LossError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<ampflow::LinalgError> for CliError {
    fn from(e: ampflow::LinalgError) -> Self {
        CliError::Numerical(e.to_string())
    }
}

impl From<ampflow::harness::HarnessError> for CliError {
    fn from(e: ampflow::harness::HarnessError) -> Self {
        CliError::Config(e.to_string())
    }
}
