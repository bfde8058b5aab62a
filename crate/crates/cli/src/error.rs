use std::process::ExitCode;

/// Failures of a command, split by exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Malformed or unreadable input: exit 2.
    #[error("input error: {0}")]
    Input(String),
    /// The input is well formed but outside the model's domain: exit 1.
    #[error("{0}")]
    Domain(String),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(self.code())
    }

    pub fn code(&self) -> u8 {
        match self {
            CliError::Input(_) => 2,
            CliError::Domain(_) => 1,
        }
    }
}

impl From<affine_hilbert::Error> for CliError {
    fn from(e: affine_hilbert::Error) -> Self {
        use affine_hilbert::Error as E;
        match e {
            E::DimensionMismatch { .. }
            | E::IndexOutOfRange { .. }
            | E::InvalidPartition(_)
            | E::NonFinite(_)
            | E::InvalidConfig(_)
            | E::Construction(_)
            | E::EmptyEnsemble => CliError::Input(e.to_string()),
            _ => CliError::Domain(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Input(e.to_string())
    }
}
