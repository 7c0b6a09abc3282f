use thiserror::Error;

/// Exit code 2 for bad input or configuration, 3 for failures while running.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }

    /// Errors while reading user-supplied inputs.
    pub fn input(e: drycurve::Error) -> Self {
        match e {
            drycurve::Error::Io(_)
            | drycurve::Error::Parse { .. }
            | drycurve::Error::Header { .. }
            | drycurve::Error::Csv(_)
            | drycurve::Error::Json(_)
            | drycurve::Error::InvalidArgument(_) => CliError::Usage(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<drycurve::Error> for CliError {
    fn from(e: drycurve::Error) -> Self {
        match e {
            drycurve::Error::InvalidArgument(_) | drycurve::Error::Parse { .. } | drycurve::Error::Header { .. } => {
                CliError::Usage(e.to_string())
            }
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}
