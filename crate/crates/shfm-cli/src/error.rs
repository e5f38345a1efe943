use serde_json::json;
use shfm::ShfmError;

/// CLI-level error, split by exit code: input/validation problems exit 2,
/// numerical failures exit 1.
#[derive(Debug)]
pub enum CliError {
    Input(String),
    Numerical(String),
}

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitCode {
    Ok = 0,
    Numerical = 1,
    Input = 2,
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Input(_) => ExitCode::Input,
            CliError::Numerical(_) => ExitCode::Numerical,
        }
    }

    /// Machine-readable form for stderr.
    pub fn to_json(&self) -> String {
        let (kind, message) = match self {
            CliError::Input(m) => ("input", m),
            CliError::Numerical(m) => ("numerical", m),
        };
        json!({ "error": { "kind": kind, "message": message } }).to_string()
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Input(m) => write!(f, "input error: {m}"),
            CliError::Numerical(m) => write!(f, "numerical error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<ShfmError> for CliError {
    fn from(e: ShfmError) -> Self {
        match e {
            ShfmError::Numerical(m) => CliError::Numerical(m),
            other => CliError::Input(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Input(e.to_string())
    }
}
