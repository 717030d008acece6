use std::fmt;

/// Process exit codes.
pub mod code {
    pub const OTHER: i32 = 1;
    pub const CONFIG: i32 = 2;
    pub const DATASET_MISSING: i32 = 3;
    pub const NON_FINITE: i32 = 4;
    pub const DIMENSION: i32 = 5;
}

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn new(code: i32, message: impl Into<String>) -> Self {
        CliError { code, message: message.into() }
    }

    pub fn config(message: impl Into<String>) -> Self {
        CliError::new(code::CONFIG, message)
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<sbm_core::Error> for CliError {
    fn from(e: sbm_core::Error) -> Self {
        use sbm_core::Error::*;
        let code = match &e {
            Shape(_) => code::DIMENSION,
            NonFinite(_) => code::NON_FINITE,
            Spec(_) | InvalidArgument(_) => code::CONFIG,
            _ => code::OTHER,
        };
        CliError::new(code, e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::new(code::OTHER, e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::config(e.to_string())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
