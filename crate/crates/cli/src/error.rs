//! Exit-code mapping and the JSON error record written to stderr.

use serde::Serialize;
use synthpanel::{Error, ErrorClass};

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_SOLVER: i32 = 4;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    pub code: String,
    pub message: String,
    pub exit_code: i32,
}

#[derive(Serialize)]
struct ErrorRecord<'a> {
    error: &'a str,
    message: &'a str,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        CliError {
            code: "ConfigError".into(),
            message: message.into(),
            exit_code: EXIT_CONFIG,
        }
    }

    pub fn io(path: &std::path::Path, err: std::io::Error) -> Self {
        CliError {
            code: "IoError".into(),
            message: format!("{}: {err}", path.display()),
            exit_code: EXIT_DATA,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&ErrorRecord {
            error: &self.code,
            message: &self.message,
        })
        .expect("error record serializes")
    }
}

impl From<Error> for CliError {
    fn from(err: Error) -> Self {
        let exit_code = match err.class() {
            ErrorClass::Config => EXIT_CONFIG,
            ErrorClass::Data => EXIT_DATA,
            ErrorClass::Solver => EXIT_SOLVER,
        };
        CliError {
            code: err.code().to_string(),
            message: err.to_string(),
            exit_code,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.code, self.message)
    }
}
