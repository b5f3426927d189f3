use serde_json::json;
use tmedit::corpus::CorpusError;

/// Exit 1: bad invocation or config. Exit 2: bad input data. Exit 3: an
/// internal invariant failed.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data {
        message: String,
        file: Option<String>,
        line: Option<usize>,
    },
    Internal(String),
}

impl CliError {
    pub fn usage(m: impl Into<String>) -> Self {
        CliError::Usage(m.into())
    }

    pub fn data(m: impl Into<String>) -> Self {
        CliError::Data {
            message: m.into(),
            file: None,
            line: None,
        }
    }

    pub fn at(file: &str, line: usize, m: impl Into<String>) -> Self {
        CliError::Data {
            message: m.into(),
            file: Some(file.to_string()),
            line: Some(line),
        }
    }

    pub fn corpus(file: &str, e: CorpusError) -> Self {
        CliError::Data {
            line: e.line(),
            message: e.to_string(),
            file: Some(file.to_string()),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data { .. } => 2,
            CliError::Internal(_) => 3,
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        match self {
            CliError::Usage(m) => json!({ "error": { "kind": "usage", "message": m } }),
            CliError::Data { message, file, line } => json!({
                "error": { "kind": "data", "message": message, "file": file, "line": line }
            }),
            CliError::Internal(m) => json!({ "error": { "kind": "internal", "message": m } }),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::data(format!("I/O error: {e}"))
    }
}
