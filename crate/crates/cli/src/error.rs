use std::fmt;
use std::path::{Path, PathBuf};

use serde::Serialize;

/// Failure reported to the user as one JSON object on stderr.
#[derive(Debug, Serialize)]
pub struct CliError {
    pub kind: &'static str,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub file: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub line: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub column: Option<usize>,
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn new(kind: &'static str, message: impl Into<String>) -> Self {
        Self { kind, message: message.into(), file: None, line: None, column: None }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new("config", message)
    }

    pub fn in_file(mut self, path: &Path) -> Self {
        self.file.get_or_insert_with(|| path.to_path_buf());
        self
    }

    pub fn at_line(mut self, line: usize) -> Self {
        self.line = Some(line);
        self
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        Self::new("io", e.to_string()).in_file(path)
    }

    pub fn json(path: &Path, e: serde_json::Error) -> Self {
        let kind = if e.is_io() { "io" } else { "config" };
        let mut err = Self::new(kind, e.to_string()).in_file(path);
        if e.line() > 0 {
            err.line = Some(e.line());
            err.column = Some(e.column());
        }
        err
    }

    pub fn to_json(&self) -> String {
        serde_json::json!({ "error": self }).to_string()
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(p) = &self.file {
            write!(f, "{}", p.display())?;
            if let Some(l) = self.line {
                write!(f, ":{l}")?;
            }
            f.write_str(": ")?;
        }
        write!(f, "{}", self.message)
    }
}

impl From<ambopt_core::Error> for CliError {
    fn from(e: ambopt_core::Error) -> Self {
        let kind = match e {
            ambopt_core::Error::Config(_) | ambopt_core::Error::Geo(_) => "config",
            ambopt_core::Error::Infeasible(_) => "infeasible",
            _ => "simulation",
        };
        Self::new(kind, e.to_string())
    }
}
