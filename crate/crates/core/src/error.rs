use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Severity {
    Error,
    Warning,
    Note,
}

impl fmt::Display for Severity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Severity::Error => "error",
            Severity::Warning => "warning",
            Severity::Note => "note",
        })
    }
}

/// A located message, rendered as `file:line:col: severity: message`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub line: usize,
    pub col: usize,
    pub severity: Severity,
    pub message: String,
}

impl Diagnostic {
    pub fn error(line: usize, col: usize, message: impl Into<String>) -> Self {
        Diagnostic {
            line,
            col,
            severity: Severity::Error,
            message: message.into(),
        }
    }

    pub fn warning(line: usize, col: usize, message: impl Into<String>) -> Self {
        Diagnostic {
            line,
            col,
            severity: Severity::Warning,
            message: message.into(),
        }
    }

    pub fn render(&self, path: &str) -> String {
        format!(
            "{}:{}:{}: {}: {}",
            path, self.line, self.col, self.severity, self.message
        )
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}: {}: {}", self.line, self.col, self.severity, self.message)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("lex error: {0}")]
    Lex(Diagnostic),
    #[error("syntax error: {0}")]
    Syntax(Diagnostic),
    #[error("unsupported construct: {0}")]
    Unsupported(Diagnostic),
    #[error("precondition violated: {0}")]
    Precondition(Diagnostic),
    #[error("declaration placement: {0}")]
    Placement(Diagnostic),
    #[error("analysis failure: {0}")]
    Analysis(Diagnostic),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("internal error: {0}")]
    Internal(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn diagnostic(&self) -> Option<&Diagnostic> {
        match self {
            Error::Lex(d)
            | Error::Syntax(d)
            | Error::Unsupported(d)
            | Error::Precondition(d)
            | Error::Placement(d)
            | Error::Analysis(d) => Some(d),
            _ => None,
        }
    }

    /// 1 for problems in the user's input, 2 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Internal(_) | Error::Io(_) => 2,
            _ => 1,
        }
    }

    /// Render for the standard error stream, prefixing located diagnostics with `path`.
    pub fn render(&self, path: &str) -> String {
        match self.diagnostic() {
            Some(d) => d.render(path),
            None => format!("{}: error: {}", path, self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
