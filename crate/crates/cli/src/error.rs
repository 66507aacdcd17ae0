use std::fmt;

use lyapinf::Error;

/// Process exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitKind {
    Validation,
    Numerical,
    NotConverged,
}

impl ExitKind {
    pub fn code(self) -> i32 {
        match self {
            ExitKind::Validation => 1,
            ExitKind::Numerical => 2,
            ExitKind::NotConverged => 3,
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub kind: ExitKind,
    pub message: String,
}

impl CliError {
    pub fn validation(message: impl Into<String>) -> Self {
        Self {
            kind: ExitKind::Validation,
            message: message.into(),
        }
    }

    pub fn numerical(message: impl Into<String>) -> Self {
        Self {
            kind: ExitKind::Numerical,
            message: message.into(),
        }
    }

    /// I/O failures are reported with the validation status.
    pub fn io(context: impl fmt::Display, err: std::io::Error) -> Self {
        Self::validation(format!("{context}: {err}"))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

pub fn exit_kind(err: &Error) -> ExitKind {
    match err {
        Error::Divergence { .. }
        | Error::Stiffness { .. }
        | Error::DegenerateFrame { .. }
        | Error::UnboundedDimension
        | Error::Covariance(_)
        | Error::Observation
        | Error::RegimeLost(_) => ExitKind::Numerical,
        Error::Precondition(_)
        | Error::Dimension { .. }
        | Error::UnknownModel { .. }
        | Error::MissingParameter(_)
        | Error::Parse(_) => ExitKind::Validation,
    }
}

impl From<Error> for CliError {
    fn from(err: Error) -> Self {
        Self {
            kind: exit_kind(&err),
            message: err.to_string(),
        }
    }
}
