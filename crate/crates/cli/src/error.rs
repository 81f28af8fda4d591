//! Exit-code classification: 1 for problems the user can fix, 2 for internal failures.

use std::fmt;
use std::io::ErrorKind;

use epf_core::backtest::BacktestError;
use epf_core::eval::EvalError;
use epf_core::ingest::IngestError;
use epf_core::seasonal::SeasonalError;

use crate::config::ConfigError;
use crate::synthetic::SyntheticError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Severity {
    User,
    Internal,
}

#[derive(Debug)]
pub struct CliError {
    pub severity: Severity,
    /// Module that raised the error, printed as the message prefix.
    pub module: &'static str,
    pub message: String,
}

impl CliError {
    pub fn user(module: &'static str, message: impl Into<String>) -> Self {
        CliError { severity: Severity::User, module, message: message.into() }
    }

    pub fn internal(module: &'static str, message: impl Into<String>) -> Self {
        CliError { severity: Severity::Internal, module, message: message.into() }
    }

    pub fn exit_code(&self) -> i32 {
        match self.severity {
            Severity::User => 1,
            Severity::Internal => 2,
        }
    }

    /// Output failures are internal; the message names the path.
    pub fn write(path: &std::path::Path, e: impl fmt::Display) -> Self {
        CliError::internal("io", format!("cannot write {}: {e}", path.display()))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "error[{}]: {}", self.module, self.message)
    }
}

impl std::error::Error for CliError {}

pub type CliResult<T> = Result<T, CliError>;

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::user("config", e.to_string())
    }
}

fn io_severity(kind: ErrorKind) -> Severity {
    match kind {
        ErrorKind::NotFound | ErrorKind::PermissionDenied | ErrorKind::InvalidData | ErrorKind::UnexpectedEof => Severity::User,
        _ => Severity::Internal,
    }
}

impl From<IngestError> for CliError {
    fn from(e: IngestError) -> Self {
        let severity = match &e {
            IngestError::Io(io) => io_severity(io.kind()),
            _ => Severity::User,
        };
        CliError { severity, module: "ingest", message: e.to_string() }
    }
}

impl From<SeasonalError> for CliError {
    fn from(e: SeasonalError) -> Self {
        let severity = match &e {
            SeasonalError::SingularFit | SeasonalError::Io(_) => Severity::Internal,
            _ => Severity::User,
        };
        CliError { severity, module: "seasonal", message: e.to_string() }
    }
}

impl From<BacktestError> for CliError {
    fn from(e: BacktestError) -> Self {
        let severity = match &e {
            BacktestError::Io(io) => io_severity(io.kind()),
            _ => Severity::User,
        };
        // The core message already carries the `backtest:` prefix.
        let message = e.to_string();
        let message = message.strip_prefix("backtest: ").unwrap_or(&message).to_string();
        CliError { severity, module: "backtest", message }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        let message = e.to_string();
        let message = message.strip_prefix("eval: ").unwrap_or(&message).to_string();
        CliError::user("eval", message)
    }
}

impl From<SyntheticError> for CliError {
    fn from(e: SyntheticError) -> Self {
        let severity = match &e {
            SyntheticError::TooShort(..) | SyntheticError::Invalid(_) => Severity::User,
            _ => Severity::Internal,
        };
        let message = e.to_string();
        let message = message.strip_prefix("generate: ").unwrap_or(&message).to_string();
        CliError { severity, module: "generate", message }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classification() {
        let missing = IngestError::Io(std::io::Error::new(ErrorKind::NotFound, "gone"));
        assert_eq!(CliError::from(missing).exit_code(), 1);
        let corrupt = IngestError::Malformed { line: 7, message: "bad".into() };
        let e = CliError::from(corrupt);
        assert_eq!(e.exit_code(), 1);
        assert_eq!(e.to_string(), "error[ingest]: line 7: bad");
        assert_eq!(CliError::from(SeasonalError::SingularFit).exit_code(), 2);
        let bt = CliError::from(BacktestError::InvalidConfig("x".into()));
        assert_eq!(bt.to_string(), "error[backtest]: invalid config: x");
        assert_eq!(CliError::internal("io", "disk").exit_code(), 2);
    }
}
