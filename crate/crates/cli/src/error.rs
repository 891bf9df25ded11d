use std::fmt::Display;

use serde_json::json;
use tally_core::analytics::AnalyticsError;
use tally_core::corpus::CorpusError;
use tally_core::embeddings::EmbeddingError;
use tally_core::jsonl::JsonlError;
use tally_core::judge::JudgeError;
use tally_core::lexicon::LexiconError;
use tally_core::matcher::MatchError;
use tally_core::reallinear::LinearError;
use tally_core::realprompt::PromptError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Input,
    Provider,
    Internal,
}

impl ErrorKind {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::Usage => 1,
            ErrorKind::Input => 2,
            ErrorKind::Provider => 3,
            ErrorKind::Internal => 4,
        }
    }

    fn label(self) -> &'static str {
        match self {
            ErrorKind::Usage => "usage",
            ErrorKind::Input => "input",
            ErrorKind::Provider => "provider",
            ErrorKind::Internal => "internal",
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub kind: ErrorKind,
    pub message: String,
}

impl CliError {
    pub fn usage(m: impl Display) -> Self {
        CliError {
            kind: ErrorKind::Usage,
            message: m.to_string(),
        }
    }

    pub fn input(m: impl Display) -> Self {
        CliError {
            kind: ErrorKind::Input,
            message: m.to_string(),
        }
    }

    pub fn provider(m: impl Display) -> Self {
        CliError {
            kind: ErrorKind::Provider,
            message: m.to_string(),
        }
    }

    pub fn internal(m: impl Display) -> Self {
        CliError {
            kind: ErrorKind::Internal,
            message: m.to_string(),
        }
    }

    pub fn to_json(&self) -> String {
        json!({
            "error": self.kind.label(),
            "message": self.message,
            "exit_code": self.kind.exit_code(),
        })
        .to_string()
    }
}

pub type CliResult<T> = Result<T, CliError>;

macro_rules! input_errors {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::input(e)
            }
        }
    )*};
}

input_errors!(AnalyticsError, CorpusError, EmbeddingError, JsonlError, JudgeError, PromptError);

impl From<MatchError> for CliError {
    fn from(e: MatchError) -> Self {
        match e {
            MatchError::UnknownMode(_) => CliError::usage(e),
            _ => CliError::input(e),
        }
    }
}

impl From<LexiconError> for CliError {
    fn from(e: LexiconError) -> Self {
        match e {
            LexiconError::Provider { .. } => CliError::provider(e),
            _ => CliError::input(e),
        }
    }
}

impl From<LinearError> for CliError {
    fn from(e: LinearError) -> Self {
        match e {
            LinearError::Diverged { .. } => CliError::internal(e),
            LinearError::Config(_) => CliError::usage(e),
            _ => CliError::input(e),
        }
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::input(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::input(e)
    }
}
