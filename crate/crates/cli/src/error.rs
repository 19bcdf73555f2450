use std::fmt;

/// Failure class, mapped to the process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitKind {
    Other,
    Data,
    Training,
}

impl ExitKind {
    pub fn code(self) -> i32 {
        match self {
            Self::Other => 1,
            Self::Data => 2,
            Self::Training => 3,
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub kind: ExitKind,
    pub error: anyhow::Error,
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

impl std::error::Error for CliError {}

/// Tags a result with the exit class of its error.
pub trait Classify<T> {
    fn classify(self, kind: ExitKind) -> Result<T, CliError>;

    fn data(self) -> Result<T, CliError>
    where
        Self: Sized,
    {
        self.classify(ExitKind::Data)
    }

    fn training(self) -> Result<T, CliError>
    where
        Self: Sized,
    {
        self.classify(ExitKind::Training)
    }

    fn other(self) -> Result<T, CliError>
    where
        Self: Sized,
    {
        self.classify(ExitKind::Other)
    }
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn classify(self, kind: ExitKind) -> Result<T, CliError> {
        self.map_err(|e| CliError { kind, error: e.into() })
    }
}
