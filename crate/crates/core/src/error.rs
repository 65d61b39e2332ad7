use thiserror::Error;

use crate::config::ConfigError;
use crate::library::LibraryError;
use crate::library::scorer::ScorerError;
use crate::llm::GatewayError;
use crate::questions::QuestionError;
use crate::report::ReportError;
use crate::store::StoreError;
use crate::taxonomy::TaxonomyError;
use crate::verification::search::SearchError;
use crate::verification::TransitionError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Top-level error for pipeline and CLI operations.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Taxonomy(#[from] TaxonomyError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Question(#[from] QuestionError),
    #[error(transparent)]
    Search(#[from] SearchError),
    #[error(transparent)]
    Transition(#[from] TransitionError),
    #[error(transparent)]
    Library(#[from] LibraryError),
    #[error(transparent)]
    Scorer(#[from] ScorerError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error("{0}")]
    Usage(String),
}

/// Coarse error class, used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    External,
    Corruption,
    Usage,
}

impl ErrorClass {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorClass::Usage => 1,
            ErrorClass::Config => 2,
            ErrorClass::External => 3,
            ErrorClass::Corruption => 4,
        }
    }
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_) | Error::Taxonomy(_) => ErrorClass::Config,
            Error::Gateway(_) | Error::Search(_) | Error::Scorer(_) => ErrorClass::External,
            Error::Question(QuestionError::Gateway(_)) => ErrorClass::External,
            Error::Library(LibraryError::Scorer(_) | LibraryError::Io(_)) => ErrorClass::External,
            Error::Library(LibraryError::Malformed(_) | LibraryError::EmptySeeds(_)) => {
                ErrorClass::Config
            }
            Error::Store(StoreError::Corrupt { .. }) => ErrorClass::Corruption,
            Error::Store(_) => ErrorClass::External,
            _ => ErrorClass::Usage,
        }
    }
}
