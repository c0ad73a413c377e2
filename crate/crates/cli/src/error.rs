use std::path::Path;

use adagcl::{DataError, DiffError};

pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;
pub const EXIT_INTERRUPTED: i32 = 130;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error(transparent)]
    Core(#[from] adagcl::Error),
    #[error("interrupted")]
    Interrupted,
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Core(e.into())
    }
}

impl From<DiffError> for CliError {
    fn from(e: DiffError) -> Self {
        CliError::Core(e.into())
    }
}

impl CliError {
    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Data(format!("{}: {e}", path.display()))
    }

    pub fn exit_code(&self) -> i32 {
        use adagcl::Error as E;
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
            CliError::Interrupted => EXIT_INTERRUPTED,
            CliError::Core(e) => match e {
                E::Config(_) => EXIT_USAGE,
                E::NonFinite { .. } | E::Diff(DiffError::NonFinite(_)) => EXIT_NUMERIC,
                E::Diff(
                    DiffError::Shape(_) | DiffError::Domain(_) | DiffError::NonScalarRoot(..),
                ) => EXIT_NUMERIC,
                _ => EXIT_DATA,
            },
        }
    }
}
