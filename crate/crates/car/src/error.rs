use std::io;
use std::path::{Path, PathBuf};

/// Errors surfaced by the command-line driver.
#[derive(Debug, thiserror::Error)]
pub enum CarError {
    #[error("{0}")]
    Input(String),
    #[error("{}: {msg}", path.display())]
    Format { path: PathBuf, msg: String },
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Core(#[from] car_core::Error),
}

pub type Result<T> = std::result::Result<T, CarError>;

impl CarError {
    pub fn input(msg: impl Into<String>) -> Self {
        CarError::Input(msg.into())
    }

    pub fn format(path: &Path, msg: impl Into<String>) -> Self {
        CarError::Format {
            path: path.to_path_buf(),
            msg: msg.into(),
        }
    }

    pub fn io(path: &Path, source: io::Error) -> Self {
        CarError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// 2 bad input, 3 numeric failure, 4 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            CarError::Input(_) | CarError::Format { .. } => 2,
            CarError::Io { .. } => 4,
            CarError::Core(e) if e.is_numeric() => 3,
            CarError::Core(_) => 2,
        }
    }
}

/// Attaches a path to I/O results.
pub(crate) trait IoContext<T> {
    fn at(self, path: &Path) -> Result<T>;
}

impl<T> IoContext<T> for io::Result<T> {
    fn at(self, path: &Path) -> Result<T> {
        self.map_err(|e| CarError::io(path, e))
    }
}
