use std::io;
use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{}: file not found", .0.display())]
    FileNotFound(PathBuf),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    /// `row` is the 1-based line number in the input file.
    #[error("{}: row {row}: {message}", path.display())]
    Parse { path: PathBuf, row: u64, message: String },

    #[error("{}: series has {found} values, at least 2 are needed", path.display())]
    EmptySeries { path: PathBuf, found: usize },

    #[error("{}: no column named {name:?}", path.display())]
    MissingColumn { path: PathBuf, name: String },

    #[error("{}: {message}", path.display())]
    Csv { path: PathBuf, message: String },

    #[error("grid is empty")]
    EmptyGrid,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] hmmcp_core::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        let path = path.into();
        if source.kind() == io::ErrorKind::NotFound {
            Error::FileNotFound(path)
        } else {
            Error::Io { path, source }
        }
    }

    pub(crate) fn csv(path: impl Into<PathBuf>, err: csv::Error) -> Self {
        let path = path.into();
        if let csv::ErrorKind::Io(_) = err.kind() {
            match err.into_kind() {
                csv::ErrorKind::Io(source) => return Error::io(path, source),
                _ => unreachable!(),
            }
        }
        let row = err.position().map(|p| p.line());
        match row {
            Some(row) => Error::Parse {
                path,
                row,
                message: err.to_string(),
            },
            None => Error::Csv {
                path,
                message: err.to_string(),
            },
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
