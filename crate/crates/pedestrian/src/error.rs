use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] pedestrian_core::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("{path}: unsupported format version {found} (expected {expected})")]
    Version { path: PathBuf, found: u32, expected: u32 },
    #[error("{path}: corrupt payload: {message}")]
    Corrupt { path: PathBuf, message: String },
    #[error("{0}")]
    Usage(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub(crate) fn parse(path: &Path, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.to_path_buf(),
            message: message.into(),
        }
    }

    pub(crate) fn corrupt(path: &Path, message: impl Into<String>) -> Self {
        Error::Corrupt {
            path: path.to_path_buf(),
            message: message.into(),
        }
    }

    /// Short stable identifier used in command-line error lines.
    pub fn kind(&self) -> &'static str {
        use pedestrian_core::Error as C;
        match self {
            Error::Core(c) => match c {
                C::EmptyBox => "empty_box",
                C::SamplingExhausted { .. } => "sampling_exhausted",
                C::HistogramShape(_) => "histogram_shape",
                C::OutOfRange(_) => "out_of_range",
                C::ShapeMismatch(_) => "shape_mismatch",
                C::DimensionMismatch { .. } => "dimension_mismatch",
                C::NumericalFailure(_) => "numerical_failure",
                C::SingleClass(_) => "single_class",
                C::Invariant(_) => "invariant",
                C::MissingProposals(_) => "missing_proposals",
            },
            Error::Io { .. } => "io",
            Error::Parse { .. } => "parse",
            Error::Version { .. } => "version",
            Error::Corrupt { .. } => "corrupt",
            Error::Usage(_) => "usage",
        }
    }
}

pub fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn write(path: &Path, data: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, data).map_err(|e| Error::io(path, e))
}
