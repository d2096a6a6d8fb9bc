use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] dimlight_core::Error),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {source}", path.display())]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("checkpoint {}: {reason}", path.display())]
    Checkpoint { path: PathBuf, reason: String },
    #[error("config: {0}")]
    Config(String),
    #[error("dataset: {0}")]
    Dataset(String),
    #[error("{name} has no counterpart in {}", dir.display())]
    MissingCounterpart { name: String, dir: PathBuf },
    #[error("non-finite {term} at step {step}")]
    Diverged { term: &'static str, step: usize },
    #[error("scorer {name}: {reason}")]
    Scorer { name: String, reason: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable category.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Core(_) => "core",
            Error::Io { .. } => "io",
            Error::Image { .. } => "image",
            Error::Checkpoint { .. } => "checkpoint",
            Error::Config(_) => "config",
            Error::Dataset(_) => "dataset",
            Error::MissingCounterpart { .. } => "missing_counterpart",
            Error::Diverged { .. } => "diverged",
            Error::Scorer { .. } => "scorer",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
