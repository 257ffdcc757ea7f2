use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid schedule: {0}")]
    Schedule(String),

    #[error("timestep {t} outside [{min}, {max}]")]
    TimestepOutOfRange { t: usize, min: usize, max: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid oracle: {0}")]
    Oracle(String),

    #[error("non-finite input: {0}")]
    NonFinite(String),

    #[error("invalid label: class {class} but oracle has {classes} classes")]
    Label { class: usize, classes: usize },

    #[error("invalid combiner: {0}")]
    Combiner(String),

    #[error("mgda: {0}")]
    Mgda(String),

    #[error("invalid generator: {0}")]
    Generator(String),

    #[error("non-finite gradient at step {step} (t = {t})")]
    NonFiniteGradient { step: usize, t: usize },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("io error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Short machine-readable category, used by the CLI error line.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Schedule(_) | Error::TimestepOutOfRange { .. } => "schedule",
            Error::DimensionMismatch { .. } => "dimension",
            Error::Oracle(_) | Error::Label { .. } => "oracle",
            Error::NonFinite(_) | Error::NonFiniteGradient { .. } => "non_finite",
            Error::Combiner(_) => "combiner",
            Error::Mgda(_) => "mgda",
            Error::Generator(_) => "generator",
            Error::Config(_) => "config",
            Error::Io { .. } | Error::Csv(_) => "io",
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
