use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("budget error: {0}")]
    Budget(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("insufficient samples for pixel {pixel}: sample index {requested} requested, {stored} stored")]
    InsufficientSamples {
        pixel: usize,
        requested: usize,
        stored: usize,
    },

    #[error("degenerate bandwidth: all {0} subsampled points coincide")]
    DegenerateBandwidth(usize),

    #[error("label error: {0}")]
    Label(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("checkpoint error: {0}")]
    Checkpoint(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code for the command-line runner.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::DegenerateBandwidth(_) => 2,
            Error::Budget(_) => 3,
            Error::Format(_) | Error::InsufficientSamples { .. } | Error::Label(_) => 4,
            _ => 1,
        }
    }
}
