use thiserror::Error;

/// Errors raised anywhere in the compile / simulate pipeline. The variant
/// names the stage that produced the diagnostic.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum Error {
    #[error("parse error at {line}:{col}: {msg}")]
    Parse { line: usize, col: usize, msg: String },
    #[error("frontend: {0}")]
    Frontend(String),
    #[error("affine: {0}")]
    Affine(String),
    #[error("scheduler: {0}")]
    Schedule(String),
    #[error("extraction: {0}")]
    Extraction(String),
    #[error("mapping: {0}")]
    Mapping(String),
    #[error("hwsim: cycle {cycle}: {unit}: {msg}")]
    Sim { cycle: i64, unit: String, msg: String },
    #[error("hwsim: timeout after {cycles} cycles; incomplete sinks: {sinks:?}")]
    Timeout { cycles: i64, sinks: Vec<String> },
    #[error("golden: {0}")]
    Golden(String),
    #[error("io: {0}")]
    Io(String),
}

impl Error {
    pub fn sim(cycle: i64, unit: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Sim { cycle, unit: unit.into(), msg: msg.into() }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
