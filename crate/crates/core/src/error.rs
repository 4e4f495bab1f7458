use thiserror::Error;

/// Errors raised anywhere in the toolkit.
///
/// Variants are grouped so that callers (the CLI in particular) can map them
/// onto coarse outcome classes via [`Error::class`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("critical level: level {level} equals -h^vee")]
    CriticalLevel { level: String },
    #[error("representation is not irreducible: Casimir is not scalar (deviation {deviation:.3e})")]
    NotIrreducible { deviation: f64 },
    #[error("domain error: {0}")]
    Domain(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("singular point: factor {factor} vanishes or is undefined")]
    SingularPoint { factor: String },
    #[error("degenerate configuration: factor {factor} has no dominant term ({detail})")]
    Degenerate { factor: String, detail: String },
    #[error("inconclusive verdict: {0}")]
    Inconclusive(String),
    #[error("system is not holomorphic at the origin: {0}")]
    NotHolomorphic(String),
    #[error("path comes too close to the singular locus near {component} (distance {distance:.3e})")]
    Proximity { component: String, distance: f64 },
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("internal consistency error: {0}")]
    Internal(String),
    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

/// Coarse classification used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Numeric,
    Inconclusive,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_)
            | Error::Shape(_)
            | Error::CriticalLevel { .. }
            | Error::Domain(_)
            | Error::Serde(_) => ErrorClass::Config,
            Error::Inconclusive(_) => ErrorClass::Inconclusive,
            _ => ErrorClass::Numeric,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
