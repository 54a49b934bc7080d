use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("index out of range: {0}")]
    Index(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite value at {context}: {detail}")]
    Numeric { context: String, detail: String },

    #[error("invalid state: {0}")]
    State(String),

    #[error("structure error: {0}")]
    Structure(String),

    #[error("name error: {0}")]
    Name(String),

    #[error("unknown {kind}: {name}")]
    Lookup { kind: &'static str, name: String },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("unusable ontology: no topic keyword matched any document")]
    UnusableOntology,

    #[error("incompatible log: {0}")]
    Incompatible(String),

    #[error("replay diverged at event {seq}: {detail}")]
    Divergence { seq: u64, detail: String },

    #[error("storage unavailable: {0}")]
    Availability(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn index(msg: impl Into<String>) -> Self {
        Error::Index(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn dimension(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn state(msg: impl Into<String>) -> Self {
        Error::State(msg.into())
    }
}
