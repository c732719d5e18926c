use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("cycle detected through node `{0}`")]
    Cycle(String),

    #[error("node `{node}` references missing parent `{parent}`")]
    MissingParent { node: String, parent: String },

    #[error("graph has multiple sinks: {0:?} (only the output may be a sink)")]
    MultipleSinks(Vec<String>),

    #[error("latent count mismatch: {0}")]
    LatentCount(String),

    #[error("unknown node or variable: {0}")]
    UnknownVariable(String),

    #[error("node `{0}` does not lie on a path from the latents to the output")]
    Disconnected(String),

    #[error("layer `{0}` does not determine the output on its own")]
    NotSeparating(String),

    #[error("missing weight `{0}`")]
    MissingWeight(String),

    #[error("format version mismatch: expected {expected}, found {found}")]
    Version { expected: u32, found: u32 },

    #[error("bad magic in {what}: expected {expected:?}")]
    Magic { what: String, expected: String },

    #[error("checksum failure: {0}")]
    Checksum(String),

    #[error("shape inconsistency: {0}")]
    Shape(String),

    #[error("invalid input: {0}")]
    Validation(String),

    #[error("unknown architecture `{0}`")]
    UnknownArch(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("manifest parse error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("png encoding error: {0}")]
    Png(#[from] png::EncodingError),
}

impl Error {
    /// True for errors caused by bad input (as opposed to I/O failures).
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::Io(_) | Error::Png(_))
    }
}
