use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: incompatible shapes {shapes:?}")]
    Shape {
        op: &'static str,
        shapes: Vec<Vec<usize>>,
    },

    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("non-finite gradient for parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("unknown parameter `{0}`")]
    UnknownParam(String),

    #[error("world generation failed: {0}")]
    WorldGeneration(String),

    #[error("unknown node {0}")]
    UnknownNode(usize),

    #[error("invalid path: {0}")]
    InvalidPath(String),

    #[error("invalid instruction: {0}")]
    InvalidInstruction(String),

    #[error("illegal action {action} at step {step}")]
    IllegalAction { step: usize, action: usize },

    #[error("dataset: {0}")]
    Dataset(String),

    #[error("enumeration space too large: {size} outcomes (limit {limit})")]
    SpaceTooLarge { size: usize, limit: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("config line {line}: {msg}")]
    Config { line: usize, msg: String },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("training aborted at iteration {iteration}, episode {episode}: {what}")]
    TrainingDiverged {
        iteration: u64,
        episode: usize,
        what: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
