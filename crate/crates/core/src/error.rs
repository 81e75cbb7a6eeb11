use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("line {line}: {msg}")]
    Ingestion { line: usize, msg: String },

    #[error("gap labels inconsistent with tag set: {0}")]
    DecodeConsistency(String),

    #[error("decoder found no legal label sequence for {gaps} gaps")]
    NoLegalSequence { gaps: usize },

    #[error("training error: {0}")]
    Training(String),

    #[error("sentence {index}: {msg}")]
    Alignment { index: usize, msg: String },

    #[error("checkpoint field `{field}`: {msg}")]
    Checkpoint { field: String, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Shape {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    pub(crate) fn checkpoint(field: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Checkpoint {
            field: field.into(),
            msg: msg.into(),
        }
    }
}
