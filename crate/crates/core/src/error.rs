use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {dim} expected {expected}, got {actual}")]
    ShapeMismatch {
        op: &'static str,
        dim: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("incompatible shapes in {op}: {lhs:?} vs {rhs:?}")]
    Incompatible {
        op: &'static str,
        lhs: [usize; 4],
        rhs: [usize; 4],
    },

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("index ({u},{v}) outside the {h}x{w} basis grid")]
    GridMismatch { u: usize, v: usize, h: usize, w: usize },

    #[error("branch (k={kernel}, d={dilation}) has effective size {effective} > receptive field {rf}")]
    InvalidBranch {
        kernel: usize,
        dilation: usize,
        effective: usize,
        rf: usize,
    },

    #[error("backward: {0}")]
    Graph(String),

    #[error("not an FDT file")]
    BadMagic,

    #[error("unsupported FDT rank {0}")]
    BadRank(u8),

    #[error("unknown FDT dtype code {0}")]
    BadDType(u8),

    #[error("dtype mismatch: file holds {found}, caller asked for {expected}")]
    DTypeMismatch {
        expected: crate::DType,
        found: crate::DType,
    },

    #[error("truncated FDT payload: expected {expected} bytes, found {actual}")]
    Truncated { expected: usize, actual: usize },

    #[error("config key `{key}`: {msg}")]
    Config { key: String, msg: String },

    #[error("training diverged at step {step}: loss {loss}")]
    Diverged { step: usize, loss: f64 },

    #[error("unknown suite `{0}`")]
    UnknownSuite(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::Invalid(msg.into())
}
