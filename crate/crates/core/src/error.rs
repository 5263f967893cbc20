use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("class set is empty")]
    EmptyClassSet,
    #[error("token overflow: `{text}` needs {needed} tokens, limit is {limit}")]
    TokenOverflow {
        text: String,
        needed: usize,
        limit: usize,
    },
    #[error("unknown token `{0}`")]
    UnknownToken(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("video has no frames")]
    EmptyVideo,
    #[error("cosine similarity of a zero-norm vector")]
    ZeroNorm,
    #[error("temperature must be positive, got {0}")]
    InvalidTemperature(f64),
    #[error("invalid fusion mode `{0}`")]
    InvalidMode(String),
    #[error("no views to aggregate")]
    EmptyViews,
    #[error("duplicate parameter `{0}`")]
    DuplicateParameter(String),
    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("vocabulary mismatch: {0}")]
    Vocab(String),
    #[error("integrity error: {0}")]
    Integrity(String),
    #[error("non-finite loss at epoch {epoch}, step {step} (lr {lr:e}, last finite loss {last_loss:?})")]
    NanLoss {
        epoch: usize,
        step: usize,
        lr: f64,
        last_loss: Option<f64>,
    },
    #[error(transparent)]
    Candle(#[from] candle_core::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }
}
