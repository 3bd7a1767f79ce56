use thiserror::Error;

pub type Result<T> = std::result::Result<T, NlcError>;

#[derive(Debug, Error)]
pub enum NlcError {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("parameter error: {0}")]
    Parameter(String),

    #[error("statistics error: {0}")]
    Statistics(String),

    #[error("batch size error: {0}")]
    BatchSize(String),

    /// A forward or backward pass produced a non-finite value.
    #[error("overflow in layer {layer}: {detail}")]
    Overflow { layer: usize, detail: String },

    #[error("consistency error: {0}")]
    Consistency(String),

    #[error("capacity error: {0}")]
    Capacity(String),

    #[error("degenerate activation: {0}")]
    DegenerateActivation(String),

    #[error("degenerate output: {0}")]
    DegenerateOutput(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    /// Output bias is unbounded because the output never varies.
    #[error("infinite output bias: network output is constant")]
    InfiniteBias,

    #[error("degenerate: {0}")]
    Degenerate(String),

    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: usize,
        message: String,
    },

    #[error("configuration error: {0}")]
    Configuration(String),

    #[error("learning-rate search failed: {0}")]
    SearchFailure(String),

    #[error("unknown {kind} '{name}'")]
    Unknown { kind: &'static str, name: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl NlcError {
    pub fn overflow(layer: usize, detail: impl Into<String>) -> Self {
        NlcError::Overflow {
            layer,
            detail: detail.into(),
        }
    }
}
