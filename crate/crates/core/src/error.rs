use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("graph needs k*dilation <= candidates, got k={k}, dilation={dilation}, candidates={candidates}")]
    GraphTooSmall {
        k: usize,
        dilation: usize,
        candidates: usize,
    },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss([usize; 4]),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("pyramid stage {stage}: expected {expected:?}, got {got:?}")]
    Pyramid {
        stage: usize,
        expected: [usize; 4],
        got: [usize; 4],
    },

    #[error("non-finite loss {value} at epoch {epoch}, step {step}")]
    NonFiniteLoss {
        value: f64,
        epoch: usize,
        step: usize,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("config error at line {line}: {msg}")]
    Config { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err(op: &'static str, detail: impl Into<String>) -> Error {
    Error::Shape {
        op,
        detail: detail.into(),
    }
}
