use alloc::string::String;

/// Errors raised by the numerical engine.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension error in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },
    #[error("non-finite value produced by layer {layer}")]
    NonFinite { layer: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("index {index} out of range for {len} classes")]
    Index { index: usize, len: usize },
    #[error("training diverged at epoch {epoch}: loss is not finite")]
    Diverged { epoch: usize },
    #[error("gradient check harness: {0}")]
    Harness(String),
    #[error("fine-tuning schedule exhausted after {0} iterations")]
    ScheduleExhausted(usize),
    #[error("label {0} does not appear in the training label map")]
    UnknownLabel(f64),
    #[error("internal error: {0}")]
    Internal(String),
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn dim_err(op: &'static str, detail: String) -> Error {
    Error::Dimension { op, detail }
}
