use crate::scene::Label;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("invalid gaussian: {0}")]
    InvalidGaussian(String),
    #[error("non-finite input: {0}")]
    NonFinite(&'static str),
    #[error("dimension mismatch: expected {expected:?}, got {got:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("instance is not visible in this view")]
    NoVisibleSplats,
    #[error("unknown instance label {0}")]
    UnknownLabel(Label),
    #[error("empty instance")]
    EmptyInstance,
    #[error("degenerate descriptor")]
    DegenerateDescriptor,
    #[error("descriptor dimension mismatch: expected {expected}, got {got}")]
    DescriptorDim { expected: usize, got: usize },
    #[error("degenerate bounding box")]
    DegenerateBox,
    #[error("transform is not rigid")]
    NonRigidTransform,
    #[error("refinement diverged at step {step} (loss = {loss})")]
    Diverged { step: usize, loss: f64 },
    #[error("segmenter: {0}")]
    Segmenter(String),
    #[error("format error in {context}: {message}")]
    Format { context: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn format(context: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Format {
            context: context.into(),
            message: message.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
