use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid frame sequence: {0}")]
    InvalidSequence(String),

    #[error("kernel {channel}: {reason}")]
    InvalidKernel { channel: usize, reason: String },

    #[error("invalid kernel bank: {0}")]
    InvalidBank(String),

    #[error("invalid simulator config: {0}")]
    InvalidConfig(String),

    #[error("unknown preset `{0}`")]
    UnknownPreset(String),

    #[error("invalid preset parameters: {0}")]
    InvalidPresetParams(String),

    #[error("preset `{name}` does not support kernel size {size}")]
    IncompatibleSize { name: String, size: usize },

    #[error("dimension mismatch: expected {expected_w}x{expected_h}, got {got_w}x{got_h}")]
    DimensionMismatch {
        expected_w: usize,
        expected_h: usize,
        got_w: usize,
        got_h: usize,
    },

    #[error("event budget exceeded: {requested} events requested, limit {limit}")]
    EventBudget { requested: u64, limit: u64 },

    #[error(
        "{pairs} frame intervals cannot be split into {intervals} bin intervals; resample the video so every frame pair nests inside one bin"
    )]
    AnchorNesting { pairs: usize, intervals: usize },

    #[error("invalid bin count {0}: need at least 2")]
    BinCount(usize),

    #[error("residual memory update needs a single-channel kernel with only a center weight")]
    UnsupportedResidual,

    #[error("gradient tape does not match this pass: {0}")]
    TapeMismatch(String),

    #[error("non-finite upstream gradient at cell {0}")]
    NonFiniteGradient(usize),

    #[error("loss is degenerate: every gradient is zero")]
    VacuousLoss,

    #[error("invalid learner config: {0}")]
    InvalidLearnConfig(String),

    #[error("training diverged at step {step}: loss {loss}")]
    Diverged { step: usize, loss: f64 },

    #[error("invalid scene parameters: {0}")]
    InvalidScene(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
}
