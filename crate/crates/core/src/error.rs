use alloc::string::String;
use alloc::vec::Vec;

use crate::TokenId;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid model config: {0}")]
    Config(String),

    #[error("missing tensor `{0}`")]
    MissingTensor(String),

    #[error("tensor `{name}` has shape {actual:?}, expected {expected:?}")]
    ShapeMismatch { name: String, expected: Vec<usize>, actual: Vec<usize> },

    #[error("tensor `{0}` contains non-finite values")]
    NonFinite(String),

    #[error("empty token sequence")]
    EmptyInput,

    #[error("token id {id} out of range for vocabulary of {vocab_size}")]
    TokenOutOfRange { id: TokenId, vocab_size: usize },

    #[error("sequence of {len} tokens exceeds the context window of {max}")]
    ContextOverflow { len: usize, max: usize },

    #[error("position {pos} out of range for sequence of {len} tokens")]
    PositionOutOfRange { pos: usize, len: usize },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("requested {requested} cycles but only {available} complete repetitions exist")]
    CycleRange { requested: usize, available: usize },

    #[error("cycle token and interrupting token are both {0}")]
    SameToken(TokenId),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("non-finite loss at training step {step}")]
    NonFiniteLoss { step: usize },

    #[error("pair {id} failed verification: {reason}")]
    Verification { id: String, reason: String },
}
