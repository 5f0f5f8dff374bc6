use alloc::string::String;

use crate::world::GroupLabel;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("training data is empty")]
    EmptyData,
    #[error("token {token} is outside the vocabulary of size {vocab_size}")]
    UnknownToken { token: u32, vocab_size: usize },
    #[error("held-out set is empty")]
    EmptyHeldout,
    #[error("held-out set is not balanced (disadvantaged ratio {0})")]
    UnbalancedHeldout(f64),
    #[error("sample has no ground truth")]
    MissingGroundTruth,
    #[error("held-out set has no {0} samples")]
    MissingGroup(GroupLabel),
    #[error("generation index {t} outside 0..={total}")]
    GenerationOutOfRange { t: u32, total: u32 },
    #[error("{group} prompt pool exhausted: requested {requested}, available {available}")]
    PoolExhausted {
        group: GroupLabel,
        requested: usize,
        available: usize,
    },
    #[error("no previous prompts to reuse")]
    NoPreviousPrompts,
    #[error("requested {requested} candidates but only {available} exist")]
    InsufficientCandidates { requested: usize, available: usize },
    #[error("{0} group has no prompts")]
    EmptyGroup(GroupLabel),
    #[error("size target must be at least 1")]
    ZeroSizeTarget,
    #[error("operation requires a {0} model")]
    VariantMismatch(&'static str),
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
