//! Error type shared by the whole crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty reduction")]
    EmptyReduction,

    #[error("empty utterance")]
    EmptyUtterance,

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("more labels than frames: {labels} labels over {frames} frames")]
    MoreLabelsThanFrames { labels: usize, frames: usize },

    /// No segmentation of the frames can produce this label sequence under
    /// the segment-length cap.
    #[error("label sequence unreachable: {0}")]
    LabelSequenceUnreachable(String),

    /// No CTC path of the given frame count collapses to this label sequence.
    #[error("label sequence unalignable: {0}")]
    LabelSequenceUnalignable(String),

    #[error("label id {id} out of vocabulary (size {vocab})")]
    LabelOutOfVocab { id: usize, vocab: usize },

    #[error("unknown symbol {symbol:?} ({context})")]
    UnknownSymbol { symbol: String, context: String },

    #[error("unknown init scheme {0:?} (expected \"uniform-scaled\" or \"zeros\")")]
    UnknownScheme(String),

    #[error("non-finite loss when perturbing parameter {index}")]
    NonFiniteProbe { index: usize },

    #[error("non-finite loss ({value}) on utterance {id:?} in epoch {epoch}")]
    NonFiniteLoss { id: String, value: f64, epoch: usize },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("utterance id mismatch: {0}")]
    IdMismatch(String),

    #[error("instance exceeds oracle guard bounds: {0}")]
    OracleGuard(String),

    #[error("config: {0}")]
    Config(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
