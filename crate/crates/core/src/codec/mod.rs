//! Factorized-prior and scale-hyperprior codecs, the frame container and the
//! weight file.

mod bytes;
mod config;
mod frame;
mod model;
mod weights;

pub use bytes::FormatError;
pub use config::{Activation, CodecConfig, CodecKind};
pub use frame::{EncodedFrame, FRAME_HEADER_LEN, FRAME_MAGIC, FRAME_VERSION};
pub use model::{Analysis, Codec, Coded, HyperAnalysis};
pub use weights::{
    analysis_layers, digest_of, hyper_analysis_layers, hyper_synthesis_layers, synthesis_layers,
    LayerSpec, ModelWeights, WeightsDigest, WEIGHTS_MAGIC, WEIGHTS_VERSION,
};

use thiserror::Error;

use crate::entropy::EntropyError;
use crate::numerics::NumericsError;

#[derive(Debug, Error)]
pub enum CodecError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("expected a {expected:?} tensor, got {got:?}")]
    Geometry {
        expected: (usize, usize, usize),
        got: (usize, usize, usize),
    },
    #[error("input values must be finite and within [0, 1]")]
    InputRange,
    #[error("frame is {found}, codec is {expected}")]
    KindMismatch {
        expected: CodecKind,
        found: CodecKind,
    },
    #[error("frame was encoded with weights {frame}, decoder has {decoder}")]
    DigestMismatch {
        frame: WeightsDigest,
        decoder: WeightsDigest,
    },
    #[error("{part} string: {source}")]
    Stream {
        part: &'static str,
        #[source]
        source: EntropyError,
    },
    #[error(transparent)]
    Entropy(#[from] EntropyError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CodecError {
    pub fn is_corrupt_stream(&self) -> bool {
        match self {
            CodecError::Stream { source, .. } => source.is_corrupt_stream(),
            CodecError::Format(_) => true,
            _ => false,
        }
    }
}
