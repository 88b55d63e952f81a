use std::fmt;

use lic_core::codec::CodecError;
use lic_core::image::ImageError;
use lic_core::pipeline::PipelineError;
use lic_core::stream::{StreamError, WireError};

/// Exit statuses: 0 success, 2 usage, 3 I/O, 4 protocol or malformed
/// input, 5 verification failure, 130 interrupted.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Io(String),
    Protocol(String),
    Verification(String),
    Interrupted,
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Io(_) => 3,
            Failure::Protocol(_) => 4,
            Failure::Verification(_) => 5,
            Failure::Interrupted => 130,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(m) => write!(f, "usage: {m}"),
            Failure::Io(m) => write!(f, "i/o: {m}"),
            Failure::Protocol(m) => write!(f, "protocol: {m}"),
            Failure::Verification(m) => write!(f, "verification failed: {m}"),
            Failure::Interrupted => f.write_str("interrupted"),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Io(e.to_string())
    }
}

impl From<CodecError> for Failure {
    fn from(e: CodecError) -> Self {
        let m = e.to_string();
        match e {
            CodecError::Io(_) => Failure::Io(m),
            CodecError::DigestMismatch { .. } => Failure::Verification(m),
            CodecError::Format(_) | CodecError::Stream { .. } | CodecError::Entropy(_) => {
                Failure::Protocol(m)
            }
            CodecError::Config(_)
            | CodecError::Geometry { .. }
            | CodecError::InputRange
            | CodecError::KindMismatch { .. }
            | CodecError::Numerics(_) => Failure::Usage(m),
        }
    }
}

impl From<ImageError> for Failure {
    fn from(e: ImageError) -> Self {
        match e {
            ImageError::Io(e) => Failure::Io(e.to_string()),
            other => Failure::Protocol(other.to_string()),
        }
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        Failure::Usage(e.to_string())
    }
}

impl From<StreamError> for Failure {
    fn from(e: StreamError) -> Self {
        let m = e.to_string();
        match e {
            StreamError::DigestMismatch { .. } | StreamError::HandshakeMismatch(_) => {
                Failure::Verification(m)
            }
            StreamError::Wire(WireError::Io(_))
            | StreamError::Connection { .. }
            | StreamError::Sink(_) => Failure::Io(m),
            StreamError::Wire(_) | StreamError::Protocol(_) => Failure::Protocol(m),
        }
    }
}
