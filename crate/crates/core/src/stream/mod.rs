//! TCP streaming: wire protocol, sender and receiver sessions.

mod session;
mod wire;

pub use session::{
    latent_digest, run_receiver, run_sender, unix_micros, DirSink, FrameSink, NullSink,
    ReceiverOptions, SenderOptions, SenderReport, SinkFormat, StreamStats,
};
pub use wire::{
    encode_message, read_message, write_message, Handshake, MsgType, WireError, WireMessage,
    HANDSHAKE_LEN, MAX_PAYLOAD, WIRE_HEADER_LEN, WIRE_MAGIC, WIRE_VERSION,
};

use thiserror::Error;

use crate::codec::WeightsDigest;

#[derive(Debug, Error)]
pub enum StreamError {
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("weights digest mismatch: local {local}, sender {remote}")]
    DigestMismatch {
        local: WeightsDigest,
        remote: WeightsDigest,
    },
    #[error("handshake mismatch: {0}")]
    HandshakeMismatch(String),
    #[error("connection failed ({}): {source}", match last_sent { Some(s) => format!("last frame sent {s}"), None => "no frame sent".into() })]
    Connection {
        last_sent: Option<u64>,
        #[source]
        source: WireError,
    },
    #[error("frame sink failed: {0}")]
    Sink(std::io::Error),
}
