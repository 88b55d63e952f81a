//! Wire protocol, version 1. Every message is a 26-byte header (integers
//! little-endian) followed by the payload:
//!
//! | field | type |
//! |---|---|
//! | magic | `"LICS"` |
//! | version | `u8 = 1` |
//! | type | `u8`: 0 handshake, 1 frame, 2 end of stream |
//! | sequence | `u64` |
//! | capture timestamp | `u64`, microseconds since the Unix epoch |
//! | payload length | `u32`, at most 64 MiB |

use std::io::{self, Read, Write};

use thiserror::Error;

use crate::codec::{Activation, CodecKind, WeightsDigest};

pub const WIRE_MAGIC: &[u8; 4] = b"LICS";
pub const WIRE_VERSION: u8 = 1;
pub const WIRE_HEADER_LEN: usize = 26;
pub const MAX_PAYLOAD: u32 = 64 << 20;
pub const HANDSHAKE_LEN: usize = 44;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MsgType {
    Handshake,
    Frame,
    EndOfStream,
}

impl MsgType {
    pub fn to_u8(self) -> u8 {
        match self {
            MsgType::Handshake => 0,
            MsgType::Frame => 1,
            MsgType::EndOfStream => 2,
        }
    }

    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(MsgType::Handshake),
            1 => Some(MsgType::Frame),
            2 => Some(MsgType::EndOfStream),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WireMessage {
    pub msg_type: MsgType,
    pub sequence: u64,
    pub capture_timestamp_us: u64,
    pub payload: Vec<u8>,
}

#[derive(Debug, Error)]
pub enum WireError {
    #[error("bad magic {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("unsupported protocol version {0}")]
    UnsupportedVersion(u8),
    #[error("unknown message type {0}")]
    BadType(u8),
    #[error("payload length {0} exceeds the 64 MiB limit")]
    Oversize(u32),
    #[error("connection closed mid-{part}: expected {expected} bytes, got {got}")]
    Truncated {
        part: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("connection closed")]
    Closed,
    #[error("malformed handshake: {0}")]
    Handshake(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Reads until `buf` is full or the peer closes; returns bytes read.
fn read_full(r: &mut impl Read, buf: &mut [u8]) -> io::Result<usize> {
    let mut got = 0;
    while got < buf.len() {
        match r.read(&mut buf[got..]) {
            Ok(0) => break,
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(got)
}

pub fn encode_message(m: &WireMessage) -> Vec<u8> {
    let mut out = Vec::with_capacity(WIRE_HEADER_LEN + m.payload.len());
    out.extend_from_slice(WIRE_MAGIC);
    out.push(WIRE_VERSION);
    out.push(m.msg_type.to_u8());
    out.extend_from_slice(&m.sequence.to_le_bytes());
    out.extend_from_slice(&m.capture_timestamp_us.to_le_bytes());
    out.extend_from_slice(&(m.payload.len() as u32).to_le_bytes());
    out.extend_from_slice(&m.payload);
    out
}

pub fn write_message(w: &mut impl Write, m: &WireMessage) -> Result<(), WireError> {
    if m.payload.len() > MAX_PAYLOAD as usize {
        return Err(WireError::Oversize(
            m.payload.len().min(u32::MAX as usize) as u32
        ));
    }
    w.write_all(&encode_message(m))?;
    w.flush()?;
    Ok(())
}

/// Reads one message. A clean close before the first header byte is
/// [`WireError::Closed`].
pub fn read_message(r: &mut impl Read) -> Result<WireMessage, WireError> {
    let mut head = [0u8; 6];
    let got = read_full(r, &mut head)?;
    if got == 0 {
        return Err(WireError::Closed);
    }
    if got < head.len() {
        return Err(WireError::Truncated {
            part: "header",
            expected: WIRE_HEADER_LEN,
            got,
        });
    }
    let magic: [u8; 4] = head[..4].try_into().unwrap();
    if &magic != WIRE_MAGIC {
        return Err(WireError::BadMagic(magic));
    }
    if head[4] != WIRE_VERSION {
        return Err(WireError::UnsupportedVersion(head[4]));
    }
    let msg_type = MsgType::from_u8(head[5]).ok_or(WireError::BadType(head[5]))?;
    let mut rest = [0u8; WIRE_HEADER_LEN - 6];
    let got = read_full(r, &mut rest)?;
    if got < rest.len() {
        return Err(WireError::Truncated {
            part: "header",
            expected: WIRE_HEADER_LEN,
            got: 6 + got,
        });
    }
    let sequence = u64::from_le_bytes(rest[0..8].try_into().unwrap());
    let capture_timestamp_us = u64::from_le_bytes(rest[8..16].try_into().unwrap());
    let len = u32::from_le_bytes(rest[16..20].try_into().unwrap());
    if len > MAX_PAYLOAD {
        return Err(WireError::Oversize(len));
    }
    let mut payload = vec![0u8; len as usize];
    let got = read_full(r, &mut payload)?;
    if got < payload.len() {
        return Err(WireError::Truncated {
            part: "payload",
            expected: len as usize,
            got,
        });
    }
    Ok(WireMessage {
        msg_type,
        sequence,
        capture_timestamp_us,
        payload,
    })
}

/// First message of every stream: what the sender encodes with.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Handshake {
    pub kind: CodecKind,
    pub activation: Activation,
    pub n: u16,
    pub m: u16,
    pub height: u16,
    pub width: u16,
    pub target_fps: u16,
    pub digest: WeightsDigest,
}

impl Handshake {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HANDSHAKE_LEN);
        out.push(self.kind.to_u8());
        out.push(self.activation.to_u8());
        for v in [self.n, self.m, self.height, self.width, self.target_fps] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&self.digest.0);
        out
    }

    pub fn parse(b: &[u8]) -> Result<Self, WireError> {
        if b.len() != HANDSHAKE_LEN {
            return Err(WireError::Handshake(format!(
                "{} bytes, expected {HANDSHAKE_LEN}",
                b.len()
            )));
        }
        let kind = CodecKind::from_u8(b[0])
            .ok_or_else(|| WireError::Handshake(format!("codec kind {}", b[0])))?;
        let activation = Activation::from_u8(b[1])
            .ok_or_else(|| WireError::Handshake(format!("activation {}", b[1])))?;
        let u = |i: usize| u16::from_le_bytes([b[i], b[i + 1]]);
        Ok(Handshake {
            kind,
            activation,
            n: u(2),
            m: u(4),
            height: u(6),
            width: u(8),
            target_fps: u(10),
            digest: WeightsDigest(b[12..44].try_into().unwrap()),
        })
    }
}
