//! The `LICF` frame container.
//!
//! Layout (integers little-endian): `"LICF"`, version `u8 = 1`, codec kind
//! `u8`, height `u16`, width `u16`, `y_len u32`, `z_len u32` (0 for the
//! factorized codec), the `y` string, then the `z` string.

use super::bytes::{FormatError, Reader};
use super::{CodecKind, WeightsDigest};

pub const FRAME_MAGIC: &[u8; 4] = b"LICF";
pub const FRAME_VERSION: u8 = 1;
pub const FRAME_HEADER_LEN: usize = 4 + 1 + 1 + 2 + 2 + 4 + 4;

/// Entropy-coded output of one encode.
///
/// `sequence` and `weights_digest` travel with the frame in memory and on the
/// stream transport; the container format does not store them, so a parsed
/// frame has sequence 0 and no digest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedFrame {
    pub sequence: u64,
    pub kind: CodecKind,
    pub height: u16,
    pub width: u16,
    pub y_string: Vec<u8>,
    pub z_string: Option<Vec<u8>>,
    pub weights_digest: Option<WeightsDigest>,
}

impl EncodedFrame {
    pub fn serialized_len(&self) -> usize {
        FRAME_HEADER_LEN + self.y_string.len() + self.z_string.as_ref().map_or(0, Vec::len)
    }

    /// Payload bits per pixel, counting both strings.
    pub fn bits_per_pixel(&self) -> f64 {
        let bytes = self.y_string.len() + self.z_string.as_ref().map_or(0, Vec::len);
        bytes as f64 * 8.0 / (self.height as f64 * self.width as f64)
    }

    pub fn serialize(&self) -> Vec<u8> {
        let z = self.z_string.as_deref().unwrap_or(&[]);
        let mut out = Vec::with_capacity(self.serialized_len());
        out.extend_from_slice(FRAME_MAGIC);
        out.push(FRAME_VERSION);
        out.push(self.kind.to_u8());
        out.extend_from_slice(&self.height.to_le_bytes());
        out.extend_from_slice(&self.width.to_le_bytes());
        out.extend_from_slice(&(self.y_string.len() as u32).to_le_bytes());
        out.extend_from_slice(&(z.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.y_string);
        out.extend_from_slice(z);
        out
    }

    pub fn parse(bytes: &[u8]) -> Result<Self, FormatError> {
        let mut r = Reader::new(bytes);
        r.magic(FRAME_MAGIC)?;
        let version = r.u8()?;
        if version != FRAME_VERSION {
            return Err(FormatError::UnsupportedVersion(version));
        }
        let raw = r.u8()?;
        let kind = CodecKind::from_u8(raw).ok_or(FormatError::BadField {
            field: "codec kind",
            value: raw as u64,
        })?;
        let height = r.u16()?;
        let width = r.u16()?;
        if height == 0 || width == 0 {
            return Err(FormatError::BadField {
                field: "geometry",
                value: ((height as u64) << 16) | width as u64,
            });
        }
        let y_len = r.u32()?;
        let z_len = r.u32()?;
        if kind == CodecKind::Factorized && z_len != 0 {
            return Err(FormatError::BadField {
                field: "z_len for factorized frame",
                value: z_len as u64,
            });
        }
        if y_len as u64 + z_len as u64 > r.remaining() as u64 {
            return Err(FormatError::LengthOverflow(y_len as u64 + z_len as u64));
        }
        let y_string = r.sized(y_len)?.to_vec();
        let z_string = match kind {
            CodecKind::Factorized => None,
            CodecKind::Hyperprior => Some(r.sized(z_len)?.to_vec()),
        };
        r.finish()?;
        Ok(EncodedFrame {
            sequence: 0,
            kind,
            height,
            width,
            y_string,
            z_string,
            weights_digest: None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn frame(kind: CodecKind, y: Vec<u8>, z: Vec<u8>) -> EncodedFrame {
        EncodedFrame {
            sequence: 0,
            kind,
            height: 64,
            width: 128,
            y_string: y,
            z_string: (kind == CodecKind::Hyperprior).then_some(z),
            weights_digest: None,
        }
    }

    #[test]
    fn header_layout() {
        let f = frame(CodecKind::Hyperprior, vec![9; 3], vec![7; 2]);
        let b = f.serialize();
        assert_eq!(&b[..4], &[0x4C, 0x49, 0x43, 0x46]);
        assert_eq!(b[4], 1);
        assert_eq!(b[5], 1);
        assert_eq!(&b[6..8], &64u16.to_le_bytes());
        assert_eq!(&b[8..10], &128u16.to_le_bytes());
        assert_eq!(&b[10..14], &3u32.to_le_bytes());
        assert_eq!(&b[14..18], &2u32.to_le_bytes());
        assert_eq!(&b[18..], &[9, 9, 9, 7, 7]);
        assert_eq!(b.len(), f.serialized_len());
    }

    #[test]
    fn rejects_bad_fields() {
        let good = frame(CodecKind::Factorized, vec![1, 2], vec![]).serialize();
        let mut b = good.clone();
        b[0] = b'X';
        assert!(matches!(
            EncodedFrame::parse(&b),
            Err(FormatError::BadMagic { .. })
        ));
        let mut b = good.clone();
        b[4] = 2;
        assert_eq!(
            EncodedFrame::parse(&b),
            Err(FormatError::UnsupportedVersion(2))
        );
        let mut b = good.clone();
        b[5] = 9;
        assert!(matches!(
            EncodedFrame::parse(&b),
            Err(FormatError::BadField { .. })
        ));
        let mut b = good.clone();
        b[10..14].copy_from_slice(&u32::MAX.to_le_bytes());
        assert!(matches!(
            EncodedFrame::parse(&b),
            Err(FormatError::LengthOverflow(_))
        ));
        let mut b = good.clone();
        b[14] = 1;
        assert!(EncodedFrame::parse(&b).is_err());
        let mut b = good;
        b.push(0);
        assert_eq!(EncodedFrame::parse(&b), Err(FormatError::TrailingBytes(1)));
    }

    proptest! {
        #[test]
        fn round_trip_and_truncation(
            hyper in any::<bool>(),
            y in proptest::collection::vec(any::<u8>(), 0..64),
            z in proptest::collection::vec(any::<u8>(), 0..32),
        ) {
            let kind = if hyper { CodecKind::Hyperprior } else { CodecKind::Factorized };
            let f = frame(kind, y, z);
            let bytes = f.serialize();
            prop_assert_eq!(EncodedFrame::parse(&bytes).unwrap(), f);
            for cut in 0..bytes.len() {
                prop_assert!(EncodedFrame::parse(&bytes[..cut]).is_err());
            }
        }
    }
}
