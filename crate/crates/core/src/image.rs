//! Binary PPM (P6, 8-bit) and raw planar `f32` image I/O, plus synthetic
//! frame sources.

use std::io::{self, Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::numerics::Tensor;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("not a binary PPM: {0}")]
    BadHeader(String),
    #[error("unsupported max value {0} (only 8-bit PPM is supported)")]
    UnsupportedDepth(u32),
    #[error("pixel data truncated: expected {expected} bytes, got {got}")]
    Truncated { expected: usize, got: usize },
    #[error("raw image has {got} bytes, expected {expected} for the given shape")]
    RawSize { expected: usize, got: usize },
    #[error("expected a 3-channel tensor, got {0}")]
    Channels(usize),
    #[error(transparent)]
    Io(#[from] io::Error),
}

fn header_token(data: &[u8], pos: &mut usize) -> Result<String, ImageError> {
    loop {
        match data.get(*pos) {
            Some(b'#') => {
                while data.get(*pos).is_some_and(|b| *b != b'\n') {
                    *pos += 1;
                }
            }
            Some(b) if b.is_ascii_whitespace() => *pos += 1,
            Some(_) => break,
            None => return Err(ImageError::BadHeader("header ends early".into())),
        }
    }
    let start = *pos;
    while data.get(*pos).is_some_and(|b| !b.is_ascii_whitespace()) {
        *pos += 1;
    }
    Ok(String::from_utf8_lossy(&data[start..*pos]).into_owned())
}

fn header_number(data: &[u8], pos: &mut usize, what: &str) -> Result<u32, ImageError> {
    let tok = header_token(data, pos)?;
    tok.parse()
        .map_err(|_| ImageError::BadHeader(format!("bad {what} '{tok}'")))
}

/// Decodes a P6 image into a `(3, h, w)` tensor with values in `[0, 1]`.
pub fn decode_ppm(data: &[u8]) -> Result<Tensor, ImageError> {
    let mut pos = 0;
    if header_token(data, &mut pos)? != "P6" {
        return Err(ImageError::BadHeader("missing P6 magic".into()));
    }
    let width = header_number(data, &mut pos, "width")? as usize;
    let height = header_number(data, &mut pos, "height")? as usize;
    let maxval = header_number(data, &mut pos, "max value")?;
    if width == 0 || height == 0 {
        return Err(ImageError::BadHeader("zero dimension".into()));
    }
    if maxval == 0 || maxval > 255 {
        return Err(ImageError::UnsupportedDepth(maxval));
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    let n = width * height;
    let raster = data.get(pos..).unwrap_or(&[]);
    if raster.len() < 3 * n {
        return Err(ImageError::Truncated {
            expected: 3 * n,
            got: raster.len(),
        });
    }
    let scale = maxval as f32;
    let mut out = vec![0.0f32; 3 * n];
    for (i, px) in raster[..3 * n].chunks_exact(3).enumerate() {
        for c in 0..3 {
            out[c * n + i] = px[c] as f32 / scale;
        }
    }
    Ok(Tensor::new(3, height, width, out).expect("sized from header"))
}

/// Encodes a `(3, h, w)` tensor as P6; values are scaled by 255, rounded and
/// clamped.
pub fn encode_ppm(t: &Tensor) -> Result<Vec<u8>, ImageError> {
    let (c, h, w) = t.shape();
    if c != 3 {
        return Err(ImageError::Channels(c));
    }
    let n = h * w;
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.reserve(3 * n);
    let d = t.data();
    for i in 0..n {
        for ch in 0..3 {
            out.push(to_u8(d[ch * n + i]));
        }
    }
    Ok(out)
}

fn to_u8(v: f32) -> u8 {
    if v.is_nan() {
        return 0;
    }
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

pub fn read_ppm(mut r: impl Read) -> Result<Tensor, ImageError> {
    let mut data = Vec::new();
    r.read_to_end(&mut data)?;
    decode_ppm(&data)
}

pub fn write_ppm(mut w: impl Write, t: &Tensor) -> Result<(), ImageError> {
    w.write_all(&encode_ppm(t)?)?;
    Ok(())
}

/// Raw planar little-endian `f32`, channel-major, no header.
pub fn encode_raw(t: &Tensor) -> Vec<u8> {
    t.to_le_bytes()
}

pub fn decode_raw(data: &[u8], shape: (usize, usize, usize)) -> Result<Tensor, ImageError> {
    let (c, h, w) = shape;
    let expected = c * h * w * 4;
    if data.len() != expected {
        return Err(ImageError::RawSize {
            expected,
            got: data.len(),
        });
    }
    let vals = data
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    Ok(Tensor::new(c, h, w, vals).expect("size checked"))
}

/// Uniform random pixels in `[0, 1)`.
pub fn random_frame(seed: u64, height: usize, width: usize) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(3, height, width, |_, _, _| rng.gen::<f32>())
}

/// A moving gradient with mild noise: frame `index` of a deterministic clip.
pub fn synthetic_frame(seed: u64, index: u64, height: usize, width: usize) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let shift = (index % 256) as f32 / 256.0;
    let (hf, wf) = (height as f32, width as f32);
    Tensor::from_fn(3, height, width, |c, y, x| {
        let base = match c {
            0 => x as f32 / wf,
            1 => y as f32 / hf,
            _ => (x as f32 / wf + y as f32 / hf) * 0.5,
        };
        let v = (base + shift).fract() * 0.9 + rng.gen::<f32>() * 0.1;
        v.clamp(0.0, 1.0)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppm_round_trip_is_exact_on_8bit_values() {
        let t = Tensor::from_fn(3, 5, 7, |c, y, x| {
            ((c * 31 + y * 7 + x * 3) % 256) as f32 / 255.0
        });
        let bytes = encode_ppm(&t).unwrap();
        assert!(bytes.starts_with(b"P6\n7 5\n255\n"));
        let back = decode_ppm(&bytes).unwrap();
        assert!(back.bit_eq(&t));
    }

    #[test]
    fn ppm_header_comments_and_whitespace() {
        let mut data = b"P6 # comment\n2\t1\n# another\n255\n".to_vec();
        data.extend_from_slice(&[255, 0, 0, 0, 255, 0]);
        let t = decode_ppm(&data).unwrap();
        assert_eq!(t.shape(), (3, 1, 2));
        assert_eq!(t.get(0, 0, 0), 1.0);
        assert_eq!(t.get(1, 0, 1), 1.0);
    }

    #[test]
    fn ppm_errors() {
        assert!(matches!(
            decode_ppm(b"P5\n1 1\n255\n\0"),
            Err(ImageError::BadHeader(_))
        ));
        assert!(matches!(
            decode_ppm(b"P6\n1 1\n65535\n\0\0\0\0\0\0"),
            Err(ImageError::UnsupportedDepth(65535))
        ));
        assert!(matches!(
            decode_ppm(b"P6\n2 2\n255\n\0\0\0"),
            Err(ImageError::Truncated {
                expected: 12,
                got: 3
            })
        ));
        assert!(matches!(
            encode_ppm(&Tensor::zeros(1, 2, 2)),
            Err(ImageError::Channels(1))
        ));
    }

    #[test]
    fn ppm_write_clamps_and_rounds() {
        let t = Tensor::new(3, 1, 1, vec![-0.5, 0.5, 2.0]).unwrap();
        let b = encode_ppm(&t).unwrap();
        assert_eq!(&b[b.len() - 3..], &[0, 128, 255]);
    }

    #[test]
    fn raw_round_trip() {
        let t = random_frame(3, 4, 6);
        let back = decode_raw(&encode_raw(&t), (3, 4, 6)).unwrap();
        assert!(back.bit_eq(&t));
        assert!(decode_raw(&[0; 7], (3, 4, 6)).is_err());
    }

    #[test]
    fn synthetic_frames_are_deterministic_and_in_range() {
        let a = synthetic_frame(1, 5, 16, 32);
        assert!(a.bit_eq(&synthetic_frame(1, 5, 16, 32)));
        assert!(!a.bit_eq(&synthetic_frame(1, 6, 16, 32)));
        assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
