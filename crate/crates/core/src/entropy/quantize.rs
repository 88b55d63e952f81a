use super::EntropyError;
use crate::numerics::{BufferSource, Heap, Tensor};

/// Integer symbols with the CDF row that codes each one.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SymbolPlane {
    pub symbols: Vec<i32>,
    pub indexes: Vec<u32>,
}

impl SymbolPlane {
    pub fn new(symbols: Vec<i32>, indexes: Vec<u32>) -> Result<Self, EntropyError> {
        if symbols.len() != indexes.len() {
            return Err(EntropyError::PlaneLength {
                symbols: symbols.len(),
                indexes: indexes.len(),
            });
        }
        Ok(SymbolPlane { symbols, indexes })
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Quantized {
    pub y_hat: Tensor,
    /// Symbols with per-channel row indexes.
    pub plane: SymbolPlane,
    /// Number of values clamped to the support bound.
    pub saturated: usize,
}

/// Row index of every element of a `(c, h, w)` tensor when rows are channels.
pub fn channel_indexes(channels: usize, plane_len: usize) -> Vec<u32> {
    (0..channels as u32)
        .flat_map(|c| std::iter::repeat_n(c, plane_len))
        .collect()
}

/// `round(y - offset_c)` (ties away from zero), clamped to `[-bound, bound]`.
pub fn quantize(y: &Tensor, offsets: &[f32], bound: i32) -> Result<Quantized, EntropyError> {
    quantize_with(y, offsets, bound, &Heap)
}

pub fn quantize_with(
    y: &Tensor,
    offsets: &[f32],
    bound: i32,
    buffers: &dyn BufferSource,
) -> Result<Quantized, EntropyError> {
    let (c, h, w) = y.shape();
    if offsets.len() != c {
        return Err(EntropyError::OffsetCount {
            expected: c,
            got: offsets.len(),
        });
    }
    let n = h * w;
    let lim = bound as f32;
    let mut symbols = Vec::with_capacity(c * n);
    let mut y_hat = buffers.take(c * n);
    let mut saturated = 0;
    for (ch, mu) in offsets.iter().enumerate() {
        let src = y.plane(ch);
        let dst = &mut y_hat[ch * n..(ch + 1) * n];
        for (v, out) in src.iter().zip(dst) {
            let r = (v - mu).round();
            let q = if r > lim {
                saturated += 1;
                lim
            } else if r < -lim {
                saturated += 1;
                -lim
            } else {
                r
            };
            let s = q as i32;
            symbols.push(s);
            *out = s as f32 + mu;
        }
    }
    Ok(Quantized {
        y_hat: Tensor::new(c, h, w, y_hat).expect("sized from input"),
        plane: SymbolPlane {
            symbols,
            indexes: channel_indexes(c, n),
        },
        saturated,
    })
}

/// `symbol + offset_c`, bit-identical to the quantizer's reconstruction.
pub fn dequantize(
    symbols: &[i32],
    offsets: &[f32],
    shape: (usize, usize, usize),
    buffers: &dyn BufferSource,
) -> Result<Tensor, EntropyError> {
    let (c, h, w) = shape;
    let n = h * w;
    if offsets.len() != c {
        return Err(EntropyError::OffsetCount {
            expected: c,
            got: offsets.len(),
        });
    }
    if symbols.len() != c * n {
        return Err(EntropyError::PlaneLength {
            symbols: symbols.len(),
            indexes: c * n,
        });
    }
    let mut out = buffers.take(c * n);
    for (ch, mu) in offsets.iter().enumerate() {
        for (o, s) in out[ch * n..(ch + 1) * n]
            .iter_mut()
            .zip(&symbols[ch * n..(ch + 1) * n])
        {
            *o = *s as f32 + mu;
        }
    }
    Ok(Tensor::new(c, h, w, out).expect("sized from shape"))
}
