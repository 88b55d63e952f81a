//! Quantization, CDF tables and the range coder.

mod cdf;
mod coder;
mod quantize;

pub use cdf::{
    build_factorized_cdf, build_gaussian_conditional_cdf, scale_to_index, CdfTable, ScaleTable,
    PRECISION, SCALE_LEVELS, SCALE_MAX, SCALE_MIN, TOTAL,
};
pub use coder::{range_decode, range_encode, RangeDecoder, RangeEncoder};
pub use quantize::{channel_indexes, dequantize, quantize, quantize_with, Quantized, SymbolPlane};

use thiserror::Error;

/// Default symbol support bound: symbols live in `[-32, 32]`.
pub const DEFAULT_SUPPORT_BOUND: i32 = 32;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EntropyError {
    #[error("symbol {symbol} outside support [{min}, {max}]")]
    SymbolOutOfSupport { symbol: i32, min: i32, max: i32 },
    #[error("cdf index {index} out of range ({rows} rows)")]
    IndexOutOfRange { index: u32, rows: usize },
    #[error("plane has {symbols} symbols but {indexes} indexes")]
    PlaneLength { symbols: usize, indexes: usize },
    #[error("expected {expected} offsets, got {got}")]
    OffsetCount { expected: usize, got: usize },
    #[error("scale must be positive and finite")]
    NonPositiveScale,
    #[error("invalid table: {0}")]
    InvalidTable(String),
    #[error("corrupt stream: byte string exhausted early")]
    Exhausted,
    #[error("corrupt stream: {0}")]
    Corrupt(String),
}

impl EntropyError {
    pub fn is_corrupt_stream(&self) -> bool {
        matches!(self, EntropyError::Exhausted | EntropyError::Corrupt(_))
    }
}
