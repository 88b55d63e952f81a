//! Byte-oriented range coder with a 32-bit range and 16-bit CDF precision.
//!
//! The encoder keeps a 33-bit `low` plus a pending run of `0xFF` bytes so
//! carries propagate into already-produced output; bytes leave most
//! significant first. The first emitted byte is always zero. A stream of
//! `n` renormalization shifts is exactly `n + 5` bytes long and the decoder
//! consumes all of them.
//!
//! At each step the interval is split as `range >> 16` units per frequency
//! count. The truncation remainder is added to the row's most probable
//! symbol instead of being discarded, which keeps the per-symbol overhead
//! second order in the truncation error.

use super::{CdfTable, EntropyError, SymbolPlane, PRECISION};

const TOP: u32 = 1 << 24;

pub struct RangeEncoder {
    low: u64,
    range: u32,
    cache: u8,
    pending: u64,
    out: Vec<u8>,
}

impl Default for RangeEncoder {
    fn default() -> Self {
        Self::new()
    }
}

impl RangeEncoder {
    pub fn new() -> Self {
        Self::with_capacity(0)
    }

    pub fn with_capacity(bytes: usize) -> Self {
        RangeEncoder {
            low: 0,
            range: u32::MAX,
            cache: 0,
            pending: 1,
            out: Vec::with_capacity(bytes),
        }
    }

    fn shift_low(&mut self) {
        if self.low < 0xFF00_0000 || self.low > 0xFFFF_FFFF {
            let carry = (self.low >> 32) as u8;
            let mut byte = self.cache;
            loop {
                self.out.push(byte.wrapping_add(carry));
                byte = 0xFF;
                self.pending -= 1;
                if self.pending == 0 {
                    break;
                }
            }
            self.cache = (self.low >> 24) as u8;
        }
        self.pending += 1;
        self.low = (self.low & 0x00FF_FFFF) << 8;
    }

    /// Encodes symbol slot `slot` (0-based within the row) of `row`.
    #[inline]
    pub fn encode(&mut self, row: &[u32], mps: u32, slot: u32) {
        let (start, size) = interval(self.range, row, mps, slot);
        self.low += start as u64;
        self.range = size;
        while self.range < TOP {
            self.range <<= 8;
            self.shift_low();
        }
    }

    pub fn finish(mut self) -> Vec<u8> {
        for _ in 0..5 {
            self.shift_low();
        }
        self.out
    }
}

/// Sub-interval `(start, size)` of `range` assigned to `slot`.
#[inline]
fn interval(range: u32, row: &[u32], mps: u32, slot: u32) -> (u32, u32) {
    let unit = range >> PRECISION;
    let rem = range - (unit << PRECISION);
    let s = slot as usize;
    let mut start = unit * row[s];
    let mut size = unit * (row[s + 1] - row[s]);
    if slot == mps {
        size += rem;
    } else if slot > mps {
        start += rem;
    }
    (start, size)
}

pub struct RangeDecoder<'a> {
    data: &'a [u8],
    pos: usize,
    range: u32,
    code: u32,
}

impl<'a> RangeDecoder<'a> {
    pub fn new(data: &'a [u8]) -> Result<Self, EntropyError> {
        if data.len() < 5 {
            return Err(EntropyError::Exhausted);
        }
        if data[0] != 0 {
            return Err(EntropyError::Corrupt("bad stream header".into()));
        }
        let code = u32::from_be_bytes([data[1], data[2], data[3], data[4]]);
        Ok(RangeDecoder {
            data,
            pos: 5,
            range: u32::MAX,
            code,
        })
    }

    /// Decodes one symbol slot of `row`.
    pub fn decode(&mut self, row: &[u32], mps: u32) -> Result<u32, EntropyError> {
        if self.code >= self.range {
            return Err(EntropyError::Corrupt("code outside interval".into()));
        }
        let unit = self.range >> PRECISION;
        let rem = self.range - (unit << PRECISION);
        let m = mps as usize;
        let mps_lo = unit * row[m];
        let mps_hi = unit * row[m + 1] + rem;
        let slot = if self.code < mps_lo {
            find_slot(row, self.code / unit)
        } else if self.code < mps_hi {
            mps
        } else {
            let count = (self.code - rem) / unit;
            if count >= row[row.len() - 1] {
                return Err(EntropyError::Corrupt(format!(
                    "decoded frequency {count} outside table"
                )));
            }
            find_slot(row, count)
        };
        let (start, size) = interval(self.range, row, mps, slot);
        self.code -= start;
        self.range = size;
        while self.range < TOP {
            let byte = *self.data.get(self.pos).ok_or(EntropyError::Exhausted)?;
            self.pos += 1;
            self.code = (self.code << 8) | byte as u32;
            self.range <<= 8;
        }
        Ok(slot)
    }

    /// Errors unless every input byte was consumed.
    pub fn finish(self) -> Result<(), EntropyError> {
        if self.pos != self.data.len() {
            return Err(EntropyError::Corrupt(format!(
                "{} trailing bytes",
                self.data.len() - self.pos
            )));
        }
        Ok(())
    }
}

/// Largest slot `s` with `row[s] <= count`.
#[inline]
fn find_slot(row: &[u32], count: u32) -> u32 {
    (row.partition_point(|c| *c <= count) - 1) as u32
}

fn check_index(index: u32, cdfs: &CdfTable) -> Result<usize, EntropyError> {
    let i = index as usize;
    if i >= cdfs.num_rows() {
        return Err(EntropyError::IndexOutOfRange {
            index,
            rows: cdfs.num_rows(),
        });
    }
    Ok(i)
}

/// Encodes every symbol of `plane` with its selected row.
pub fn range_encode(plane: &SymbolPlane, cdfs: &CdfTable) -> Result<Vec<u8>, EntropyError> {
    if plane.symbols.len() != plane.indexes.len() {
        return Err(EntropyError::PlaneLength {
            symbols: plane.symbols.len(),
            indexes: plane.indexes.len(),
        });
    }
    let (lo, hi) = (cdfs.support_min(), cdfs.support_max());
    let mut enc = RangeEncoder::with_capacity(plane.symbols.len() / 4 + 16);
    for (sym, idx) in plane.symbols.iter().zip(&plane.indexes) {
        let row = check_index(*idx, cdfs)?;
        if *sym < lo || *sym > hi {
            return Err(EntropyError::SymbolOutOfSupport {
                symbol: *sym,
                min: lo,
                max: hi,
            });
        }
        enc.encode(cdfs.row(row), cdfs.mps(row), (*sym - lo) as u32);
    }
    Ok(enc.finish())
}

/// Decodes one symbol per entry of `indexes`.
pub fn range_decode(
    bytes: &[u8],
    indexes: &[u32],
    cdfs: &CdfTable,
) -> Result<Vec<i32>, EntropyError> {
    let mut dec = RangeDecoder::new(bytes)?;
    let lo = cdfs.support_min();
    let mut out = Vec::with_capacity(indexes.len());
    for idx in indexes {
        let row = check_index(*idx, cdfs)?;
        let slot = dec.decode(cdfs.row(row), cdfs.mps(row))?;
        out.push(lo + slot as i32);
    }
    dec.finish()?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::super::{build_factorized_cdf, TOTAL};
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn two_symbol(p_first: f64) -> CdfTable {
        let a = (p_first * TOTAL as f64).round() as u32;
        CdfTable::from_rows(0, 1, &[vec![0, a, TOTAL]]).unwrap()
    }

    fn cross_entropy(plane: &SymbolPlane, cdfs: &CdfTable) -> f64 {
        plane
            .symbols
            .iter()
            .zip(&plane.indexes)
            .map(|(s, i)| cdfs.cost_bits(*i as usize, *s))
            .sum()
    }

    #[test]
    fn empty_plane_is_flush_only() {
        let cdfs = two_symbol(0.5);
        let bytes = range_encode(&SymbolPlane::default(), &cdfs).unwrap();
        assert_eq!(bytes.len(), 5);
        assert_eq!(range_decode(&bytes, &[], &cdfs).unwrap(), Vec::<i32>::new());
    }

    #[test]
    fn single_symbol_round_trip() {
        let cdfs = two_symbol(0.5);
        for s in [0, 1] {
            let plane = SymbolPlane::new(vec![s], vec![0]).unwrap();
            let bytes = range_encode(&plane, &cdfs).unwrap();
            assert_eq!(range_decode(&bytes, &[0], &cdfs).unwrap(), vec![s]);
        }
    }

    #[test]
    fn skewed_source_compresses_near_cross_entropy() {
        let cdfs = two_symbol(0.99);
        let plane = SymbolPlane::new(vec![0; 1000], vec![0; 1000]).unwrap();
        let bytes = range_encode(&plane, &cdfs).unwrap();
        let ce = cross_entropy(&plane, &cdfs);
        assert!(
            bytes.len() as f64 <= (ce / 8.0).ceil() + 16.0,
            "{} bytes",
            bytes.len()
        );
        assert!(bytes.len() <= 27);
        assert_eq!(
            range_decode(&bytes, &plane.indexes, &cdfs).unwrap(),
            plane.symbols
        );
    }

    #[test]
    fn truncated_stream_errors() {
        let cdfs = build_factorized_cdf(&[(0.0, 3.0)], 16).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let symbols: Vec<i32> = (0..500).map(|_| rng.gen_range(-16..=16)).collect();
        let plane = SymbolPlane::new(symbols, vec![0; 500]).unwrap();
        let bytes = range_encode(&plane, &cdfs).unwrap();
        for cut in 0..bytes.len() {
            assert!(range_decode(&bytes[..cut], &plane.indexes, &cdfs).is_err());
        }
    }

    #[test]
    fn garbage_never_panics() {
        let cdfs = build_factorized_cdf(&[(0.0, 0.5), (1.0, 9.0)], 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let indexes: Vec<u32> = (0..300).map(|i| i % 2).collect();
        for _ in 0..200 {
            let len = rng.gen_range(0..64);
            let mut junk: Vec<u8> = (0..len).map(|_| rng.gen()).collect();
            if let Some(b) = junk.first_mut() {
                *b = 0;
            }
            let _ = range_decode(&junk, &indexes, &cdfs);
        }
    }

    #[test]
    fn invalid_planes_rejected() {
        let cdfs = two_symbol(0.5);
        let plane = SymbolPlane {
            symbols: vec![2],
            indexes: vec![0],
        };
        assert!(matches!(
            range_encode(&plane, &cdfs),
            Err(EntropyError::SymbolOutOfSupport { symbol: 2, .. })
        ));
        let plane = SymbolPlane {
            symbols: vec![0],
            indexes: vec![1],
        };
        assert!(matches!(
            range_encode(&plane, &cdfs),
            Err(EntropyError::IndexOutOfRange { index: 1, rows: 1 })
        ));
    }

    proptest! {
        #[test]
        fn round_trip_is_exact_and_deterministic(
            rows in proptest::collection::vec((-5.0f32..5.0, 0.05f32..40.0), 1..8),
            bound in 1i32..=32,
            seed in any::<u64>(),
            n in 0usize..2000,
        ) {
            let cdfs = build_factorized_cdf(&rows, bound).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let indexes: Vec<u32> = (0..n).map(|_| rng.gen_range(0..rows.len() as u32)).collect();
            let symbols: Vec<i32> = (0..n).map(|_| rng.gen_range(-bound..=bound)).collect();
            let plane = SymbolPlane::new(symbols, indexes).unwrap();
            let a = range_encode(&plane, &cdfs).unwrap();
            let b = range_encode(&plane, &cdfs).unwrap();
            prop_assert_eq!(&a, &b);
            prop_assert_eq!(range_decode(&a, &plane.indexes, &cdfs).unwrap(), plane.symbols.clone());
            let ce = cross_entropy(&plane, &cdfs);
            prop_assert!(a.len() as f64 <= (ce / 8.0).ceil() + 16.0);
        }
    }
}
