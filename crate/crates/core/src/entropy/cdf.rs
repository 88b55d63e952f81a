use super::EntropyError;

/// Cumulative-frequency precision in bits. Every row totals `1 << PRECISION`.
pub const PRECISION: u32 = 16;
pub const TOTAL: u32 = 1 << PRECISION;

/// Lower bound of the scale table, also used as the minimum predicted scale.
pub const SCALE_MIN: f32 = 0.11;
pub const SCALE_MAX: f32 = 256.0;
pub const SCALE_LEVELS: usize = 64;

/// Quantized CDF rows over the shared symbol support `[support_min, support_max]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CdfTable {
    support_min: i32,
    support_max: i32,
    /// Flat rows, each `row_len` entries long.
    cdf: Vec<u32>,
    /// Most probable symbol (first maximum) of each row. The coder assigns
    /// the range truncation remainder to it.
    mps: Vec<u32>,
    row_len: usize,
}

impl CdfTable {
    pub fn from_rows(
        support_min: i32,
        support_max: i32,
        rows: &[Vec<u32>],
    ) -> Result<Self, EntropyError> {
        if support_max < support_min {
            return Err(EntropyError::InvalidTable("empty support".into()));
        }
        if rows.is_empty() {
            return Err(EntropyError::InvalidTable("no rows".into()));
        }
        let row_len = (support_max - support_min) as usize + 2;
        let mut cdf = Vec::with_capacity(rows.len() * row_len);
        let mut mps = Vec::with_capacity(rows.len());
        for (i, row) in rows.iter().enumerate() {
            if row.len() != row_len {
                return Err(EntropyError::InvalidTable(format!(
                    "row {i} has {} entries, expected {row_len}",
                    row.len()
                )));
            }
            if row[0] != 0 || row[row_len - 1] != TOTAL {
                return Err(EntropyError::InvalidTable(format!(
                    "row {i} must run from 0 to {TOTAL}"
                )));
            }
            let mut best = 0;
            let mut best_freq = 0;
            for (s, pair) in row.windows(2).enumerate() {
                if pair[1] <= pair[0] {
                    return Err(EntropyError::InvalidTable(format!(
                        "row {i} is not strictly increasing at symbol {s}"
                    )));
                }
                if pair[1] - pair[0] > best_freq {
                    best_freq = pair[1] - pair[0];
                    best = s as u32;
                }
            }
            cdf.extend_from_slice(row);
            mps.push(best);
        }
        Ok(CdfTable {
            support_min,
            support_max,
            cdf,
            mps,
            row_len,
        })
    }

    pub fn precision(&self) -> u32 {
        PRECISION
    }

    pub fn support_min(&self) -> i32 {
        self.support_min
    }

    pub fn support_max(&self) -> i32 {
        self.support_max
    }

    pub fn num_rows(&self) -> usize {
        self.mps.len()
    }

    pub fn num_symbols(&self) -> usize {
        self.row_len - 1
    }

    pub fn row(&self, index: usize) -> &[u32] {
        &self.cdf[index * self.row_len..(index + 1) * self.row_len]
    }

    pub(crate) fn mps(&self, index: usize) -> u32 {
        self.mps[index]
    }

    /// Frequency of `symbol` in row `index`, out of `TOTAL`.
    pub fn frequency(&self, index: usize, symbol: i32) -> u32 {
        let row = self.row(index);
        let s = (symbol - self.support_min) as usize;
        row[s + 1] - row[s]
    }

    /// Ideal code length of `symbol` under row `index`, in bits.
    pub fn cost_bits(&self, index: usize, symbol: i32) -> f64 {
        PRECISION as f64 - (self.frequency(index, symbol) as f64).log2()
    }
}

/// Ascending scale values for the Gaussian conditional model.
#[derive(Clone, Debug, PartialEq)]
pub struct ScaleTable {
    values: Vec<f32>,
}

impl ScaleTable {
    pub fn new(values: Vec<f32>) -> Result<Self, EntropyError> {
        if values.is_empty() {
            return Err(EntropyError::InvalidTable("empty scale table".into()));
        }
        if values.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(EntropyError::NonPositiveScale);
        }
        if values.windows(2).any(|p| p[1] <= p[0]) {
            return Err(EntropyError::InvalidTable(
                "scale table is not strictly increasing".into(),
            ));
        }
        Ok(ScaleTable { values })
    }

    /// `levels` values log-spaced between `min` and `max`, both inclusive.
    pub fn log_spaced(min: f32, max: f32, levels: usize) -> Result<Self, EntropyError> {
        if levels < 2 || !(min > 0.0 && max > min) {
            return Err(EntropyError::InvalidTable("bad scale table range".into()));
        }
        let (lo, hi) = (libm::log(min as f64), libm::log(max as f64));
        let step = (hi - lo) / (levels - 1) as f64;
        let mut values: Vec<f32> = (0..levels)
            .map(|i| libm::exp(lo + step * i as f64) as f32)
            .collect();
        values[0] = min;
        values[levels - 1] = max;
        ScaleTable::new(values)
    }

    pub fn default_table() -> Self {
        Self::log_spaced(SCALE_MIN, SCALE_MAX, SCALE_LEVELS).expect("constant table is valid")
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Index of the smallest table scale `>= sigma`, clamped to the last entry.
pub fn scale_to_index(sigma: f32, table: &ScaleTable) -> usize {
    table
        .values
        .partition_point(|v| *v < sigma)
        .min(table.values.len() - 1)
}

/// Upper tail of the standard normal.
fn upper_tail(x: f64) -> f64 {
    0.5 * libm::erfc(x * std::f64::consts::FRAC_1_SQRT_2)
}

/// Discretized Gaussian over `[-bound, bound]` with tails folded into the
/// edge bins, quantized so each bin has frequency `>= 1` and the row totals
/// `TOTAL`.
///
/// Boundaries below the mean are rounded from the lower tail and boundaries
/// above it from the upper tail, which makes zero-mean rows exactly symmetric.
fn gaussian_row(mean: f64, sigma: f64, bound: i32) -> Result<Vec<u32>, EntropyError> {
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(EntropyError::NonPositiveScale);
    }
    if !mean.is_finite() {
        return Err(EntropyError::InvalidTable("non-finite mean".into()));
    }
    let bins = (2 * bound + 1) as u32;
    let spare = (TOTAL - bins) as f64;
    let mut row = Vec::with_capacity(bins as usize + 1);
    row.push(0u32);
    for j in 1..bins {
        let edge = ((-bound + j as i32) as f64 - 0.5 - mean) / sigma;
        let mass_below = if edge < 0.0 {
            (upper_tail(-edge) * spare).round()
        } else {
            spare - (upper_tail(edge) * spare).round()
        };
        row.push(j + mass_below as u32);
    }
    row.push(TOTAL);
    if row.windows(2).any(|p| p[1] <= p[0]) {
        return Err(EntropyError::InvalidTable(format!(
            "scale {sigma} too wide for {PRECISION}-bit quantization"
        )));
    }
    Ok(row)
}

fn check_bound(bound: i32) -> Result<(), EntropyError> {
    // 2L + 1 bins must each fit at least one frequency unit with room to spare.
    if !(1..=4096).contains(&bound) {
        return Err(EntropyError::InvalidTable(format!(
            "support bound {bound} out of range"
        )));
    }
    Ok(())
}

/// One row per channel from `(mean, scale)` density parameters.
pub fn build_factorized_cdf(params: &[(f32, f32)], bound: i32) -> Result<CdfTable, EntropyError> {
    check_bound(bound)?;
    let rows = params
        .iter()
        .map(|(mu, sigma)| gaussian_row(*mu as f64, *sigma as f64, bound))
        .collect::<Result<Vec<_>, _>>()?;
    CdfTable::from_rows(-bound, bound, &rows)
}

/// One zero-mean row per scale-table entry.
pub fn build_gaussian_conditional_cdf(
    table: &ScaleTable,
    bound: i32,
) -> Result<CdfTable, EntropyError> {
    check_bound(bound)?;
    let rows = table
        .values
        .iter()
        .map(|sigma| gaussian_row(0.0, *sigma as f64, bound))
        .collect::<Result<Vec<_>, _>>()?;
    CdfTable::from_rows(-bound, bound, &rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use statrs::distribution::{ContinuousCDF, Normal};

    fn entropy_bits(t: &CdfTable, row: usize) -> f64 {
        (t.support_min()..=t.support_max())
            .map(|s| {
                let p = t.frequency(row, s) as f64 / TOTAL as f64;
                -p * p.log2()
            })
            .sum()
    }

    #[test]
    fn zero_mean_rows_are_symmetric() {
        let t =
            build_factorized_cdf(&[(0.0, 0.3), (0.0, 1.0), (0.0, 7.5), (0.0, 250.0)], 32).unwrap();
        for row in 0..t.num_rows() {
            for k in 1..=32 {
                assert_eq!(t.frequency(row, k), t.frequency(row, -k), "row {row} k {k}");
            }
        }
    }

    #[test]
    fn narrow_row_puts_mass_on_zero() {
        let t = build_factorized_cdf(&[(0.0, 0.05)], 8).unwrap();
        assert!(t.frequency(0, 0) >= TOTAL - 16);
        for k in (-8..=8).filter(|k| *k != 0) {
            assert_eq!(t.frequency(0, k), 1);
        }
    }

    #[test]
    fn gaussian_rows_flatten_with_scale() {
        let scales = ScaleTable::default_table();
        let t = build_gaussian_conditional_cdf(&scales, 32).unwrap();
        assert_eq!(t.num_rows(), 64);
        assert!(entropy_bits(&t, 63) > entropy_bits(&t, 0));
        for row in [0, 20, 63] {
            for k in 1..=32 {
                assert_eq!(t.frequency(row, k), t.frequency(row, -k));
            }
        }
    }

    #[test]
    fn rows_match_independent_normal_oracle() {
        let scales = ScaleTable::default_table();
        let bound = 32;
        let t = build_gaussian_conditional_cdf(&scales, bound).unwrap();
        let spare = (TOTAL - (2 * bound as u32 + 1)) as f64;
        for (row, sigma) in scales.values().iter().enumerate() {
            let n = Normal::new(0.0, *sigma as f64).unwrap();
            for k in -bound..=bound {
                let lo = if k == -bound {
                    0.0
                } else {
                    n.cdf(k as f64 - 0.5)
                };
                let hi = if k == bound {
                    1.0
                } else {
                    n.cdf(k as f64 + 0.5)
                };
                let expected = 1.0 + (hi - lo) * spare;
                let got = t.frequency(row, k) as f64;
                assert!(
                    (got - expected).abs() <= 1.0,
                    "sigma {sigma} k {k}: {got} vs {expected}"
                );
            }
        }
    }

    #[test]
    fn scale_index_examples() {
        let t = ScaleTable::new(vec![0.11, 0.22, 0.44]).unwrap();
        assert_eq!(scale_to_index(0.11, &t), 0);
        assert_eq!(scale_to_index(0.30, &t), 2);
        assert_eq!(scale_to_index(1e6, &t), 2);
        assert_eq!(scale_to_index(0.0, &t), 0);
    }

    #[test]
    fn default_scale_table_endpoints() {
        let t = ScaleTable::default_table();
        assert_eq!(t.len(), 64);
        assert_eq!(t.values()[0], 0.11);
        assert_eq!(t.values()[63], 256.0);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert_eq!(
            build_factorized_cdf(&[(0.0, 0.0)], 8),
            Err(EntropyError::NonPositiveScale)
        );
        assert_eq!(
            build_factorized_cdf(&[(0.0, -1.0)], 8),
            Err(EntropyError::NonPositiveScale)
        );
        assert!(build_factorized_cdf(&[(0.0, 1.0)], 0).is_err());
        assert!(ScaleTable::new(vec![0.2, 0.1]).is_err());
        assert!(CdfTable::from_rows(0, 1, &[vec![0, 5, 5]]).is_err());
        assert!(CdfTable::from_rows(0, 1, &[vec![0, 5, 100]]).is_err());
    }

    proptest! {
        #[test]
        fn rows_are_valid_distributions(
            mu in -40.0f32..40.0, sigma in 0.01f32..300.0, bound in 1i32..=64,
        ) {
            let t = build_factorized_cdf(&[(mu, sigma)], bound).unwrap();
            let row = t.row(0);
            prop_assert_eq!(row[0], 0);
            prop_assert_eq!(*row.last().unwrap(), TOTAL);
            let sum: u32 = (-bound..=bound).map(|k| t.frequency(0, k)).sum();
            prop_assert_eq!(sum, TOTAL);
            prop_assert!(row.windows(2).all(|p| p[1] > p[0]));
        }
    }
}
