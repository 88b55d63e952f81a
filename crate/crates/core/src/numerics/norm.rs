use super::{for_each_plane, Kernels, NumericsError, Tensor};

/// Divisive normalization parameters: `beta[i] > 0`, `gamma[i * C + j] >= 0`.
///
/// Validity is checked once here; the kernels trust it.
#[derive(Clone, Debug, PartialEq)]
pub struct NormWeights {
    beta: Vec<f32>,
    gamma: Vec<f32>,
}

impl NormWeights {
    pub fn new(beta: Vec<f32>, gamma: Vec<f32>) -> Result<Self, NumericsError> {
        let c = beta.len();
        if c == 0 {
            return Err(NumericsError::InvalidWeights("empty beta".into()));
        }
        if gamma.len() != c * c {
            return Err(NumericsError::InvalidWeights(format!(
                "gamma holds {} values, expected {}",
                gamma.len(),
                c * c
            )));
        }
        if let Some(b) = beta.iter().find(|b| !(b.is_finite() && **b > 0.0)) {
            return Err(NumericsError::InvalidWeights(format!(
                "beta {b} is not positive"
            )));
        }
        if let Some(g) = gamma.iter().find(|g| !(g.is_finite() && **g >= 0.0)) {
            return Err(NumericsError::InvalidWeights(format!(
                "gamma {g} is negative"
            )));
        }
        Ok(NormWeights { beta, gamma })
    }

    pub fn channels(&self) -> usize {
        self.beta.len()
    }

    pub fn beta(&self) -> &[f32] {
        &self.beta
    }

    pub fn gamma(&self) -> &[f32] {
        &self.gamma
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(super) enum Kind {
    /// `x / sqrt(beta + sum gamma * x^2)`
    Gdn,
    /// `x / (beta + sum gamma * |x|)`
    OneDn,
}

pub(super) fn divisive_norm(
    k: &Kernels<'_>,
    input: &Tensor,
    nw: &NormWeights,
    inverse: bool,
    kind: Kind,
) -> Result<Tensor, NumericsError> {
    let (c, h, w) = input.shape();
    if c != nw.channels() {
        return Err(NumericsError::ChannelMismatch {
            expected: nw.channels(),
            got: c,
        });
    }
    let n = h * w;
    let mut pooled = k.buffers.take(c * n);
    for (d, x) in pooled.iter_mut().zip(input.data()) {
        *d = match kind {
            Kind::Gdn => x * x,
            Kind::OneDn => x.abs(),
        };
    }
    let pooled_ref = &pooled;
    let mut out = k.buffers.take(c * n);
    for_each_plane(k.exec, &mut out, n, |i, plane| {
        plane.fill(nw.beta[i]);
        let row = &nw.gamma[i * c..(i + 1) * c];
        for (j, g) in row.iter().enumerate() {
            if *g == 0.0 {
                continue;
            }
            for (d, s) in plane.iter_mut().zip(&pooled_ref[j * n..(j + 1) * n]) {
                *d += g * s;
            }
        }
        let x = input.plane(i);
        match (kind, inverse) {
            (Kind::Gdn, false) => plane.iter_mut().zip(x).for_each(|(d, x)| *d = x / d.sqrt()),
            (Kind::Gdn, true) => plane.iter_mut().zip(x).for_each(|(d, x)| *d = x * d.sqrt()),
            (Kind::OneDn, false) => plane.iter_mut().zip(x).for_each(|(d, x)| *d = x / *d),
            (Kind::OneDn, true) => plane.iter_mut().zip(x).for_each(|(d, x)| *d *= x),
        }
    });
    k.buffers.give(pooled);
    Tensor::new(c, h, w, out)
}

#[cfg(test)]
mod tests {
    use super::super::{gdn, onedn};
    use super::*;
    use proptest::prelude::*;

    fn identity_weights(c: usize) -> NormWeights {
        NormWeights::new(vec![1.0; c], vec![0.0; c * c]).unwrap()
    }

    #[test]
    fn disabled_normalization_is_identity() {
        let x = Tensor::from_fn(3, 4, 5, |c, y, x| {
            (c as f32 - 1.0) * (y * 5 + x) as f32 * 0.1
        });
        let nw = identity_weights(3);
        for inverse in [false, true] {
            assert_eq!(gdn(&x, &nw, inverse).unwrap(), x);
            assert_eq!(onedn(&x, &nw, inverse).unwrap(), x);
        }
    }

    #[test]
    fn gdn_scalar() {
        let x = Tensor::new(1, 1, 1, vec![3.0]).unwrap();
        let nw = NormWeights::new(vec![7.0], vec![1.0]).unwrap();
        assert_eq!(gdn(&x, &nw, false).unwrap().data(), &[0.75]);
    }

    #[test]
    fn onedn_scalar() {
        let x = Tensor::new(1, 1, 1, vec![3.0]).unwrap();
        let nw = NormWeights::new(vec![1.0], vec![1.0]).unwrap();
        assert_eq!(onedn(&x, &nw, false).unwrap().data(), &[0.75]);
    }

    #[test]
    fn inverse_multiplies_by_own_denominator() {
        // The inverse layer normalizes with its own input, so it undoes the
        // forward layer only when gamma is zero.
        let y = Tensor::new(1, 1, 1, vec![0.75]).unwrap();
        let nw = NormWeights::new(vec![7.0], vec![1.0]).unwrap();
        assert_eq!(gdn(&y, &nw, true).unwrap().data(), &[0.75 * 2.75]);
        let nw = NormWeights::new(vec![1.0], vec![1.0]).unwrap();
        assert_eq!(onedn(&y, &nw, true).unwrap().data(), &[0.75 * 1.75]);
    }

    #[test]
    fn rejects_invalid_parameters() {
        assert!(NormWeights::new(vec![0.0], vec![0.0]).is_err());
        assert!(NormWeights::new(vec![1.0], vec![-0.1]).is_err());
        assert!(NormWeights::new(vec![1.0, 1.0], vec![0.0; 3]).is_err());
        assert!(NormWeights::new(vec![f32::NAN], vec![0.0]).is_err());
    }

    #[test]
    fn channel_mismatch() {
        let x = Tensor::zeros(2, 2, 2);
        assert!(matches!(
            gdn(&x, &identity_weights(3), false),
            Err(NumericsError::ChannelMismatch {
                expected: 3,
                got: 2
            })
        ));
    }

    proptest! {
        #[test]
        fn round_trip_with_diagonal_free_weights(
            c in 1usize..=4,
            betas in proptest::collection::vec(0.05f32..5.0, 4),
            xs in proptest::collection::vec(-4.0f32..4.0, 4 * 9),
        ) {
            let x = Tensor::new(c, 3, 3, xs[..c * 9].to_vec()).unwrap();
            let nw = NormWeights::new(betas[..c].to_vec(), vec![0.0; c * c]).unwrap();
            for f in [gdn, onedn] {
                let back = f(&f(&x, &nw, false).unwrap(), &nw, true).unwrap();
                for (a, b) in back.data().iter().zip(x.data()) {
                    prop_assert!((a - b).abs() <= 1e-5, "{} vs {}", a, b);
                }
            }
        }

        #[test]
        fn outputs_stay_finite(
            gammas in proptest::collection::vec(0.0f32..2.0, 9),
            xs in proptest::collection::vec(-100.0f32..100.0, 3 * 16),
        ) {
            let x = Tensor::new(3, 4, 4, xs).unwrap();
            let nw = NormWeights::new(vec![0.5, 1.0, 2.0], gammas).unwrap();
            for inverse in [false, true] {
                prop_assert!(gdn(&x, &nw, inverse).unwrap().is_finite());
                prop_assert!(onedn(&x, &nw, inverse).unwrap().is_finite());
            }
        }
    }
}
