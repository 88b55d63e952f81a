use super::{for_each_plane, Kernels, NumericsError, Tensor};

/// Square-kernel convolution parameters, weights laid out `[out][in][ky][kx]`.
///
/// The same layout serves transposed convolutions, where `out_channels` and
/// `in_channels` refer to the transposed layer's own output and input.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvWeights {
    out_channels: usize,
    in_channels: usize,
    kernel: usize,
    stride: usize,
    weights: Vec<f32>,
    bias: Vec<f32>,
}

impl ConvWeights {
    pub fn new(
        out_channels: usize,
        in_channels: usize,
        kernel: usize,
        stride: usize,
        weights: Vec<f32>,
        bias: Vec<f32>,
    ) -> Result<Self, NumericsError> {
        if out_channels == 0 || in_channels == 0 || kernel == 0 || stride == 0 {
            return Err(NumericsError::InvalidWeights(format!(
                "zero-sized conv layer ({out_channels}x{in_channels}, k={kernel}, s={stride})"
            )));
        }
        let expected = out_channels * in_channels * kernel * kernel;
        if weights.len() != expected {
            return Err(NumericsError::InvalidWeights(format!(
                "conv weights hold {} values, expected {expected}",
                weights.len()
            )));
        }
        if bias.len() != out_channels {
            return Err(NumericsError::InvalidWeights(format!(
                "conv bias holds {} values, expected {out_channels}",
                bias.len()
            )));
        }
        if weights.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(NumericsError::InvalidWeights(
                "non-finite conv parameter".into(),
            ));
        }
        Ok(ConvWeights {
            out_channels,
            in_channels,
            kernel,
            stride,
            weights,
            bias,
        })
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn kernel(&self) -> usize {
        self.kernel
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn weights(&self) -> &[f32] {
        &self.weights
    }

    pub fn bias(&self) -> &[f32] {
        &self.bias
    }
}

/// Padding for transposed convolutions: `pad` is removed from both borders of
/// the full scatter output, `output` extra rows/columns are appended at the
/// bottom/right so stride-2 layers can exactly double their input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Padding {
    pub pad: usize,
    pub output: usize,
}

impl Padding {
    pub fn symmetric(pad: usize) -> Self {
        Padding { pad, output: 0 }
    }

    pub fn with_output(pad: usize, output: usize) -> Self {
        Padding { pad, output }
    }
}

fn check_channels(input: &Tensor, w: &ConvWeights) -> Result<(), NumericsError> {
    if input.channels() != w.in_channels {
        return Err(NumericsError::ChannelMismatch {
            expected: w.in_channels,
            got: input.channels(),
        });
    }
    Ok(())
}

#[inline]
fn axpy(dst: &mut [f32], src: &[f32], a: f32) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += a * *s;
    }
}

pub(super) fn conv2d(
    k: &Kernels<'_>,
    input: &Tensor,
    w: &ConvWeights,
    padding: usize,
) -> Result<Tensor, NumericsError> {
    check_channels(input, w)?;
    let (cin, h, wd) = input.shape();
    let (ks, s) = (w.kernel, w.stride);
    let (ph, pw) = (h + 2 * padding, wd + 2 * padding);
    if ph < ks || pw < ks || h == 0 || wd == 0 {
        return Err(NumericsError::NonPositiveOutput);
    }
    let oh = (ph - ks) / s + 1;
    let ow = (pw - ks) / s + 1;

    // Zero-padded input with every row split into `s` column phases, so that
    // each kernel tap reads a contiguous run of the padded row.
    let qw = pw.div_ceil(s);
    let mut scratch = k.buffers.take(cin * ph * s * qw);
    scratch.fill(0.0);
    for ic in 0..cin {
        let plane = input.plane(ic);
        for y in 0..h {
            let base = (ic * ph + y + padding) * s;
            let row = &plane[y * wd..(y + 1) * wd];
            for (x, v) in row.iter().enumerate() {
                let px = x + padding;
                scratch[(base + px % s) * qw + px / s] = *v;
            }
        }
    }

    let mut out = k.buffers.take(w.out_channels * oh * ow);
    let taps = cin * ks * ks;
    let scratch_ref = &scratch;
    for_each_plane(k.exec, &mut out, oh * ow, |o, plane| {
        let wo = &w.weights[o * taps..(o + 1) * taps];
        for oy in 0..oh {
            let orow = &mut plane[oy * ow..(oy + 1) * ow];
            orow.fill(w.bias[o]);
            for ic in 0..cin {
                for ky in 0..ks {
                    let base = (ic * ph + oy * s + ky) * s;
                    for kx in 0..ks {
                        let off = (base + kx % s) * qw + kx / s;
                        axpy(
                            orow,
                            &scratch_ref[off..off + ow],
                            wo[(ic * ks + ky) * ks + kx],
                        );
                    }
                }
            }
        }
    });
    k.buffers.give(scratch);
    Tensor::new(w.out_channels, oh, ow, out)
}

pub(super) fn conv2d_transpose(
    k: &Kernels<'_>,
    input: &Tensor,
    w: &ConvWeights,
    padding: Padding,
) -> Result<Tensor, NumericsError> {
    check_channels(input, w)?;
    let (cin, h, wd) = input.shape();
    let (ks, s) = (w.kernel, w.stride);
    if h == 0 || wd == 0 {
        return Err(NumericsError::NonPositiveOutput);
    }
    // Full scatter extent is (n - 1) * s + k; cropping removes 2 * pad.
    let full_h = (h - 1) * s + ks;
    let full_w = (wd - 1) * s + ks;
    let crop = 2 * padding.pad;
    if full_h + padding.output <= crop || full_w + padding.output <= crop {
        return Err(NumericsError::NonPositiveOutput);
    }
    let oh = full_h + padding.output - crop;
    let ow = full_w + padding.output - crop;

    // Accumulator for the full output, split into s*s (row, column) phases.
    let qh = h + (ks - 1) / s;
    let qw = wd + (ks - 1) / s;
    let acc_len = s * s * qh * qw;
    let taps = cin * ks * ks;

    let mut out = k.buffers.take(w.out_channels * oh * ow);
    for_each_plane(k.exec, &mut out, oh * ow, |o, plane| {
        let wo = &w.weights[o * taps..(o + 1) * taps];
        let mut acc = k.buffers.take(acc_len);
        acc.fill(0.0);
        for ic in 0..cin {
            let src = input.plane(ic);
            for ky in 0..ks {
                for kx in 0..ks {
                    let a = wo[(ic * ks + ky) * ks + kx];
                    let phase = (ky % s) * s + kx % s;
                    for iy in 0..h {
                        let off = (phase * qh + iy + ky / s) * qw + kx / s;
                        axpy(&mut acc[off..off + wd], &src[iy * wd..(iy + 1) * wd], a);
                    }
                }
            }
        }
        let bias = w.bias[o];
        for oy in 0..oh {
            let fy = oy + padding.pad;
            for ox in 0..ow {
                let fx = ox + padding.pad;
                let v = if fy < full_h && fx < full_w {
                    acc[(((fy % s) * s + fx % s) * qh + fy / s) * qw + fx / s]
                } else {
                    0.0
                };
                plane[oy * ow + ox] = v + bias;
            }
        }
        k.buffers.give(acc);
    });
    Tensor::new(w.out_channels, oh, ow, out)
}

#[cfg(test)]
mod tests {
    use super::super::{conv2d as conv, conv2d_transpose as deconv, Exec, Heap, Kernels};
    use super::*;
    use proptest::prelude::*;

    fn naive_conv(input: &Tensor, w: &ConvWeights, p: usize) -> Tensor {
        let (cin, h, wd) = input.shape();
        let (k, s) = (w.kernel(), w.stride());
        let oh = (h + 2 * p - k) / s + 1;
        let ow = (wd + 2 * p - k) / s + 1;
        Tensor::from_fn(w.out_channels(), oh, ow, |o, oy, ox| {
            let mut acc = 0.0f64;
            for ic in 0..cin {
                for ky in 0..k {
                    for kx in 0..k {
                        let iy = (oy * s + ky) as isize - p as isize;
                        let ix = (ox * s + kx) as isize - p as isize;
                        if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                            continue;
                        }
                        let wv = w.weights()[((o * cin + ic) * k + ky) * k + kx] as f64;
                        acc += wv * input.get(ic, iy as usize, ix as usize) as f64;
                    }
                }
            }
            (acc + w.bias()[o] as f64) as f32
        })
    }

    fn naive_scatter(input: &Tensor, w: &ConvWeights, p: usize, op: usize) -> Tensor {
        let (cin, h, wd) = input.shape();
        let (k, s) = (w.kernel(), w.stride());
        let oh = (h - 1) * s + k + op - 2 * p;
        let ow = (wd - 1) * s + k + op - 2 * p;
        let mut acc = vec![0.0f64; w.out_channels() * oh * ow];
        for o in 0..w.out_channels() {
            for ic in 0..cin {
                for iy in 0..h {
                    for ix in 0..wd {
                        for ky in 0..k {
                            for kx in 0..k {
                                let oy = (iy * s + ky) as isize - p as isize;
                                let ox = (ix * s + kx) as isize - p as isize;
                                if oy < 0 || ox < 0 || oy >= oh as isize || ox >= ow as isize {
                                    continue;
                                }
                                let wv = w.weights()[((o * cin + ic) * k + ky) * k + kx] as f64;
                                acc[(o * oh + oy as usize) * ow + ox as usize] +=
                                    wv * input.get(ic, iy, ix) as f64;
                            }
                        }
                    }
                }
            }
        }
        Tensor::from_fn(w.out_channels(), oh, ow, |o, y, x| {
            (acc[(o * oh + y) * ow + x] + w.bias()[o] as f64) as f32
        })
    }

    fn lcg_values(seed: u64, n: usize) -> Vec<f32> {
        let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1);
        (0..n)
            .map(|_| {
                state = state
                    .wrapping_mul(6364136223846793005)
                    .wrapping_add(1442695040888963407);
                ((state >> 40) as f32 / (1u64 << 24) as f32) * 2.0 - 1.0
            })
            .collect()
    }

    fn assert_close(a: &Tensor, b: &Tensor, tol: f32) {
        assert_eq!(a.shape(), b.shape());
        for (i, (x, y)) in a.data().iter().zip(b.data()).enumerate() {
            assert!((x - y).abs() <= tol, "element {i}: {x} vs {y}");
        }
    }

    #[test]
    fn unit_kernel_is_identity() {
        let input = Tensor::from_fn(3, 5, 4, |c, y, x| (c * 20 + y * 4 + x) as f32 * 0.5);
        let mut wts = vec![0.0; 9];
        for c in 0..3 {
            wts[c * 3 + c] = 1.0;
        }
        let w = ConvWeights::new(3, 3, 1, 1, wts, vec![0.0; 3]).unwrap();
        assert_eq!(conv(&input, &w, 0).unwrap(), input);
        assert_eq!(deconv(&input, &w, 0).unwrap(), input);
    }

    #[test]
    fn ones_kernel_stride_two() {
        let input = Tensor::from_fn(1, 4, 4, |_, _, _| 1.0);
        let w = ConvWeights::new(1, 1, 2, 2, vec![1.0; 4], vec![0.0]).unwrap();
        let out = conv(&input, &w, 0).unwrap();
        assert_eq!(out.shape(), (1, 2, 2));
        assert!(out.data().iter().all(|v| *v == 4.0));
    }

    #[test]
    fn transpose_spreads_single_pixel() {
        let input = Tensor::new(1, 1, 1, vec![2.5]).unwrap();
        let w = ConvWeights::new(1, 1, 2, 2, vec![1.0; 4], vec![0.0]).unwrap();
        let out = deconv(&input, &w, 0).unwrap();
        assert_eq!(out.shape(), (1, 2, 2));
        assert!(out.data().iter().all(|v| *v == 2.5));
    }

    #[test]
    fn random_conv_matches_naive_oracle() {
        let input = Tensor::new(2, 5, 5, lcg_values(1, 50)).unwrap();
        let w = ConvWeights::new(3, 2, 3, 1, lcg_values(2, 54), lcg_values(3, 3)).unwrap();
        assert_close(
            &conv(&input, &w, 1).unwrap(),
            &naive_conv(&input, &w, 1),
            1e-5,
        );
    }

    #[test]
    fn random_transpose_matches_scatter_oracle() {
        let input = Tensor::new(2, 3, 3, lcg_values(4, 18)).unwrap();
        let w = ConvWeights::new(2, 2, 3, 2, lcg_values(5, 36), lcg_values(6, 2)).unwrap();
        assert_close(
            &deconv(&input, &w, 1).unwrap(),
            &naive_scatter(&input, &w, 1, 0),
            1e-5,
        );
    }

    #[test]
    fn output_padding_doubles_geometry() {
        let input = Tensor::new(1, 4, 6, lcg_values(7, 24)).unwrap();
        let w = ConvWeights::new(2, 1, 5, 2, lcg_values(8, 50), lcg_values(9, 2)).unwrap();
        let out = Kernels::default()
            .conv2d_transpose(&input, &w, Padding::with_output(2, 1))
            .unwrap();
        assert_eq!(out.shape(), (2, 8, 12));
        assert_close(&out, &naive_scatter(&input, &w, 2, 1), 1e-5);
    }

    #[test]
    fn stride_two_halves_even_input() {
        let input = Tensor::zeros(3, 16, 24);
        let w = ConvWeights::new(4, 3, 5, 2, vec![0.1; 4 * 3 * 25], vec![0.0; 4]).unwrap();
        assert_eq!(conv(&input, &w, 2).unwrap().shape(), (4, 8, 12));
    }

    #[test]
    fn channel_mismatch_is_reported() {
        let input = Tensor::zeros(2, 4, 4);
        let w = ConvWeights::new(1, 3, 1, 1, vec![1.0; 3], vec![0.0]).unwrap();
        assert_eq!(
            conv(&input, &w, 0),
            Err(NumericsError::ChannelMismatch {
                expected: 3,
                got: 2
            })
        );
        assert!(deconv(&input, &w, 0).is_err());
    }

    #[test]
    fn kernel_larger_than_input_fails() {
        let input = Tensor::zeros(1, 2, 2);
        let w = ConvWeights::new(1, 1, 5, 1, vec![1.0; 25], vec![0.0]).unwrap();
        assert_eq!(conv(&input, &w, 0), Err(NumericsError::NonPositiveOutput));
        let w = ConvWeights::new(1, 1, 1, 1, vec![1.0], vec![0.0]).unwrap();
        assert_eq!(deconv(&input, &w, 1), Err(NumericsError::NonPositiveOutput));
    }

    #[test]
    fn invalid_weight_lengths_rejected() {
        assert!(ConvWeights::new(2, 2, 3, 1, vec![0.0; 17], vec![0.0; 2]).is_err());
        assert!(ConvWeights::new(2, 2, 1, 1, vec![0.0; 4], vec![0.0; 3]).is_err());
        assert!(ConvWeights::new(1, 1, 1, 0, vec![0.0], vec![0.0]).is_err());
    }

    #[test]
    fn sequential_and_default_paths_are_bit_identical() {
        let input = Tensor::new(3, 8, 8, lcg_values(10, 192)).unwrap();
        let w = ConvWeights::new(4, 3, 5, 2, lcg_values(11, 300), lcg_values(12, 4)).unwrap();
        let seq = Kernels::new(Exec::Sequential, &Heap);
        let def = Kernels::default();
        assert!(seq
            .conv2d(&input, &w, 2)
            .unwrap()
            .bit_eq(&def.conv2d(&input, &w, 2).unwrap()));
        let pad = Padding::with_output(2, 1);
        let wt = ConvWeights::new(3, 3, 5, 2, lcg_values(13, 225), lcg_values(14, 3)).unwrap();
        assert!(seq
            .conv2d_transpose(&input, &wt, pad)
            .unwrap()
            .bit_eq(&def.conv2d_transpose(&input, &wt, pad).unwrap()));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn conv_agrees_with_oracle(
            cin in 1usize..=4, cout in 1usize..=4, h in 1usize..=8, wd in 1usize..=8,
            k in 1usize..=5, s in 1usize..=2, p in 0usize..=2, seed in any::<u64>(),
        ) {
            prop_assume!(h + 2 * p >= k && wd + 2 * p >= k);
            let input = Tensor::new(cin, h, wd, lcg_values(seed, cin * h * wd)).unwrap();
            let w = ConvWeights::new(
                cout, cin, k, s,
                lcg_values(seed ^ 1, cout * cin * k * k),
                lcg_values(seed ^ 2, cout),
            ).unwrap();
            let got = conv(&input, &w, p).unwrap();
            let want = naive_conv(&input, &w, p);
            prop_assert_eq!(got.shape(), want.shape());
            for (x, y) in got.data().iter().zip(want.data()) {
                prop_assert!((x - y).abs() <= 1e-5, "{} vs {}", x, y);
            }
        }

        #[test]
        fn transpose_agrees_with_oracle(
            cin in 1usize..=4, cout in 1usize..=4, h in 1usize..=8, wd in 1usize..=8,
            k in 1usize..=5, s in 1usize..=2, p in 0usize..=2, op in 0usize..=1,
            seed in any::<u64>(),
        ) {
            prop_assume!((h - 1) * s + k + op > 2 * p && (wd - 1) * s + k + op > 2 * p);
            let input = Tensor::new(cin, h, wd, lcg_values(seed, cin * h * wd)).unwrap();
            let w = ConvWeights::new(
                cout, cin, k, s,
                lcg_values(seed ^ 3, cout * cin * k * k),
                lcg_values(seed ^ 4, cout),
            ).unwrap();
            let got = Kernels::default()
                .conv2d_transpose(&input, &w, Padding::with_output(p, op))
                .unwrap();
            let want = naive_scatter(&input, &w, p, op);
            prop_assert_eq!(got.shape(), want.shape());
            for (x, y) in got.data().iter().zip(want.data()) {
                prop_assert!((x - y).abs() <= 1e-5, "{} vs {}", x, y);
            }
        }
    }
}
