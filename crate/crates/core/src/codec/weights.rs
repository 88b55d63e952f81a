//! Model parameters and the `LICW` weight file.
//!
//! Layout (integers little-endian): `"LICW"`, version `u8 = 1`, codec kind
//! `u8`, activation `u8`, `N u16`, `M u16`, `L u16`, then parameter blocks
//! `(tag u8, count u32, count x f32)` in this order:
//!
//! 1. analysis layers 0..4: conv weight, conv bias, and for layers 0..3 the
//!    normalization beta and gamma
//! 2. synthesis layers 0..4, same pattern
//! 3. hyperprior only: hyper-analysis layers 0..3 (weight, bias), then
//!    hyper-synthesis layers 0..3 (weight, bias)
//! 4. `y` quantization offsets (M)
//! 5. hyperprior only: `z` quantization offsets (N)
//! 6. bottleneck density means, then scales (M for factorized, N for hyperprior)
//! 7. hyperprior only: scale table
//!
//! The weights digest is the SHA-256 of the whole file.

use std::fmt;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest as _, Sha256};

use super::bytes::{FormatError, Reader};
use super::{Activation, CodecConfig, CodecError, CodecKind};
use crate::entropy::ScaleTable;
use crate::numerics::{ConvWeights, NormWeights};

pub const WEIGHTS_MAGIC: &[u8; 4] = b"LICW";
pub const WEIGHTS_VERSION: u8 = 1;

const TAG_CONV_WEIGHT: u8 = 1;
const TAG_CONV_BIAS: u8 = 2;
const TAG_NORM_BETA: u8 = 3;
const TAG_NORM_GAMMA: u8 = 4;
const TAG_Y_OFFSETS: u8 = 5;
const TAG_Z_OFFSETS: u8 = 6;
const TAG_DENSITY_MEANS: u8 = 7;
const TAG_DENSITY_SCALES: u8 = 8;
const TAG_SCALE_TABLE: u8 = 9;

/// SHA-256 of the canonical weight file bytes.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct WeightsDigest(pub [u8; 32]);

impl fmt::Display for WeightsDigest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in self.0 {
            write!(f, "{b:02x}")?;
        }
        Ok(())
    }
}

impl fmt::Debug for WeightsDigest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "WeightsDigest({self})")
    }
}

/// Shape of one convolution layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub out_channels: usize,
    pub in_channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

const fn layer(out_channels: usize, in_channels: usize, kernel: usize, stride: usize) -> LayerSpec {
    LayerSpec {
        out_channels,
        in_channels,
        kernel,
        stride,
    }
}

pub fn analysis_layers(n: usize, m: usize) -> [LayerSpec; 4] {
    [
        layer(n, 3, 5, 2),
        layer(n, n, 5, 2),
        layer(n, n, 5, 2),
        layer(m, n, 5, 2),
    ]
}

/// Transposed layers, listed by their own output/input channels.
pub fn synthesis_layers(n: usize, m: usize) -> [LayerSpec; 4] {
    [
        layer(n, m, 5, 2),
        layer(n, n, 5, 2),
        layer(n, n, 5, 2),
        layer(3, n, 5, 2),
    ]
}

pub fn hyper_analysis_layers(n: usize, m: usize) -> [LayerSpec; 3] {
    [layer(n, m, 3, 1), layer(n, n, 5, 2), layer(n, n, 5, 2)]
}

/// Transposed layers.
pub fn hyper_synthesis_layers(n: usize, m: usize) -> [LayerSpec; 3] {
    [layer(n, n, 5, 2), layer(n, n, 5, 2), layer(m, n, 3, 1)]
}

/// Everything a codec instance needs besides the geometry.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelWeights {
    pub(crate) kind: CodecKind,
    pub(crate) activation: Activation,
    pub(crate) n: usize,
    pub(crate) m: usize,
    pub(crate) bound: i32,
    pub(crate) analysis: Vec<ConvWeights>,
    pub(crate) analysis_norm: Vec<NormWeights>,
    pub(crate) synthesis: Vec<ConvWeights>,
    pub(crate) synthesis_norm: Vec<NormWeights>,
    pub(crate) hyper_analysis: Vec<ConvWeights>,
    pub(crate) hyper_synthesis: Vec<ConvWeights>,
    pub(crate) y_offsets: Vec<f32>,
    pub(crate) z_offsets: Vec<f32>,
    pub(crate) density: Vec<(f32, f32)>,
    pub(crate) scales: Option<ScaleTable>,
    digest: WeightsDigest,
}

impl ModelWeights {
    pub fn kind(&self) -> CodecKind {
        self.kind
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn channels(&self) -> (usize, usize) {
        (self.n, self.m)
    }

    pub fn bound(&self) -> i32 {
        self.bound
    }

    pub fn digest(&self) -> WeightsDigest {
        self.digest
    }

    pub fn y_offsets(&self) -> &[f32] {
        &self.y_offsets
    }

    pub fn z_offsets(&self) -> &[f32] {
        &self.z_offsets
    }

    /// Per-channel `(mean, scale)` of the factorized bottleneck.
    pub fn density(&self) -> &[(f32, f32)] {
        &self.density
    }

    pub fn scale_table(&self) -> Option<&ScaleTable> {
        self.scales.as_ref()
    }

    /// Whether these weights were built for `cfg`'s model dimensions.
    pub fn check_config(&self, cfg: &CodecConfig) -> Result<(), CodecError> {
        if (self.kind, self.activation, self.n, self.m, self.bound)
            != (cfg.kind, cfg.activation, cfg.n, cfg.m, cfg.bound)
        {
            return Err(CodecError::Config(format!(
                "weights are {}/{} N={} M={} L={}, config wants {}/{} N={} M={} L={}",
                self.kind,
                self.activation,
                self.n,
                self.m,
                self.bound,
                cfg.kind,
                cfg.activation,
                cfg.n,
                cfg.m,
                cfg.bound
            )));
        }
        Ok(())
    }

    fn density_channels(kind: CodecKind, n: usize, m: usize) -> usize {
        match kind {
            CodecKind::Factorized => m,
            CodecKind::Hyperprior => n,
        }
    }

    /// Deterministic stand-in parameters for `(cfg, seed)`.
    ///
    /// Conv weights and biases are uniform in `+-sqrt(1 / fan_in)`;
    /// normalization layers start at `beta = 1`, `gamma = 0.1` on the
    /// diagonal and `0.1 / N` elsewhere; the bottleneck density is a unit
    /// Gaussian per channel with zero offsets.
    pub fn generate(cfg: &CodecConfig, seed: u64) -> Result<Self, CodecError> {
        Self::generate_with_gain(cfg, seed, 1.0)
    }

    /// As [`generate`](Self::generate) with the conv weight bound scaled by
    /// `gain`. At gain 1 every latent of a `[0, 1]` image rounds to zero; a
    /// gain near 3 gives latents of a few units.
    pub fn generate_with_gain(cfg: &CodecConfig, seed: u64, gain: f32) -> Result<Self, CodecError> {
        cfg.validate_model()?;
        if !(gain.is_finite() && gain > 0.0) {
            return Err(CodecError::Config(format!(
                "init gain {gain} must be positive"
            )));
        }
        let (n, m) = (cfg.n, cfg.m);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut conv = |spec: &LayerSpec| -> Result<ConvWeights, CodecError> {
            let fan_in = spec.in_channels * spec.kernel * spec.kernel;
            let a = (1.0 / fan_in as f64).sqrt() as f32;
            let ga = a * gain;
            let count = spec.out_channels * fan_in;
            let w = (0..count).map(|_| rng.gen_range(-ga..=ga)).collect();
            let b = (0..spec.out_channels)
                .map(|_| rng.gen_range(-a..=a))
                .collect();
            Ok(ConvWeights::new(
                spec.out_channels,
                spec.in_channels,
                spec.kernel,
                spec.stride,
                w,
                b,
            )?)
        };
        let analysis = analysis_layers(n, m)
            .iter()
            .map(&mut conv)
            .collect::<Result<Vec<_>, _>>()?;
        let synthesis = synthesis_layers(n, m)
            .iter()
            .map(&mut conv)
            .collect::<Result<Vec<_>, _>>()?;
        let (hyper_analysis, hyper_synthesis) = match cfg.kind {
            CodecKind::Factorized => (Vec::new(), Vec::new()),
            CodecKind::Hyperprior => (
                hyper_analysis_layers(n, m)
                    .iter()
                    .map(&mut conv)
                    .collect::<Result<Vec<_>, _>>()?,
                hyper_synthesis_layers(n, m)
                    .iter()
                    .map(&mut conv)
                    .collect::<Result<Vec<_>, _>>()?,
            ),
        };
        let norm = || -> Result<NormWeights, CodecError> {
            let off = 0.1 / n as f32;
            let gamma = (0..n * n)
                .map(|i| if i / n == i % n { 0.1 } else { off })
                .collect();
            Ok(NormWeights::new(vec![1.0; n], gamma)?)
        };
        let analysis_norm = (0..3).map(|_| norm()).collect::<Result<Vec<_>, _>>()?;
        let synthesis_norm = (0..3).map(|_| norm()).collect::<Result<Vec<_>, _>>()?;
        let dc = Self::density_channels(cfg.kind, n, m);
        let (z_offsets, scales) = match cfg.kind {
            CodecKind::Factorized => (Vec::new(), None),
            CodecKind::Hyperprior => (vec![0.0; n], Some(ScaleTable::default_table())),
        };
        let mut w = ModelWeights {
            kind: cfg.kind,
            activation: cfg.activation,
            n,
            m,
            bound: cfg.bound,
            analysis,
            analysis_norm,
            synthesis,
            synthesis_norm,
            hyper_analysis,
            hyper_synthesis,
            y_offsets: vec![0.0; m],
            z_offsets,
            density: vec![(0.0, 1.0); dc],
            scales,
            digest: WeightsDigest([0; 32]),
        };
        w.digest = digest_of(&w.to_bytes());
        Ok(w)
    }

    /// Canonical file bytes.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(WEIGHTS_MAGIC);
        out.push(WEIGHTS_VERSION);
        out.push(self.kind.to_u8());
        out.push(self.activation.to_u8());
        out.extend_from_slice(&(self.n as u16).to_le_bytes());
        out.extend_from_slice(&(self.m as u16).to_le_bytes());
        out.extend_from_slice(&(self.bound as u16).to_le_bytes());
        let block = |out: &mut Vec<u8>, tag: u8, vals: &mut dyn Iterator<Item = f32>, n: usize| {
            out.push(tag);
            out.extend_from_slice(&(n as u32).to_le_bytes());
            for v in vals {
                out.extend_from_slice(&v.to_le_bytes());
            }
        };
        let conv_blocks = |out: &mut Vec<u8>, layers: &[ConvWeights], norms: &[NormWeights]| {
            for (i, c) in layers.iter().enumerate() {
                block(
                    out,
                    TAG_CONV_WEIGHT,
                    &mut c.weights().iter().copied(),
                    c.weights().len(),
                );
                block(
                    out,
                    TAG_CONV_BIAS,
                    &mut c.bias().iter().copied(),
                    c.bias().len(),
                );
                if let Some(nw) = norms.get(i) {
                    block(
                        out,
                        TAG_NORM_BETA,
                        &mut nw.beta().iter().copied(),
                        nw.beta().len(),
                    );
                    block(
                        out,
                        TAG_NORM_GAMMA,
                        &mut nw.gamma().iter().copied(),
                        nw.gamma().len(),
                    );
                }
            }
        };
        conv_blocks(&mut out, &self.analysis, &self.analysis_norm);
        conv_blocks(&mut out, &self.synthesis, &self.synthesis_norm);
        if self.kind == CodecKind::Hyperprior {
            conv_blocks(&mut out, &self.hyper_analysis, &[]);
            conv_blocks(&mut out, &self.hyper_synthesis, &[]);
        }
        block(
            &mut out,
            TAG_Y_OFFSETS,
            &mut self.y_offsets.iter().copied(),
            self.y_offsets.len(),
        );
        if self.kind == CodecKind::Hyperprior {
            block(
                &mut out,
                TAG_Z_OFFSETS,
                &mut self.z_offsets.iter().copied(),
                self.z_offsets.len(),
            );
        }
        let d = self.density.len();
        block(
            &mut out,
            TAG_DENSITY_MEANS,
            &mut self.density.iter().map(|p| p.0),
            d,
        );
        block(
            &mut out,
            TAG_DENSITY_SCALES,
            &mut self.density.iter().map(|p| p.1),
            d,
        );
        if let Some(t) = &self.scales {
            block(
                &mut out,
                TAG_SCALE_TABLE,
                &mut t.values().iter().copied(),
                t.len(),
            );
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CodecError> {
        let mut r = Reader::new(bytes);
        r.magic(WEIGHTS_MAGIC)?;
        let version = r.u8()?;
        if version != WEIGHTS_VERSION {
            return Err(FormatError::UnsupportedVersion(version).into());
        }
        let kind_raw = r.u8()?;
        let kind = CodecKind::from_u8(kind_raw).ok_or(FormatError::BadField {
            field: "codec kind",
            value: kind_raw as u64,
        })?;
        let act_raw = r.u8()?;
        let activation = Activation::from_u8(act_raw).ok_or(FormatError::BadField {
            field: "activation",
            value: act_raw as u64,
        })?;
        let n = r.u16()? as usize;
        let m = r.u16()? as usize;
        let bound = r.u16()? as i32;
        let probe = CodecConfig {
            kind,
            activation,
            n,
            m,
            height: 0,
            width: 0,
            bound,
        };
        probe
            .validate_model()
            .map_err(|e| FormatError::ShapeChain(e.to_string()))?;

        let mut block = |tag: u8, count: usize, what: &str| -> Result<Vec<f32>, CodecError> {
            let t = r.u8()?;
            let c = r.u32()? as usize;
            if t != tag || c != count {
                return Err(FormatError::ShapeChain(format!(
                    "{what}: expected block tag {tag} with {count} values, found tag {t} with {c}"
                ))
                .into());
            }
            let raw = r.take(
                c.checked_mul(4)
                    .ok_or(FormatError::LengthOverflow(c as u64))?,
            )?;
            Ok(raw
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                .collect())
        };
        let mut convs = |specs: &[LayerSpec], with_norm: usize, what: &str| {
            let mut layers = Vec::new();
            let mut norms = Vec::new();
            for (i, s) in specs.iter().enumerate() {
                let wts = block(
                    TAG_CONV_WEIGHT,
                    s.out_channels * s.in_channels * s.kernel * s.kernel,
                    what,
                )?;
                let bias = block(TAG_CONV_BIAS, s.out_channels, what)?;
                layers.push(ConvWeights::new(
                    s.out_channels,
                    s.in_channels,
                    s.kernel,
                    s.stride,
                    wts,
                    bias,
                )?);
                if i < with_norm {
                    let c = s.out_channels;
                    let beta = block(TAG_NORM_BETA, c, what)?;
                    let gamma = block(TAG_NORM_GAMMA, c * c, what)?;
                    norms.push(NormWeights::new(beta, gamma)?);
                }
            }
            Ok::<_, CodecError>((layers, norms))
        };
        let (analysis, analysis_norm) = convs(&analysis_layers(n, m), 3, "analysis")?;
        let (synthesis, synthesis_norm) = convs(&synthesis_layers(n, m), 3, "synthesis")?;
        let (hyper_analysis, hyper_synthesis) = if kind == CodecKind::Hyperprior {
            (
                convs(&hyper_analysis_layers(n, m), 0, "hyper analysis")?.0,
                convs(&hyper_synthesis_layers(n, m), 0, "hyper synthesis")?.0,
            )
        } else {
            (Vec::new(), Vec::new())
        };
        let y_offsets = block(TAG_Y_OFFSETS, m, "y offsets")?;
        let z_offsets = if kind == CodecKind::Hyperprior {
            block(TAG_Z_OFFSETS, n, "z offsets")?
        } else {
            Vec::new()
        };
        let dc = Self::density_channels(kind, n, m);
        let means = block(TAG_DENSITY_MEANS, dc, "density means")?;
        let scales_c = block(TAG_DENSITY_SCALES, dc, "density scales")?;
        let scales = if kind == CodecKind::Hyperprior {
            let t = r.u8()?;
            let c = r.u32()? as usize;
            if t != TAG_SCALE_TABLE || c == 0 {
                return Err(FormatError::ShapeChain("missing scale table".into()).into());
            }
            let raw = r.take(
                c.checked_mul(4)
                    .ok_or(FormatError::LengthOverflow(c as u64))?,
            )?;
            let vals = raw
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                .collect();
            Some(ScaleTable::new(vals)?)
        } else {
            None
        };
        r.finish()?;
        if y_offsets
            .iter()
            .chain(&z_offsets)
            .chain(&means)
            .any(|v| !v.is_finite())
            || scales_c.iter().any(|s| !(s.is_finite() && *s > 0.0))
        {
            return Err(
                FormatError::ShapeChain("invalid offsets or density parameters".into()).into(),
            );
        }
        Ok(ModelWeights {
            kind,
            activation,
            n,
            m,
            bound,
            analysis,
            analysis_norm,
            synthesis,
            synthesis_norm,
            hyper_analysis,
            hyper_synthesis,
            y_offsets,
            z_offsets,
            density: means.into_iter().zip(scales_c).collect(),
            scales,
            digest: digest_of(bytes),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CodecError> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CodecError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

pub fn digest_of(bytes: &[u8]) -> WeightsDigest {
    WeightsDigest(Sha256::digest(bytes).into())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(kind: CodecKind) -> CodecConfig {
        CodecConfig::new(kind, Activation::OneDn, 64, 64).with_channels(6, 10)
    }

    #[test]
    fn generation_is_deterministic() {
        for kind in [CodecKind::Factorized, CodecKind::Hyperprior] {
            let a = ModelWeights::generate(&cfg(kind), 42).unwrap();
            let b = ModelWeights::generate(&cfg(kind), 42).unwrap();
            let c = ModelWeights::generate(&cfg(kind), 43).unwrap();
            assert_eq!(a.digest(), b.digest());
            assert_ne!(a.digest(), c.digest());
        }
    }

    #[test]
    fn bytes_round_trip() {
        for kind in [CodecKind::Factorized, CodecKind::Hyperprior] {
            let w = ModelWeights::generate(&cfg(kind), 7).unwrap();
            let bytes = w.to_bytes();
            assert_eq!(&bytes[..4], b"LICW");
            let back = ModelWeights::from_bytes(&bytes).unwrap();
            assert_eq!(back, w);
            assert_eq!(back.to_bytes(), bytes);
        }
    }

    #[test]
    fn save_and_load() {
        let dir = std::env::temp_dir().join(format!("licw-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("w.licw");
        let w = ModelWeights::generate(&cfg(CodecKind::Hyperprior), 1).unwrap();
        w.save(&path).unwrap();
        let back = ModelWeights::load(&path).unwrap();
        assert_eq!(back.digest(), w.digest());
        assert_eq!(digest_of(&std::fs::read(&path).unwrap()), w.digest());
        std::fs::remove_dir_all(dir).ok();
    }

    #[test]
    fn init_follows_recipe() {
        let w = ModelWeights::generate(&cfg(CodecKind::Factorized), 3).unwrap();
        let first = &w.analysis[0];
        let a = (1.0f64 / 75.0).sqrt() as f32;
        assert!(first.weights().iter().all(|v| v.abs() <= a));
        let nw = &w.analysis_norm[0];
        assert!(nw.beta().iter().all(|b| *b == 1.0));
        assert_eq!(nw.gamma()[0], 0.1);
        assert_eq!(nw.gamma()[1], 0.1 / 6.0);
        assert!(w.density().iter().all(|d| *d == (0.0, 1.0)));
        assert_eq!(w.density().len(), 10);
    }

    #[test]
    fn truncation_and_corruption_detected() {
        let bytes = ModelWeights::generate(&cfg(CodecKind::Factorized), 3)
            .unwrap()
            .to_bytes();
        for cut in [0, 3, 11, 12, 40, bytes.len() - 1] {
            assert!(
                ModelWeights::from_bytes(&bytes[..cut]).is_err(),
                "cut {cut}"
            );
        }
        let mut bad = bytes.clone();
        bad[7] = 5; // N low byte changes the expected block sizes
        assert!(matches!(
            ModelWeights::from_bytes(&bad),
            Err(CodecError::Format(FormatError::ShapeChain(_)))
        ));
        let mut extra = bytes;
        extra.push(0);
        assert!(ModelWeights::from_bytes(&extra).is_err());
    }

    #[test]
    fn rejects_zero_channels() {
        let c = cfg(CodecKind::Factorized).with_channels(0, 4);
        assert!(ModelWeights::generate(&c, 1).is_err());
    }
}
