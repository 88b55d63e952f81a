use std::sync::Arc;

use super::{Activation, CodecConfig, CodecError, CodecKind, EncodedFrame, ModelWeights};
use crate::entropy::{
    build_factorized_cdf, build_gaussian_conditional_cdf, channel_indexes, dequantize,
    quantize_with, range_decode, range_encode, scale_to_index, CdfTable, SymbolPlane, SCALE_MIN,
};
use crate::numerics::{relu_inplace, ConvWeights, Exec, Kernels, NormWeights, Padding, Tensor};
use crate::pipeline::BufferPool;

/// Output of the compute-heavy half of an encode.
#[derive(Debug, Clone)]
pub struct Analysis {
    pub y: Tensor,
    pub hyper: Option<HyperAnalysis>,
}

#[derive(Debug, Clone)]
pub struct HyperAnalysis {
    pub z_hat: Tensor,
    pub z_plane: SymbolPlane,
    /// Predicted scales, already floored at the smallest table entry.
    pub sigma: Tensor,
}

/// Output of the coding half of an encode.
#[derive(Debug, Clone)]
pub struct Coded {
    pub frame: EncodedFrame,
    /// The encoder's reconstruction of the main latent.
    pub y_hat: Tensor,
    pub z_hat: Option<Tensor>,
    /// Symbols clamped to the support bound (main and side latents).
    pub saturated: usize,
}

/// A codec instance bound to one configuration and one set of weights.
///
/// Every method takes `&self` and is safe to call concurrently on different
/// frames. Intermediate tensors are drawn from and returned to the shared
/// buffer pool.
pub struct Codec {
    cfg: CodecConfig,
    weights: Arc<ModelWeights>,
    exec: Exec,
    pool: Arc<BufferPool>,
    /// Factorized: one row per `y` channel. Hyperprior: one row per `z` channel.
    density_cdf: CdfTable,
    /// Hyperprior only: one row per scale-table entry.
    scale_cdf: Option<CdfTable>,
}

impl Codec {
    pub fn new(
        cfg: CodecConfig,
        weights: Arc<ModelWeights>,
        exec: Exec,
        pool: Arc<BufferPool>,
    ) -> Result<Self, CodecError> {
        cfg.validate()?;
        weights.check_config(&cfg)?;
        let density_cdf = build_factorized_cdf(weights.density(), cfg.bound)?;
        let scale_cdf = match weights.scale_table() {
            Some(t) => Some(build_gaussian_conditional_cdf(t, cfg.bound)?),
            None => None,
        };
        Ok(Codec {
            cfg,
            weights,
            exec,
            pool,
            density_cdf,
            scale_cdf,
        })
    }

    pub fn config(&self) -> &CodecConfig {
        &self.cfg
    }

    pub fn weights(&self) -> &Arc<ModelWeights> {
        &self.weights
    }

    pub fn pool(&self) -> &Arc<BufferPool> {
        &self.pool
    }

    fn kernels(&self) -> Kernels<'_> {
        Kernels::new(self.exec, &*self.pool)
    }

    /// Returns a tensor's storage to the pool.
    pub fn recycle(&self, t: Tensor) {
        self.kernels().recycle(t);
    }

    fn norm(&self, x: &Tensor, nw: &NormWeights, inverse: bool) -> Result<Tensor, CodecError> {
        let k = self.kernels();
        Ok(match self.weights.activation() {
            Activation::Gdn => k.gdn(x, nw, inverse)?,
            Activation::OneDn => k.onedn(x, nw, inverse)?,
        })
    }

    fn conv(&self, x: &Tensor, w: &ConvWeights) -> Result<Tensor, CodecError> {
        Ok(self.kernels().conv2d(x, w, w.kernel() / 2)?)
    }

    /// Transposed conv that multiplies the spatial size by the stride.
    fn deconv(&self, x: &Tensor, w: &ConvWeights) -> Result<Tensor, CodecError> {
        let pad = Padding::with_output(w.kernel() / 2, w.stride() - 1);
        Ok(self.kernels().conv2d_transpose(x, w, pad)?)
    }

    fn check_shape(t: &Tensor, expected: (usize, usize, usize)) -> Result<(), CodecError> {
        if t.shape() != expected {
            return Err(CodecError::Geometry {
                expected,
                got: t.shape(),
            });
        }
        Ok(())
    }

    fn check_frame(&self, f: &EncodedFrame) -> Result<(), CodecError> {
        if f.kind != self.cfg.kind {
            return Err(CodecError::KindMismatch {
                expected: self.cfg.kind,
                found: f.kind,
            });
        }
        if let Some(d) = f.weights_digest {
            if d != self.weights.digest() {
                return Err(CodecError::DigestMismatch {
                    frame: d,
                    decoder: self.weights.digest(),
                });
            }
        }
        let got = (3, f.height as usize, f.width as usize);
        if got != self.cfg.image_shape() {
            return Err(CodecError::Geometry {
                expected: self.cfg.image_shape(),
                got,
            });
        }
        if (f.kind == CodecKind::Hyperprior) != f.z_string.is_some() {
            return Err(CodecError::Config(
                "z string presence does not match codec kind".into(),
            ));
        }
        Ok(())
    }

    /// Analysis transform `g_a`.
    pub fn analysis_transform(&self, x: &Tensor) -> Result<Tensor, CodecError> {
        let w = &self.weights;
        let mut cur = self.conv(x, &w.analysis[0])?;
        for i in 0..3 {
            let act = self.norm(&cur, &w.analysis_norm[i], false)?;
            self.recycle(cur);
            cur = self.conv(&act, &w.analysis[i + 1])?;
            self.recycle(act);
        }
        Ok(cur)
    }

    /// Synthesis transform `g_s`, clamped to `[0, 1]`.
    pub fn synthesis_transform(&self, y_hat: &Tensor) -> Result<Tensor, CodecError> {
        Self::check_shape(y_hat, self.cfg.latent_shape())?;
        let w = &self.weights;
        let mut cur = self.deconv(y_hat, &w.synthesis[0])?;
        for i in 0..3 {
            let act = self.norm(&cur, &w.synthesis_norm[i], true)?;
            self.recycle(cur);
            cur = self.deconv(&act, &w.synthesis[i + 1])?;
            self.recycle(act);
        }
        for v in cur.data_mut() {
            *v = v.clamp(0.0, 1.0);
        }
        Ok(cur)
    }

    /// Hyper-analysis `h_a`, applied to `|y|`.
    pub fn hyper_analysis_transform(&self, y: &Tensor) -> Result<Tensor, CodecError> {
        let w = &self.weights;
        let mut abs = Tensor::new(
            y.channels(),
            y.height(),
            y.width(),
            self.pool.acquire(y.data().len()),
        )?;
        for (d, v) in abs.data_mut().iter_mut().zip(y.data()) {
            *d = v.abs();
        }
        let mut cur = abs;
        for (i, layer) in w.hyper_analysis.iter().enumerate() {
            let mut next = self.conv(&cur, layer)?;
            self.recycle(cur);
            if i + 1 < w.hyper_analysis.len() {
                relu_inplace(&mut next);
            }
            cur = next;
        }
        Ok(cur)
    }

    /// Hyper-synthesis `h_s`, floored at the smallest scale.
    pub fn predict_scales(&self, z_hat: &Tensor) -> Result<Tensor, CodecError> {
        self.require_hyper()?;
        Self::check_shape(z_hat, self.cfg.hyper_latent_shape())?;
        let w = &self.weights;
        let mut cur: Option<Tensor> = None;
        for (i, layer) in w.hyper_synthesis.iter().enumerate() {
            let mut next = self.deconv(cur.as_ref().unwrap_or(z_hat), layer)?;
            if let Some(prev) = cur.take() {
                self.recycle(prev);
            }
            if i + 1 < w.hyper_synthesis.len() {
                relu_inplace(&mut next);
            }
            cur = Some(next);
        }
        let mut sigma = cur.expect("h_s has layers");
        for v in sigma.data_mut() {
            *v = v.max(SCALE_MIN);
        }
        Ok(sigma)
    }

    fn require_hyper(&self) -> Result<(), CodecError> {
        if self.cfg.kind != CodecKind::Hyperprior {
            return Err(CodecError::KindMismatch {
                expected: CodecKind::Hyperprior,
                found: self.cfg.kind,
            });
        }
        Ok(())
    }

    /// Encoder stage one: `g_a`, and for the hyperprior `h_a`, side-latent
    /// quantization and `h_s`.
    pub fn analyze(&self, x: &Tensor) -> Result<Analysis, CodecError> {
        Self::check_shape(x, self.cfg.image_shape())?;
        if x.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(CodecError::InputRange);
        }
        let y = self.analysis_transform(x)?;
        let hyper = match self.cfg.kind {
            CodecKind::Factorized => None,
            CodecKind::Hyperprior => {
                let z = self.hyper_analysis_transform(&y)?;
                let q = quantize_with(&z, self.weights.z_offsets(), self.cfg.bound, &*self.pool)?;
                self.recycle(z);
                let sigma = self.predict_scales(&q.y_hat)?;
                Some(HyperAnalysis {
                    z_hat: q.y_hat,
                    z_plane: q.plane,
                    sigma,
                })
            }
        };
        Ok(Analysis { y, hyper })
    }

    /// Encoder stage two: quantize `y` and range-code both latents.
    pub fn code(&self, a: Analysis, sequence: u64) -> Result<Coded, CodecError> {
        Self::check_shape(&a.y, self.cfg.latent_shape())?;
        let w = &self.weights;
        let (y_hat, y_string, z_hat, z_string, saturated) = match a.hyper {
            None => {
                let q = quantize_with(&a.y, w.y_offsets(), self.cfg.bound, &*self.pool)?;
                let y_string = range_encode(&q.plane, &self.density_cdf)?;
                (q.y_hat, y_string, None, None, q.saturated)
            }
            Some(h) => {
                // Main latent is coded with zero mean, conditioned on scale only.
                let zeros = vec![0.0; self.cfg.m];
                let mut q = quantize_with(&a.y, &zeros, self.cfg.bound, &*self.pool)?;
                q.plane.indexes = self.scale_indexes(&h.sigma)?;
                let y_string = range_encode(&q.plane, self.scale_cdf()?)?;
                let z_string = range_encode(&h.z_plane, &self.density_cdf)?;
                let z_sat = h
                    .z_plane
                    .symbols
                    .iter()
                    .filter(|s| s.abs() == self.cfg.bound)
                    .count();
                self.recycle(h.sigma);
                (
                    q.y_hat,
                    y_string,
                    Some(h.z_hat),
                    Some(z_string),
                    q.saturated + z_sat,
                )
            }
        };
        self.recycle(a.y);
        Ok(Coded {
            frame: EncodedFrame {
                sequence,
                kind: self.cfg.kind,
                height: self.cfg.height as u16,
                width: self.cfg.width as u16,
                y_string,
                z_string,
                weights_digest: Some(w.digest()),
            },
            y_hat,
            z_hat,
            saturated,
        })
    }

    fn scale_cdf(&self) -> Result<&CdfTable, CodecError> {
        self.scale_cdf.as_ref().ok_or(CodecError::KindMismatch {
            expected: CodecKind::Hyperprior,
            found: self.cfg.kind,
        })
    }

    fn scale_indexes(&self, sigma: &Tensor) -> Result<Vec<u32>, CodecError> {
        Self::check_shape(sigma, self.cfg.latent_shape())?;
        let table = self.weights.scale_table().ok_or(CodecError::KindMismatch {
            expected: CodecKind::Hyperprior,
            found: self.cfg.kind,
        })?;
        Ok(sigma
            .data()
            .iter()
            .map(|s| scale_to_index(*s, table) as u32)
            .collect())
    }

    /// Full encode: `analyze` then `code`.
    pub fn encode(&self, x: &Tensor, sequence: u64) -> Result<Coded, CodecError> {
        let a = self.analyze(x)?;
        self.code(a, sequence)
    }

    /// Hyperprior decoder stage one: recover `z_hat` from the side string.
    pub fn decode_side(&self, f: &EncodedFrame) -> Result<Tensor, CodecError> {
        self.require_hyper()?;
        self.check_frame(f)?;
        let (c, h, w) = self.cfg.hyper_latent_shape();
        let z = f.z_string.as_deref().unwrap_or(&[]);
        let symbols = range_decode(z, &channel_indexes(c, h * w), &self.density_cdf)
            .map_err(|source| CodecError::Stream { part: "z", source })?;
        Ok(dequantize(
            &symbols,
            self.weights.z_offsets(),
            (c, h, w),
            &*self.pool,
        )?)
    }

    /// Recover `y_hat`. The hyperprior needs the scales predicted from `z_hat`.
    pub fn decode_latent(
        &self,
        f: &EncodedFrame,
        sigma: Option<&Tensor>,
    ) -> Result<Tensor, CodecError> {
        self.check_frame(f)?;
        let (c, h, w) = self.cfg.latent_shape();
        match (self.cfg.kind, sigma) {
            (CodecKind::Factorized, _) => {
                let symbols =
                    range_decode(&f.y_string, &channel_indexes(c, h * w), &self.density_cdf)
                        .map_err(|source| CodecError::Stream { part: "y", source })?;
                Ok(dequantize(
                    &symbols,
                    self.weights.y_offsets(),
                    (c, h, w),
                    &*self.pool,
                )?)
            }
            (CodecKind::Hyperprior, Some(sigma)) => {
                let indexes = self.scale_indexes(sigma)?;
                let symbols = range_decode(&f.y_string, &indexes, self.scale_cdf()?)
                    .map_err(|source| CodecError::Stream { part: "y", source })?;
                let zeros = vec![0.0; c];
                Ok(dequantize(&symbols, &zeros, (c, h, w), &*self.pool)?)
            }
            (CodecKind::Hyperprior, None) => Err(CodecError::Config(
                "hyperprior latent decoding needs predicted scales".into(),
            )),
        }
    }

    /// Full decode, returning the reconstruction and the recovered `y_hat`.
    pub fn decode_with_latent(&self, f: &EncodedFrame) -> Result<(Tensor, Tensor), CodecError> {
        let y_hat = match self.cfg.kind {
            CodecKind::Factorized => self.decode_latent(f, None)?,
            CodecKind::Hyperprior => {
                let z_hat = self.decode_side(f)?;
                let sigma = self.predict_scales(&z_hat)?;
                self.recycle(z_hat);
                let y_hat = self.decode_latent(f, Some(&sigma))?;
                self.recycle(sigma);
                y_hat
            }
        };
        let x_hat = self.synthesis_transform(&y_hat)?;
        Ok((x_hat, y_hat))
    }

    pub fn decode(&self, f: &EncodedFrame) -> Result<Tensor, CodecError> {
        let (x_hat, y_hat) = self.decode_with_latent(f)?;
        self.recycle(y_hat);
        Ok(x_hat)
    }
}
