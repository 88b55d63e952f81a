//! Stage decompositions of the codecs.

use std::sync::Arc;

use super::{Executor, StageSpec};
use crate::codec::{Analysis, Codec, CodecKind, Coded, EncodedFrame};
use crate::numerics::Tensor;

/// Payload flowing through codec pipelines. Each stage consumes one variant
/// and produces the next.
#[derive(Debug)]
pub enum CodecPayload {
    Image(Tensor),
    Analysis(Analysis),
    Coded(Coded),
    Frame(EncodedFrame),
    SideLatent {
        frame: EncodedFrame,
        z_hat: Tensor,
    },
    Scales {
        frame: EncodedFrame,
        sigma: Tensor,
    },
    Latent {
        frame: EncodedFrame,
        y_hat: Tensor,
    },
    Decoded {
        x_hat: Tensor,
        y_hat: Tensor,
        sequence: u64,
    },
}

impl CodecPayload {
    fn name(&self) -> &'static str {
        match self {
            CodecPayload::Image(_) => "image",
            CodecPayload::Analysis(_) => "analysis",
            CodecPayload::Coded(_) => "coded",
            CodecPayload::Frame(_) => "frame",
            CodecPayload::SideLatent { .. } => "side latent",
            CodecPayload::Scales { .. } => "scales",
            CodecPayload::Latent { .. } => "latent",
            CodecPayload::Decoded { .. } => "decoded",
        }
    }

    pub fn into_coded(self) -> Option<Coded> {
        match self {
            CodecPayload::Coded(c) => Some(c),
            _ => None,
        }
    }

    /// `(frame sequence, x_hat, y_hat)`.
    pub fn into_decoded(self) -> Option<(u64, Tensor, Tensor)> {
        match self {
            CodecPayload::Decoded {
                x_hat,
                y_hat,
                sequence,
            } => Some((sequence, x_hat, y_hat)),
            _ => None,
        }
    }
}

impl CodecPayload {
    /// Returns every tensor held by the payload to the codec's pool.
    pub fn release(self, codec: &Codec) {
        match self {
            CodecPayload::Image(t) => codec.recycle(t),
            CodecPayload::Analysis(a) => {
                codec.recycle(a.y);
                if let Some(h) = a.hyper {
                    codec.recycle(h.z_hat);
                    codec.recycle(h.sigma);
                }
            }
            CodecPayload::Coded(c) => {
                codec.recycle(c.y_hat);
                if let Some(z) = c.z_hat {
                    codec.recycle(z);
                }
            }
            CodecPayload::Frame(_) => {}
            CodecPayload::SideLatent { z_hat: t, .. }
            | CodecPayload::Scales { sigma: t, .. }
            | CodecPayload::Latent { y_hat: t, .. } => codec.recycle(t),
            CodecPayload::Decoded { x_hat, y_hat, .. } => {
                codec.recycle(x_hat);
                codec.recycle(y_hat);
            }
        }
    }
}

fn unexpected(stage: &str, p: &CodecPayload) -> super::StageError {
    format!("stage '{stage}' cannot accept a {} payload", p.name()).into()
}

/// Worker counts for the pooled (CPU-class) codec stages.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StageLayout {
    pub entropy_workers: usize,
    pub queue_capacity: usize,
}

impl Default for StageLayout {
    fn default() -> Self {
        StageLayout {
            entropy_workers: 3,
            queue_capacity: super::DEFAULT_QUEUE_CAPACITY,
        }
    }
}

/// `[Serialized(transform), Pool(k)(entropy)]`: analysis (plus the
/// hyperprior's side path) then quantization and range coding.
pub fn encoder_stages(codec: Arc<Codec>, layout: StageLayout) -> Vec<StageSpec<CodecPayload>> {
    let c1 = codec.clone();
    let transform = StageSpec::serialized("transform", move |_, p| match p {
        CodecPayload::Image(x) => {
            let a = c1.analyze(&x)?;
            c1.recycle(x);
            Ok(CodecPayload::Analysis(a))
        }
        other => Err(unexpected("transform", &other)),
    });
    let c2 = codec;
    let entropy = StageSpec::pool("entropy", layout.entropy_workers, move |seq, p| match p {
        CodecPayload::Analysis(a) => Ok(CodecPayload::Coded(c2.code(a, seq)?)),
        other => Err(unexpected("entropy", &other)),
    });
    with_capacity(vec![transform, entropy], layout)
}

/// Factorized: `[Pool(k)(entropy), Serialized(synthesis)]`.
/// Hyperprior: `[Pool(k)(cpu1), Serialized(gpu1), Pool(k)(cpu2), Serialized(gpu2)]`.
pub fn decoder_stages(codec: Arc<Codec>, layout: StageLayout) -> Vec<StageSpec<CodecPayload>> {
    let k = layout.entropy_workers;
    let synth = {
        let c = codec.clone();
        move |_: u64, p: CodecPayload| match p {
            CodecPayload::Latent { frame, y_hat } => {
                let x_hat = c.synthesis_transform(&y_hat)?;
                Ok(CodecPayload::Decoded {
                    x_hat,
                    y_hat,
                    sequence: frame.sequence,
                })
            }
            other => Err(unexpected("synthesis", &other)),
        }
    };
    let stages = match codec.config().kind {
        CodecKind::Factorized => {
            let c = codec.clone();
            vec![
                StageSpec::pool("entropy", k, move |_, p| match p {
                    CodecPayload::Frame(frame) => {
                        let y_hat = c.decode_latent(&frame, None)?;
                        Ok(CodecPayload::Latent { frame, y_hat })
                    }
                    other => Err(unexpected("entropy", &other)),
                }),
                StageSpec::serialized("synthesis", synth),
            ]
        }
        CodecKind::Hyperprior => {
            let c1 = codec.clone();
            let c2 = codec.clone();
            let c3 = codec.clone();
            vec![
                StageSpec::pool("cpu1", k, move |_, p| match p {
                    CodecPayload::Frame(frame) => {
                        let z_hat = c1.decode_side(&frame)?;
                        Ok(CodecPayload::SideLatent { frame, z_hat })
                    }
                    other => Err(unexpected("cpu1", &other)),
                }),
                StageSpec::serialized("gpu1", move |_, p| match p {
                    CodecPayload::SideLatent { frame, z_hat } => {
                        let sigma = c2.predict_scales(&z_hat)?;
                        c2.recycle(z_hat);
                        Ok(CodecPayload::Scales { frame, sigma })
                    }
                    other => Err(unexpected("gpu1", &other)),
                }),
                StageSpec::pool("cpu2", k, move |_, p| match p {
                    CodecPayload::Scales { frame, sigma } => {
                        let y_hat = c3.decode_latent(&frame, Some(&sigma))?;
                        c3.recycle(sigma);
                        Ok(CodecPayload::Latent { frame, y_hat })
                    }
                    other => Err(unexpected("cpu2", &other)),
                }),
                StageSpec::serialized("gpu2", synth),
            ]
        }
    };
    with_capacity(stages, layout)
}

fn with_capacity(
    stages: Vec<StageSpec<CodecPayload>>,
    layout: StageLayout,
) -> Vec<StageSpec<CodecPayload>> {
    stages
        .into_iter()
        .map(|s| s.with_capacity(layout.queue_capacity))
        .collect()
}

/// Executor shapes of the stage lists, for display.
pub fn describe(stages: &[StageSpec<CodecPayload>]) -> String {
    stages
        .iter()
        .map(|s| match s.executor {
            Executor::Serialized => format!("{}[serialized]", s.name),
            Executor::Pool(k) => format!("{}[pool({k})]", s.name),
        })
        .collect::<Vec<_>>()
        .join(" -> ")
}
