#![allow(dead_code)]

use std::sync::Arc;

use lic_core::codec::{Activation, Codec, CodecConfig, CodecKind, ModelWeights};
use lic_core::numerics::{Exec, Tensor};
use lic_core::pipeline::BufferPool;

/// Init gain that gives non-trivial latents with the generated weights.
pub const GAIN: f32 = 3.0;

pub fn small_config(kind: CodecKind, act: Activation, h: usize, w: usize) -> CodecConfig {
    CodecConfig::new(kind, act, h, w).with_channels(8, 12)
}

pub fn codec_with(cfg: CodecConfig, seed: u64, pool: Arc<BufferPool>) -> Codec {
    let w = ModelWeights::generate_with_gain(&cfg, seed, GAIN).unwrap();
    Codec::new(cfg, Arc::new(w), Exec::default(), pool).unwrap()
}

pub fn small_codec(kind: CodecKind, act: Activation) -> Codec {
    codec_with(
        small_config(kind, act, 64, 64),
        42,
        Arc::new(BufferPool::new()),
    )
}

pub const ALL_MODELS: [(CodecKind, Activation); 4] = [
    (CodecKind::Factorized, Activation::Gdn),
    (CodecKind::Factorized, Activation::OneDn),
    (CodecKind::Hyperprior, Activation::Gdn),
    (CodecKind::Hyperprior, Activation::OneDn),
];

pub fn assert_bits(a: &Tensor, b: &Tensor, what: &str) {
    assert!(a.bit_eq(b), "{what} differs");
}
