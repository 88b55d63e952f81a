//! Codec pipelines against the one-frame-at-a-time reference.

use std::sync::Arc;
use std::time::Duration;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use lic_core::codec::{Activation, Codec, CodecConfig, CodecKind, EncodedFrame, ModelWeights};
use lic_core::image::random_frame;
use lic_core::numerics::{Exec, Tensor};
use lic_core::pipeline::{
    decoder_stages, encoder_stages, run_benchmark, run_serial_reference, BufferPool, CodecPayload,
    Limit, Pipeline, StageLayout, StageSpec,
};

const CLIP: usize = 4;

fn measure(
    stages: &dyn Fn() -> Vec<StageSpec<CodecPayload>>,
    source: &(dyn Fn(u64) -> CodecPayload + Sync),
    codec: &Codec,
    frames: u64,
    pipelined: bool,
) -> Duration {
    let sink = |d: lic_core::pipeline::Completed<CodecPayload>| d.result.unwrap().release(codec);
    let limit = Limit::Frames(frames as usize);
    let m = if pipelined {
        let p = Pipeline::build(stages())
            .unwrap()
            .with_pool(codec.pool().clone());
        let m = run_benchmark(&p, source, limit, 0, sink);
        p.shutdown(true);
        m
    } else {
        run_serial_reference(&stages(), source, limit, 0, Some(codec.pool()), sink)
    };
    m.wall_time
}

fn codecs(c: &mut Criterion) {
    for kind in [CodecKind::Factorized, CodecKind::Hyperprior] {
        let cfg = CodecConfig::new(kind, Activation::Gdn, 128, 128).with_channels(32, 48);
        let w = Arc::new(ModelWeights::generate_with_gain(&cfg, 42, 3.0).unwrap());
        let codec =
            Arc::new(Codec::new(cfg, w, Exec::default(), Arc::new(BufferPool::new())).unwrap());
        let images: Vec<Tensor> = (0..CLIP as u64)
            .map(|i| random_frame(i, 128, 128))
            .collect();
        let frames: Vec<EncodedFrame> = images
            .iter()
            .map(|x| codec.encode(x, 0).unwrap().frame)
            .collect();
        let layout = StageLayout::default();

        let mut g = c.benchmark_group(format!("{kind}_128x128"));
        g.sample_size(10);
        g.throughput(Throughput::Elements(1));
        let enc = || encoder_stages(codec.clone(), layout);
        let enc_src = |i: u64| CodecPayload::Image(images[i as usize % CLIP].clone());
        let dec = || decoder_stages(codec.clone(), layout);
        let dec_src = |i: u64| CodecPayload::Frame(frames[i as usize % CLIP].clone());
        for (mode, pipelined) in [("pipelined", true), ("serial", false)] {
            g.bench_function(BenchmarkId::new("encoder", mode), |b| {
                b.iter_custom(|n| measure(&enc, &enc_src, &codec, n, pipelined))
            });
            g.bench_function(BenchmarkId::new("decoder", mode), |b| {
                b.iter_custom(|n| measure(&dec, &dec_src, &codec, n, pipelined))
            });
        }
        g.finish();
    }
}

criterion_group!(benches, codecs);
criterion_main!(benches);
