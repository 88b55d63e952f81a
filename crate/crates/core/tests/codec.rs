mod common;

use std::sync::Arc;

use common::*;
use lic_core::codec::{Activation, Codec, CodecError, CodecKind, EncodedFrame, ModelWeights};
use lic_core::entropy::EntropyError;
use lic_core::image::random_frame;
use lic_core::numerics::{Exec, Tensor};
use lic_core::pipeline::{
    decoder_stages, encoder_stages, run_serial_reference, BufferPool, CodecPayload, Limit,
    Pipeline, StageLayout,
};

#[test]
fn decoder_recovers_encoder_latents() {
    for (kind, act) in ALL_MODELS {
        let codec = small_codec(kind, act);
        for seed in 0..5 {
            let x = random_frame(seed, 64, 64);
            let coded = codec.encode(&x, seed).unwrap();
            let (x_hat, y_hat) = codec.decode_with_latent(&coded.frame).unwrap();
            assert_bits(&y_hat, &coded.y_hat, "y_hat");
            assert!(x_hat.data().iter().all(|v| (0.0..=1.0).contains(v)));
            assert_eq!(x_hat.shape(), x.shape());
            if let Some(z_hat) = &coded.z_hat {
                assert_bits(&codec.decode_side(&coded.frame).unwrap(), z_hat, "z_hat");
            }
        }
    }
}

#[test]
fn sub_operations_compose_to_the_monolithic_path() {
    for (kind, act) in ALL_MODELS {
        let codec = small_codec(kind, act);
        let x = random_frame(9, 64, 64);
        let whole = codec.encode(&x, 3).unwrap();
        let staged = codec.code(codec.analyze(&x).unwrap(), 3).unwrap();
        assert_eq!(whole.frame, staged.frame);

        let f = &whole.frame;
        let sigma = match kind {
            CodecKind::Factorized => None,
            CodecKind::Hyperprior => Some(
                codec
                    .predict_scales(&codec.decode_side(f).unwrap())
                    .unwrap(),
            ),
        };
        let y_hat = codec.decode_latent(f, sigma.as_ref()).unwrap();
        let x_hat = codec.synthesis_transform(&y_hat).unwrap();
        assert_bits(&x_hat, &codec.decode(f).unwrap(), "x_hat");
    }
}

#[test]
fn generated_weights_keep_saturation_low_at_default_width() {
    for kind in [CodecKind::Factorized, CodecKind::Hyperprior] {
        for gain in [1.0, GAIN] {
            let cfg = lic_core::codec::CodecConfig::new(kind, Activation::Gdn, 128, 128);
            let w = ModelWeights::generate_with_gain(&cfg, 42, gain).unwrap();
            let codec = Codec::new(
                cfg,
                Arc::new(w),
                Exec::default(),
                Arc::new(BufferPool::new()),
            )
            .unwrap();
            let coded = codec.encode(&random_frame(1, 128, 128), 0).unwrap();
            let total = coded.y_hat.data().len();
            assert!(
                (coded.saturated as f64) < 0.01 * total as f64,
                "{kind} gain {gain}: {} of {total} saturated",
                coded.saturated
            );
        }
    }
}

#[test]
fn wrong_weights_are_rejected_before_entropy_decoding() {
    let cfg = small_config(CodecKind::Factorized, Activation::Gdn, 64, 64);
    let a = codec_with(cfg, 1, Arc::new(BufferPool::new()));
    let b = codec_with(cfg, 2, Arc::new(BufferPool::new()));
    let mut frame = a.encode(&random_frame(0, 64, 64), 0).unwrap().frame;
    frame.weights_digest = Some(a.weights().digest());
    // Garbage strings would fail entropy decoding; the digest check must come first.
    frame.y_string = vec![0xff; 3];
    assert!(matches!(
        b.decode(&frame),
        Err(CodecError::DigestMismatch { .. })
    ));
}

#[test]
fn frames_survive_serialization() {
    for (kind, act) in ALL_MODELS {
        let codec = small_codec(kind, act);
        let coded = codec.encode(&random_frame(4, 64, 64), 0).unwrap();
        let bytes = coded.frame.serialize();
        assert_eq!(&bytes[..4], b"LICF");
        let parsed = EncodedFrame::parse(&bytes).unwrap();
        assert_eq!(parsed.z_string.is_some(), kind == CodecKind::Hyperprior);
        assert_bits(
            &codec.decode_with_latent(&parsed).unwrap().1,
            &coded.y_hat,
            "y_hat",
        );
    }
}

fn outputs(
    stages: Vec<lic_core::pipeline::StageSpec<CodecPayload>>,
    source: impl Fn(u64) -> CodecPayload + Send + Sync + Clone,
    frames: usize,
    pipelined: bool,
) -> Vec<CodecPayload> {
    let mut out = Vec::new();
    if pipelined {
        let p = Pipeline::build(stages).unwrap();
        for i in 0..frames as u64 {
            p.submit(source(i)).unwrap();
        }
        p.shutdown(true);
        while let Some(done) = p.collect() {
            out.push(done.result.unwrap());
        }
    } else {
        run_serial_reference(&stages, source, Limit::Frames(frames), 0, None, |done| {
            out.push(done.result.unwrap())
        });
    }
    out
}

fn payload_bits(p: &CodecPayload) -> (Vec<u8>, Vec<u8>) {
    match p {
        CodecPayload::Coded(c) => (c.frame.serialize(), c.y_hat.to_le_bytes()),
        CodecPayload::Decoded { x_hat, y_hat, .. } => (x_hat.to_le_bytes(), y_hat.to_le_bytes()),
        other => panic!("unexpected output {other:?}"),
    }
}

#[test]
fn pipelined_codec_matches_serial_reference() {
    for (kind, act) in ALL_MODELS {
        let codec = Arc::new(small_codec(kind, act));
        let layout = StageLayout {
            entropy_workers: 3,
            queue_capacity: 2,
        };
        let frames = 12;
        let images: Arc<Vec<Tensor>> = Arc::new(
            (0..frames as u64)
                .map(|i| random_frame(i, 64, 64))
                .collect(),
        );
        let img = images.clone();
        let enc_source = move |i: u64| CodecPayload::Image(img[i as usize].clone());
        let piped = outputs(
            encoder_stages(codec.clone(), layout),
            enc_source.clone(),
            frames,
            true,
        );
        let serial = outputs(
            encoder_stages(codec.clone(), layout),
            enc_source,
            frames,
            false,
        );
        assert_eq!(piped.len(), frames);
        let coded: Vec<EncodedFrame> = piped
            .iter()
            .map(|p| match p {
                CodecPayload::Coded(c) => c.frame.clone(),
                _ => unreachable!(),
            })
            .collect();
        for (a, b) in piped.iter().zip(&serial) {
            assert_eq!(payload_bits(a), payload_bits(b), "{kind}/{act} encoder");
        }

        let coded = Arc::new(coded);
        let dec_source = move |i: u64| CodecPayload::Frame(coded[i as usize].clone());
        let stages = decoder_stages(codec.clone(), layout);
        assert_eq!(
            stages.len(),
            if kind == CodecKind::Hyperprior { 4 } else { 2 }
        );
        let piped = outputs(stages, dec_source.clone(), frames, true);
        let serial = outputs(
            decoder_stages(codec.clone(), layout),
            dec_source,
            frames,
            false,
        );
        assert_eq!(piped.len(), frames);
        for (a, b) in piped.iter().zip(&serial) {
            assert_eq!(payload_bits(a), payload_bits(b), "{kind}/{act} decoder");
        }
    }
}

#[test]
fn corrupt_side_string_fails_in_first_decoder_stage() {
    let codec = Arc::new(small_codec(CodecKind::Hyperprior, Activation::Gdn));
    let mut frames: Vec<EncodedFrame> = (0..4)
        .map(|i| codec.encode(&random_frame(i, 64, 64), i).unwrap().frame)
        .collect();
    // An over-long side string leaves bytes the decoder never consumes.
    frames[2]
        .z_string
        .as_mut()
        .unwrap()
        .extend_from_slice(&[0x5a; 16]);
    let p = Pipeline::build(decoder_stages(codec.clone(), StageLayout::default())).unwrap();
    for f in frames {
        p.submit(CodecPayload::Frame(f)).unwrap();
    }
    p.shutdown(true);
    let mut results = Vec::new();
    while let Some(done) = p.collect() {
        results.push((done.sequence, done.result));
    }
    assert_eq!(results.len(), 4);
    for (seq, r) in results {
        match (seq, r) {
            (2, Err(e)) => {
                assert_eq!(e.sequence, 2);
                assert_eq!(e.stage, "cpu1");
            }
            (2, Ok(_)) => panic!("corrupt frame decoded"),
            (_, r) => assert!(r.is_ok()),
        }
    }
}

#[test]
fn corrupt_stream_is_reported_as_such() {
    let codec = small_codec(CodecKind::Factorized, Activation::Gdn);
    let mut frame = codec.encode(&random_frame(0, 64, 64), 0).unwrap().frame;
    frame.y_string.truncate(frame.y_string.len() / 2);
    let err = codec.decode(&frame).unwrap_err();
    assert!(err.is_corrupt_stream(), "{err}");
    assert!(matches!(
        err,
        CodecError::Stream {
            source: EntropyError::Exhausted | EntropyError::Corrupt(_),
            ..
        }
    ));
}

#[test]
fn pool_reaches_steady_state_under_the_codec_pipeline() {
    for (enabled, kind) in [
        (true, CodecKind::Factorized),
        (true, CodecKind::Hyperprior),
        (false, CodecKind::Factorized),
    ] {
        let pool = Arc::new(BufferPool::with_enabled(enabled));
        let cfg = small_config(kind, Activation::OneDn, 64, 64);
        let codec = Arc::new(codec_with(cfg, 42, pool.clone()));
        let p = Pipeline::build(encoder_stages(codec.clone(), StageLayout::default()))
            .unwrap()
            .with_pool(pool.clone());
        let image = random_frame(0, 64, 64);
        let run = |n: usize| {
            for _ in 0..n {
                let mut buf = pool.acquire(3 * 64 * 64);
                buf.copy_from_slice(image.data());
                p.submit(CodecPayload::Image(Tensor::new(3, 64, 64, buf).unwrap()))
                    .unwrap();
                p.collect().unwrap().result.unwrap().release(&codec);
            }
        };
        run(30);
        let before = pool.allocations();
        run(200);
        let grown = pool.allocations() - before;
        if enabled {
            assert_eq!(grown, 0, "{kind}");
        } else {
            assert!(grown >= 200, "{grown}");
        }
        p.shutdown(true);
    }
}
