use std::fs::OpenOptions;
use std::io::{BufReader, BufWriter, Write};
use std::net::{Shutdown, TcpListener, TcpStream};
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use lic_core::codec::{Codec, CodecConfig, CodecKind, EncodedFrame, ModelWeights};
use lic_core::image::{decode_ppm, decode_raw, encode_ppm, encode_raw, synthetic_frame};
use lic_core::numerics::{Exec, Tensor};
use lic_core::pipeline::{
    decoder_stages, describe, encoder_stages, run_benchmark, run_serial_reference, BufferPool,
    CodecPayload, Limit, Pipeline, PipelineMetrics, StageLayout,
};
use lic_core::stream::{
    latent_digest, run_receiver, run_sender, DirSink, FrameSink, NullSink, ReceiverOptions,
    SenderOptions, SinkFormat,
};

use crate::args::{
    BenchArgs, Command, DecodeArgs, Direction, EncodeArgs, GenArgs, ModelArgs, PipelineArgs,
    RecvArgs, SendArgs, SinkKind, Toggle,
};
use crate::failure::Failure;

/// Distinct clip frames cycled through by benchmarks.
const CLIP_FRAMES: usize = 8;

pub fn run(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::Genweights(a) => genweights(a),
        Command::Encode(a) => encode(a),
        Command::Decode(a) => decode(a),
        Command::Bench(a) => bench(a),
        Command::Send(a) => send(a),
        Command::Recv(a) => recv(a),
    }
}

fn generated_config(m: &ModelArgs) -> CodecConfig {
    let mut cfg = CodecConfig::new(
        m.codec.unwrap_or(CodecKind::Factorized),
        m.activation.unwrap_or(lic_core::codec::Activation::Gdn),
        0,
        0,
    );
    if let Some(n) = m.n {
        cfg.n = n;
    }
    if let Some(mm) = m.m {
        cfg.m = mm;
    }
    if let Some(l) = m.bound {
        cfg.bound = l;
    }
    cfg
}

fn resolve_weights(m: &ModelArgs) -> Result<Arc<ModelWeights>, Failure> {
    let Some(path) = &m.weights else {
        let w = ModelWeights::generate_with_gain(&generated_config(m), m.seed, m.init_gain)?;
        return Ok(Arc::new(w));
    };
    let w = ModelWeights::load(path)?;
    let (n, mm) = w.channels();
    let clash = m.codec.is_some_and(|k| k != w.kind())
        || m.activation.is_some_and(|a| a != w.activation())
        || m.n.is_some_and(|v| v != n)
        || m.m.is_some_and(|v| v != mm)
        || m.bound.is_some_and(|v| v != w.bound());
    if clash {
        return Err(Failure::Usage(format!(
            "model flags contradict {} ({}/{} N={n} M={mm} L={})",
            path.display(),
            w.kind(),
            w.activation(),
            w.bound()
        )));
    }
    Ok(Arc::new(w))
}

fn exec(m: &ModelArgs) -> Exec {
    if m.sequential_kernels {
        Exec::Sequential
    } else {
        Exec::default()
    }
}

fn build_codec(
    m: &ModelArgs,
    weights: Arc<ModelWeights>,
    height: usize,
    width: usize,
    pool: Arc<BufferPool>,
) -> Result<Codec, Failure> {
    let (n, mm) = weights.channels();
    let mut cfg =
        CodecConfig::new(weights.kind(), weights.activation(), height, width).with_channels(n, mm);
    cfg.bound = weights.bound();
    Ok(Codec::new(cfg, weights, exec(m), pool)?)
}

fn make_pool(p: &PipelineArgs) -> Arc<BufferPool> {
    Arc::new(BufferPool::with_enabled(p.pool == Toggle::On))
}

fn layout(p: &PipelineArgs) -> Result<StageLayout, Failure> {
    if p.entropy_workers == 0 || p.queue_capacity == 0 {
        return Err(Failure::Usage(
            "--entropy-workers and --queue-capacity must be at least 1".into(),
        ));
    }
    Ok(StageLayout {
        entropy_workers: p.entropy_workers,
        queue_capacity: p.queue_capacity,
    })
}

fn append_line(path: &Path, line: &str) -> Result<(), Failure> {
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    writeln!(f, "{line}")?;
    Ok(())
}

fn genweights(a: GenArgs) -> Result<(), Failure> {
    if a.model.weights.is_some() {
        return Err(Failure::Usage("genweights takes no --weights".into()));
    }
    let w = resolve_weights(&a.model)?;
    w.save(&a.output)?;
    println!("{}", w.digest());
    Ok(())
}

fn read_image(path: &Path, height: Option<usize>, width: Option<usize>) -> Result<Tensor, Failure> {
    let data = std::fs::read(path)?;
    let raw = matches!(
        path.extension().and_then(|e| e.to_str()),
        Some("f32") | Some("raw")
    );
    if raw {
        let (Some(h), Some(w)) = (height, width) else {
            return Err(Failure::Usage(
                "raw input needs --height and --width".into(),
            ));
        };
        return Ok(decode_raw(&data, (3, h, w))?);
    }
    Ok(decode_ppm(&data)?)
}

fn write_image(path: &Path, t: &Tensor) -> Result<(), Failure> {
    let bytes = if path.extension().and_then(|e| e.to_str()) == Some("ppm") {
        encode_ppm(t)?
    } else {
        encode_raw(t)
    };
    std::fs::write(path, bytes)?;
    Ok(())
}

fn encode(a: EncodeArgs) -> Result<(), Failure> {
    let weights = resolve_weights(&a.model)?;
    let x = read_image(&a.input, a.height, a.width)?;
    let codec = build_codec(
        &a.model,
        weights,
        x.height(),
        x.width(),
        Arc::new(BufferPool::new()),
    )?;
    let coded = codec.encode(&x, 0)?;
    let bytes = coded.frame.serialize();
    std::fs::write(&a.output, &bytes)?;
    println!(
        "bytes={} bpp={:.4} saturated={} latent_digest={} weights={}",
        bytes.len(),
        coded.frame.bits_per_pixel(),
        coded.saturated,
        hex::encode(latent_digest(&coded.y_hat)),
        codec.weights().digest()
    );
    Ok(())
}

fn decode(a: DecodeArgs) -> Result<(), Failure> {
    let weights = resolve_weights(&a.model)?;
    let frame = EncodedFrame::parse(&std::fs::read(&a.input)?)
        .map_err(lic_core::codec::CodecError::from)?;
    let codec = build_codec(
        &a.model,
        weights,
        frame.height as usize,
        frame.width as usize,
        Arc::new(BufferPool::new()),
    )?;
    let (x_hat, y_hat) = codec.decode_with_latent(&frame)?;
    write_image(&a.output, &x_hat)?;
    let digest = hex::encode(latent_digest(&y_hat));
    println!(
        "height={} width={} latent_digest={digest}",
        frame.height, frame.width
    );
    if let Some(expected) = a.expect_latent_digest {
        if !expected.eq_ignore_ascii_case(&digest) {
            return Err(Failure::Verification(format!(
                "latent digest {digest}, expected {expected}"
            )));
        }
    }
    Ok(())
}

fn limit(
    frames: Option<usize>,
    seconds: Option<f64>,
    default_frames: usize,
) -> Result<Limit, Failure> {
    match (frames, seconds) {
        (Some(n), _) => Ok(Limit::Frames(n)),
        (None, Some(s)) if s.is_finite() && s > 0.0 => {
            Ok(Limit::Duration(Duration::from_secs_f64(s)))
        }
        (None, Some(s)) => Err(Failure::Usage(format!("--seconds {s} must be positive"))),
        (None, None) => Ok(Limit::Frames(default_frames)),
    }
}

fn bench(a: BenchArgs) -> Result<(), Failure> {
    let weights = resolve_weights(&a.model)?;
    let pool = make_pool(&a.pipeline);
    let (h, w) = (a.geometry.height, a.geometry.width);
    let codec = Arc::new(build_codec(&a.model, weights, h, w, pool.clone())?);
    let layout = layout(&a.pipeline)?;
    let limit = limit(a.frames, a.seconds, 100)?;
    let clip: Vec<Tensor> = (0..CLIP_FRAMES as u64)
        .map(|i| synthetic_frame(a.model.seed, i, h, w))
        .collect();
    let directions: &[Direction] = match a.direction {
        Direction::Both => &[Direction::Encoder, Direction::Decoder],
        Direction::Encoder => &[Direction::Encoder],
        Direction::Decoder => &[Direction::Decoder],
    };
    let mut failed = 0;
    for dir in directions {
        let (name, stages) = match dir {
            Direction::Encoder => ("encoder", encoder_stages(codec.clone(), layout)),
            _ => ("decoder", decoder_stages(codec.clone(), layout)),
        };
        let frames: Vec<EncodedFrame> = if *dir == Direction::Decoder {
            clip.iter()
                .map(|x| {
                    let c = codec.encode(x, 0)?;
                    CodecPayload::Coded(c.clone()).release(&codec);
                    Ok(c.frame)
                })
                .collect::<Result<_, Failure>>()?
        } else {
            Vec::new()
        };
        let source = |i: u64| -> CodecPayload {
            let k = i as usize % CLIP_FRAMES;
            if frames.is_empty() {
                let mut buf = pool.acquire(3 * h * w);
                buf.copy_from_slice(clip[k].data());
                CodecPayload::Image(Tensor::new(3, h, w, buf).expect("clip geometry"))
            } else {
                let mut f = frames[k].clone();
                f.sequence = i;
                CodecPayload::Frame(f)
            }
        };
        let sink = |done: lic_core::pipeline::Completed<CodecPayload>| match done.result {
            Ok(p) => p.release(&codec),
            Err(e) => log::warn!("{e}"),
        };
        eprintln!("{name}: {}", describe(&stages));
        let metrics: PipelineMetrics = if a.serial {
            run_serial_reference(&stages, source, limit, a.warmup, Some(&pool), sink)
        } else {
            let p = Pipeline::build(stages)?.with_pool(pool.clone());
            let m = run_benchmark(&p, source, limit, a.warmup, sink);
            p.shutdown(true);
            m
        };
        failed += metrics.frames_failed;
        let cfg = codec.config();
        let line = format!(
            "direction={name} codec={} activation={} n={} m={} height={h} width={w} pool={} entropy_workers={} queue_capacity={} {}",
            cfg.kind,
            cfg.activation,
            cfg.n,
            cfg.m,
            if pool.is_enabled() { "on" } else { "off" },
            layout.entropy_workers,
            layout.queue_capacity,
            metrics.to_kv()
        );
        eprint!("{}", metrics.table());
        println!("{line}");
        if let Some(path) = &a.metrics_out {
            append_line(path, &line)?;
        }
    }
    if failed > 0 {
        return Err(Failure::Verification(format!("{failed} frames failed")));
    }
    Ok(())
}

fn install_interrupt(on_signal: impl Fn() + Send + 'static) -> Arc<AtomicBool> {
    let flag = Arc::new(AtomicBool::new(false));
    let f = flag.clone();
    if let Err(e) = ctrlc::set_handler(move || {
        f.store(true, Ordering::SeqCst);
        on_signal();
    }) {
        log::warn!("no interrupt handler: {e}");
    }
    flag
}

fn send(a: SendArgs) -> Result<(), Failure> {
    if !(a.fps.is_finite() && a.fps > 0.0) {
        return Err(Failure::Usage(format!("--fps {} must be positive", a.fps)));
    }
    let weights = resolve_weights(&a.model)?;
    let pool = make_pool(&a.pipeline);
    let (h, w) = (a.geometry.height, a.geometry.width);
    let codec = Arc::new(build_codec(&a.model, weights, h, w, pool.clone())?);
    let count = match limit(a.frames, a.seconds, 300)? {
        Limit::Frames(n) => n,
        Limit::Duration(d) => (d.as_secs_f64() * a.fps).ceil() as usize,
    };
    let still = match &a.input {
        Some(p) => {
            let t = read_image(p, None, None)?;
            if t.shape() != (3, h, w) {
                return Err(Failure::Usage(format!(
                    "input is {}x{}, stream geometry is {w}x{h}",
                    t.width(),
                    t.height()
                )));
            }
            Some(t)
        }
        None => None,
    };
    let seed = a.model.seed;
    let source_pool = pool.clone();
    let source = (0..count as u64).map(move |i| {
        let frame = match &still {
            Some(t) => t.clone(),
            None => synthetic_frame(seed, i % CLIP_FRAMES as u64, h, w),
        };
        let mut buf = source_pool.acquire(3 * h * w);
        buf.copy_from_slice(frame.data());
        Tensor::new(3, h, w, buf).expect("stream geometry")
    });
    let encoder = Pipeline::build(encoder_stages(codec.clone(), layout(&a.pipeline)?))?
        .with_pool(pool.clone());
    let stream = TcpStream::connect(a.connect)?;
    stream.set_nodelay(true)?;
    let interrupt = install_interrupt(|| {});
    let opts = SenderOptions {
        target_fps: a.fps,
        drop_late: a.drop_late,
        interrupt: Some(interrupt),
    };
    let report = run_sender(source, &codec, &encoder, BufWriter::new(stream), &opts)?;
    let line = format!(
        "frames_sent={} late={} dropped={} encode_failures={} fps={:.3} interrupted={}",
        report.frames_sent,
        report.late_frames,
        report.dropped_frames,
        report.encode_failures,
        report.achieved_fps,
        report.interrupted
    );
    println!("{line}");
    if let Some(path) = &a.metrics_out {
        append_line(path, &line)?;
    }
    if let Some(path) = &a.latent_digests {
        let text: String = report
            .latent_digests
            .iter()
            .enumerate()
            .map(|(i, d)| format!("{i} {}\n", hex::encode(d)))
            .collect();
        std::fs::write(path, text)?;
    }
    if report.interrupted {
        return Err(Failure::Interrupted);
    }
    if report.encode_failures > 0 {
        return Err(Failure::Verification(format!(
            "{} frames failed to encode",
            report.encode_failures
        )));
    }
    Ok(())
}

fn recv(a: RecvArgs) -> Result<(), Failure> {
    let weights = resolve_weights(&a.model)?;
    let pool = make_pool(&a.pipeline);
    let (h, w) = (a.geometry.height, a.geometry.width);
    let codec = Arc::new(build_codec(&a.model, weights, h, w, pool.clone())?);
    let decoder = Pipeline::build(decoder_stages(codec.clone(), layout(&a.pipeline)?))?
        .with_pool(pool.clone());
    let mut sink: Box<dyn FrameSink> = match &a.output {
        Some(dir) => Box::new(DirSink::new(
            dir,
            match a.format {
                SinkKind::Ppm => SinkFormat::Ppm,
                SinkKind::Raw => SinkFormat::Raw,
            },
        )?),
        None => Box::new(NullSink),
    };

    let listener = TcpListener::bind(a.listen)?;
    println!("listening {}", listener.local_addr()?);
    std::io::stdout().flush()?;
    let active: Arc<Mutex<Option<TcpStream>>> = Arc::new(Mutex::new(None));
    let on_signal = {
        let active = active.clone();
        move || match active.lock().unwrap().as_ref() {
            Some(s) => {
                let _ = s.shutdown(Shutdown::Both);
            }
            None => std::process::exit(Failure::Interrupted.code() as i32),
        }
    };
    let interrupt = install_interrupt(on_signal);
    let (stream, peer) = listener.accept()?;
    log::info!("connection from {peer}");
    *active.lock().unwrap() = Some(stream.try_clone()?);
    let opts = ReceiverOptions {
        interrupt: Some(interrupt),
    };
    let stats = run_receiver(BufReader::new(stream), &codec, &decoder, &mut *sink, &opts)?;
    let line = stats.to_kv();
    println!("{line}");
    if let Some(path) = &a.metrics_out {
        append_line(path, &line)?;
    }
    if let Some(path) = &a.latent_digests {
        let text: String = stats
            .latent_digests
            .iter()
            .map(|(s, d)| format!("{s} {}\n", hex::encode(d)))
            .collect();
        std::fs::write(path, text)?;
    }
    if stats.interrupted {
        return Err(Failure::Interrupted);
    }
    if let Some(n) = a.expect_frames {
        let clean = stats.frames_received == n
            && stats.frames_decoded == n
            && stats.frames_out_of_order == 0
            && stats.sequence_gaps == 0
            && stats.decode_failures == 0;
        if !clean {
            return Err(Failure::Verification(format!(
                "expected {n} clean frames: {line}"
            )));
        }
    }
    if !stats.end_of_stream {
        return Err(Failure::Protocol(format!(
            "stream ended early: {}",
            stats.disconnect.as_deref().unwrap_or("unknown")
        )));
    }
    Ok(())
}
