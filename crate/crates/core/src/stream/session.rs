use std::collections::HashMap;
use std::io::{self, Read, Write};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use sha2::{Digest as _, Sha256};

use super::wire::{read_message, write_message, Handshake, MsgType, WireError, WireMessage};
use super::StreamError;
use crate::codec::{Codec, EncodedFrame};
use crate::image::{encode_ppm, encode_raw};
use crate::numerics::Tensor;
use crate::pipeline::{percentile, CodecPayload, Pipeline};

pub fn unix_micros() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_micros() as u64)
        .unwrap_or(0)
}

/// SHA-256 of a tensor's little-endian bytes.
pub fn latent_digest(t: &Tensor) -> [u8; 32] {
    Sha256::digest(t.to_le_bytes()).into()
}

fn interrupted(flag: &Option<Arc<AtomicBool>>) -> bool {
    flag.as_ref().is_some_and(|f| f.load(Ordering::SeqCst))
}

/// `(n - 1) / span` over event instants.
fn rate(first: Option<Instant>, last: Option<Instant>, n: u64) -> f64 {
    match (first, last) {
        (Some(a), Some(b)) if n >= 2 && b > a => (n - 1) as f64 / (b - a).as_secs_f64(),
        _ => 0.0,
    }
}

#[derive(Debug, Clone, Default)]
pub struct SenderOptions {
    pub target_fps: f64,
    /// Skip a source frame instead of submitting it once the sender has
    /// fallen more than one period behind schedule. Off by default.
    pub drop_late: bool,
    pub interrupt: Option<Arc<AtomicBool>>,
}

#[derive(Debug, Clone, Default)]
pub struct SenderReport {
    pub frames_sent: u64,
    /// Frames whose submission finished more than one period after schedule.
    pub late_frames: u64,
    pub dropped_frames: u64,
    pub encode_failures: u64,
    /// Send rate over the first to last frame message.
    pub achieved_fps: f64,
    /// Digest of each sent frame's `y_hat`, in wire sequence order.
    pub latent_digests: Vec<[u8; 32]>,
    pub interrupted: bool,
}

/// Sends a handshake, then every source frame through `encoder` onto `conn`
/// at `target_fps`, then end of stream.
///
/// The session owns `encoder`: it is shut down when the source is exhausted.
pub fn run_sender<I, W>(
    source: I,
    codec: &Codec,
    encoder: &Pipeline<CodecPayload>,
    mut conn: W,
    opts: &SenderOptions,
) -> Result<SenderReport, StreamError>
where
    I: Iterator<Item = Tensor> + Send,
    W: Write,
{
    if !(opts.target_fps.is_finite() && opts.target_fps > 0.0) {
        return Err(StreamError::Protocol(format!(
            "target fps {} must be positive",
            opts.target_fps
        )));
    }
    let cfg = codec.config();
    let hs = Handshake {
        kind: cfg.kind,
        activation: cfg.activation,
        n: cfg.n as u16,
        m: cfg.m as u16,
        height: cfg.height as u16,
        width: cfg.width as u16,
        target_fps: opts.target_fps.round().clamp(1.0, u16::MAX as f64) as u16,
        digest: codec.weights().digest(),
    };
    write_message(
        &mut conn,
        &WireMessage {
            msg_type: MsgType::Handshake,
            sequence: 0,
            capture_timestamp_us: unix_micros(),
            payload: hs.to_bytes(),
        },
    )
    .map_err(|source| StreamError::Connection {
        last_sent: None,
        source,
    })?;

    let period = Duration::from_secs_f64(1.0 / opts.target_fps);
    let captured: Mutex<HashMap<u64, u64>> = Mutex::new(HashMap::new());
    let stop = AtomicBool::new(false);
    let mut report = SenderReport::default();
    let mut failure = None;
    let (mut first, mut last) = (None, None);

    let (late, dropped) = std::thread::scope(|scope| {
        let feeder = scope.spawn(|| {
            let (mut late, mut dropped) = (0u64, 0u64);
            let start = Instant::now();
            for (i, frame) in source.enumerate() {
                if interrupted(&opts.interrupt) || stop.load(Ordering::SeqCst) {
                    encoder.shutdown(false);
                    return (late, dropped);
                }
                let due = start + period * i as u32;
                let now = Instant::now();
                if now < due {
                    std::thread::sleep(due - now);
                } else if opts.drop_late && now > due + period {
                    dropped += 1;
                    continue;
                }
                let seq = encoder.submitted();
                captured.lock().unwrap().insert(seq, unix_micros());
                if encoder.submit(CodecPayload::Image(frame)).is_err() {
                    break;
                }
                if Instant::now() > due + period {
                    late += 1;
                }
            }
            encoder.shutdown(true);
            (late, dropped)
        });

        while let Some(done) = encoder.collect() {
            let ts = captured.lock().unwrap().remove(&done.sequence).unwrap_or(0);
            let coded = match done.result.map(CodecPayload::into_coded) {
                Ok(Some(c)) => c,
                Ok(None) | Err(_) => {
                    report.encode_failures += 1;
                    continue;
                }
            };
            if failure.is_some() {
                continue;
            }
            let msg = WireMessage {
                msg_type: MsgType::Frame,
                sequence: report.frames_sent,
                capture_timestamp_us: ts,
                payload: coded.frame.serialize(),
            };
            report.latent_digests.push(latent_digest(&coded.y_hat));
            codec.recycle(coded.y_hat);
            if let Some(z) = coded.z_hat {
                codec.recycle(z);
            }
            match write_message(&mut conn, &msg) {
                Ok(()) => {
                    let now = Instant::now();
                    first.get_or_insert(now);
                    last = Some(now);
                    report.frames_sent += 1;
                }
                Err(e) => {
                    report.latent_digests.pop();
                    failure = Some(e);
                    stop.store(true, Ordering::SeqCst);
                    encoder.shutdown(false);
                }
            }
        }
        feeder.join().expect("feeder thread panicked")
    });
    report.late_frames = late;
    report.dropped_frames = dropped;
    report.interrupted = interrupted(&opts.interrupt);
    report.achieved_fps = rate(first, last, report.frames_sent);
    let last_sent = report.frames_sent.checked_sub(1);
    if let Some(source) = failure {
        return Err(StreamError::Connection { last_sent, source });
    }
    write_message(
        &mut conn,
        &WireMessage {
            msg_type: MsgType::EndOfStream,
            sequence: report.frames_sent,
            capture_timestamp_us: unix_micros(),
            payload: Vec::new(),
        },
    )
    .map_err(|source| StreamError::Connection { last_sent, source })?;
    Ok(report)
}

/// Consumer of decoded frames, called in sequence order.
pub trait FrameSink {
    fn deliver(&mut self, sequence: u64, frame: &Tensor) -> io::Result<()>;
}

impl<F: FnMut(u64, &Tensor) -> io::Result<()>> FrameSink for F {
    fn deliver(&mut self, sequence: u64, frame: &Tensor) -> io::Result<()> {
        self(sequence, frame)
    }
}

pub struct NullSink;

impl FrameSink for NullSink {
    fn deliver(&mut self, _: u64, _: &Tensor) -> io::Result<()> {
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SinkFormat {
    Ppm,
    Raw,
}

/// Writes `frame_NNNNNN.ppm` or `frame_NNNNNN.f32` files into a directory.
pub struct DirSink {
    dir: PathBuf,
    format: SinkFormat,
}

impl DirSink {
    pub fn new(dir: impl Into<PathBuf>, format: SinkFormat) -> io::Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        Ok(DirSink { dir, format })
    }
}

impl FrameSink for DirSink {
    fn deliver(&mut self, sequence: u64, frame: &Tensor) -> io::Result<()> {
        let (ext, bytes) = match self.format {
            SinkFormat::Ppm => (
                "ppm",
                encode_ppm(frame).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?,
            ),
            SinkFormat::Raw => ("f32", encode_raw(frame)),
        };
        std::fs::write(self.dir.join(format!("frame_{sequence:06}.{ext}")), bytes)
    }
}

#[derive(Debug, Clone, Default)]
pub struct ReceiverOptions {
    pub interrupt: Option<Arc<AtomicBool>>,
}

#[derive(Debug, Clone, Default)]
pub struct StreamStats {
    pub handshake: Option<Handshake>,
    pub frames_received: u64,
    pub frames_decoded: u64,
    /// Frame messages whose sequence was lower than expected.
    pub frames_out_of_order: u64,
    /// Sequence numbers skipped by the sender.
    pub sequence_gaps: u64,
    pub decode_failures: u64,
    /// Receive-complete minus capture timestamp, in microseconds. Only
    /// meaningful when both ends share a clock.
    pub latency_us: Vec<u64>,
    /// Arrival rate over the first to last frame message.
    pub achieved_fps: f64,
    /// `(sequence, y_hat digest)` for each decoded frame.
    pub latent_digests: Vec<(u64, [u8; 32])>,
    pub end_of_stream: bool,
    /// Why the stream ended without an end-of-stream message.
    pub disconnect: Option<String>,
    pub interrupted: bool,
}

impl StreamStats {
    pub fn latency_percentile_ms(&self, p: f64) -> f64 {
        let mut v: Vec<f64> = self.latency_us.iter().map(|u| *u as f64 / 1e3).collect();
        v.sort_by(f64::total_cmp);
        percentile(&v, p)
    }

    pub fn to_kv(&self) -> String {
        format!(
            "frames_received={} frames_decoded={} out_of_order={} gaps={} decode_failures={} fps={:.3} latency_p50_ms={:.3} latency_p95_ms={:.3} end_of_stream={} interrupted={}",
            self.frames_received,
            self.frames_decoded,
            self.frames_out_of_order,
            self.sequence_gaps,
            self.decode_failures,
            self.achieved_fps,
            self.latency_percentile_ms(50.0),
            self.latency_percentile_ms(95.0),
            self.end_of_stream,
            self.interrupted,
        )
    }
}

/// Validates the handshake against `codec`, then decodes every frame through
/// `decoder` and hands reconstructions to `sink` in order.
///
/// A frame that fails to parse or decode is counted and skipped. The session
/// owns `decoder`: it is shut down when the stream ends.
pub fn run_receiver<R, S>(
    mut conn: R,
    codec: &Codec,
    decoder: &Pipeline<CodecPayload>,
    sink: &mut S,
    opts: &ReceiverOptions,
) -> Result<StreamStats, StreamError>
where
    R: Read + Send,
    S: FrameSink + ?Sized,
{
    let first = read_message(&mut conn)?;
    if first.msg_type != MsgType::Handshake {
        return Err(StreamError::Protocol(format!(
            "expected a handshake, got {:?}",
            first.msg_type
        )));
    }
    let hs = Handshake::parse(&first.payload)?;
    let local = codec.weights().digest();
    if hs.digest != local {
        decoder.shutdown(false);
        return Err(StreamError::DigestMismatch {
            local,
            remote: hs.digest,
        });
    }
    let cfg = codec.config();
    let remote = (
        hs.kind,
        hs.activation,
        hs.n as usize,
        hs.m as usize,
        hs.height as usize,
        hs.width as usize,
    );
    let ours = (
        cfg.kind,
        cfg.activation,
        cfg.n,
        cfg.m,
        cfg.height,
        cfg.width,
    );
    if remote != ours {
        decoder.shutdown(false);
        return Err(StreamError::HandshakeMismatch(format!(
            "sender {}/{} N={} M={} {}x{}, receiver {}/{} N={} M={} {}x{}",
            hs.kind,
            hs.activation,
            hs.n,
            hs.m,
            hs.width,
            hs.height,
            cfg.kind,
            cfg.activation,
            cfg.n,
            cfg.m,
            cfg.width,
            cfg.height
        )));
    }

    let captured: Mutex<HashMap<u64, u64>> = Mutex::new(HashMap::new());
    let mut stats = StreamStats {
        handshake: Some(hs),
        ..StreamStats::default()
    };
    let mut sink_error = None;

    let reader = std::thread::scope(|scope| {
        let reader = scope.spawn(|| {
            let mut r = ReaderTally::default();
            let mut expected = 0u64;
            loop {
                if interrupted(&opts.interrupt) {
                    r.interrupted = true;
                    break;
                }
                let msg = match read_message(&mut conn) {
                    Ok(m) => m,
                    // The interrupt handler may close the socket under us.
                    Err(_) if interrupted(&opts.interrupt) => {
                        r.interrupted = true;
                        break;
                    }
                    Err(WireError::Closed) => {
                        r.disconnect = Some("connection closed before end of stream".into());
                        break;
                    }
                    Err(e) => {
                        r.disconnect = Some(e.to_string());
                        break;
                    }
                };
                match msg.msg_type {
                    MsgType::Frame => {}
                    MsgType::EndOfStream => {
                        r.end_of_stream = true;
                        break;
                    }
                    MsgType::Handshake => {
                        r.disconnect = Some("unexpected second handshake".into());
                        break;
                    }
                }
                let now = Instant::now();
                r.first.get_or_insert(now);
                r.last = Some(now);
                r.received += 1;
                if msg.sequence < expected {
                    r.out_of_order += 1;
                } else {
                    r.gaps += msg.sequence - expected;
                    expected = msg.sequence + 1;
                }
                let mut frame = match EncodedFrame::parse(&msg.payload) {
                    Ok(f) => f,
                    Err(e) => {
                        log::warn!("frame {}: {e}", msg.sequence);
                        r.parse_failures += 1;
                        continue;
                    }
                };
                frame.sequence = msg.sequence;
                frame.weights_digest = Some(hs.digest);
                captured
                    .lock()
                    .unwrap()
                    .insert(msg.sequence, msg.capture_timestamp_us);
                if decoder.submit(CodecPayload::Frame(frame)).is_err() {
                    break;
                }
            }
            decoder.shutdown(!r.interrupted);
            r
        });

        while let Some(done) = decoder.collect() {
            match done.result.map(CodecPayload::into_decoded) {
                Ok(Some((seq, x_hat, y_hat))) => {
                    stats.frames_decoded += 1;
                    if let Some(ts) = captured.lock().unwrap().remove(&seq) {
                        stats.latency_us.push(unix_micros().saturating_sub(ts));
                    }
                    stats.latent_digests.push((seq, latent_digest(&y_hat)));
                    if sink_error.is_none() {
                        if let Err(e) = sink.deliver(seq, &x_hat) {
                            sink_error = Some(e);
                            decoder.shutdown(false);
                        }
                    }
                    codec.recycle(x_hat);
                    codec.recycle(y_hat);
                }
                Ok(None) => stats.decode_failures += 1,
                Err(e) => {
                    log::warn!("{e}");
                    stats.decode_failures += 1;
                }
            }
        }
        reader.join().expect("reader thread panicked")
    });

    if let Some(e) = sink_error {
        return Err(StreamError::Sink(e));
    }
    stats.frames_received = reader.received;
    stats.frames_out_of_order = reader.out_of_order;
    stats.sequence_gaps = reader.gaps;
    stats.decode_failures += reader.parse_failures;
    stats.achieved_fps = rate(reader.first, reader.last, reader.received);
    stats.end_of_stream = reader.end_of_stream;
    stats.disconnect = reader.disconnect;
    stats.interrupted = reader.interrupted;
    Ok(stats)
}

#[derive(Default)]
struct ReaderTally {
    received: u64,
    out_of_order: u64,
    gaps: u64,
    parse_failures: u64,
    first: Option<Instant>,
    last: Option<Instant>,
    end_of_stream: bool,
    disconnect: Option<String>,
    interrupted: bool,
}
