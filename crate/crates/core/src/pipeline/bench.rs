use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::time::{Duration, Instant};

use super::metrics::{PipelineMetrics, StageMetrics};
use super::stage::{Completed, StageSpec, TaskError, TaskTiming};
use super::{BufferPool, CollectError, Pipeline};

pub const DEFAULT_WARMUP: usize = 30;

/// How long a benchmark feeds frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Limit {
    /// Measured frames, fed after the warmup frames.
    Frames(usize),
    Duration(Duration),
}

struct Window {
    start: Option<Instant>,
    end: Option<Instant>,
    latencies_ms: Vec<f64>,
    measured: u64,
    failed: u64,
    seen: usize,
}

impl Window {
    fn new() -> Self {
        Window {
            start: None,
            end: None,
            latencies_ms: Vec::new(),
            measured: 0,
            failed: 0,
            seen: 0,
        }
    }

    /// Frames up to and including the `warmup`-th only open the window.
    fn record(&mut self, timing: &TaskTiming, ok: bool, warmup: usize, origin: Instant) {
        self.seen += 1;
        if self.seen <= warmup {
            self.start = Some(timing.completed);
            return;
        }
        self.start.get_or_insert(origin);
        self.end = Some(timing.completed);
        self.latencies_ms.push(timing.latency().as_secs_f64() * 1e3);
        if ok {
            self.measured += 1;
        } else {
            self.failed += 1;
        }
    }

    fn wall(&self) -> Duration {
        match (self.start, self.end) {
            (Some(s), Some(e)) if e > s => e - s,
            _ => Duration::ZERO,
        }
    }
}

/// Feeds `source` into `pipeline` as fast as backpressure allows and collects
/// every output in order, handing each to `sink`.
///
/// At most `pipeline.capacity()` frames are outstanding between submission
/// and `sink`, so a lagging collector cannot grow the working set. The first
/// `warmup` completions are excluded from all statistics; the throughput
/// window starts at the last warmup completion, after the pipeline's buffer
/// pool (if any) has been primed.
pub fn run_benchmark<T, S, K>(
    pipeline: &Pipeline<T>,
    mut source: S,
    limit: Limit,
    warmup: usize,
    mut sink: K,
) -> PipelineMetrics
where
    T: Send + 'static,
    S: FnMut(u64) -> T + Send,
    K: FnMut(Completed<T>),
{
    let mut busy_before = pipeline.stage_busy();
    let bp_before = pipeline.backpressure_events();
    let (mut alloc_before, mut reuse_before) = pool_counts(pipeline);
    let feeding = AtomicBool::new(true);
    let origin = Instant::now();
    let mut window = Window::new();
    let mut collected = 0u64;
    let first_seq = pipeline.submitted();
    let cap = pipeline.capacity() as u64;
    let sunk = AtomicU64::new(0);

    std::thread::scope(|scope| {
        let feeding = &feeding;
        let sunk = &sunk;
        let feeder = scope.spawn(move || {
            let mut i = 0u64;
            loop {
                let more = match limit {
                    Limit::Frames(n) => (i as usize) < warmup + n,
                    Limit::Duration(d) => origin.elapsed() < d,
                };
                if !more {
                    break;
                }
                while i >= sunk.load(Ordering::SeqCst) + cap && !pipeline.is_shut_down() {
                    std::thread::park_timeout(Duration::from_millis(5));
                }
                if pipeline.submit(source(i)).is_err() {
                    break;
                }
                i += 1;
            }
            feeding.store(false, Ordering::SeqCst);
        });
        loop {
            match pipeline.collect_timeout(Duration::from_millis(20)) {
                Ok(done) => {
                    collected += 1;
                    window.record(&done.timing, done.result.is_ok(), warmup, origin);
                    if window.seen == warmup {
                        if let Some(pool) = pipeline.pool() {
                            pool.prime(cap as usize);
                        }
                        busy_before = pipeline.stage_busy();
                        (alloc_before, reuse_before) = pool_counts(pipeline);
                    }
                    sink(done);
                    sunk.store(collected, Ordering::SeqCst);
                    feeder.thread().unpark();
                }
                Err(CollectError::Closed) => break,
                Err(CollectError::Timeout) => {}
            }
            if !feeding.load(Ordering::SeqCst)
                && collected + pipeline.discarded() >= pipeline.submitted() - first_seq
            {
                break;
            }
        }
    });

    let wall = window.wall();
    let busy_after = pipeline.stage_busy();
    let (alloc_after, reuse_after) = pool_counts(pipeline);
    let stages = busy_before
        .iter()
        .zip(&busy_after)
        .map(|((name, ex, b0), (_, _, b1))| StageMetrics {
            name: name.clone(),
            executor: *ex,
            busy_fraction: fraction(b1.saturating_sub(*b0), wall, ex.workers()),
        })
        .collect();
    finish_metrics(
        "pipelined",
        window,
        warmup,
        stages,
        pipeline.backpressure_events() - bp_before,
        (alloc_after - alloc_before, reuse_after - reuse_before),
    )
}

/// Runs every stage of one frame to completion before starting the next, on
/// the calling thread. Stage closures are the same ones a pipeline would run.
/// `pool`, if given, is only read for the allocation counters.
pub fn run_serial_reference<T, S, K>(
    stages: &[StageSpec<T>],
    mut source: S,
    limit: Limit,
    warmup: usize,
    pool: Option<&BufferPool>,
    mut sink: K,
) -> PipelineMetrics
where
    S: FnMut(u64) -> T,
    K: FnMut(Completed<T>),
{
    let origin = Instant::now();
    let mut window = Window::new();
    let mut busy = vec![Duration::ZERO; stages.len()];
    let mut busy_at_start = busy.clone();
    let counts = || {
        pool.map(|p| (p.allocations(), p.reuses()))
            .unwrap_or((0, 0))
    };
    let mut pool_at_start = counts();
    for seq in 0u64.. {
        let more = match limit {
            Limit::Frames(n) => (seq as usize) < warmup + n,
            Limit::Duration(d) => origin.elapsed() < d,
        };
        if !more {
            break;
        }
        let submitted = Instant::now();
        let mut enter = vec![None; stages.len()];
        let mut exit = vec![None; stages.len()];
        let mut state: Result<T, TaskError> = Ok(source(seq));
        for (i, stage) in stages.iter().enumerate() {
            let Ok(payload) = state else { break };
            let t0 = Instant::now();
            state = stage.run(seq, payload).map_err(|e| TaskError {
                sequence: seq,
                stage: stage.name.clone(),
                message: e.to_string(),
            });
            let t1 = Instant::now();
            enter[i] = Some(t0);
            exit[i] = Some(t1);
            busy[i] += t1 - t0;
        }
        let timing = TaskTiming {
            submitted,
            stage_enter: enter,
            stage_exit: exit,
            completed: Instant::now(),
        };
        window.record(&timing, state.is_ok(), warmup, origin);
        if window.seen == warmup {
            busy_at_start = busy.clone();
            pool_at_start = counts();
        }
        sink(Completed {
            sequence: seq,
            result: state,
            timing,
        });
    }
    let wall = window.wall();
    let stage_metrics = stages
        .iter()
        .zip(busy.iter().zip(&busy_at_start))
        .map(|(s, (b, b0))| StageMetrics {
            name: s.name.clone(),
            executor: s.executor,
            busy_fraction: fraction(*b - *b0, wall, 1),
        })
        .collect();
    let (a, r) = counts();
    finish_metrics(
        "serial",
        window,
        warmup,
        stage_metrics,
        0,
        (a - pool_at_start.0, r - pool_at_start.1),
    )
}

fn pool_counts<T: Send + 'static>(p: &Pipeline<T>) -> (u64, u64) {
    p.pool()
        .map(|pool| (pool.allocations(), pool.reuses()))
        .unwrap_or((0, 0))
}

fn fraction(busy: Duration, wall: Duration, workers: usize) -> f64 {
    if wall.is_zero() {
        return 0.0;
    }
    busy.as_secs_f64() / (wall.as_secs_f64() * workers as f64)
}

fn finish_metrics(
    mode: &'static str,
    mut window: Window,
    warmup: usize,
    stages: Vec<StageMetrics>,
    backpressure_events: u64,
    (pool_allocations, pool_reuses): (u64, u64),
) -> PipelineMetrics {
    let wall = window.wall();
    let frames = window.measured + window.failed;
    let (p50, p95, max) = PipelineMetrics::latency_summary(&mut window.latencies_ms);
    PipelineMetrics {
        mode,
        frames_completed: frames,
        frames_failed: window.failed,
        warmup_frames: window.seen.min(warmup) as u64,
        wall_time: wall,
        throughput_fps: if wall.is_zero() {
            0.0
        } else {
            frames as f64 / wall.as_secs_f64()
        },
        latency_p50_ms: p50,
        latency_p95_ms: p95,
        latency_max_ms: max,
        stages,
        backpressure_events,
        pool_allocations,
        pool_reuses,
    }
}
