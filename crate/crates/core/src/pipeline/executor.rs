use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use crossbeam_channel::{bounded, unbounded, Receiver, RecvTimeoutError, Sender, TrySendError};
use thiserror::Error;

use super::stage::{Completed, Executor, StageSpec, TaskError, TaskTiming};
use super::BufferPool;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PipelineError {
    #[error("a pipeline needs at least one stage")]
    NoStages,
    #[error("stage '{0}' has zero queue capacity")]
    ZeroCapacity(String),
    #[error("stage '{0}' has zero workers")]
    ZeroWorkers(String),
    #[error("failed to spawn a worker thread: {0}")]
    Spawn(String),
}

/// Returned by `submit` after shutdown, carrying the unconsumed payload.
#[derive(Error)]
#[error("pipeline is shut down")]
pub struct SubmitError<T>(pub T);

impl<T> std::fmt::Debug for SubmitError<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("SubmitError(..)")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum CollectError {
    #[error("timed out waiting for the next frame")]
    Timeout,
    #[error("pipeline is shut down and drained")]
    Closed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ShutdownReport {
    /// Tasks dropped without completing (no-drain shutdown only).
    pub discarded: u64,
}

enum Slot<T> {
    Live(T),
    Failed(TaskError),
    Discarded,
}

struct Task<T> {
    sequence: u64,
    /// Number of stages this task has passed through.
    state: usize,
    slot: Slot<T>,
    submitted: Instant,
    enter: Vec<Option<Instant>>,
    exit: Vec<Option<Instant>>,
}

#[derive(Default)]
struct Counters {
    abort: AtomicBool,
    backpressure: AtomicU64,
    discarded: AtomicU64,
    reorder_peak: AtomicUsize,
}

struct StageState {
    name: String,
    executor: Executor,
    queue_capacity: usize,
    busy_ns: AtomicU64,
}

struct Reorder<T> {
    next: u64,
    held: BTreeMap<u64, Task<T>>,
    tx: Sender<Task<T>>,
}

/// Where a stage sends finished tasks: straight to the next queue, or through
/// a reorder buffer when several workers may finish out of order.
enum Forward<T> {
    Direct(Sender<Task<T>>),
    Reorder(Mutex<Reorder<T>>),
}

fn send_counted<T>(tx: &Sender<Task<T>>, task: Task<T>, counters: &Counters) {
    match tx.try_send(task) {
        Ok(()) => {}
        Err(TrySendError::Full(task)) => {
            counters.backpressure.fetch_add(1, Ordering::Relaxed);
            // Disconnection only happens when the pipeline itself is gone.
            let _ = tx.send(task);
        }
        Err(TrySendError::Disconnected(_)) => {}
    }
}

impl<T> Forward<T> {
    fn push(&self, task: Task<T>, counters: &Counters) {
        match self {
            Forward::Direct(tx) => send_counted(tx, task, counters),
            Forward::Reorder(m) => {
                let mut r = m.lock().unwrap();
                if task.sequence != r.next {
                    r.held.insert(task.sequence, task);
                    counters
                        .reorder_peak
                        .fetch_max(r.held.len(), Ordering::Relaxed);
                    return;
                }
                r.next += 1;
                send_counted(&r.tx, task, counters);
                loop {
                    let next = r.next;
                    let Some(t) = r.held.remove(&next) else { break };
                    r.next += 1;
                    send_counted(&r.tx, t, counters);
                }
            }
        }
    }
}

struct Input<T> {
    tx: Option<Sender<Task<T>>>,
    next_seq: u64,
}

/// A running multi-stage pipeline.
///
/// Each stage owns a bounded FIFO queue drained by its executor's threads.
/// Completed tasks are emitted by [`collect`](Self::collect) strictly in
/// submission order.
pub struct Pipeline<T: Send + 'static> {
    stages: Arc<Vec<StageState>>,
    input: Mutex<Input<T>>,
    output: Receiver<Task<T>>,
    counters: Arc<Counters>,
    workers: Mutex<Vec<JoinHandle<()>>>,
    pool: Option<Arc<BufferPool>>,
    created: Instant,
}

impl<T: Send + 'static> Pipeline<T> {
    pub fn build(specs: Vec<StageSpec<T>>) -> Result<Self, PipelineError> {
        if specs.is_empty() {
            return Err(PipelineError::NoStages);
        }
        for s in &specs {
            if s.queue_capacity == 0 {
                return Err(PipelineError::ZeroCapacity(s.name.clone()));
            }
            if s.executor.workers() == 0 {
                return Err(PipelineError::ZeroWorkers(s.name.clone()));
            }
        }
        let n = specs.len();
        let stages = Arc::new(
            specs
                .iter()
                .map(|s| StageState {
                    name: s.name.clone(),
                    executor: s.executor,
                    queue_capacity: s.queue_capacity,
                    busy_ns: AtomicU64::new(0),
                })
                .collect::<Vec<_>>(),
        );
        let counters = Arc::new(Counters::default());

        let mut senders = Vec::with_capacity(n);
        let mut receivers = Vec::with_capacity(n);
        for s in &specs {
            let (tx, rx) = bounded(s.queue_capacity);
            senders.push(tx);
            receivers.push(rx);
        }
        let (out_tx, out_rx) = unbounded();
        let input_tx = senders[0].clone();
        let mut downstream: Vec<Sender<Task<T>>> = senders.into_iter().skip(1).collect();
        downstream.push(out_tx);

        let mut handles = Vec::new();
        for (i, ((spec, rx), next)) in specs.into_iter().zip(receivers).zip(downstream).enumerate()
        {
            let workers = spec.executor.workers();
            let forward = Arc::new(if workers > 1 {
                Forward::Reorder(Mutex::new(Reorder {
                    next: 0,
                    held: BTreeMap::new(),
                    tx: next,
                }))
            } else {
                Forward::Direct(next)
            });
            for w in 0..workers {
                let ctx = WorkerCtx {
                    index: i,
                    spec: spec.clone(),
                    rx: rx.clone(),
                    forward: forward.clone(),
                    counters: counters.clone(),
                    stages: stages.clone(),
                };
                let h = std::thread::Builder::new()
                    .name(format!("{}-{w}", spec.name))
                    .spawn(move || ctx.run())
                    .map_err(|e| PipelineError::Spawn(e.to_string()))?;
                handles.push(h);
            }
        }
        Ok(Pipeline {
            stages,
            input: Mutex::new(Input {
                tx: Some(input_tx),
                next_seq: 0,
            }),
            output: out_rx,
            counters,
            workers: Mutex::new(handles),
            pool: None,
            created: Instant::now(),
        })
    }

    /// Attaches a buffer pool whose counters are reported in metrics.
    pub fn with_pool(mut self, pool: Arc<BufferPool>) -> Self {
        self.pool = Some(pool);
        self
    }

    pub fn pool(&self) -> Option<&Arc<BufferPool>> {
        self.pool.as_ref()
    }

    pub fn num_stages(&self) -> usize {
        self.stages.len()
    }

    /// Enqueues a payload at stage 0, blocking while that queue is full.
    pub fn submit(&self, payload: T) -> Result<u64, SubmitError<T>> {
        let mut input = self.input.lock().unwrap();
        let seq = input.next_seq;
        let n = self.stages.len();
        let Some(tx) = input.tx.as_ref() else {
            return Err(SubmitError(payload));
        };
        let task = Task {
            sequence: seq,
            state: 0,
            slot: Slot::Live(payload),
            submitted: Instant::now(),
            enter: vec![None; n],
            exit: vec![None; n],
        };
        let res = match tx.try_send(task) {
            Ok(()) => Ok(()),
            Err(TrySendError::Full(task)) => {
                self.counters.backpressure.fetch_add(1, Ordering::Relaxed);
                tx.send(task).map_err(|e| e.into_inner())
            }
            Err(TrySendError::Disconnected(task)) => Err(task),
        };
        match res {
            Ok(()) => {
                input.next_seq += 1;
                Ok(seq)
            }
            Err(task) => match task.slot {
                Slot::Live(p) => Err(SubmitError(p)),
                _ => unreachable!("submitted tasks are live"),
            },
        }
    }

    /// Number of tasks accepted so far.
    /// Tasks the stages can hold at once: every queue full and every worker busy.
    pub fn capacity(&self) -> usize {
        self.stages
            .iter()
            .map(|s| s.queue_capacity + s.executor.workers())
            .sum()
    }

    pub fn submitted(&self) -> u64 {
        self.input.lock().unwrap().next_seq
    }

    /// Next task in sequence order; `None` once shut down and drained.
    pub fn collect(&self) -> Option<Completed<T>> {
        loop {
            let task = self.output.recv().ok()?;
            if let Some(done) = Self::finish(task) {
                return Some(done);
            }
        }
    }

    pub fn collect_timeout(&self, timeout: Duration) -> Result<Completed<T>, CollectError> {
        let deadline = Instant::now() + timeout;
        loop {
            let task = self.output.recv_deadline(deadline).map_err(|e| match e {
                RecvTimeoutError::Timeout => CollectError::Timeout,
                RecvTimeoutError::Disconnected => CollectError::Closed,
            })?;
            if let Some(done) = Self::finish(task) {
                return Ok(done);
            }
        }
    }

    fn finish(task: Task<T>) -> Option<Completed<T>> {
        let completed = task
            .exit
            .last()
            .copied()
            .flatten()
            .unwrap_or_else(Instant::now);
        let result = match task.slot {
            Slot::Live(p) => Ok(p),
            Slot::Failed(e) => Err(e),
            Slot::Discarded => return None,
        };
        Some(Completed {
            sequence: task.sequence,
            result,
            timing: TaskTiming {
                submitted: task.submitted,
                stage_enter: task.enter,
                stage_exit: task.exit,
                completed,
            },
        })
    }

    /// Stops accepting work and joins every executor thread.
    ///
    /// With `drain`, every accepted task runs to completion first. Without
    /// it, queued tasks are discarded and in-flight executions finish. Calling
    /// this again is a no-op.
    pub fn shutdown(&self, drain: bool) -> ShutdownReport {
        if !drain {
            self.counters.abort.store(true, Ordering::SeqCst);
        }
        self.input.lock().unwrap().tx = None;
        let handles = std::mem::take(&mut *self.workers.lock().unwrap());
        for h in handles {
            let _ = h.join();
        }
        ShutdownReport {
            discarded: self.counters.discarded.load(Ordering::Relaxed),
        }
    }

    pub fn is_shut_down(&self) -> bool {
        self.input.lock().unwrap().tx.is_none()
    }

    pub fn backpressure_events(&self) -> u64 {
        self.counters.backpressure.load(Ordering::Relaxed)
    }

    pub fn discarded(&self) -> u64 {
        self.counters.discarded.load(Ordering::Relaxed)
    }

    /// Largest number of tasks held at once by any reorder buffer.
    pub fn reorder_peak(&self) -> usize {
        self.counters.reorder_peak.load(Ordering::Relaxed)
    }

    /// `(name, executor, accumulated busy time)` for each stage.
    pub fn stage_busy(&self) -> Vec<(String, Executor, Duration)> {
        self.stages
            .iter()
            .map(|s| {
                (
                    s.name.clone(),
                    s.executor,
                    Duration::from_nanos(s.busy_ns.load(Ordering::Relaxed)),
                )
            })
            .collect()
    }

    pub fn uptime(&self) -> Duration {
        self.created.elapsed()
    }
}

impl<T: Send + 'static> Drop for Pipeline<T> {
    fn drop(&mut self) {
        self.shutdown(false);
    }
}

struct WorkerCtx<T> {
    index: usize,
    spec: StageSpec<T>,
    rx: Receiver<Task<T>>,
    forward: Arc<Forward<T>>,
    counters: Arc<Counters>,
    stages: Arc<Vec<StageState>>,
}

impl<T> WorkerCtx<T> {
    fn run(self) {
        let stage = &self.stages[self.index];
        for mut task in self.rx.iter() {
            debug_assert_eq!(task.state, self.index);
            let abort = self.counters.abort.load(Ordering::SeqCst);
            let slot = std::mem::replace(&mut task.slot, Slot::Discarded);
            task.slot = match slot {
                Slot::Discarded => Slot::Discarded,
                _ if abort => {
                    self.counters.discarded.fetch_add(1, Ordering::Relaxed);
                    Slot::Discarded
                }
                Slot::Failed(e) => Slot::Failed(e),
                Slot::Live(payload) => {
                    let start = Instant::now();
                    task.enter[self.index] = Some(start);
                    let seq = task.sequence;
                    let out = catch_unwind(AssertUnwindSafe(|| self.spec.run(seq, payload)));
                    let end = Instant::now();
                    task.exit[self.index] = Some(end);
                    stage
                        .busy_ns
                        .fetch_add((end - start).as_nanos() as u64, Ordering::Relaxed);
                    match out {
                        Ok(Ok(p)) => Slot::Live(p),
                        Ok(Err(e)) => Slot::Failed(TaskError {
                            sequence: seq,
                            stage: stage.name.clone(),
                            message: e.to_string(),
                        }),
                        Err(_) => Slot::Failed(TaskError {
                            sequence: seq,
                            stage: stage.name.clone(),
                            message: "stage panicked".into(),
                        }),
                    }
                }
            };
            task.state += 1;
            self.forward.push(task, &self.counters);
        }
    }
}
