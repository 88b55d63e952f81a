use std::fmt;
use std::sync::Arc;
use std::time::Instant;

/// Error type returned by stage work functions.
pub type StageError = Box<dyn std::error::Error + Send + Sync + 'static>;

type WorkFn<T> = dyn Fn(u64, T) -> Result<T, StageError> + Send + Sync;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Executor {
    /// One dedicated thread; at most one execution in flight.
    Serialized,
    /// `k` worker threads.
    Pool(usize),
}

impl Executor {
    pub fn workers(self) -> usize {
        match self {
            Executor::Serialized => 1,
            Executor::Pool(k) => k,
        }
    }
}

impl fmt::Display for Executor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Executor::Serialized => f.write_str("serialized"),
            Executor::Pool(k) => write!(f, "pool({k})"),
        }
    }
}

pub const DEFAULT_QUEUE_CAPACITY: usize = 4;

/// One pipeline stage: a name, an executor, the capacity of its input queue
/// and the work applied to each task.
pub struct StageSpec<T> {
    pub name: String,
    pub executor: Executor,
    pub queue_capacity: usize,
    work: Arc<WorkFn<T>>,
}

impl<T> Clone for StageSpec<T> {
    fn clone(&self) -> Self {
        StageSpec {
            name: self.name.clone(),
            executor: self.executor,
            queue_capacity: self.queue_capacity,
            work: self.work.clone(),
        }
    }
}

impl<T> fmt::Debug for StageSpec<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("StageSpec")
            .field("name", &self.name)
            .field("executor", &self.executor)
            .field("queue_capacity", &self.queue_capacity)
            .finish_non_exhaustive()
    }
}

impl<T> StageSpec<T> {
    pub fn new<F>(name: impl Into<String>, executor: Executor, work: F) -> Self
    where
        F: Fn(u64, T) -> Result<T, StageError> + Send + Sync + 'static,
    {
        StageSpec {
            name: name.into(),
            executor,
            queue_capacity: DEFAULT_QUEUE_CAPACITY,
            work: Arc::new(work),
        }
    }

    pub fn serialized<F>(name: impl Into<String>, work: F) -> Self
    where
        F: Fn(u64, T) -> Result<T, StageError> + Send + Sync + 'static,
    {
        Self::new(name, Executor::Serialized, work)
    }

    pub fn pool<F>(name: impl Into<String>, workers: usize, work: F) -> Self
    where
        F: Fn(u64, T) -> Result<T, StageError> + Send + Sync + 'static,
    {
        Self::new(name, Executor::Pool(workers), work)
    }

    pub fn with_capacity(mut self, capacity: usize) -> Self {
        self.queue_capacity = capacity;
        self
    }

    pub fn run(&self, sequence: u64, payload: T) -> Result<T, StageError> {
        (self.work)(sequence, payload)
    }
}

/// A failed task: the stage that failed and why.
#[derive(Debug, Clone)]
pub struct TaskError {
    pub sequence: u64,
    pub stage: String,
    pub message: String,
}

impl fmt::Display for TaskError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "frame {} failed in stage '{}': {}",
            self.sequence, self.stage, self.message
        )
    }
}

impl std::error::Error for TaskError {}

/// Lifecycle timestamps of one task.
#[derive(Debug, Clone)]
pub struct TaskTiming {
    pub submitted: Instant,
    pub stage_enter: Vec<Option<Instant>>,
    pub stage_exit: Vec<Option<Instant>>,
    pub completed: Instant,
}

impl TaskTiming {
    pub fn latency(&self) -> std::time::Duration {
        self.completed - self.submitted
    }
}

/// A task leaving the pipeline.
#[derive(Debug)]
pub struct Completed<T> {
    pub sequence: u64,
    pub result: Result<T, TaskError>,
    pub timing: TaskTiming,
}
