//! Multi-stage task pipeline with bounded queues, serialized and pooled
//! executors, in-order output, a buffer pool and benchmark harnesses.

mod bench;
mod executor;
mod metrics;
mod pool;
mod stage;
mod stages;

pub use bench::{run_benchmark, run_serial_reference, Limit, DEFAULT_WARMUP};
pub use executor::{CollectError, Pipeline, PipelineError, ShutdownReport, SubmitError};
pub use metrics::{percentile, PipelineMetrics, StageMetrics};
pub use pool::{BufferPool, PoolError, PoolStats};
pub use stage::{
    Completed, Executor, StageError, StageSpec, TaskError, TaskTiming, DEFAULT_QUEUE_CAPACITY,
};
pub use stages::{decoder_stages, describe, encoder_stages, CodecPayload, StageLayout};
