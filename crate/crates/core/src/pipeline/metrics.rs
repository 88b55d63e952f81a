use std::fmt::{self, Write as _};
use std::time::Duration;

use super::Executor;

#[derive(Debug, Clone, PartialEq)]
pub struct StageMetrics {
    pub name: String,
    pub executor: Executor,
    /// Busy time over `wall_time * workers`.
    pub busy_fraction: f64,
}

/// Throughput and latency over the measured (post-warmup) window.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineMetrics {
    pub mode: &'static str,
    /// Measured completions, failed ones included.
    pub frames_completed: u64,
    pub frames_failed: u64,
    pub warmup_frames: u64,
    pub wall_time: Duration,
    pub throughput_fps: f64,
    pub latency_p50_ms: f64,
    pub latency_p95_ms: f64,
    pub latency_max_ms: f64,
    pub stages: Vec<StageMetrics>,
    pub backpressure_events: u64,
    pub pool_allocations: u64,
    pub pool_reuses: u64,
}

/// Nearest-rank percentile of an ascending slice.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

impl PipelineMetrics {
    pub(crate) fn latency_summary(latencies_ms: &mut [f64]) -> (f64, f64, f64) {
        latencies_ms.sort_by(f64::total_cmp);
        (
            percentile(latencies_ms, 50.0),
            percentile(latencies_ms, 95.0),
            latencies_ms.last().copied().unwrap_or(0.0),
        )
    }

    /// Single-line `key=value` record.
    pub fn to_kv(&self) -> String {
        let mut s = format!(
            "mode={} frames={} failed={} warmup={} wall_s={:.6} fps={:.3} p50_ms={:.3} p95_ms={:.3} max_ms={:.3} backpressure={} pool_allocations={} pool_reuses={}",
            self.mode,
            self.frames_completed,
            self.frames_failed,
            self.warmup_frames,
            self.wall_time.as_secs_f64(),
            self.throughput_fps,
            self.latency_p50_ms,
            self.latency_p95_ms,
            self.latency_max_ms,
            self.backpressure_events,
            self.pool_allocations,
            self.pool_reuses,
        );
        for st in &self.stages {
            let _ = write!(s, " busy.{}={:.3}", st.name, st.busy_fraction);
        }
        s
    }

    pub fn table(&self) -> String {
        let mut rows: Vec<(String, String)> = vec![
            ("mode".into(), self.mode.to_string()),
            ("frames".into(), self.frames_completed.to_string()),
            ("failed".into(), self.frames_failed.to_string()),
            (
                "wall (s)".into(),
                format!("{:.3}", self.wall_time.as_secs_f64()),
            ),
            (
                "throughput (fps)".into(),
                format!("{:.2}", self.throughput_fps),
            ),
            (
                "latency p50 (ms)".into(),
                format!("{:.2}", self.latency_p50_ms),
            ),
            (
                "latency p95 (ms)".into(),
                format!("{:.2}", self.latency_p95_ms),
            ),
            (
                "latency max (ms)".into(),
                format!("{:.2}", self.latency_max_ms),
            ),
            ("backpressure".into(), self.backpressure_events.to_string()),
            ("pool allocations".into(), self.pool_allocations.to_string()),
            ("pool reuses".into(), self.pool_reuses.to_string()),
        ];
        for st in &self.stages {
            rows.push((
                format!("busy {} [{}]", st.name, st.executor),
                format!("{:.3}", st.busy_fraction),
            ));
        }
        let w = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
        let mut s = String::new();
        for (k, v) in rows {
            let _ = writeln!(s, "{k:<w$} {v:>12}");
        }
        s
    }
}

impl fmt::Display for PipelineMetrics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.table())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_rank() {
        let v: Vec<f64> = (1..=20).map(f64::from).collect();
        assert_eq!(percentile(&v, 50.0), 10.0);
        assert_eq!(percentile(&v, 95.0), 19.0);
        assert_eq!(percentile(&v, 100.0), 20.0);
        assert_eq!(percentile(&[3.0], 95.0), 3.0);
        assert_eq!(percentile(&[], 50.0), 0.0);
    }

    #[test]
    fn kv_is_one_line() {
        let m = PipelineMetrics {
            mode: "pipelined",
            frames_completed: 10,
            frames_failed: 0,
            warmup_frames: 2,
            wall_time: Duration::from_millis(100),
            throughput_fps: 100.0,
            latency_p50_ms: 1.0,
            latency_p95_ms: 2.0,
            latency_max_ms: 3.0,
            stages: vec![StageMetrics {
                name: "a".into(),
                executor: Executor::Pool(2),
                busy_fraction: 0.5,
            }],
            backpressure_events: 4,
            pool_allocations: 1,
            pool_reuses: 9,
        };
        let kv = m.to_kv();
        assert!(!kv.contains('\n'));
        assert!(kv.contains("fps=100.000"));
        assert!(kv.contains("busy.a=0.500"));
        assert!(m.table().contains("busy a [pool(2)]"));
    }
}
