use std::time::Duration;

use serde::Serialize;

/// One answered command as seen by its client.
#[derive(Copy, Clone, Debug, PartialEq)]
pub struct Sample {
    pub client: u64,
    /// Response time, relative to the start of the run.
    pub completed_at: Duration,
    pub latency: Duration,
    pub optimistic: bool,
    pub failed: bool,
}

#[derive(Copy, Clone, Debug, PartialEq, Serialize)]
pub struct LatencyStats {
    pub count: u64,
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p99_ms: f64,
}

impl LatencyStats {
    pub fn from_latencies(mut ms: Vec<f64>) -> Option<Self> {
        if ms.is_empty() {
            return None;
        }
        ms.sort_by(f64::total_cmp);
        let mean_ms = ms.iter().sum::<f64>() / ms.len() as f64;
        Some(LatencyStats {
            count: ms.len() as u64,
            mean_ms,
            p50_ms: percentile(&ms, 50.0),
            p99_ms: percentile(&ms, 99.0),
        })
    }
}

/// Nearest-rank percentile of sorted data.
fn percentile(sorted: &[f64], p: f64) -> f64 {
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Metrics {
    pub throughput_kcps: f64,
    pub latency_all: Option<LatencyStats>,
    /// Optimistic commands whose check passed.
    pub latency_passed: Option<LatencyStats>,
    pub latency_failed: Option<LatencyStats>,
    pub optimistic: u64,
    pub failed: u64,
    /// `failed / optimistic`, 0 without optimistic commands.
    pub fail_rate: f64,
    pub per_thread_throughput_normalized: f64,
    /// Process CPU time over wall time, in percent of one core. Best effort.
    pub cpu_usage_best_effort: Option<f64>,
    pub window_s: f64,
    pub commands: u64,
}

impl Metrics {
    /// Aggregates the samples completed in `[from, to)`.
    pub fn compute(samples: &[Sample], from: Duration, to: Duration, threads: usize) -> Self {
        let window: Vec<&Sample> = samples
            .iter()
            .filter(|s| s.completed_at >= from && s.completed_at < to)
            .collect();
        let window_s = (to.saturating_sub(from)).as_secs_f64();
        let ms = |s: &&Sample| s.latency.as_secs_f64() * 1e3;
        let commands = window.len() as u64;
        let optimistic = window.iter().filter(|s| s.optimistic).count() as u64;
        let failed = window.iter().filter(|s| s.failed).count() as u64;
        let throughput_kcps = if window_s > 0.0 {
            commands as f64 / window_s / 1e3
        } else {
            0.0
        };
        Metrics {
            throughput_kcps,
            latency_all: LatencyStats::from_latencies(window.iter().map(ms).collect()),
            latency_passed: LatencyStats::from_latencies(
                window
                    .iter()
                    .filter(|s| s.optimistic && !s.failed)
                    .map(ms)
                    .collect(),
            ),
            latency_failed: LatencyStats::from_latencies(
                window.iter().filter(|s| s.failed).map(ms).collect(),
            ),
            optimistic,
            failed,
            fail_rate: if optimistic == 0 {
                0.0
            } else {
                failed as f64 / optimistic as f64
            },
            per_thread_throughput_normalized: throughput_kcps / threads as f64,
            cpu_usage_best_effort: None,
            window_s,
            commands,
        }
    }
}

/// Process CPU time (user + system) so far.
pub fn process_cpu_time() -> Option<Duration> {
    #[cfg(unix)]
    {
        let mut usage = std::mem::MaybeUninit::<libc::rusage>::zeroed();
        // SAFETY: getrusage fills the struct it is given.
        let rc = unsafe { libc::getrusage(libc::RUSAGE_SELF, usage.as_mut_ptr()) };
        if rc != 0 {
            return None;
        }
        // SAFETY: initialized by the successful call above.
        let usage = unsafe { usage.assume_init() };
        let tv = |t: libc::timeval| Duration::new(t.tv_sec as u64, t.tv_usec as u32 * 1000);
        Some(tv(usage.ru_utime) + tv(usage.ru_stime))
    }
    #[cfg(not(unix))]
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(at_ms: u64, lat_ms: u64, optimistic: bool, failed: bool) -> Sample {
        Sample {
            client: 0,
            completed_at: Duration::from_millis(at_ms),
            latency: Duration::from_millis(lat_ms),
            optimistic,
            failed,
        }
    }

    #[test]
    fn percentiles() {
        let s = LatencyStats::from_latencies((1..=100).map(f64::from).collect()).unwrap();
        assert_eq!((s.p50_ms, s.p99_ms, s.mean_ms), (50.0, 99.0, 50.5));
        assert!(LatencyStats::from_latencies(vec![]).is_none());
    }

    #[test]
    fn window_and_fail_rate() {
        let samples = [
            sample(500, 1, true, false),
            sample(1500, 1, true, false),
            sample(1600, 1, true, false),
            sample(1700, 3, true, true),
            sample(1800, 1, false, false),
            sample(2500, 1, true, true),
        ];
        let m = Metrics::compute(&samples, Duration::from_secs(1), Duration::from_secs(2), 2);
        assert_eq!(m.commands, 4);
        assert_eq!((m.optimistic, m.failed), (3, 1));
        assert!((m.fail_rate - 1.0 / 3.0).abs() < 1e-12);
        assert!((m.throughput_kcps - 0.004).abs() < 1e-12);
        assert!((m.per_thread_throughput_normalized - 0.002).abs() < 1e-12);
        assert_eq!(m.latency_failed.unwrap().mean_ms, 3.0);
        assert_eq!(m.latency_passed.unwrap().count, 2);
    }

    #[test]
    fn reads_only_never_fail() {
        let samples = [sample(10, 1, false, false)];
        let m = Metrics::compute(&samples, Duration::ZERO, Duration::from_secs(1), 1);
        assert_eq!(m.fail_rate, 0.0);
        assert!(m.latency_passed.is_none());
    }

    #[test]
    fn cpu_time_is_monotone() {
        let a = process_cpu_time();
        let mut x = 0u64;
        for i in 0..100_000u64 {
            x = x.wrapping_add(i * i);
        }
        std::hint::black_box(x);
        if let (Some(a), Some(b)) = (a, process_cpu_time()) {
            assert!(b >= a);
        }
    }
}
