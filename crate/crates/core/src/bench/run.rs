use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use parking_lot::Mutex;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::btree::{preload_keys, BPlusTree, TreeService, DEFAULT_FANOUT};
use crate::error::{Error, Result};
use crate::multicast::{KernelConfig, SequencerKernel};
use crate::smr::{
    timing, Engine, EngineConfig, EngineMode, FailedPath, Operation, ReplicaStats, RoutingConfig,
    Value,
};
use crate::verify::{
    check_convergence, check_linearizable, History, HistoryRecorder, InitialState, MapSpec, Verdict,
};

use super::metrics::{process_cpu_time, Metrics, Sample};
use super::workload::{CommandStream, Mix, WorkloadSpec};

pub const DEFAULT_WATCHDOG: Duration = Duration::from_secs(10);

/// How the preload is built. Contents are the same for every layout; the
/// shape is not. `Ascending` inserts in key order, which leaves every leaf
/// one entry above the minimum fill. `Shuffled` inserts in a seeded random
/// order, giving the spread of fills of an aged tree. `Packed` bulk-loads
/// full leaves.
#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PreloadLayout {
    Ascending,
    Shuffled,
    #[default]
    Packed,
}

impl fmt::Display for PreloadLayout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PreloadLayout::Ascending => "ascending",
            PreloadLayout::Shuffled => "shuffled",
            PreloadLayout::Packed => "packed",
        })
    }
}

impl FromStr for PreloadLayout {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ascending" => Ok(PreloadLayout::Ascending),
            "shuffled" => Ok(PreloadLayout::Shuffled),
            "packed" => Ok(PreloadLayout::Packed),
            _ => Err(Error::Config(format!(
                "unknown preload layout {s:?}; expected ascending, shuffled or packed"
            ))),
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct CrashPlan {
    pub replica: usize,
    /// Offset from the start of the run.
    pub at: Duration,
}

/// Everything needed to assemble and drive one benchmark run.
#[derive(Clone, Debug)]
pub struct RunSpec {
    pub mode: EngineMode,
    pub threads: usize,
    pub faults: usize,
    pub max_key: u64,
    pub preload: u64,
    pub preload_layout: PreloadLayout,
    pub fanout: usize,
    pub failed_path: FailedPath,
    pub transport_delay: Duration,
    pub service_time: Duration,
    pub workload: WorkloadSpec,
    pub record_history: bool,
    /// Check the recorded history for linearizability after the run.
    pub verify_history: bool,
    pub crash: Option<CrashPlan>,
    pub watchdog: Duration,
}

impl RunSpec {
    pub fn new(mode: EngineMode, threads: usize, workload: WorkloadSpec) -> Self {
        RunSpec {
            mode,
            threads: if mode == EngineMode::SequentialSmr {
                1
            } else {
                threads
            },
            faults: 1,
            max_key: 110_000,
            preload: 100_000,
            preload_layout: PreloadLayout::Packed,
            fanout: DEFAULT_FANOUT,
            failed_path: FailedPath::Remulticast,
            transport_delay: Duration::ZERO,
            service_time: Duration::ZERO,
            workload,
            record_history: false,
            verify_history: false,
            crash: None,
            watchdog: DEFAULT_WATCHDOG,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.workload.validate()?;
        RoutingConfig::new(self.threads, self.max_key, self.faults)?;
        if self.mode == EngineMode::SequentialSmr && self.threads != 1 {
            return Err(Error::Config("sequential SMR runs with K = 1".into()));
        }
        if self.preload > self.max_key.saturating_add(1) {
            return Err(Error::Config(format!(
                "cannot preload {} keys into [0, {}]",
                self.preload, self.max_key
            )));
        }
        if let Some(c) = self.crash {
            if c.replica > self.faults {
                return Err(Error::Config(format!(
                    "crash target {} is not a replica",
                    c.replica
                )));
            }
        }
        Ok(())
    }

    pub fn initial_state(&self) -> InitialState {
        InitialState {
            preload: self.preload,
            max_key: self.max_key,
        }
    }

    /// The preloaded tree every replica starts from.
    pub fn initial_tree(&self) -> Result<BPlusTree> {
        let mut keys: Vec<u64> = preload_keys(self.preload, self.max_key).collect();
        match self.preload_layout {
            PreloadLayout::Packed => {
                return BPlusTree::bulk_load(
                    self.fanout,
                    self.max_key,
                    keys.into_iter().map(|k| (k, Value::from_u64(k))),
                )
            }
            PreloadLayout::Shuffled => {
                keys.shuffle(&mut ChaCha8Rng::seed_from_u64(self.workload.seed))
            }
            PreloadLayout::Ascending => {}
        }
        let mut tree = BPlusTree::new(self.fanout, self.max_key)?;
        for k in keys {
            tree.insert(k, Value::from_u64(k));
        }
        Ok(tree)
    }

    /// The command sequence client `client` issues, in order.
    pub fn command_stream(&self, client: u64) -> CommandStream {
        CommandStream::new(self.workload.seed, client, self.workload.mix, self.max_key)
    }

    pub fn mix(&self) -> Mix {
        self.workload.mix
    }
}

#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ClientAccounting {
    pub client: u64,
    pub issued: u64,
    pub answered: u64,
    /// In flight when the run was cut off.
    pub pending: u64,
}

#[derive(Debug)]
pub struct RunReport {
    pub metrics: Metrics,
    pub accounting: Vec<ClientAccounting>,
    pub replica_stats: Vec<ReplicaStats>,
    pub live_replicas: Vec<usize>,
    pub converged: bool,
    /// Errors other than cancellation seen by clients.
    pub client_errors: Vec<String>,
    pub elapsed: Duration,
    pub samples: Vec<Sample>,
    pub history: Option<History>,
    pub linearizability: Option<Verdict>,
}

impl RunReport {
    /// Per-client issued commands, from the recorded history.
    pub fn command_log(&self) -> Option<Vec<(u64, u64, Operation)>> {
        let history = self.history.as_ref()?;
        let mut log: Vec<(u64, u64, Operation)> = history
            .events
            .iter()
            .filter(|e| e.kind == crate::verify::EventKind::Invoke)
            .map(|e| (e.client_id, e.client_seq, e.op))
            .collect();
        log.sort_by_key(|&(c, s, _)| (c, s));
        Some(log)
    }

    /// Throughput (Kcps) of answers completed in `[from, to)`.
    pub fn throughput_between(&self, from: Duration, to: Duration) -> f64 {
        let n = self
            .samples
            .iter()
            .filter(|s| s.completed_at >= from && s.completed_at < to)
            .count();
        let secs = to.saturating_sub(from).as_secs_f64();
        if secs == 0.0 {
            0.0
        } else {
            n as f64 / secs / 1e3
        }
    }
}

struct ClientResult {
    accounting: ClientAccounting,
    samples: Vec<Sample>,
    error: Option<String>,
}

/// Runs closed-loop clients against a freshly assembled engine and
/// aggregates metrics over the measurement window.
pub fn run_workload(spec: &RunSpec) -> Result<RunReport> {
    spec.validate()?;
    let routing = RoutingConfig::new(spec.threads, spec.max_key, spec.faults)?;
    let mut config = EngineConfig::new(spec.mode, routing);
    config.failed_path = spec.failed_path;
    config.transport_delay = spec.transport_delay;
    config.service_time = spec.service_time;
    let kernel = Arc::new(SequencerKernel::new(KernelConfig::new(
        spec.threads,
        routing.replicas,
    ))?);
    let base = spec.initial_tree()?;
    let threads = spec.threads;
    let engine = Engine::start(config, kernel, |_| {
        TreeService::with_tree(base.clone(), threads).expect("routing already validated")
    })?;
    drop(base);

    let history = spec
        .record_history
        .then(|| Arc::new(HistoryRecorder::new()));
    let cancel = Arc::new(AtomicBool::new(false));
    let progress = AtomicU64::new(0);
    let finished = AtomicUsize::new(0);
    let watchdog_fired = AtomicBool::new(false);
    let crash_error: Mutex<Option<Error>> = Mutex::new(None);
    let clients = spec.workload.clients;

    if let Some(plan) = spec.crash.filter(|c| c.at.is_zero()) {
        engine.crash(plan.replica)?;
    }
    let cpu_before = process_cpu_time();
    let start = Instant::now();
    let deadline = start + spec.workload.duration;

    let results: Vec<ClientResult> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..clients as u64)
            .map(|c| {
                let mut proxy = engine.client(c).with_cancel(Arc::clone(&cancel));
                if let Some(h) = &history {
                    proxy = proxy.with_history(Arc::clone(h));
                }
                let mut stream = spec.command_stream(c);
                let (progress, finished) = (&progress, &finished);
                s.spawn(move || {
                    timing::tighten_timer_slack();
                    let mut acc = ClientAccounting {
                        client: c,
                        ..Default::default()
                    };
                    let mut samples = Vec::new();
                    let mut error = None;
                    loop {
                        let done = match spec.workload.ops_per_client {
                            Some(n) => acc.issued >= n,
                            None => Instant::now() >= deadline,
                        };
                        if done {
                            break;
                        }
                        let op = stream.next().expect("command streams are infinite");
                        acc.issued += 1;
                        match proxy.invoke(op) {
                            Ok(inv) => {
                                acc.answered += 1;
                                progress.fetch_add(1, Ordering::Relaxed);
                                samples.push(Sample {
                                    client: c,
                                    completed_at: Instant::now().saturating_duration_since(start),
                                    latency: inv.latency(),
                                    optimistic: inv.optimistic,
                                    failed: inv.failed,
                                });
                            }
                            Err(Error::Cancelled) => {
                                acc.pending += 1;
                                break;
                            }
                            Err(e) => {
                                acc.pending += 1;
                                error = Some(e.to_string());
                                break;
                            }
                        }
                    }
                    finished.fetch_add(1, Ordering::Release);
                    ClientResult {
                        accounting: acc,
                        samples,
                        error,
                    }
                })
            })
            .collect();

        // monitor: crash injection and watchdog
        let mut crashed = spec.crash.is_some_and(|c| c.at.is_zero());
        let mut last = progress.load(Ordering::Relaxed);
        let mut last_change = Instant::now();
        while finished.load(Ordering::Acquire) < clients {
            std::thread::sleep(Duration::from_millis(5));
            if let Some(plan) = spec.crash.filter(|_| !crashed) {
                if start.elapsed() >= plan.at {
                    crashed = true;
                    if let Err(e) = engine.crash(plan.replica) {
                        *crash_error.lock() = Some(e);
                    }
                }
            }
            let now = progress.load(Ordering::Relaxed);
            if now != last {
                last = now;
                last_change = Instant::now();
            } else if last_change.elapsed() >= spec.watchdog {
                watchdog_fired.store(true, Ordering::Relaxed);
                cancel.store(true, Ordering::Relaxed);
            }
        }
        handles
            .into_iter()
            .map(|h| h.join().expect("client thread panicked"))
            .collect()
    });
    let elapsed = start.elapsed();
    let cpu = cpu_before
        .zip(process_cpu_time())
        .map(|(a, b)| (b - a).as_secs_f64() / elapsed.as_secs_f64() * 100.0);

    if let Some(e) = crash_error.into_inner() {
        return Err(e);
    }
    if watchdog_fired.load(Ordering::Relaxed) {
        engine.shutdown();
        return Err(Error::Watchdog(spec.watchdog));
    }
    if !engine.wait_quiescent(spec.watchdog) {
        engine.shutdown();
        return Err(Error::Watchdog(spec.watchdog));
    }
    let digests = engine.digests();
    let live_replicas: Vec<usize> = (0..digests.len())
        .filter(|&r| digests[r].is_some())
        .collect();
    let converged = check_convergence(&digests)?;
    let replica_stats = engine.stats();
    engine.shutdown();

    let mut samples = Vec::new();
    let mut accounting = Vec::new();
    let mut client_errors = Vec::new();
    for r in results {
        samples.extend(r.samples);
        accounting.push(r.accounting);
        client_errors.extend(r.error);
    }
    samples.sort_by_key(|s| s.completed_at);

    let discard = spec.workload.discard;
    let (from, to) = if elapsed > discard * 2 {
        (discard, elapsed - discard)
    } else {
        (Duration::ZERO, elapsed)
    };
    let mut metrics = Metrics::compute(&samples, from, to, spec.threads);
    metrics.cpu_usage_best_effort = cpu;

    let history = history.map(|h| h.history(spec.initial_state()));
    let linearizability = match (&history, spec.verify_history) {
        (Some(h), true) => Some(check_linearizable(
            h,
            &MapSpec::from_initial(spec.initial_state()),
            crate::verify::DEFAULT_BUDGET,
        )?),
        _ => None,
    };

    Ok(RunReport {
        metrics,
        accounting,
        replica_stats,
        live_replicas,
        converged,
        client_errors,
        elapsed,
        samples,
        history,
        linearizability,
    })
}
