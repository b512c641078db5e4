use std::collections::{HashMap, HashSet};
use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::mpsc::Sender;
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use parking_lot::{Condvar, Mutex, RwLock};
use serde::{Deserialize, Serialize};

use crate::btree::{Digest, SafetyVerdict};
use crate::error::{Error, Result};
use crate::multicast::{wait_idle, AtomicMulticast, GroupSet, MsgId, MulticastMessage};

use super::client::ClientProxy;
use super::command::{Command, CommandId, CommandKind, Mode, Outcome};
use super::routing::RoutingConfig;
use super::service::Service;
use super::timing::{self, Clock};

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EngineMode {
    #[serde(rename = "smr")]
    SequentialSmr,
    #[serde(rename = "psmr")]
    Psmr,
    #[serde(rename = "opt-psmr")]
    OptPsmr,
}

impl EngineMode {
    pub const ALL: [EngineMode; 3] = [
        EngineMode::SequentialSmr,
        EngineMode::Psmr,
        EngineMode::OptPsmr,
    ];
}

impl fmt::Display for EngineMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EngineMode::SequentialSmr => "smr",
            EngineMode::Psmr => "psmr",
            EngineMode::OptPsmr => "opt-psmr",
        })
    }
}

impl FromStr for EngineMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "smr" => Ok(EngineMode::SequentialSmr),
            "psmr" => Ok(EngineMode::Psmr),
            "opt-psmr" | "optpsmr" => Ok(EngineMode::OptPsmr),
            _ => Err(Error::Config(format!(
                "unknown engine mode {s:?} (smr, psmr, opt-psmr)"
            ))),
        }
    }
}

/// What a replica does with a command that fails its safety check.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FailedPath {
    /// The replica multicasts the conservative copy itself.
    Remulticast,
    /// The replica tells the client, which resubmits conservatively.
    ClientResubmit,
}

impl FromStr for FailedPath {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "remulticast" | "re-multicast" => Ok(FailedPath::Remulticast),
            "client-resubmit" => Ok(FailedPath::ClientResubmit),
            _ => Err(Error::Config(format!(
                "unknown failed path {s:?} (remulticast, client-resubmit)"
            ))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct EngineConfig {
    pub mode: EngineMode,
    pub routing: RoutingConfig,
    pub failed_path: FailedPath,
    /// One-way delay on every client/replica hop.
    pub transport_delay: Duration,
    /// Synthetic service time added to every command execution.
    pub service_time: Duration,
    /// Record a [`TraceEvent`] for every check, execution and re-multicast.
    pub trace: bool,
}

impl EngineConfig {
    pub fn new(mode: EngineMode, routing: RoutingConfig) -> Self {
        EngineConfig {
            mode,
            routing,
            failed_path: FailedPath::Remulticast,
            transport_delay: Duration::ZERO,
            service_time: Duration::ZERO,
            trace: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.routing.validate()?;
        if self.mode == EngineMode::SequentialSmr && self.routing.threads != 1 {
            return Err(Error::Config(
                "sequential SMR runs one thread per replica (K = 1)".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct Response {
    pub cmd_id: CommandId,
    pub outcome: Outcome,
    pub replica_id: usize,
    pub executing_thread: usize,
    /// Mode of the copy that was executed.
    pub mode: Mode,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum ReplyKind {
    Response(Response),
    /// The optimistic copy failed its check; resubmit conservatively.
    Resubmit,
}

#[derive(Copy, Clone, Debug)]
pub struct Reply {
    pub cmd_id: CommandId,
    pub kind: ReplyKind,
    pub replica: usize,
    /// When the reply reaches the client under the injected transport delay.
    pub deliver_at: Instant,
}

#[derive(Default)]
pub(crate) struct ClientRegistry {
    clients: RwLock<HashMap<u64, Sender<Reply>>>,
}

impl ClientRegistry {
    pub(crate) fn register(&self, id: u64, tx: Sender<Reply>) {
        self.clients.write().insert(id, tx);
    }

    pub(crate) fn unregister(&self, id: u64) {
        self.clients.write().remove(&id);
    }

    fn send(&self, client: u64, reply: Reply) {
        if let Some(tx) = self.clients.read().get(&client) {
            let _ = tx.send(reply);
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum TraceAction {
    Checked {
        verdict: SafetyVerdict,
        executed_before: u64,
    },
    Executed {
        mode: Mode,
        synchronous: bool,
    },
    Remulticast,
    ResubmitNotice,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct TraceEvent {
    pub replica: usize,
    pub thread: usize,
    pub cmd_id: CommandId,
    pub msg_id: MsgId,
    pub action: TraceAction,
}

#[derive(Default)]
struct Counters {
    checks_passed: AtomicU64,
    checks_failed: AtomicU64,
    executed_parallel: AtomicU64,
    executed_sync: AtomicU64,
    state_changes: AtomicU64,
    remulticasts: AtomicU64,
    resubmit_notices: AtomicU64,
    duplicates: AtomicU64,
    overlap_violations: AtomicU64,
}

/// Counters of one replica.
#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ReplicaStats {
    pub checks_passed: u64,
    pub checks_failed: u64,
    pub executed_parallel: u64,
    pub executed_sync: u64,
    pub remulticasts: u64,
    pub resubmit_notices: u64,
    pub duplicates: u64,
    /// Executions that overlapped a synchronous execution, plus writers the
    /// service saw on shared state.
    pub overlap_violations: u64,
}

impl ReplicaStats {
    pub fn executed(&self) -> u64 {
        self.executed_parallel + self.executed_sync
    }
}

/// Per-replica barrier for synchronous mode. The executor waits for every
/// other thread to arrive, executes, then releases them.
struct Rendezvous {
    peers: usize,
    state: Mutex<RvState>,
    arrivals: Condvar,
    release: Condvar,
}

struct RvState {
    arrived: usize,
    epoch: u64,
    msg: Option<MsgId>,
    aborted: bool,
}

impl Rendezvous {
    fn new(peers: usize) -> Self {
        Rendezvous {
            peers,
            state: Mutex::new(RvState {
                arrived: 0,
                epoch: 0,
                msg: None,
                aborted: false,
            }),
            arrivals: Condvar::new(),
            release: Condvar::new(),
        }
    }

    /// Non-executor: signal the executor, then pause until released.
    fn arrive_and_wait(&self, msg: MsgId) -> bool {
        let mut st = self.state.lock();
        match st.msg {
            None => st.msg = Some(msg),
            Some(m) => assert_eq!(m, msg, "threads of one replica disagree on g_all order"),
        }
        st.arrived += 1;
        let epoch = st.epoch;
        if st.arrived == self.peers {
            self.arrivals.notify_one();
        }
        while st.epoch == epoch && !st.aborted {
            self.release.wait(&mut st);
        }
        !st.aborted
    }

    /// Executor: wait for a signal from every other thread.
    fn await_peers(&self, msg: MsgId) -> bool {
        let mut st = self.state.lock();
        while st.arrived < self.peers && !st.aborted {
            self.arrivals.wait(&mut st);
        }
        if st.aborted {
            return false;
        }
        if self.peers > 0 {
            assert_eq!(
                st.msg,
                Some(msg),
                "threads of one replica disagree on g_all order"
            );
        }
        true
    }

    fn release_peers(&self) {
        let mut st = self.state.lock();
        st.arrived = 0;
        st.msg = None;
        st.epoch += 1;
        drop(st);
        self.release.notify_all();
    }

    fn abort(&self) {
        self.state.lock().aborted = true;
        self.arrivals.notify_all();
        self.release.notify_all();
    }
}

struct ReplicaShared<S> {
    id: usize,
    service: Arc<S>,
    rendezvous: Rendezvous,
    counters: Counters,
    in_exec: AtomicUsize,
    sync_active: AtomicBool,
}

struct Shared<S> {
    config: EngineConfig,
    kernel: Arc<dyn AtomicMulticast>,
    registry: Arc<ClientRegistry>,
    replicas: Vec<Arc<ReplicaShared<S>>>,
    trace: Option<Mutex<Vec<TraceEvent>>>,
}

/// A running set of replicas bound to one multicast kernel.
pub struct Engine<S: Service> {
    shared: Arc<Shared<S>>,
    workers: Mutex<Vec<JoinHandle<()>>>,
    clock: Clock,
}

impl<S: Service> Engine<S> {
    /// Spawns `n` replicas with `K` worker threads each. `factory(replica)`
    /// builds each replica's service instance.
    pub fn start<F>(
        config: EngineConfig,
        kernel: Arc<dyn AtomicMulticast>,
        factory: F,
    ) -> Result<Self>
    where
        F: Fn(usize) -> S,
    {
        config.validate()?;
        let threads = config.routing.threads;
        if kernel.threads() != threads {
            return Err(Error::Config(format!(
                "kernel has {} groups but the engine needs K = {threads}",
                kernel.threads()
            )));
        }
        if kernel.replicas() != config.routing.replicas {
            return Err(Error::Config(format!(
                "kernel serves {} replicas but the engine needs n = {}",
                kernel.replicas(),
                config.routing.replicas
            )));
        }
        let replicas = (0..config.routing.replicas)
            .map(|id| {
                Arc::new(ReplicaShared {
                    id,
                    service: Arc::new(factory(id)),
                    rendezvous: Rendezvous::new(threads - 1),
                    counters: Counters::default(),
                    in_exec: AtomicUsize::new(0),
                    sync_active: AtomicBool::new(false),
                })
            })
            .collect();
        let trace = config.trace.then(|| Mutex::new(Vec::new()));
        let shared = Arc::new(Shared {
            config,
            kernel,
            registry: Arc::new(ClientRegistry::default()),
            replicas,
            trace,
        });
        let mut workers = Vec::new();
        for replica in &shared.replicas {
            for thread in 0..threads {
                let shared = Arc::clone(&shared);
                let replica = Arc::clone(replica);
                let handle = std::thread::Builder::new()
                    .name(format!("r{}-t{thread}", replica.id))
                    .spawn(move || worker_loop(&shared, &replica, thread))?;
                workers.push(handle);
            }
        }
        Ok(Engine {
            shared,
            workers: Mutex::new(workers),
            clock: Clock::new(),
        })
    }

    pub fn config(&self) -> &EngineConfig {
        &self.shared.config
    }

    pub fn clock(&self) -> Clock {
        self.clock
    }

    pub fn kernel(&self) -> &Arc<dyn AtomicMulticast> {
        &self.shared.kernel
    }

    /// A client proxy with the given identity. Identities must be unique
    /// among live proxies.
    pub fn client(&self, id: u64) -> ClientProxy {
        ClientProxy::new(
            id,
            self.shared.config.clone(),
            Arc::clone(&self.shared.kernel),
            Arc::clone(&self.shared.registry),
            self.clock,
        )
    }

    pub fn service(&self, replica: usize) -> &Arc<S> {
        &self.shared.replicas[replica].service
    }

    pub fn crash(&self, replica: usize) -> Result<()> {
        self.shared.kernel.inject_crash(replica)?;
        self.shared.replicas[replica].rendezvous.abort();
        Ok(())
    }

    pub fn is_live(&self, replica: usize) -> bool {
        !self.shared.kernel.is_crashed(replica)
    }

    /// Waits until every sequenced message has been processed by every live
    /// worker.
    pub fn wait_quiescent(&self, timeout: Duration) -> bool {
        wait_idle(self.shared.kernel.as_ref(), timeout)
    }

    /// Digest of each replica's service, `None` for crashed replicas. Only
    /// meaningful at quiescence.
    pub fn digests(&self) -> Vec<Option<Digest>> {
        self.shared
            .replicas
            .iter()
            .map(|r| self.is_live(r.id).then(|| r.service.digest()))
            .collect()
    }

    pub fn stats(&self) -> Vec<ReplicaStats> {
        self.shared
            .replicas
            .iter()
            .map(|r| {
                let c = &r.counters;
                let get = |a: &AtomicU64| a.load(Ordering::Relaxed);
                ReplicaStats {
                    checks_passed: get(&c.checks_passed),
                    checks_failed: get(&c.checks_failed),
                    executed_parallel: get(&c.executed_parallel),
                    executed_sync: get(&c.executed_sync),
                    remulticasts: get(&c.remulticasts),
                    resubmit_notices: get(&c.resubmit_notices),
                    duplicates: get(&c.duplicates),
                    overlap_violations: get(&c.overlap_violations) + r.service.overlap_events(),
                }
            })
            .collect()
    }

    pub fn trace(&self) -> Vec<TraceEvent> {
        self.shared
            .trace
            .as_ref()
            .map(|t| t.lock().clone())
            .unwrap_or_default()
    }

    /// Stops the kernel and joins every worker.
    pub fn shutdown(&self) {
        self.shared.kernel.shutdown();
        for r in &self.shared.replicas {
            r.rendezvous.abort();
        }
        for handle in self.workers.lock().drain(..) {
            let _ = handle.join();
        }
    }
}

impl<S: Service> Drop for Engine<S> {
    fn drop(&mut self) {
        self.shutdown();
    }
}

fn record<S>(
    shared: &Shared<S>,
    replica: usize,
    thread: usize,
    cmd: &Command,
    msg: MsgId,
    action: TraceAction,
) {
    if let Some(trace) = &shared.trace {
        trace.lock().push(TraceEvent {
            replica,
            thread,
            cmd_id: cmd.id,
            msg_id: msg,
            action,
        });
    }
}

fn worker_loop<S: Service>(shared: &Shared<S>, replica: &ReplicaShared<S>, thread: usize) {
    timing::tighten_timer_slack();
    // "for the first time": only conservative copies can be sent by more
    // than one party, so only they need remembering.
    let mut seen: HashSet<MsgId> = HashSet::new();
    loop {
        let msg = match shared.kernel.deliver(replica.id, thread) {
            Ok(msg) => msg,
            Err(_) => return,
        };
        handle(shared, replica, thread, &msg, &mut seen);
        shared.kernel.ack(replica.id, thread);
    }
}

fn handle<S: Service>(
    shared: &Shared<S>,
    replica: &ReplicaShared<S>,
    thread: usize,
    msg: &MulticastMessage,
    seen: &mut HashSet<MsgId>,
) {
    let cmd = match Command::decode(&msg.payload) {
        Ok(cmd) => cmd,
        Err(e) => panic!(
            "replica {} received an undecodable command: {e}",
            replica.id
        ),
    };
    if cmd.mode == Mode::Conservative && !seen.insert(msg.msg_id) {
        replica.counters.duplicates.fetch_add(1, Ordering::Relaxed);
        return;
    }
    match msg.dest {
        GroupSet::Single(_) => {
            if cmd.mode == Mode::Optimistic && !check(shared, replica, thread, &cmd, msg.msg_id) {
                return;
            }
            execute_parallel(shared, replica, thread, &cmd, msg.msg_id);
        }
        GroupSet::All => {
            let executor = msg.dest.executor();
            if thread == executor {
                if !replica.rendezvous.await_peers(msg.msg_id) {
                    return;
                }
                execute_sync(shared, replica, thread, &cmd, msg.msg_id);
                replica.rendezvous.release_peers();
            } else {
                replica.rendezvous.arrive_and_wait(msg.msg_id);
            }
        }
    }
}

/// Runs the safety check; on failure routes the command conservatively and
/// returns false.
fn check<S: Service>(
    shared: &Shared<S>,
    replica: &ReplicaShared<S>,
    thread: usize,
    cmd: &Command,
    msg: MsgId,
) -> bool {
    let verdict = match replica.service.safety_check(&cmd.op, thread) {
        Ok(v) => v,
        Err(e) => panic!("safety check on {}: {e}", cmd.op),
    };
    record(
        shared,
        replica.id,
        thread,
        cmd,
        msg,
        TraceAction::Checked {
            verdict,
            executed_before: replica.counters.state_changes.load(Ordering::Relaxed),
        },
    );
    if verdict.passed() {
        replica
            .counters
            .checks_passed
            .fetch_add(1, Ordering::Relaxed);
        return true;
    }
    replica
        .counters
        .checks_failed
        .fetch_add(1, Ordering::Relaxed);
    match shared.config.failed_path {
        FailedPath::Remulticast => {
            let dest = shared
                .config
                .routing
                .cc_g(cmd.op.kind, cmd.op.key)
                .expect("key validated by the client");
            let conservative = Command {
                mode: Mode::Conservative,
                dest,
                ..*cmd
            };
            if let Ok(Some(_)) =
                shared
                    .kernel
                    .multicast_once(dest, conservative.msg_id(), conservative.encode())
            {
                replica
                    .counters
                    .remulticasts
                    .fetch_add(1, Ordering::Relaxed);
                record(
                    shared,
                    replica.id,
                    thread,
                    cmd,
                    msg,
                    TraceAction::Remulticast,
                );
            }
        }
        FailedPath::ClientResubmit => {
            replica
                .counters
                .resubmit_notices
                .fetch_add(1, Ordering::Relaxed);
            record(
                shared,
                replica.id,
                thread,
                cmd,
                msg,
                TraceAction::ResubmitNotice,
            );
            shared.registry.send(
                cmd.id.client,
                Reply {
                    cmd_id: cmd.id,
                    kind: ReplyKind::Resubmit,
                    replica: replica.id,
                    deliver_at: Instant::now() + shared.config.transport_delay,
                },
            );
        }
    }
    false
}

fn execute_parallel<S: Service>(
    shared: &Shared<S>,
    replica: &ReplicaShared<S>,
    thread: usize,
    cmd: &Command,
    msg: MsgId,
) {
    replica.in_exec.fetch_add(1, Ordering::AcqRel);
    if replica.sync_active.load(Ordering::Acquire) {
        replica
            .counters
            .overlap_violations
            .fetch_add(1, Ordering::Relaxed);
    }
    // A single worker owns the whole replica, so structural commands may
    // restructure freely.
    let outcome = if shared.config.routing.threads == 1 {
        replica.service.execute_exclusive(&cmd.op)
    } else {
        replica.service.execute_parallel(&cmd.op)
    };
    timing::pause(shared.config.service_time);
    replica.in_exec.fetch_sub(1, Ordering::AcqRel);
    replica
        .counters
        .executed_parallel
        .fetch_add(1, Ordering::Relaxed);
    if cmd.op.kind != CommandKind::Read {
        replica
            .counters
            .state_changes
            .fetch_add(1, Ordering::Relaxed);
    }
    record(
        shared,
        replica.id,
        thread,
        cmd,
        msg,
        TraceAction::Executed {
            mode: cmd.mode,
            synchronous: false,
        },
    );
    respond(shared, replica, thread, cmd, outcome);
}

fn execute_sync<S: Service>(
    shared: &Shared<S>,
    replica: &ReplicaShared<S>,
    thread: usize,
    cmd: &Command,
    msg: MsgId,
) {
    replica.sync_active.store(true, Ordering::Release);
    if replica.in_exec.fetch_add(1, Ordering::AcqRel) != 0 {
        replica
            .counters
            .overlap_violations
            .fetch_add(1, Ordering::Relaxed);
    }
    let outcome = replica.service.execute_exclusive(&cmd.op);
    timing::pause(shared.config.service_time);
    replica.in_exec.fetch_sub(1, Ordering::AcqRel);
    replica.sync_active.store(false, Ordering::Release);
    replica
        .counters
        .executed_sync
        .fetch_add(1, Ordering::Relaxed);
    if cmd.op.kind != CommandKind::Read {
        replica
            .counters
            .state_changes
            .fetch_add(1, Ordering::Relaxed);
    }
    record(
        shared,
        replica.id,
        thread,
        cmd,
        msg,
        TraceAction::Executed {
            mode: cmd.mode,
            synchronous: true,
        },
    );
    respond(shared, replica, thread, cmd, outcome);
}

fn respond<S: Service>(
    shared: &Shared<S>,
    replica: &ReplicaShared<S>,
    thread: usize,
    cmd: &Command,
    outcome: Outcome,
) {
    shared.registry.send(
        cmd.id.client,
        Reply {
            cmd_id: cmd.id,
            kind: ReplyKind::Response(Response {
                cmd_id: cmd.id,
                outcome,
                replica_id: replica.id,
                executing_thread: thread,
                mode: cmd.mode,
            }),
            replica: replica.id,
            deliver_at: Instant::now() + shared.config.transport_delay,
        },
    );
}
