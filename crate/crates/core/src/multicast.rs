//! Atomic multicast realized by a single global sequencer.
//!
//! Every replica runs `K` worker threads. Worker `t_i` subscribes to its own
//! group `g_i` and to the shared group `g_all`. A message addressed to
//! [`GroupSet::All`] is one message to `g_all`; the kernel hands it to every
//! worker of every replica exactly once. All messages draw their position from
//! one global sequence, so the delivered-before relation is acyclic and each
//! group's stream is delivered in the same order by every replica.
//!
//! Each worker consumes one merged queue holding its `g_i` traffic and its
//! copy of the `g_all` traffic in ascending `global_seq`. Replicas own
//! independent queues and drain them at their own pace.

use std::collections::{HashSet, VecDeque};
use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use bytes::Bytes;
use parking_lot::{Condvar, Mutex};

use crate::error::{Error, Result};

pub const DEFAULT_STREAM_CAPACITY: usize = 4096;

/// A multicast group: one of the `K` per-thread groups or `g_all`.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum GroupId {
    Index(usize),
    All,
}

impl fmt::Display for GroupId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GroupId::Index(i) => write!(f, "g{i}"),
            GroupId::All => f.write_str("g_all"),
        }
    }
}

/// Destination of a message. Only singletons and the full set are needed.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub enum GroupSet {
    Single(usize),
    All,
}

impl GroupSet {
    pub fn is_singleton(&self) -> bool {
        matches!(self, GroupSet::Single(_))
    }

    pub fn contains(&self, thread: usize) -> bool {
        match self {
            GroupSet::Single(g) => *g == thread,
            GroupSet::All => true,
        }
    }

    /// The thread that executes a command addressed to this set: the minimum
    /// group index among the destinations.
    pub fn executor(&self) -> usize {
        match self {
            GroupSet::Single(g) => *g,
            GroupSet::All => 0,
        }
    }

    /// The group that carries this destination in the `g_i` + `g_all` topology.
    pub fn group(&self) -> GroupId {
        match self {
            GroupSet::Single(g) => GroupId::Index(*g),
            GroupSet::All => GroupId::All,
        }
    }
}

impl fmt::Display for GroupSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GroupSet::Single(g) => write!(f, "g{g}"),
            GroupSet::All => f.write_str("all"),
        }
    }
}

impl FromStr for GroupSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "all" {
            return Ok(GroupSet::All);
        }
        s.strip_prefix('g')
            .and_then(|g| g.parse().ok())
            .map(GroupSet::Single)
            .ok_or_else(|| Error::Decode(format!("bad group set {s:?}")))
    }
}

/// Sender-assigned message identity.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MsgId {
    pub origin: u64,
    pub seq: u64,
}

impl fmt::Display for MsgId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.origin, self.seq)
    }
}

impl FromStr for MsgId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (origin, seq) = s
            .split_once('.')
            .ok_or_else(|| Error::Decode(format!("bad msg id {s:?}")))?;
        let parse = |v: &str| {
            v.parse()
                .map_err(|_| Error::Decode(format!("bad msg id {s:?}")))
        };
        Ok(MsgId {
            origin: parse(origin)?,
            seq: parse(seq)?,
        })
    }
}

#[derive(Clone, Debug)]
pub struct MulticastMessage {
    pub msg_id: MsgId,
    pub dest: GroupSet,
    pub global_seq: u64,
    pub payload: Bytes,
}

/// One entry of the sequenced log, `global_seq,msg_id,dest`.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct LogRecord {
    pub global_seq: u64,
    pub msg_id: MsgId,
    pub dest: GroupSet,
}

impl fmt::Display for LogRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{}", self.global_seq, self.msg_id, self.dest)
    }
}

/// A delivery observed by one worker of one replica.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct Delivery {
    pub global_seq: u64,
    pub msg_id: MsgId,
    pub dest: GroupSet,
}

/// The ordering layer consumed by the replication engines.
pub trait AtomicMulticast: Send + Sync {
    /// Number of per-thread groups `K`.
    fn threads(&self) -> usize;

    fn replicas(&self) -> usize;

    /// Orders and enqueues a client message, blocking while any target stream
    /// is full. Returns the assigned global sequence number.
    fn multicast(&self, dest: GroupSet, msg_id: MsgId, payload: Bytes) -> Result<u64>;

    /// Orders a message at most once per `msg_id`; later calls with the same
    /// id return `Ok(None)`. Never blocks on a full stream, so replica threads
    /// can call it without deadlocking on their own queue.
    fn multicast_once(&self, dest: GroupSet, msg_id: MsgId, payload: Bytes) -> Result<Option<u64>>;

    /// Next message for worker `thread` of `replica`, blocking until one is
    /// available.
    fn deliver(&self, replica: usize, thread: usize) -> Result<Arc<MulticastMessage>>;

    /// Marks the last delivered message of a worker as fully processed.
    fn ack(&self, replica: usize, thread: usize);

    fn inject_crash(&self, replica: usize) -> Result<()>;

    fn is_crashed(&self, replica: usize) -> bool;

    fn shutdown(&self);

    /// True when every message has been delivered and acknowledged by every
    /// live worker.
    fn is_idle(&self) -> bool;
}

struct StreamState {
    queue: VecDeque<Arc<MulticastMessage>>,
    /// Number of messages handed to the consumer so far.
    cursor: u64,
    closed: bool,
    deliveries: Option<Vec<Delivery>>,
}

struct Stream {
    state: Mutex<StreamState>,
    ready: Condvar,
    space: Condvar,
}

impl Stream {
    fn new(record: bool) -> Self {
        Stream {
            state: Mutex::new(StreamState {
                queue: VecDeque::new(),
                cursor: 0,
                closed: false,
                deliveries: record.then(Vec::new),
            }),
            ready: Condvar::new(),
            space: Condvar::new(),
        }
    }
}

struct Sequencer {
    next_seq: u64,
    once: HashSet<MsgId>,
    log: Option<Vec<LogRecord>>,
}

#[derive(Clone, Debug)]
pub struct KernelConfig {
    pub threads: usize,
    pub replicas: usize,
    pub stream_capacity: usize,
    /// Keep the sequenced log for [`SequencerKernel::dump_log`].
    pub record_log: bool,
    /// Keep every worker's delivery sequence for order audits.
    pub record_deliveries: bool,
}

impl KernelConfig {
    pub fn new(threads: usize, replicas: usize) -> Self {
        KernelConfig {
            threads,
            replicas,
            stream_capacity: DEFAULT_STREAM_CAPACITY,
            record_log: false,
            record_deliveries: false,
        }
    }
}

/// In-process atomic multicast: one global sequencer, one bounded queue per
/// worker per replica.
pub struct SequencerKernel {
    threads: usize,
    replicas: usize,
    capacity: usize,
    sequencer: Mutex<Sequencer>,
    /// `streams[replica][thread]`
    streams: Vec<Vec<Stream>>,
    crashed: Vec<AtomicBool>,
    shut: AtomicBool,
    outstanding: AtomicU64,
}

impl SequencerKernel {
    pub fn new(config: KernelConfig) -> Result<Self> {
        if config.threads == 0 {
            return Err(Error::Config("thread count K must be at least 1".into()));
        }
        if config.replicas == 0 {
            return Err(Error::Config("replica count must be at least 1".into()));
        }
        if config.stream_capacity == 0 {
            return Err(Error::Config("stream capacity must be positive".into()));
        }
        let streams = (0..config.replicas)
            .map(|_| {
                (0..config.threads)
                    .map(|_| Stream::new(config.record_deliveries))
                    .collect()
            })
            .collect();
        Ok(SequencerKernel {
            threads: config.threads,
            replicas: config.replicas,
            capacity: config.stream_capacity,
            sequencer: Mutex::new(Sequencer {
                next_seq: 0,
                once: HashSet::new(),
                log: config.record_log.then(Vec::new),
            }),
            streams,
            crashed: (0..config.replicas)
                .map(|_| AtomicBool::new(false))
                .collect(),
            shut: AtomicBool::new(false),
            outstanding: AtomicU64::new(0),
        })
    }

    /// Groups every replica subscribes to: `g_0..g_{K-1}` and `g_all`.
    pub fn groups(&self) -> Vec<GroupId> {
        (0..self.threads)
            .map(GroupId::Index)
            .chain(std::iter::once(GroupId::All))
            .collect()
    }

    /// Subscribable streams per replica, `K + 1`.
    pub fn streams_per_replica(&self) -> usize {
        self.threads + 1
    }

    /// Number of messages sequenced so far.
    pub fn sequenced(&self) -> u64 {
        self.sequencer.lock().next_seq
    }

    /// Writes the sequenced log as `global_seq,msg_id,dest` lines. Requires
    /// `record_log`.
    pub fn dump_log<W: Write>(&self, mut out: W) -> Result<()> {
        let seq = self.sequencer.lock();
        let log = seq
            .log
            .as_ref()
            .ok_or_else(|| Error::Config("kernel created without record_log".into()))?;
        for rec in log {
            writeln!(out, "{rec}")?;
        }
        Ok(())
    }

    pub fn log(&self) -> Option<Vec<LogRecord>> {
        self.sequencer.lock().log.clone()
    }

    /// Delivery sequence of one worker, when `record_deliveries` is on.
    pub fn deliveries(&self, replica: usize, thread: usize) -> Option<Vec<Delivery>> {
        self.streams[replica][thread]
            .state
            .lock()
            .deliveries
            .clone()
    }

    /// Messages delivered so far to one worker.
    pub fn cursor(&self, replica: usize, thread: usize) -> u64 {
        self.streams[replica][thread].state.lock().cursor
    }

    /// Polls until [`AtomicMulticast::is_idle`] holds or the timeout expires.
    pub fn wait_idle(&self, timeout: Duration) -> bool {
        wait_idle(self, timeout)
    }

    fn check_dest(&self, dest: GroupSet) -> Result<()> {
        match dest {
            GroupSet::Single(g) if g >= self.threads => Err(Error::Config(format!(
                "group g{g} does not exist (K = {})",
                self.threads
            ))),
            _ => Ok(()),
        }
    }

    fn targets(&self, dest: GroupSet) -> impl Iterator<Item = (usize, usize)> + '_ {
        let threads = self.threads;
        (0..self.replicas).flat_map(move |r| {
            let range = match dest {
                GroupSet::Single(g) => g..g + 1,
                GroupSet::All => 0..threads,
            };
            range.map(move |t| (r, t))
        })
    }

    fn wait_for_space(&self, dest: GroupSet) -> Result<()> {
        for (r, t) in self.targets(dest) {
            let stream = &self.streams[r][t];
            let mut st = stream.state.lock();
            while st.queue.len() >= self.capacity && !st.closed {
                if self.shut.load(Ordering::Acquire) {
                    return Err(Error::Shutdown);
                }
                stream.space.wait_for(&mut st, Duration::from_millis(50));
            }
        }
        Ok(())
    }

    /// Must be called with the sequencer lock held so that every queue sees
    /// messages in ascending `global_seq`.
    fn enqueue(&self, seq: &mut Sequencer, dest: GroupSet, msg_id: MsgId, payload: Bytes) -> u64 {
        let global_seq = seq.next_seq;
        seq.next_seq += 1;
        if let Some(log) = seq.log.as_mut() {
            log.push(LogRecord {
                global_seq,
                msg_id,
                dest,
            });
        }
        let msg = Arc::new(MulticastMessage {
            msg_id,
            dest,
            global_seq,
            payload,
        });
        for (r, t) in self.targets(dest) {
            let stream = &self.streams[r][t];
            let mut st = stream.state.lock();
            if st.closed {
                continue;
            }
            self.outstanding.fetch_add(1, Ordering::AcqRel);
            st.queue.push_back(Arc::clone(&msg));
            drop(st);
            stream.ready.notify_one();
        }
        global_seq
    }
}

pub(crate) fn wait_idle(kernel: &dyn AtomicMulticast, timeout: Duration) -> bool {
    let deadline = Instant::now() + timeout;
    loop {
        if kernel.is_idle() {
            return true;
        }
        if Instant::now() >= deadline {
            return false;
        }
        std::thread::sleep(Duration::from_micros(500));
    }
}

impl AtomicMulticast for SequencerKernel {
    fn threads(&self) -> usize {
        self.threads
    }

    fn replicas(&self) -> usize {
        self.replicas
    }

    fn multicast(&self, dest: GroupSet, msg_id: MsgId, payload: Bytes) -> Result<u64> {
        self.check_dest(dest)?;
        if self.shut.load(Ordering::Acquire) {
            return Err(Error::Shutdown);
        }
        // Waiting happens outside the sequencer lock so replica threads can
        // still re-multicast while a client is blocked. Queues may overshoot
        // the capacity by at most the number of concurrent senders.
        self.wait_for_space(dest)?;
        let mut seq = self.sequencer.lock();
        if self.shut.load(Ordering::Acquire) {
            return Err(Error::Shutdown);
        }
        Ok(self.enqueue(&mut seq, dest, msg_id, payload))
    }

    fn multicast_once(&self, dest: GroupSet, msg_id: MsgId, payload: Bytes) -> Result<Option<u64>> {
        self.check_dest(dest)?;
        let mut seq = self.sequencer.lock();
        if self.shut.load(Ordering::Acquire) {
            return Err(Error::Shutdown);
        }
        if !seq.once.insert(msg_id) {
            return Ok(None);
        }
        Ok(Some(self.enqueue(&mut seq, dest, msg_id, payload)))
    }

    fn deliver(&self, replica: usize, thread: usize) -> Result<Arc<MulticastMessage>> {
        let stream = &self.streams[replica][thread];
        let mut st = stream.state.lock();
        loop {
            if self.shut.load(Ordering::Acquire) {
                return Err(Error::Shutdown);
            }
            if st.closed {
                return Err(Error::Crashed(replica));
            }
            if let Some(msg) = st.queue.pop_front() {
                st.cursor += 1;
                if let Some(d) = st.deliveries.as_mut() {
                    d.push(Delivery {
                        global_seq: msg.global_seq,
                        msg_id: msg.msg_id,
                        dest: msg.dest,
                    });
                }
                drop(st);
                stream.space.notify_all();
                return Ok(msg);
            }
            stream.ready.wait_for(&mut st, Duration::from_millis(100));
        }
    }

    fn ack(&self, _replica: usize, _thread: usize) {
        self.outstanding.fetch_sub(1, Ordering::AcqRel);
    }

    fn inject_crash(&self, replica: usize) -> Result<()> {
        if replica >= self.replicas {
            return Err(Error::UnknownReplica(replica));
        }
        if self.crashed[replica].swap(true, Ordering::AcqRel) {
            return Ok(());
        }
        for stream in &self.streams[replica] {
            let mut st = stream.state.lock();
            st.closed = true;
            let dropped = st.queue.len() as u64;
            st.queue.clear();
            self.outstanding.fetch_sub(dropped, Ordering::AcqRel);
            drop(st);
            stream.ready.notify_all();
            stream.space.notify_all();
        }
        Ok(())
    }

    fn is_crashed(&self, replica: usize) -> bool {
        self.crashed
            .get(replica)
            .is_some_and(|c| c.load(Ordering::Acquire))
    }

    fn shutdown(&self) {
        self.shut.store(true, Ordering::Release);
        for stream in self.streams.iter().flatten() {
            // Taking the lock orders the flag store before any waiter re-checks.
            drop(stream.state.lock());
            stream.ready.notify_all();
            stream.space.notify_all();
        }
    }

    fn is_idle(&self) -> bool {
        self.outstanding.load(Ordering::Acquire) == 0
    }
}
