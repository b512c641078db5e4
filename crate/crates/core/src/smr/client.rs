use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Arc;
use std::time::Duration;

use crate::error::{Error, Result};
use crate::multicast::{AtomicMulticast, GroupSet};
use crate::verify::{HistoryEvent, HistoryRecorder};

use super::command::{Command, CommandId, Mode, Operation, Outcome, Value};
use super::engine::{ClientRegistry, EngineConfig, EngineMode, FailedPath, Reply, ReplyKind};
use super::timing::{self, Clock};

/// The completed result of one client invocation.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct Invocation {
    pub cmd_id: CommandId,
    pub op: Operation,
    pub outcome: Outcome,
    /// Sent optimistically.
    pub optimistic: bool,
    /// Sent optimistically and answered by the conservative copy.
    pub failed: bool,
    pub invoked_ns: u64,
    pub responded_ns: u64,
    pub replica: usize,
    pub thread: usize,
}

impl Invocation {
    pub fn latency(&self) -> Duration {
        Duration::from_nanos(self.responded_ns.saturating_sub(self.invoked_ns))
    }
}

/// Client proxy: routes commands, multicasts them, and waits for the first
/// response. One proxy per client thread.
pub struct ClientProxy {
    id: u64,
    next_seq: u64,
    config: EngineConfig,
    kernel: Arc<dyn AtomicMulticast>,
    registry: Arc<ClientRegistry>,
    replies: Receiver<Reply>,
    clock: Clock,
    history: Option<Arc<HistoryRecorder>>,
    cancel: Option<Arc<AtomicBool>>,
}

impl ClientProxy {
    pub(crate) fn new(
        id: u64,
        config: EngineConfig,
        kernel: Arc<dyn AtomicMulticast>,
        registry: Arc<ClientRegistry>,
        clock: Clock,
    ) -> Self {
        let (tx, rx) = mpsc::channel();
        registry.register(id, tx);
        ClientProxy {
            id,
            next_seq: 0,
            config,
            kernel,
            registry,
            replies: rx,
            clock,
            history: None,
            cancel: None,
        }
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    /// Records invoke and respond events into `history`.
    pub fn with_history(mut self, history: Arc<HistoryRecorder>) -> Self {
        self.history = Some(history);
        self
    }

    /// A blocked `invoke` returns [`Error::Cancelled`] once `flag` is set.
    pub fn with_cancel(mut self, flag: Arc<AtomicBool>) -> Self {
        self.cancel = Some(flag);
        self
    }

    /// Routing for `op` under the engine mode: destination and mode flag.
    pub fn route(&self, op: &Operation) -> Result<(GroupSet, Mode)> {
        let routing = &self.config.routing;
        match self.config.mode {
            EngineMode::SequentialSmr => {
                routing.group_of_key(op.key)?;
                Ok((GroupSet::Single(0), Mode::Conservative))
            }
            EngineMode::Psmr => Ok((routing.cc_g(op.kind, op.key)?, Mode::Conservative)),
            // Reads and updates map to the same singleton under both
            // mappings and are never checked.
            EngineMode::OptPsmr if op.kind.is_structural() => {
                Ok((routing.oc_g(op.kind, op.key)?, Mode::Optimistic))
            }
            EngineMode::OptPsmr => Ok((routing.cc_g(op.kind, op.key)?, Mode::Conservative)),
        }
    }

    /// Submits `op` and blocks until the first response arrives.
    pub fn invoke(&mut self, op: Operation) -> Result<Invocation> {
        op.validate()?;
        let (dest, mode) = self.route(&op)?;
        let cmd = Command {
            id: CommandId {
                client: self.id,
                seq: self.next_seq,
            },
            op,
            mode,
            dest,
        };
        self.next_seq += 1;

        let invoked_ns = self.clock.now_ns();
        if let Some(h) = &self.history {
            h.record(HistoryEvent::invoke(invoked_ns, &cmd));
        }
        timing::pause(self.config.transport_delay);
        self.kernel
            .multicast(cmd.dest, cmd.msg_id(), cmd.encode())?;

        let mut resubmitted = false;
        loop {
            let reply = self.next_reply()?;
            if reply.cmd_id != cmd.id {
                continue;
            }
            timing::sleep_until(reply.deliver_at);
            match reply.kind {
                ReplyKind::Response(resp) => {
                    let responded_ns = self.clock.now_ns();
                    if let Some(h) = &self.history {
                        h.record(HistoryEvent::respond(responded_ns, &cmd, resp.outcome));
                    }
                    return Ok(Invocation {
                        cmd_id: cmd.id,
                        op,
                        outcome: resp.outcome,
                        optimistic: mode == Mode::Optimistic,
                        failed: resp.mode == Mode::Conservative && mode == Mode::Optimistic,
                        invoked_ns,
                        responded_ns,
                        replica: resp.replica_id,
                        thread: resp.executing_thread,
                    });
                }
                ReplyKind::Resubmit if !resubmitted => {
                    debug_assert_eq!(self.config.failed_path, FailedPath::ClientResubmit);
                    resubmitted = true;
                    let dest = self.config.routing.cc_g(op.kind, op.key)?;
                    let conservative = Command {
                        mode: Mode::Conservative,
                        dest,
                        ..cmd
                    };
                    timing::pause(self.config.transport_delay);
                    self.kernel.multicast_once(
                        dest,
                        conservative.msg_id(),
                        conservative.encode(),
                    )?;
                }
                ReplyKind::Resubmit => {}
            }
        }
    }

    fn next_reply(&self) -> Result<Reply> {
        let poll = Duration::from_millis(50);
        loop {
            match self.replies.recv_timeout(poll) {
                Ok(reply) => return Ok(reply),
                Err(RecvTimeoutError::Disconnected) => return Err(Error::Shutdown),
                Err(RecvTimeoutError::Timeout) => {
                    if self
                        .cancel
                        .as_ref()
                        .is_some_and(|c| c.load(Ordering::Relaxed))
                    {
                        return Err(Error::Cancelled);
                    }
                }
            }
        }
    }

    pub fn read(&mut self, key: u64) -> Result<Invocation> {
        self.invoke(Operation::read(key))
    }

    pub fn insert(&mut self, key: u64, value: Value) -> Result<Invocation> {
        self.invoke(Operation::insert(key, value))
    }

    pub fn delete(&mut self, key: u64) -> Result<Invocation> {
        self.invoke(Operation::delete(key))
    }

    pub fn update(&mut self, key: u64, value: Value) -> Result<Invocation> {
        self.invoke(Operation::update(key, value))
    }

    /// Sequence number the next invocation will use.
    pub fn next_seq(&self) -> u64 {
        self.next_seq
    }
}

impl Drop for ClientProxy {
    fn drop(&mut self) {
        self.registry.unregister(self.id);
    }
}
