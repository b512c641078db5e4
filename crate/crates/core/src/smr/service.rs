use crate::btree::{Digest, SafetyVerdict};
use crate::error::Result;

use super::command::{Operation, Outcome};

/// A deterministic replicated service.
///
/// One instance is shared by all worker threads of a replica and provides no
/// ordering of its own: the engine guarantees that parallel-mode calls from
/// different threads touch disjoint state and that exclusive calls run while
/// every other thread of the replica is paused.
pub trait Service: Send + Sync + 'static {
    /// Executes in parallel mode. Structural commands only reach this method
    /// after passing [`Service::safety_check`].
    fn execute_parallel(&self, op: &Operation) -> Outcome;

    /// Executes with the whole replica to itself.
    fn execute_exclusive(&self, op: &Operation) -> Outcome;

    /// Decides whether an optimistically routed command may execute in
    /// parallel mode on `thread`. Must be deterministic and must not mutate.
    fn safety_check(&self, op: &Operation, thread: usize) -> Result<SafetyVerdict>;

    /// Undoes a command executed during a failed safety check. Services whose
    /// check is execution-free never receive this call.
    fn rollback(&self, op: &Operation);

    fn digest(&self) -> Digest;

    /// Protocol violations observed by the service (writers that met on the
    /// same state). Zero in a correct run.
    fn overlap_events(&self) -> u64 {
        0
    }
}
