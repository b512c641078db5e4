//! The replica-side check that decides whether an optimistically routed
//! insert or delete can run in parallel mode.

use std::fmt;

use crate::error::{Error, Result};
use crate::smr::CommandKind;

use super::tree::BPlusTree;

/// Static range partitioning of `[0, M]` over `K` threads, consistent with
/// `group_of_key`: thread `i` owns `[ceil(i*M/K), ceil((i+1)*M/K) - 1]` and
/// the last thread owns up to `M`. Partitions may be empty when `K > M`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PartitionMap {
    max_key: u64,
    lows: Vec<u64>,
}

impl PartitionMap {
    pub fn new(threads: usize, max_key: u64) -> Result<Self> {
        if threads == 0 || max_key == 0 {
            return Err(Error::Config(
                "partition map needs K >= 1 and M >= 1".into(),
            ));
        }
        let lows = (0..threads)
            .map(|i| (i as u128 * max_key as u128).div_ceil(threads as u128) as u64)
            .collect();
        Ok(PartitionMap { max_key, lows })
    }

    pub fn threads(&self) -> usize {
        self.lows.len()
    }

    pub fn lo(&self, thread: usize) -> u64 {
        self.lows[thread]
    }

    /// Largest key owned by `thread`; below `lo` when the partition is empty.
    pub fn hi(&self, thread: usize) -> i128 {
        match self.lows.get(thread + 1) {
            Some(&next) => next as i128 - 1,
            None => self.max_key as i128,
        }
    }

    pub fn owner(&self, key: u64) -> usize {
        self.lows.partition_point(|&lo| lo <= key) - 1
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub enum FailReason {
    /// The operation would split, merge, or redistribute.
    StructuralChange,
    /// The leaf's range reaches into the previous thread's partition.
    LeftBoundaryOverlap,
    /// The leaf's range reaches into the next thread's partition.
    RightBoundaryOverlap,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub enum SafetyVerdict {
    Pass,
    Fail(FailReason),
}

impl SafetyVerdict {
    pub fn passed(&self) -> bool {
        matches!(self, SafetyVerdict::Pass)
    }
}

impl fmt::Display for SafetyVerdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SafetyVerdict::Pass => f.write_str("pass"),
            SafetyVerdict::Fail(r) => write!(f, "fail({r:?})"),
        }
    }
}

/// Operations the safety check applies to.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum StructuralOp {
    Insert,
    Delete,
}

impl TryFrom<CommandKind> for StructuralOp {
    type Error = Error;

    fn try_from(kind: CommandKind) -> Result<Self> {
        match kind {
            CommandKind::Insert => Ok(StructuralOp::Insert),
            CommandKind::Delete => Ok(StructuralOp::Delete),
            other => Err(Error::Contract(format!("{other} is never safety-checked"))),
        }
    }
}

/// Passes iff, for the leaf `key` routes to:
/// (a) the operation neither splits nor merges nor redistributes;
/// (b) the leaf's lower bound is above the previous partition;
/// (c) the leaf's upper bound is below the next partition.
///
/// Conditions are tested in that order and the first failure is reported.
/// Reads only; takes no write locks.
pub fn safety_check(
    tree: &BPlusTree,
    op: StructuralOp,
    key: u64,
    partitions: &PartitionMap,
    thread: usize,
) -> SafetyVerdict {
    let loc = tree.locate_leaf(key);
    let restructures = match op {
        StructuralOp::Insert => !loc.contains && loc.len >= tree.fanout(),
        StructuralOp::Delete => loc.contains && !loc.is_root && loc.len <= tree.min_fill(),
    };
    if restructures {
        return SafetyVerdict::Fail(FailReason::StructuralChange);
    }
    if thread > 0 && partitions.hi(thread - 1) >= loc.lo as i128 {
        return SafetyVerdict::Fail(FailReason::LeftBoundaryOverlap);
    }
    if thread + 1 < partitions.threads() && partitions.lo(thread + 1) <= loc.hi {
        return SafetyVerdict::Fail(FailReason::RightBoundaryOverlap);
    }
    SafetyVerdict::Pass
}
