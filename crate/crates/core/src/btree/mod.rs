//! Replicated B+-tree service and the opt-PSMR safety check.

mod safety;
mod service;
mod tree;

pub use safety::{safety_check, FailReason, PartitionMap, SafetyVerdict, StructuralOp};
pub use service::{preload_keys, TreeService};
pub use tree::{
    BPlusTree, Digest, InsertOutcome, LeafId, LeafLocator, NeedsRestructure, StructureStats,
    DEFAULT_FANOUT,
};
