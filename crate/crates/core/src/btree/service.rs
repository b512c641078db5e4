use std::sync::atomic::{AtomicU64, Ordering};

use parking_lot::{RwLock, RwLockReadGuard, RwLockWriteGuard};

use crate::error::Result;
use crate::smr::{CommandKind, Operation, Outcome, Service, Value};

use super::safety::{safety_check, PartitionMap, SafetyVerdict, StructuralOp};
use super::tree::{BPlusTree, Digest};

/// `n` keys spread evenly over `[0, max_key]`, ascending.
pub fn preload_keys(n: u64, max_key: u64) -> impl Iterator<Item = u64> {
    let span = max_key as u128 + 1;
    let n = n.min(max_key.saturating_add(1));
    (0..n).map(move |i| (i as u128 * span / n as u128) as u64)
}

/// The B+-tree as a replicated service.
///
/// The tree sits behind a replica-level reader/writer lock that the protocol
/// should never contend: parallel-mode execution takes it shared and relies on
/// the safety check for disjoint leaves, synchronous-mode execution takes it
/// exclusively while every other worker is paused. Contention is counted and
/// reported through [`Service::overlap_events`].
#[derive(Debug)]
pub struct TreeService {
    tree: RwLock<BPlusTree>,
    partitions: PartitionMap,
    lock_contention: AtomicU64,
    forced_restructures: AtomicU64,
}

impl TreeService {
    pub fn new(fanout: usize, max_key: u64, threads: usize) -> Result<Self> {
        Self::with_tree(BPlusTree::new(fanout, max_key)?, threads)
    }

    pub fn with_tree(tree: BPlusTree, threads: usize) -> Result<Self> {
        let partitions = PartitionMap::new(threads, tree.max_key())?;
        Ok(TreeService {
            tree: RwLock::new(tree),
            partitions,
            lock_contention: AtomicU64::new(0),
            forced_restructures: AtomicU64::new(0),
        })
    }

    /// A service whose tree holds `n` evenly spaced keys, each mapped to
    /// itself, inserted in ascending order.
    pub fn preloaded(fanout: usize, max_key: u64, threads: usize, n: u64) -> Result<Self> {
        let mut tree = BPlusTree::new(fanout, max_key)?;
        for k in preload_keys(n, max_key) {
            tree.insert(k, Value::from_u64(k));
        }
        Self::with_tree(tree, threads)
    }

    pub fn partitions(&self) -> &PartitionMap {
        &self.partitions
    }

    pub fn tree(&self) -> RwLockReadGuard<'_, BPlusTree> {
        self.tree.read()
    }

    /// Direct mutable access, for fixtures and negative controls.
    pub fn tree_mut(&self) -> RwLockWriteGuard<'_, BPlusTree> {
        self.tree.write()
    }

    fn exclusive(&self) -> RwLockWriteGuard<'_, BPlusTree> {
        self.tree.try_write().unwrap_or_else(|| {
            self.lock_contention.fetch_add(1, Ordering::Relaxed);
            self.tree.write()
        })
    }

    fn shared(&self) -> RwLockReadGuard<'_, BPlusTree> {
        self.tree.try_read().unwrap_or_else(|| {
            self.lock_contention.fetch_add(1, Ordering::Relaxed);
            self.tree.read()
        })
    }

    fn apply_exclusive(tree: &mut BPlusTree, op: &Operation) -> Outcome {
        match op.kind {
            CommandKind::Read => read_outcome(tree, op.key),
            CommandKind::Update => found(tree.update_mut(op.key, op.payload_value())),
            CommandKind::Insert => {
                tree.insert(op.key, op.payload_value());
                Outcome::Ok
            }
            CommandKind::Delete => found(tree.delete(op.key)),
        }
    }
}

fn read_outcome(tree: &BPlusTree, key: u64) -> Outcome {
    tree.read(key).map_or(Outcome::Absent, Outcome::Value)
}

fn found(hit: bool) -> Outcome {
    if hit {
        Outcome::Ok
    } else {
        Outcome::NotFound
    }
}

impl Service for TreeService {
    fn execute_parallel(&self, op: &Operation) -> Outcome {
        let restructure = {
            let tree = self.shared();
            match op.kind {
                CommandKind::Read => return read_outcome(&tree, op.key),
                CommandKind::Update => return found(tree.update(op.key, op.payload_value())),
                CommandKind::Insert => match tree.insert_in_leaf(op.key, op.payload_value()) {
                    Ok(_) => return Outcome::Ok,
                    Err(_) => true,
                },
                CommandKind::Delete => match tree.delete_in_leaf(op.key) {
                    Ok(hit) => return found(hit),
                    Err(_) => true,
                },
            }
        };
        // Only reachable if a command that needs restructuring passed its
        // check. Finish it so the state stays total, and report it.
        debug_assert!(restructure);
        self.forced_restructures.fetch_add(1, Ordering::Relaxed);
        Self::apply_exclusive(&mut self.exclusive(), op)
    }

    fn execute_exclusive(&self, op: &Operation) -> Outcome {
        Self::apply_exclusive(&mut self.exclusive(), op)
    }

    fn safety_check(&self, op: &Operation, thread: usize) -> Result<SafetyVerdict> {
        let kind = StructuralOp::try_from(op.kind)?;
        Ok(safety_check(
            &self.shared(),
            kind,
            op.key,
            &self.partitions,
            thread,
        ))
    }

    fn rollback(&self, op: &Operation) {
        panic!("rollback of {op} requested, but the B+-tree check never executes commands");
    }

    fn digest(&self) -> Digest {
        self.tree.read().digest()
    }

    fn overlap_events(&self) -> u64 {
        self.lock_contention.load(Ordering::Relaxed)
            + self.forced_restructures.load(Ordering::Relaxed)
            + self.tree.read().leaf_contention()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preload_spreads_keys() {
        let keys: Vec<u64> = preload_keys(4, 99).collect();
        assert_eq!(keys, vec![0, 25, 50, 75]);
        assert_eq!(preload_keys(10, 3).count(), 4);
        let svc = TreeService::preloaded(4, 1000, 2, 100).unwrap();
        assert_eq!(svc.tree().len(), 100);
        svc.tree().check_invariants().unwrap();
    }

    #[test]
    fn parallel_and_exclusive_agree() {
        let a = TreeService::preloaded(4, 200, 2, 20).unwrap();
        let b = TreeService::preloaded(4, 200, 2, 20).unwrap();
        let ops = [
            Operation::insert(3, Value::from_u64(1)),
            Operation::update(10, Value::from_u64(2)),
            Operation::delete(20),
            Operation::read(3),
            Operation::read(4),
            Operation::delete(4),
        ];
        for op in ops {
            assert_eq!(a.execute_parallel(&op), b.execute_exclusive(&op), "{op}");
        }
        assert_eq!(a.tree().entries(), b.tree().entries());
    }

    #[test]
    fn checks_only_structural_commands() {
        let svc = TreeService::preloaded(4, 100, 2, 20).unwrap();
        assert!(svc.safety_check(&Operation::read(0), 0).is_err());
        assert!(svc
            .safety_check(&Operation::insert(0, Value::default()), 0)
            .unwrap()
            .passed());
        // a lone root leaf spans both partitions
        let empty = TreeService::new(4, 100, 2).unwrap();
        assert!(!empty
            .safety_check(&Operation::insert(1, Value::default()), 0)
            .unwrap()
            .passed());
    }

    #[test]
    #[should_panic(expected = "rollback")]
    fn rollback_is_never_expected() {
        TreeService::new(4, 100, 1)
            .unwrap()
            .rollback(&Operation::delete(1));
    }
}
