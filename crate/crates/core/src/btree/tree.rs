use std::fmt::Write as _;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};

use parking_lot::RwLock;
use sha2::{Digest as _, Sha256};

use crate::error::{Error, Result};
use crate::smr::Value;

pub const DEFAULT_FANOUT: usize = 64;

/// Fingerprint of tree contents and shape.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub struct Digest(pub [u8; 32]);

impl std::fmt::Display for Digest {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&hex::encode(self.0))
    }
}

/// Stable identity of a leaf while the tree structure does not change.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LeafId(usize);

/// A leaf and the closed key range `[lo, hi]` its ancestors route to it.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct LeafLocator {
    pub leaf: LeafId,
    pub lo: u64,
    pub hi: u64,
    pub len: usize,
    /// True when the leaf is the root.
    pub is_root: bool,
    /// Whether the searched key is present in the leaf.
    pub contains: bool,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum InsertOutcome {
    Inserted,
    Replaced,
}

/// Counts of structure-changing events since creation.
#[derive(Copy, Clone, Debug, Default, PartialEq, Eq)]
pub struct StructureStats {
    pub splits: u64,
    pub merges: u64,
    pub redistributions: u64,
}

impl StructureStats {
    pub fn total(&self) -> u64 {
        self.splits + self.merges + self.redistributions
    }
}

/// A leaf-local mutation would have to restructure the tree.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct NeedsRestructure;

#[derive(Debug, Default, Clone)]
struct Leaf {
    keys: Vec<u64>,
    values: Vec<Value>,
}

impl Leaf {
    fn len(&self) -> usize {
        self.keys.len()
    }
}

#[derive(Debug, Clone)]
struct Inner {
    /// `keys[i]` separates `children[i]` and `children[i + 1]`; a key equal
    /// to a separator routes right.
    keys: Vec<u64>,
    children: Vec<Node>,
}

impl Inner {
    fn child_index(&self, key: u64) -> usize {
        self.keys.partition_point(|&sep| sep <= key)
    }
}

#[derive(Debug)]
enum Node {
    Inner(Inner),
    // Leaves carry their own lock so threads in parallel mode can mutate
    // disjoint leaves through a shared reference to the tree.
    Leaf(RwLock<Leaf>),
}

impl Node {
    fn leaf(leaf: Leaf) -> Self {
        Node::Leaf(RwLock::new(leaf))
    }

    fn size(&mut self) -> usize {
        match self {
            Node::Inner(inner) => inner.children.len(),
            Node::Leaf(leaf) => leaf.get_mut().len(),
        }
    }
}

impl Clone for Node {
    fn clone(&self) -> Self {
        match self {
            Node::Inner(inner) => Node::Inner(inner.clone()),
            Node::Leaf(leaf) => Node::leaf(leaf.read().clone()),
        }
    }
}

/// In-memory B+-tree over `u64` keys and 8-byte values.
///
/// Inner nodes hold at most `fanout` children and leaves at most `fanout`
/// entries. Non-root nodes keep at least `ceil(fanout / 2)`. Structural
/// operations take `&mut self`; the `*_in_leaf` operations take `&self` and
/// touch exactly one leaf, which is what parallel-mode execution needs.
#[derive(Debug)]
pub struct BPlusTree {
    fanout: usize,
    max_key: u64,
    root: Node,
    len: AtomicUsize,
    stats: StructureStats,
    leaf_contention: AtomicU64,
}

impl Clone for BPlusTree {
    /// Deep copy with the same shape; leaf identities differ.
    fn clone(&self) -> Self {
        BPlusTree {
            fanout: self.fanout,
            max_key: self.max_key,
            root: self.root.clone(),
            len: AtomicUsize::new(self.len()),
            stats: self.stats,
            leaf_contention: AtomicU64::new(0),
        }
    }
}

impl BPlusTree {
    pub fn new(fanout: usize, max_key: u64) -> Result<Self> {
        if fanout < 3 {
            return Err(Error::Config(format!(
                "fanout must be at least 3, got {fanout}"
            )));
        }
        Ok(BPlusTree {
            fanout,
            max_key,
            root: Node::leaf(Leaf::default()),
            len: AtomicUsize::new(0),
            stats: StructureStats::default(),
            leaf_contention: AtomicU64::new(0),
        })
    }

    /// Builds a tree from strictly ascending entries with every node packed
    /// to `fanout`, except that the last two nodes of a level share their
    /// entries when the last would fall under the minimum fill.
    pub fn bulk_load(
        fanout: usize,
        max_key: u64,
        entries: impl IntoIterator<Item = (u64, Value)>,
    ) -> Result<Self> {
        let mut tree = BPlusTree::new(fanout, max_key)?;
        let (keys, values): (Vec<u64>, Vec<Value>) = entries.into_iter().unzip();
        if let Some(w) = keys.windows(2).find(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!(
                "bulk load keys not strictly ascending at {}",
                w[1]
            )));
        }
        if let Some(&k) = keys.last().filter(|&&k| k > max_key) {
            return Err(Error::KeyOutOfRange { key: k, max_key });
        }
        if keys.is_empty() {
            return Ok(tree);
        }
        let min = tree.min_fill();
        let mut level: Vec<(u64, Node)> = Vec::new();
        let (mut ks, mut vs) = (keys.as_slice(), values.as_slice());
        for size in pack(keys.len(), fanout, min) {
            let (k, rest_k) = ks.split_at(size);
            let (v, rest_v) = vs.split_at(size);
            level.push((
                k[0],
                Node::leaf(Leaf {
                    keys: k.to_vec(),
                    values: v.to_vec(),
                }),
            ));
            (ks, vs) = (rest_k, rest_v);
        }
        while level.len() > 1 {
            let mut nodes = level.into_iter();
            level = pack(nodes.len(), fanout, min)
                .into_iter()
                .map(|size| {
                    let group: Vec<(u64, Node)> = nodes.by_ref().take(size).collect();
                    let lo = group[0].0;
                    let keys = group[1..].iter().map(|(k, _)| *k).collect();
                    let children = group.into_iter().map(|(_, n)| n).collect();
                    (lo, Node::Inner(Inner { keys, children }))
                })
                .collect();
        }
        tree.root = level.pop().expect("non-empty").1;
        tree.len.store(keys.len(), Ordering::Relaxed);
        Ok(tree)
    }

    pub fn fanout(&self) -> usize {
        self.fanout
    }

    pub fn max_key(&self) -> u64 {
        self.max_key
    }

    pub fn min_fill(&self) -> usize {
        self.fanout.div_ceil(2)
    }

    pub fn len(&self) -> usize {
        self.len.load(Ordering::Relaxed)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn stats(&self) -> StructureStats {
        self.stats
    }

    /// Leaf-local writes that found their leaf locked by another thread.
    /// Always zero when the replication protocol keeps parallel writers on
    /// disjoint leaves.
    pub fn leaf_contention(&self) -> u64 {
        self.leaf_contention.load(Ordering::Relaxed)
    }

    pub fn height(&self) -> usize {
        let mut node = &self.root;
        let mut h = 1;
        while let Node::Inner(inner) = node {
            node = &inner.children[0];
            h += 1;
        }
        h
    }

    fn find_leaf(&self, key: u64) -> &RwLock<Leaf> {
        let mut node = &self.root;
        loop {
            match node {
                Node::Inner(inner) => node = &inner.children[inner.child_index(key)],
                Node::Leaf(leaf) => return leaf,
            }
        }
    }

    pub fn read(&self, key: u64) -> Option<Value> {
        let leaf = self.find_leaf(key).read();
        leaf.keys.binary_search(&key).ok().map(|i| leaf.values[i])
    }

    pub fn contains(&self, key: u64) -> bool {
        self.read(key).is_some()
    }

    /// Replaces the value of an existing key. Never changes structure.
    pub fn update(&self, key: u64, value: Value) -> bool {
        let mut leaf = self.find_leaf(key).write();
        match leaf.keys.binary_search(&key) {
            Ok(i) => {
                leaf.values[i] = value;
                true
            }
            Err(_) => false,
        }
    }

    fn lock_leaf_exclusive(&self, key: u64) -> parking_lot::RwLockWriteGuard<'_, Leaf> {
        let lock = self.find_leaf(key);
        lock.try_write().unwrap_or_else(|| {
            self.leaf_contention.fetch_add(1, Ordering::Relaxed);
            lock.write()
        })
    }

    /// Inserts into the target leaf through a shared reference. Fails without
    /// touching anything if the leaf is full and the key is new.
    pub fn insert_in_leaf(
        &self,
        key: u64,
        value: Value,
    ) -> Result<InsertOutcome, NeedsRestructure> {
        let mut leaf = self.lock_leaf_exclusive(key);
        match leaf.keys.binary_search(&key) {
            Ok(i) => {
                leaf.values[i] = value;
                Ok(InsertOutcome::Replaced)
            }
            Err(_) if leaf.len() >= self.fanout => Err(NeedsRestructure),
            Err(i) => {
                leaf.keys.insert(i, key);
                leaf.values.insert(i, value);
                self.len.fetch_add(1, Ordering::Relaxed);
                Ok(InsertOutcome::Inserted)
            }
        }
    }

    /// Deletes from the target leaf through a shared reference. Fails without
    /// touching anything if the leaf would underflow.
    pub fn delete_in_leaf(&self, key: u64) -> Result<bool, NeedsRestructure> {
        let is_root_leaf = matches!(self.root, Node::Leaf(_));
        let mut leaf = self.lock_leaf_exclusive(key);
        match leaf.keys.binary_search(&key) {
            Err(_) => Ok(false),
            Ok(_) if !is_root_leaf && leaf.len() <= self.min_fill() => Err(NeedsRestructure),
            Ok(i) => {
                leaf.keys.remove(i);
                leaf.values.remove(i);
                self.len.fetch_sub(1, Ordering::Relaxed);
                Ok(true)
            }
        }
    }

    pub fn insert(&mut self, key: u64, value: Value) -> InsertOutcome {
        let fanout = self.fanout;
        let (outcome, split) = insert_rec(&mut self.root, key, value, fanout, &mut self.stats);
        if let Some((sep, right)) = split {
            let left = std::mem::replace(&mut self.root, Node::leaf(Leaf::default()));
            self.root = Node::Inner(Inner {
                keys: vec![sep],
                children: vec![left, right],
            });
        }
        if outcome == InsertOutcome::Inserted {
            *self.len.get_mut() += 1;
        }
        outcome
    }

    pub fn delete(&mut self, key: u64) -> bool {
        let fanout = self.fanout;
        let found = delete_rec(&mut self.root, key, fanout, &mut self.stats);
        // collapse a root left with a single child
        loop {
            match &mut self.root {
                Node::Inner(inner) if inner.children.len() == 1 => {
                    let child = inner.children.pop().unwrap();
                    self.root = child;
                }
                _ => break,
            }
        }
        if found {
            *self.len.get_mut() -= 1;
        }
        found
    }

    /// Exclusive-access update; identical to [`BPlusTree::update`].
    pub fn update_mut(&mut self, key: u64, value: Value) -> bool {
        self.update(key, value)
    }

    fn count_entries(&self) -> usize {
        fn rec(node: &Node) -> usize {
            match node {
                Node::Inner(inner) => inner.children.iter().map(rec).sum(),
                Node::Leaf(leaf) => leaf.read().len(),
            }
        }
        rec(&self.root)
    }

    /// Locates the leaf `key` routes to and the range of keys routed there.
    /// The leftmost leaf starts at 0 and the rightmost ends at `max_key`.
    pub fn locate_leaf(&self, key: u64) -> LeafLocator {
        let mut node = &self.root;
        let mut lo = 0u64;
        let mut hi = self.max_key;
        loop {
            match node {
                Node::Inner(inner) => {
                    let idx = inner.child_index(key);
                    if idx > 0 {
                        lo = inner.keys[idx - 1];
                    }
                    if idx < inner.keys.len() {
                        hi = inner.keys[idx].saturating_sub(1);
                    }
                    node = &inner.children[idx];
                }
                Node::Leaf(lock) => {
                    let leaf = lock.read();
                    return LeafLocator {
                        leaf: LeafId(lock as *const RwLock<Leaf> as usize),
                        lo,
                        hi,
                        len: leaf.len(),
                        is_root: std::ptr::eq(node, &self.root),
                        contains: leaf.keys.binary_search(&key).is_ok(),
                    };
                }
            }
        }
    }

    /// Whether inserting (`insert = true`) or deleting `key` would split,
    /// merge or redistribute.
    pub fn would_restructure(&self, insert: bool, key: u64) -> bool {
        let loc = self.locate_leaf(key);
        if insert {
            !loc.contains && loc.len >= self.fanout
        } else {
            loc.contains && !loc.is_root && loc.len <= self.min_fill()
        }
    }

    /// Entries in key order.
    pub fn entries(&self) -> Vec<(u64, Value)> {
        fn rec(node: &Node, out: &mut Vec<(u64, Value)>) {
            match node {
                Node::Inner(inner) => inner.children.iter().for_each(|c| rec(c, out)),
                Node::Leaf(leaf) => {
                    let leaf = leaf.read();
                    out.extend(leaf.keys.iter().copied().zip(leaf.values.iter().copied()));
                }
            }
        }
        let mut out = Vec::with_capacity(self.len());
        rec(&self.root, &mut out);
        out
    }

    /// Leaves in key order as `(id, keys)`.
    pub fn leaves(&self) -> Vec<(LeafId, Vec<u64>)> {
        fn rec(node: &Node, out: &mut Vec<(LeafId, Vec<u64>)>) {
            match node {
                Node::Inner(inner) => inner.children.iter().for_each(|c| rec(c, out)),
                Node::Leaf(lock) => out.push((
                    LeafId(lock as *const RwLock<Leaf> as usize),
                    lock.read().keys.clone(),
                )),
            }
        }
        let mut out = Vec::new();
        rec(&self.root, &mut out);
        out
    }

    /// Hash over node kinds, separator keys, and leaf entries in depth-first
    /// order. Equal digests mean equal contents and equal shape.
    pub fn digest(&self) -> Digest {
        fn rec(node: &Node, h: &mut Sha256) {
            match node {
                Node::Inner(inner) => {
                    h.update(b"I");
                    h.update((inner.keys.len() as u64).to_le_bytes());
                    for k in &inner.keys {
                        h.update(k.to_le_bytes());
                    }
                    inner.children.iter().for_each(|c| rec(c, h));
                }
                Node::Leaf(leaf) => {
                    let leaf = leaf.read();
                    h.update(b"L");
                    h.update((leaf.len() as u64).to_le_bytes());
                    for (k, v) in leaf.keys.iter().zip(&leaf.values) {
                        h.update(k.to_le_bytes());
                        h.update(v.0);
                    }
                }
            }
        }
        let mut h = Sha256::new();
        rec(&self.root, &mut h);
        Digest(h.finalize().into())
    }

    /// Checks the structural invariants; returns a description of the first
    /// violation.
    pub fn check_invariants(&self) -> Result<(), String> {
        struct Walk {
            fanout: usize,
            min: usize,
            leaf_depth: Option<usize>,
        }
        fn rec(
            w: &mut Walk,
            node: &Node,
            depth: usize,
            lo: Option<u64>,
            hi: Option<u64>,
            root: bool,
        ) -> Result<(), String> {
            let in_range = |k: u64| lo.is_none_or(|lo| k >= lo) && hi.is_none_or(|hi| k < hi);
            match node {
                Node::Leaf(leaf) => {
                    let leaf = leaf.read();
                    if leaf.keys.len() != leaf.values.len() {
                        return Err("leaf keys/values length mismatch".into());
                    }
                    if leaf.len() > w.fanout || (!root && leaf.len() < w.min) {
                        return Err(format!(
                            "leaf size {} outside [{}, {}]",
                            leaf.len(),
                            w.min,
                            w.fanout
                        ));
                    }
                    if !leaf.keys.windows(2).all(|p| p[0] < p[1]) {
                        return Err("leaf keys not sorted".into());
                    }
                    if let Some(k) = leaf.keys.iter().find(|&&k| !in_range(k)) {
                        return Err(format!("key {k} outside routed range {lo:?}..{hi:?}"));
                    }
                    match w.leaf_depth {
                        None => w.leaf_depth = Some(depth),
                        Some(d) if d != depth => {
                            return Err(format!("leaves at depths {d} and {depth}"))
                        }
                        _ => {}
                    }
                    Ok(())
                }
                Node::Inner(inner) => {
                    let n = inner.children.len();
                    if inner.keys.len() + 1 != n {
                        return Err("inner keys/children mismatch".into());
                    }
                    let min = if root { 2 } else { w.min };
                    if n > w.fanout || n < min {
                        return Err(format!(
                            "inner node with {n} children outside [{min}, {}]",
                            w.fanout
                        ));
                    }
                    if !inner.keys.windows(2).all(|p| p[0] < p[1]) {
                        return Err("separators not sorted".into());
                    }
                    if let Some(k) = inner.keys.iter().find(|&&k| !in_range(k)) {
                        return Err(format!("separator {k} outside {lo:?}..{hi:?}"));
                    }
                    for (i, child) in inner.children.iter().enumerate() {
                        let clo = if i == 0 { lo } else { Some(inner.keys[i - 1]) };
                        let chi = if i == n - 1 { hi } else { Some(inner.keys[i]) };
                        rec(w, child, depth + 1, clo, chi, false)?;
                    }
                    Ok(())
                }
            }
        }
        let mut w = Walk {
            fanout: self.fanout,
            min: self.min_fill(),
            leaf_depth: None,
        };
        rec(&mut w, &self.root, 0, None, None, true)?;
        if self.count_entries() != self.len() {
            return Err("entry count out of date".into());
        }
        Ok(())
    }

    /// Sorted `key,value` lines, value as 16 hex digits.
    pub fn export_snapshot(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(out, "{k},{v}");
        }
        out
    }

    pub fn import_snapshot(text: &str, fanout: usize, max_key: u64) -> Result<Self> {
        let mut tree = BPlusTree::new(fanout, max_key)?;
        let mut last = None;
        for (i, line) in text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
        {
            let bad = |msg: &str| Error::Decode(format!("snapshot line {}: {msg}", i + 1));
            let (k, v) = line
                .trim()
                .split_once(',')
                .ok_or_else(|| bad("expected key,value"))?;
            let key: u64 = k.parse().map_err(|_| bad("bad key"))?;
            let value: Value = v.parse().map_err(|_| bad("bad value"))?;
            if last.is_some_and(|l| l >= key) {
                return Err(bad("keys not strictly ascending"));
            }
            last = Some(key);
            tree.insert(key, value);
        }
        Ok(tree)
    }
}

fn insert_rec(
    node: &mut Node,
    key: u64,
    value: Value,
    fanout: usize,
    stats: &mut StructureStats,
) -> (InsertOutcome, Option<(u64, Node)>) {
    match node {
        Node::Leaf(lock) => {
            let leaf = lock.get_mut();
            match leaf.keys.binary_search(&key) {
                Ok(i) => {
                    leaf.values[i] = value;
                    (InsertOutcome::Replaced, None)
                }
                Err(i) => {
                    leaf.keys.insert(i, key);
                    leaf.values.insert(i, value);
                    if leaf.len() <= fanout {
                        return (InsertOutcome::Inserted, None);
                    }
                    stats.splits += 1;
                    let mid = leaf.len().div_ceil(2);
                    let right = Leaf {
                        keys: leaf.keys.split_off(mid),
                        values: leaf.values.split_off(mid),
                    };
                    let sep = right.keys[0];
                    (InsertOutcome::Inserted, Some((sep, Node::leaf(right))))
                }
            }
        }
        Node::Inner(inner) => {
            let idx = inner.child_index(key);
            let (outcome, split) = insert_rec(&mut inner.children[idx], key, value, fanout, stats);
            let Some((sep, right)) = split else {
                return (outcome, None);
            };
            inner.keys.insert(idx, sep);
            inner.children.insert(idx + 1, right);
            if inner.children.len() <= fanout {
                return (outcome, None);
            }
            stats.splits += 1;
            let mid = inner.children.len().div_ceil(2);
            let right_children = inner.children.split_off(mid);
            let mut right_keys = inner.keys.split_off(mid - 1);
            let promoted = right_keys.remove(0);
            let right = Node::Inner(Inner {
                keys: right_keys,
                children: right_children,
            });
            (outcome, Some((promoted, right)))
        }
    }
}

fn delete_rec(node: &mut Node, key: u64, fanout: usize, stats: &mut StructureStats) -> bool {
    match node {
        Node::Leaf(lock) => {
            let leaf = lock.get_mut();
            match leaf.keys.binary_search(&key) {
                Ok(i) => {
                    leaf.keys.remove(i);
                    leaf.values.remove(i);
                    true
                }
                Err(_) => false,
            }
        }
        Node::Inner(inner) => {
            let idx = inner.child_index(key);
            let found = delete_rec(&mut inner.children[idx], key, fanout, stats);
            if found && inner.children[idx].size() < fanout.div_ceil(2) {
                fix_underflow(inner, idx, fanout, stats);
            }
            found
        }
    }
}

/// Restores the minimum fill of `parent.children[idx]`: merge with the left
/// sibling, else with the right sibling, else borrow from the left sibling,
/// else from the right one.
fn fix_underflow(parent: &mut Inner, idx: usize, fanout: usize, stats: &mut StructureStats) {
    let size = parent.children[idx].size();
    let has_left = idx > 0;
    let has_right = idx + 1 < parent.children.len();
    if has_left && parent.children[idx - 1].size() + size <= fanout {
        merge_children(parent, idx - 1);
        stats.merges += 1;
    } else if has_right && parent.children[idx + 1].size() + size <= fanout {
        merge_children(parent, idx);
        stats.merges += 1;
    } else if has_left {
        borrow_from_left(parent, idx);
        stats.redistributions += 1;
    } else {
        borrow_from_right(parent, idx);
        stats.redistributions += 1;
    }
}

/// Merges `children[i + 1]` into `children[i]`.
fn merge_children(parent: &mut Inner, i: usize) {
    let sep = parent.keys.remove(i);
    let right = parent.children.remove(i + 1);
    match (&mut parent.children[i], right) {
        (Node::Leaf(left), Node::Leaf(right)) => {
            let left = left.get_mut();
            let right = right.into_inner();
            left.keys.extend(right.keys);
            left.values.extend(right.values);
        }
        (Node::Inner(left), Node::Inner(right)) => {
            left.keys.push(sep);
            left.keys.extend(right.keys);
            left.children.extend(right.children);
        }
        _ => unreachable!("siblings are at the same depth"),
    }
}

fn borrow_from_left(parent: &mut Inner, idx: usize) {
    let (head, tail) = parent.children.split_at_mut(idx);
    match (&mut head[idx - 1], &mut tail[0]) {
        (Node::Leaf(left), Node::Leaf(target)) => {
            let (left, target) = (left.get_mut(), target.get_mut());
            let k = left.keys.pop().unwrap();
            let v = left.values.pop().unwrap();
            target.keys.insert(0, k);
            target.values.insert(0, v);
            parent.keys[idx - 1] = k;
        }
        (Node::Inner(left), Node::Inner(target)) => {
            let child = left.children.pop().unwrap();
            let up = left.keys.pop().unwrap();
            target.children.insert(0, child);
            target.keys.insert(0, parent.keys[idx - 1]);
            parent.keys[idx - 1] = up;
        }
        _ => unreachable!("siblings are at the same depth"),
    }
}

fn borrow_from_right(parent: &mut Inner, idx: usize) {
    let (head, tail) = parent.children.split_at_mut(idx + 1);
    match (&mut head[idx], &mut tail[0]) {
        (Node::Leaf(target), Node::Leaf(right)) => {
            let (target, right) = (target.get_mut(), right.get_mut());
            target.keys.push(right.keys.remove(0));
            target.values.push(right.values.remove(0));
            parent.keys[idx] = right.keys[0];
        }
        (Node::Inner(target), Node::Inner(right)) => {
            target.children.push(right.children.remove(0));
            target.keys.push(parent.keys[idx]);
            parent.keys[idx] = right.keys.remove(0);
        }
        _ => unreachable!("siblings are at the same depth"),
    }
}

/// Node sizes for packing `n` items `cap` to a node with at least `min` in
/// each node but a lone root.
fn pack(n: usize, cap: usize, min: usize) -> Vec<usize> {
    let count = n.div_ceil(cap);
    let mut sizes = vec![cap; count];
    sizes[count - 1] = n - cap * (count - 1);
    if count > 1 && sizes[count - 1] < min {
        let pair = cap + sizes[count - 1];
        sizes[count - 2] = pair.div_ceil(2);
        sizes[count - 1] = pair / 2;
    }
    sizes
}
