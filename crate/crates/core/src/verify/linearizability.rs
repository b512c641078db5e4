//! Linearizability checking against the sequential map specification.
//!
//! Every operation touches one key, so the history is split per key and each
//! sub-history is checked on its own (linearizability is local). Each key is
//! searched with the Wing-Gong algorithm: repeatedly pick a minimal pending
//! call, apply it to the model, and backtrack on mismatch, memoizing
//! (linearized set, model state) pairs. Operations that never responded may
//! take effect at any point after their invocation or not at all, and accept
//! any outcome.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use crate::btree::preload_keys;
use crate::error::Result;
use crate::smr::{CommandKind, Operation, Outcome, Value};

use super::history::{History, HistoryOp, InitialState};

pub const DEFAULT_BUDGET: u64 = 20_000_000;

/// Operation reference as `(client_id, client_seq)`.
pub type OpRef = (u64, u64);

/// A total order of the completed operations (plus the pending ones that
/// took effect) that respects real time and the map semantics.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LinearizationWitness {
    pub order: Vec<OpRef>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ViolationEvidence {
    pub key: u64,
    /// Every operation on `key`, in invocation order.
    pub operations: Vec<String>,
    /// The longest prefix the search could linearize.
    pub longest_prefix: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Verdict {
    Ok(LinearizationWitness),
    Violation(ViolationEvidence),
    /// The search exceeded its step budget; nothing is claimed.
    Inconclusive {
        budget: u64,
        key: u64,
    },
}

impl Verdict {
    pub fn is_ok(&self) -> bool {
        matches!(self, Verdict::Ok(_))
    }

    pub fn is_violation(&self) -> bool {
        matches!(self, Verdict::Violation(_))
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Verdict::Ok(w) => write!(
                f,
                "Ok: linearizable, witness of {} operations",
                w.order.len()
            ),
            Verdict::Violation(ev) => {
                writeln!(f, "Violation on key {}", ev.key)?;
                writeln!(f, "operations:")?;
                for op in &ev.operations {
                    writeln!(f, "  {op}")?;
                }
                write!(
                    f,
                    "longest linearizable prefix ({} ops):",
                    ev.longest_prefix.len()
                )?;
                for op in &ev.longest_prefix {
                    write!(f, "\n  {op}")?;
                }
                Ok(())
            }
            Verdict::Inconclusive { budget, key } => {
                write!(
                    f,
                    "Inconclusive: search budget of {budget} steps exhausted on key {key}"
                )
            }
        }
    }
}

/// Sequential map model: initial contents of each key.
#[derive(Clone, Debug, Default)]
pub struct MapSpec {
    initial: BTreeMap<u64, Value>,
}

impl MapSpec {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn from_initial(initial: InitialState) -> Self {
        let initial = if initial.preload == 0 {
            BTreeMap::new()
        } else {
            preload_keys(initial.preload, initial.max_key)
                .map(|k| (k, Value::from_u64(k)))
                .collect()
        };
        MapSpec { initial }
    }

    pub fn with_entries(entries: impl IntoIterator<Item = (u64, Value)>) -> Self {
        MapSpec {
            initial: entries.into_iter().collect(),
        }
    }

    fn initial(&self, key: u64) -> Option<Value> {
        self.initial.get(&key).copied()
    }
}

/// Applies `op` to one key's state. Returns the next state, or `None` when
/// the observed outcome is impossible from `state`.
fn step(state: Option<Value>, op: &Operation, observed: Option<Outcome>) -> Option<Option<Value>> {
    let (next, outcome) = match op.kind {
        CommandKind::Read => (state, state.map_or(Outcome::Absent, Outcome::Value)),
        CommandKind::Update => match state {
            Some(_) => (op.value, Outcome::Ok),
            None => (None, Outcome::NotFound),
        },
        CommandKind::Insert => (op.value, Outcome::Ok),
        CommandKind::Delete => match state {
            Some(_) => (None, Outcome::Ok),
            None => (None, Outcome::NotFound),
        },
    };
    match observed {
        Some(o) if o != outcome => None,
        _ => Some(next),
    }
}

enum KeyResult {
    Ok(Vec<usize>),
    Violation(Vec<usize>),
    OutOfBudget,
}

/// Search over one key. `ops` are indices into `all`.
fn check_key(all: &[HistoryOp], ops: &[usize], init: Option<Value>, budget: &mut u64) -> KeyResult {
    const INF: u64 = u64::MAX;
    // (time, is_return, local op index)
    let n = ops.len();
    let mut entries: Vec<(u64, bool, usize)> = Vec::with_capacity(2 * n);
    for (i, &o) in ops.iter().enumerate() {
        let op = &all[o];
        entries.push((op.invoked_ns, false, i));
        entries.push((op.response.map_or(INF, |(t, _)| t), true, i));
    }
    // calls before returns at equal times: equal timestamps are concurrent
    entries.sort_by_key(|&(t, is_ret, i)| (t, is_ret, i));
    let len = entries.len();
    // doubly linked list over entry positions with sentinel head at `len`
    let mut next: Vec<usize> = (1..=len).collect();
    next.push(0);
    let mut prev: Vec<usize> = Vec::with_capacity(len + 1);
    prev.push(len);
    prev.extend(0..len);
    let mut ret_pos = vec![0usize; n];
    for (p, &(_, is_ret, i)) in entries.iter().enumerate() {
        if is_ret {
            ret_pos[i] = p;
        }
    }
    let unlink = |p: usize, next: &mut Vec<usize>, prev: &mut Vec<usize>| {
        let (a, b) = (prev[p], next[p]);
        next[a] = b;
        prev[b] = a;
    };
    let relink = |p: usize, next: &mut Vec<usize>, prev: &mut Vec<usize>| {
        let (a, b) = (prev[p], next[p]);
        next[a] = p;
        prev[b] = p;
    };

    let words = n.div_ceil(64);
    let mut linearized = vec![0u64; words];
    let mut state = init;
    let mut cache: HashSet<(Vec<u64>, Option<Value>)> = HashSet::new();
    let mut stack: Vec<(usize, Option<Value>)> = Vec::new();
    let mut best: Vec<usize> = Vec::new();
    let mut cur = next[len];
    loop {
        if next[len] == len {
            return KeyResult::Ok(stack.iter().map(|&(p, _)| ops[entries[p].2]).collect());
        }
        if *budget == 0 {
            return KeyResult::OutOfBudget;
        }
        *budget -= 1;
        let (_, is_ret, i) = entries[cur];
        if !is_ret {
            let op = &all[ops[i]];
            if let Some(s) = step(state, &op.op, op.outcome()) {
                linearized[i / 64] |= 1 << (i % 64);
                if cache.insert((linearized.clone(), s)) {
                    stack.push((cur, state));
                    state = s;
                    unlink(cur, &mut next, &mut prev);
                    unlink(ret_pos[i], &mut next, &mut prev);
                    if stack.len() > best.len() {
                        best = stack.iter().map(|&(p, _)| ops[entries[p].2]).collect();
                    }
                    cur = next[len];
                    continue;
                }
                linearized[i / 64] &= !(1 << (i % 64));
            }
            cur = next[cur];
        } else {
            // a minimal return was reached without linearizing its call
            let Some((p, s)) = stack.pop() else {
                return KeyResult::Violation(best);
            };
            let j = entries[p].2;
            state = s;
            linearized[j / 64] &= !(1 << (j % 64));
            relink(ret_pos[j], &mut next, &mut prev);
            relink(p, &mut next, &mut prev);
            cur = next[p];
        }
        // every remaining call has its return later in the list, so the
        // cursor meets a return before running off the end
        debug_assert_ne!(cur, len);
    }
}

/// Merges per-key orders with real-time precedence into one total order.
fn merge_orders(all: &[HistoryOp], per_key: Vec<Vec<usize>>) -> Vec<OpRef> {
    let mut by_response: Vec<usize> = per_key.iter().flatten().copied().collect();
    by_response.sort_by_key(|&i| (all[i].response.map_or(u64::MAX, |(t, _)| t), i));
    let resp_times: Vec<u64> = by_response
        .iter()
        .map(|&i| all[i].response.map_or(u64::MAX, |(t, _)| t))
        .collect();
    let mut rank = vec![usize::MAX; all.len()];
    for (r, &i) in by_response.iter().enumerate() {
        rank[i] = r;
    }
    let mut emitted = vec![false; by_response.len()];
    let mut prefix = 0usize;
    let mut heads = vec![0usize; per_key.len()];
    let mut order = Vec::with_capacity(by_response.len());
    while order.len() < by_response.len() {
        let before = order.len();
        for (k, seq) in per_key.iter().enumerate() {
            while let Some(&i) = seq.get(heads[k]) {
                // every operation that responded before this invocation
                // must already be placed
                let needed = resp_times.partition_point(|&t| t < all[i].invoked_ns);
                if prefix < needed {
                    break;
                }
                order.push((all[i].client_id, all[i].client_seq));
                emitted[rank[i]] = true;
                while prefix < emitted.len() && emitted[prefix] {
                    prefix += 1;
                }
                heads[k] += 1;
            }
        }
        assert!(
            order.len() > before,
            "per-key linearizations are inconsistent with real time"
        );
    }
    order
}

/// Checks `history` against the map specification starting from `spec`.
pub fn check_linearizable(history: &History, spec: &MapSpec, budget: u64) -> Result<Verdict> {
    let ops = history.operations()?;
    Ok(check_operations(&ops, spec, budget))
}

pub fn check_operations(ops: &[HistoryOp], spec: &MapSpec, budget: u64) -> Verdict {
    let mut by_key: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for (i, op) in ops.iter().enumerate() {
        by_key.entry(op.op.key).or_default().push(i);
    }
    let mut remaining = budget;
    let mut per_key = Vec::with_capacity(by_key.len());
    for (&key, idx) in &by_key {
        match check_key(ops, idx, spec.initial(key), &mut remaining) {
            KeyResult::Ok(order) => per_key.push(order),
            KeyResult::Violation(best) => {
                return Verdict::Violation(ViolationEvidence {
                    key,
                    operations: idx.iter().map(|&i| ops[i].to_string()).collect(),
                    longest_prefix: best.iter().map(|&i| ops[i].to_string()).collect(),
                })
            }
            KeyResult::OutOfBudget => return Verdict::Inconclusive { budget, key },
        }
    }
    Verdict::Ok(LinearizationWitness {
        order: merge_orders(ops, per_key),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn op(
        client: u64,
        seq: u64,
        op: Operation,
        inv: u64,
        resp: Option<(u64, Outcome)>,
    ) -> HistoryOp {
        HistoryOp {
            client_id: client,
            client_seq: seq,
            op,
            invoked_ns: inv,
            response: resp,
        }
    }

    fn v(x: u64) -> Value {
        Value::from_u64(x)
    }

    #[test]
    fn empty_history_is_linearizable() {
        assert_eq!(
            check_operations(&[], &MapSpec::empty(), 10),
            Verdict::Ok(LinearizationWitness { order: vec![] })
        );
    }

    #[test]
    fn single_client_program_order() {
        let ops = [
            op(1, 0, Operation::insert(5, v(1)), 0, Some((1, Outcome::Ok))),
            op(1, 1, Operation::read(5), 2, Some((3, Outcome::Value(v(1))))),
            op(1, 2, Operation::delete(5), 4, Some((5, Outcome::Ok))),
            op(
                1,
                3,
                Operation::update(5, v(2)),
                6,
                Some((7, Outcome::NotFound)),
            ),
        ];
        let Verdict::Ok(w) = check_operations(&ops, &MapSpec::empty(), 1000) else {
            panic!()
        };
        assert_eq!(w.order, vec![(1, 0), (1, 1), (1, 2), (1, 3)]);
    }

    #[test]
    fn stale_read_after_completed_insert_is_a_violation() {
        let ops = [
            op(1, 0, Operation::insert(5, v(1)), 0, Some((10, Outcome::Ok))),
            op(2, 0, Operation::read(5), 20, Some((30, Outcome::Absent))),
        ];
        let verdict = check_operations(&ops, &MapSpec::empty(), 1000);
        let Verdict::Violation(ev) = verdict else {
            panic!("{verdict}")
        };
        assert_eq!(ev.key, 5);
        assert_eq!(ev.longest_prefix.len(), 1);
    }

    #[test]
    fn overlapping_read_may_see_either_state() {
        for seen in [Outcome::Absent, Outcome::Value(v(1))] {
            let ops = [
                op(1, 0, Operation::insert(5, v(1)), 0, Some((10, Outcome::Ok))),
                op(2, 0, Operation::read(5), 5, Some((15, seen))),
            ];
            assert!(check_operations(&ops, &MapSpec::empty(), 1000).is_ok());
        }
    }

    #[test]
    fn pending_operations_may_take_effect_or_not() {
        let pending = op(1, 0, Operation::insert(5, v(1)), 0, None);
        for seen in [Outcome::Absent, Outcome::Value(v(1))] {
            let ops = [pending, op(2, 0, Operation::read(5), 5, Some((6, seen)))];
            assert!(check_operations(&ops, &MapSpec::empty(), 1000).is_ok());
        }
        // but not before it was invoked
        let ops = [
            op(2, 0, Operation::read(5), 0, Some((1, Outcome::Value(v(1))))),
            op(1, 0, Operation::insert(5, v(1)), 2, None),
        ];
        assert!(check_operations(&ops, &MapSpec::empty(), 1000).is_violation());
    }

    #[test]
    fn initial_state_is_honoured() {
        let ops = [op(
            1,
            0,
            Operation::read(0),
            0,
            Some((1, Outcome::Value(v(0)))),
        )];
        assert!(check_operations(&ops, &MapSpec::empty(), 100).is_violation());
        let spec = MapSpec::from_initial(InitialState {
            preload: 10,
            max_key: 100,
        });
        assert!(check_operations(&ops, &spec, 100).is_ok());
    }

    #[test]
    fn budget_exhaustion_is_inconclusive() {
        let ops: Vec<HistoryOp> = (0..6)
            .map(|c| {
                op(
                    c,
                    0,
                    Operation::insert(1, v(c)),
                    0,
                    Some((100, Outcome::Ok)),
                )
            })
            .collect();
        assert!(matches!(
            check_operations(&ops, &MapSpec::empty(), 3),
            Verdict::Inconclusive { .. }
        ));
        assert!(check_operations(&ops, &MapSpec::empty(), 1_000_000).is_ok());
    }

    #[test]
    fn witness_respects_real_time_across_keys() {
        let ops = [
            op(1, 0, Operation::insert(1, v(1)), 0, Some((10, Outcome::Ok))),
            op(
                2,
                0,
                Operation::insert(2, v(2)),
                20,
                Some((30, Outcome::Ok)),
            ),
            op(
                1,
                1,
                Operation::read(2),
                40,
                Some((50, Outcome::Value(v(2)))),
            ),
        ];
        let Verdict::Ok(w) = check_operations(&ops, &MapSpec::empty(), 1000) else {
            panic!()
        };
        assert_eq!(w.order, vec![(1, 0), (2, 0), (1, 1)]);
    }

    #[test]
    fn checker_is_deterministic() {
        let ops: Vec<HistoryOp> = (0..8)
            .map(|i| {
                op(
                    i % 3,
                    i,
                    Operation::insert(i % 2, v(i)),
                    i * 3,
                    Some((i * 3 + 7, Outcome::Ok)),
                )
            })
            .collect();
        let a = check_operations(&ops, &MapSpec::empty(), 100_000);
        let b = check_operations(&ops, &MapSpec::empty(), 100_000);
        assert!(a.is_ok());
        assert_eq!(a, b);
    }
}
