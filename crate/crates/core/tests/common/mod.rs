//! Oracles and run helpers shared by the integration tests and the
//! acceptance suite.
#![allow(dead_code)]

use std::collections::{HashMap, HashSet, VecDeque};
use std::sync::Arc;
use std::time::Duration;

use bytes::Bytes;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use psmr::bench::{run_workload, Mix, PreloadLayout, RunReport, RunSpec, WorkloadSpec};
use psmr::btree::{safety_check, BPlusTree, PartitionMap, SafetyVerdict, StructuralOp};
use psmr::multicast::{AtomicMulticast, Delivery, GroupSet, KernelConfig, MsgId, SequencerKernel};
use psmr::smr::{EngineMode, Outcome, Value};
use psmr::verify::{EventKind, History, Verdict};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ---------------------------------------------------------------- multicast

/// Checks recorded deliveries of every worker: no duplicates, per-group
/// prefix equality across replicas, an acyclic union of stream orders, and,
/// when `complete`, equal delivered sets per group.
pub fn audit_deliveries(kernel: &SequencerKernel, complete: bool) -> Result<usize, String> {
    let (replicas, threads) = (kernel.replicas(), kernel.threads());
    let streams: Vec<Vec<Vec<Delivery>>> = (0..replicas)
        .map(|r| {
            (0..threads)
                .map(|t| kernel.deliveries(r, t).expect("deliveries recorded"))
                .collect()
        })
        .collect();

    let mut total = 0;
    for (r, per_thread) in streams.iter().enumerate() {
        for (t, s) in per_thread.iter().enumerate() {
            total += s.len();
            let mut seen = HashSet::new();
            for d in s {
                if !seen.insert(d.msg_id) {
                    return Err(format!(
                        "replica {r} thread {t} delivered {} twice",
                        d.msg_id
                    ));
                }
                if !d.dest.contains(t) {
                    return Err(format!(
                        "replica {r} thread {t} got {} addressed to {}",
                        d.msg_id, d.dest
                    ));
                }
            }
        }
    }

    // per-group sequences: g_i as seen by thread i, g_all as seen by every thread
    let group_seq = |r: usize, t: usize, all: bool| -> Vec<MsgId> {
        streams[r][t]
            .iter()
            .filter(|d| {
                if all {
                    d.dest == GroupSet::All
                } else {
                    d.dest == GroupSet::Single(t)
                }
            })
            .map(|d| d.msg_id)
            .collect()
    };
    let mut views: Vec<(String, Vec<Vec<MsgId>>)> = (0..threads)
        .map(|t| {
            (
                format!("g{t}"),
                (0..replicas).map(|r| group_seq(r, t, false)).collect(),
            )
        })
        .collect();
    views.push((
        "all".into(),
        (0..replicas)
            .flat_map(|r| (0..threads).map(move |t| (r, t)))
            .map(|(r, t)| group_seq(r, t, true))
            .collect(),
    ));
    for (name, seqs) in &views {
        for (i, a) in seqs.iter().enumerate() {
            for b in &seqs[i + 1..] {
                let n = a.len().min(b.len());
                if a[..n] != b[..n] {
                    return Err(format!("group {name}: delivery sequences diverge"));
                }
                if complete && a.len() != b.len() {
                    return Err(format!(
                        "group {name}: delivered {} vs {} at quiescence",
                        a.len(),
                        b.len()
                    ));
                }
            }
        }
    }

    // acyclicity: topological sort of the delivered-before relation
    let mut succ: HashMap<MsgId, HashSet<MsgId>> = HashMap::new();
    let mut indegree: HashMap<MsgId, usize> = HashMap::new();
    for s in streams.iter().flatten() {
        for d in s {
            indegree.entry(d.msg_id).or_insert(0);
        }
        for w in s.windows(2) {
            if succ.entry(w[0].msg_id).or_default().insert(w[1].msg_id) {
                *indegree.entry(w[1].msg_id).or_insert(0) += 1;
            }
        }
    }
    let mut ready: VecDeque<MsgId> = indegree
        .iter()
        .filter(|(_, &d)| d == 0)
        .map(|(&m, _)| m)
        .collect();
    let mut sorted = 0;
    while let Some(m) = ready.pop_front() {
        sorted += 1;
        for n in succ.get(&m).into_iter().flatten() {
            let d = indegree.get_mut(n).expect("known node");
            *d -= 1;
            if *d == 0 {
                ready.push_back(*n);
            }
        }
    }
    if sorted != indegree.len() {
        return Err(format!(
            "delivery order has a cycle among {} messages",
            indegree.len() - sorted
        ));
    }
    // and every stream follows the global sequence
    for s in streams.iter().flatten() {
        if s.windows(2).any(|w| w[0].global_seq >= w[1].global_seq) {
            return Err("a stream is out of global_seq order".into());
        }
    }
    Ok(total)
}

/// Concurrent producers and per-stream consumers over a kernel with small
/// bounded streams. Returns the kernel after every message was consumed.
pub fn random_multicast_run(
    seed: u64,
    threads: usize,
    replicas: usize,
    messages: u64,
) -> SequencerKernel {
    const PRODUCERS: u64 = 4;
    let mut config = KernelConfig::new(threads, replicas);
    config.stream_capacity = 64;
    config.record_deliveries = true;
    config.record_log = true;
    let kernel = SequencerKernel::new(config).expect("valid kernel config");
    let mut r = rng(seed);
    let plans: Vec<Vec<GroupSet>> = (0..PRODUCERS)
        .map(|_| {
            (0..messages / PRODUCERS)
                .map(|_| {
                    if r.gen_bool(0.3) {
                        GroupSet::All
                    } else {
                        GroupSet::Single(r.gen_range(0..threads))
                    }
                })
                .collect()
        })
        .collect();
    let mut expected = vec![0usize; threads];
    for dest in plans.iter().flatten() {
        for (t, e) in expected.iter_mut().enumerate() {
            *e += usize::from(dest.contains(t));
        }
    }
    std::thread::scope(|s| {
        for (p, plan) in plans.iter().enumerate() {
            let kernel = &kernel;
            s.spawn(move || {
                for (i, &dest) in plan.iter().enumerate() {
                    let id = MsgId {
                        origin: p as u64,
                        seq: i as u64,
                    };
                    kernel.multicast(dest, id, Bytes::new()).expect("multicast");
                    if i % 97 == 0 {
                        std::thread::yield_now();
                    }
                }
            });
        }
        for rep in 0..replicas {
            for (t, &n) in expected.iter().enumerate() {
                let kernel = &kernel;
                s.spawn(move || {
                    for _ in 0..n {
                        kernel.deliver(rep, t).expect("deliver");
                        kernel.ack(rep, t);
                    }
                });
            }
        }
    });
    kernel
}

// ------------------------------------------------------------------- safety

#[derive(Debug, Default, Clone)]
pub struct SafetyDiff {
    pub pairs: u64,
    pub passes: u64,
    pub structural: u64,
    pub soundness_violations: Vec<String>,
    pub completeness_misses: Vec<String>,
    pub purity_violations: Vec<String>,
    pub disjointness_violations: Vec<String>,
    pub in_leaf_refusals: Vec<String>,
}

impl SafetyDiff {
    pub fn clean(&self) -> bool {
        self.soundness_violations.is_empty()
            && self.completeness_misses.is_empty()
            && self.purity_violations.is_empty()
            && self.disjointness_violations.is_empty()
            && self.in_leaf_refusals.is_empty()
    }
}

fn random_tree(r: &mut ChaCha8Rng, fanout: usize, max_key: u64) -> BPlusTree {
    let mut t = BPlusTree::new(fanout, max_key).expect("valid tree");
    let steps = r.gen_range(0..200);
    let insert_bias = r.gen_range(0.45..0.8);
    for _ in 0..steps {
        let k = r.gen_range(0..=max_key);
        if r.gen_bool(insert_bias) {
            t.insert(k, Value::from_u64(k));
        } else {
            t.delete(k);
        }
    }
    t
}

/// Differential test of the safety check against executing the command on a
/// clone of the tree, over random (tree, command) pairs at fanout 4.
pub fn safety_differential(seed: u64, pairs: u64) -> SafetyDiff {
    const PER_STATE: u64 = 10;
    let mut r = rng(seed);
    let mut out = SafetyDiff::default();
    while out.pairs < pairs {
        let max_key = r.gen_range(20..400);
        let threads = *[1usize, 2, 3, 4, 8].choose(&mut r).expect("non-empty");
        let tree = random_tree(&mut r, 4, max_key);
        let parts = PartitionMap::new(threads, max_key).expect("valid partitions");
        let before_leaves = tree.leaves();
        let before_stats = tree.stats();
        let mut passed: Vec<(usize, u64)> = Vec::new();
        for _ in 0..PER_STATE {
            let key = r.gen_range(0..=max_key);
            let op = if r.gen_bool(0.5) {
                StructuralOp::Insert
            } else {
                StructuralOp::Delete
            };
            let thread = parts.owner(key);
            let label = format!("M={max_key} K={threads} {op:?}({key}) on thread {thread}");
            let digest = tree.digest();
            let verdict = safety_check(&tree, op, key, &parts, thread);
            if tree.digest() != digest {
                out.purity_violations.push(label.clone());
            }
            out.pairs += 1;

            let mut clone = tree.clone();
            match op {
                StructuralOp::Insert => {
                    clone.insert(key, Value::from_u64(key ^ 1));
                }
                StructuralOp::Delete => {
                    clone.delete(key);
                }
            }
            let after_leaves = clone.leaves();
            let restructured = clone.stats().total() != before_stats.total()
                || after_leaves.len() != before_leaves.len();
            let alpha = before_leaves
                .iter()
                .position(|(id, _)| *id == tree.locate_leaf(key).leaf)
                .expect("target leaf is a leaf");
            let touched_other = !restructured
                && before_leaves
                    .iter()
                    .zip(&after_leaves)
                    .enumerate()
                    .any(|(i, (a, b))| i != alpha && a.1 != b.1);
            if restructured {
                out.structural += 1;
                if verdict.passed() {
                    out.completeness_misses.push(label.clone());
                }
            }
            if verdict == SafetyVerdict::Pass {
                out.passes += 1;
                if restructured || touched_other {
                    out.soundness_violations.push(label.clone());
                }
                // the parallel-mode path must accept what the check passed
                let probe = tree.clone();
                let ok = match op {
                    StructuralOp::Insert => probe.insert_in_leaf(key, Value::from_u64(key)).is_ok(),
                    StructuralOp::Delete => probe.delete_in_leaf(key).is_ok(),
                };
                if !ok {
                    out.in_leaf_refusals.push(label.clone());
                }
                passed.push((thread, key));
            }
        }
        for (i, &(ta, ka)) in passed.iter().enumerate() {
            for &(tb, kb) in &passed[i + 1..] {
                if ta != tb && tree.locate_leaf(ka).leaf == tree.locate_leaf(kb).leaf {
                    out.disjointness_violations
                        .push(format!("M={max_key} K={threads} keys {ka} and {kb}"));
                }
            }
        }
    }
    out
}

// ------------------------------------------------------------------ engines

pub fn spec(
    mode: EngineMode,
    threads: usize,
    mix: Mix,
    clients: usize,
    ops_per_client: u64,
    seed: u64,
) -> RunSpec {
    let workload = WorkloadSpec {
        mix,
        clients,
        duration: Duration::from_secs(60),
        discard: Duration::ZERO,
        seed,
        ops_per_client: Some(ops_per_client),
    };
    RunSpec::new(mode, threads, workload)
}

pub fn half_reads() -> Mix {
    Mix::new(50.0, 0.0, 25.0, 25.0).expect("valid mix")
}

/// One randomized convergence run: K drawn from {1, 2, 4}, two replicas,
/// `commands` commands at fanout 4.
pub fn convergence_run(
    mode: EngineMode,
    seed: u64,
    commands: u64,
) -> Result<(RunSpec, RunReport), String> {
    let mut r = rng(seed);
    let threads = *[1usize, 2, 4].choose(&mut r).expect("non-empty");
    let clients = 8;
    let mut s = spec(
        mode,
        threads,
        half_reads(),
        clients,
        commands / clients as u64,
        seed,
    );
    s.fanout = 4;
    s.max_key = r.gen_range(200..5_000);
    s.preload = r.gen_range(0..=s.max_key / 2);
    s.preload_layout = *[
        PreloadLayout::Ascending,
        PreloadLayout::Shuffled,
        PreloadLayout::Packed,
    ]
    .choose(&mut r)
    .expect("non-empty");
    let report = run_workload(&s).map_err(|e| format!("{mode} seed {seed}: {e}"))?;
    let label = format!("{mode} K={} seed {seed}", s.threads);
    if !report.converged {
        return Err(format!("{label}: replica digests differ"));
    }
    if report.live_replicas.len() != 2 {
        return Err(format!("{label}: live replicas {:?}", report.live_replicas));
    }
    if !report.client_errors.is_empty() {
        return Err(format!("{label}: client errors {:?}", report.client_errors));
    }
    if let Some(a) = report.accounting.iter().find(|a| a.answered != a.issued) {
        return Err(format!(
            "{label}: client {} issued {} answered {}",
            a.client, a.issued, a.answered
        ));
    }
    if let Some((i, st)) = report
        .replica_stats
        .iter()
        .enumerate()
        .find(|(_, st)| st.overlap_violations > 0)
    {
        return Err(format!(
            "{label}: replica {i} saw {} overlapping executions",
            st.overlap_violations
        ));
    }
    Ok((s, report))
}

/// A small randomized run with a recorded history checked for
/// linearizability: at most 4 clients and 200 operations, fanout 4.
pub fn small_linearizability_run(
    mode: EngineMode,
    seed: u64,
) -> Result<(History, Verdict), String> {
    let mut r = rng(seed ^ 0x5eed);
    let threads = *[1usize, 2, 4].choose(&mut r).expect("non-empty");
    let clients = r.gen_range(1..=4);
    let ops = r.gen_range(10..=200 / clients as u64);
    let mix = *[
        half_reads(),
        Mix::dependent_only(),
        Mix::new(40.0, 20.0, 20.0, 20.0).expect("valid"),
    ]
    .choose(&mut r)
    .expect("non-empty");
    let mut s = spec(mode, threads, mix, clients, ops, seed);
    s.fanout = 4;
    s.max_key = r.gen_range(8..60);
    s.preload = r.gen_range(0..=s.max_key / 2);
    s.record_history = true;
    s.verify_history = true;
    let report = run_workload(&s).map_err(|e| format!("{mode} seed {seed}: {e}"))?;
    if !report.converged {
        return Err(format!("{mode} seed {seed}: replica digests differ"));
    }
    let history = report.history.ok_or("history not recorded")?;
    let verdict = report.linearizability.ok_or("history not checked")?;
    Ok((history, verdict))
}

/// Corrupts a history so that it cannot be linearizable: a read observes a
/// value written only after it returned, or a value never written at all.
pub fn corrupt(history: &History, r: &mut ChaCha8Rng) -> History {
    let mut h = history.clone();
    let reads: Vec<usize> = h
        .events
        .iter()
        .enumerate()
        .filter(|(_, e)| e.kind == EventKind::Respond && e.op.kind == psmr::smr::CommandKind::Read)
        .map(|(i, _)| i)
        .collect();
    if let Some(&i) = reads.choose(r) {
        let (t, key) = (h.events[i].wallclock_ns, h.events[i].op.key);
        let later_write = h
            .events
            .iter()
            .filter(|e| e.kind == EventKind::Invoke && e.wallclock_ns > t && e.op.key == key)
            .find_map(|e| match e.op.kind {
                psmr::smr::CommandKind::Insert | psmr::smr::CommandKind::Update => e.op.value,
                _ => None,
            });
        let written: HashSet<Value> = h.events.iter().filter_map(|e| e.op.value).collect();
        let value = later_write
            .filter(|v| {
                h.events
                    .iter()
                    .filter(|e| e.kind == EventKind::Invoke && e.op.value == Some(*v))
                    .count()
                    == 1
            })
            .unwrap_or_else(|| {
                (0u64..)
                    .map(|x| Value::from_u64(0xdead_0000 + x))
                    .find(|v| !written.contains(v))
                    .expect("fresh value")
            });
        h.events[i].outcome = Some(Outcome::Value(value));
        return h;
    }
    // no reads: make a response claim a read of a value nobody wrote
    let i = h
        .events
        .iter()
        .position(|e| e.kind == EventKind::Respond)
        .expect("history has a response");
    let seq = h.events[i].client_seq;
    let client = h.events[i].client_id;
    for e in h
        .events
        .iter_mut()
        .filter(|e| e.client_id == client && e.client_seq == seq)
    {
        e.op = psmr::smr::Operation::read(e.op.key);
        if e.kind == EventKind::Respond {
            e.outcome = Some(Outcome::Value(Value::from_u64(0xdead_beef)));
        }
    }
    h
}

pub fn kernel_arc(threads: usize, replicas: usize) -> Arc<SequencerKernel> {
    Arc::new(SequencerKernel::new(KernelConfig::new(threads, replicas)).expect("valid kernel"))
}
