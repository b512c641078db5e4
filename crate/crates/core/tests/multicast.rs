mod common;

use bytes::Bytes;
use proptest::prelude::*;

use psmr::multicast::{AtomicMulticast, GroupSet, KernelConfig, MsgId, SequencerKernel};

/// Every way of interleaving `counts[i]` pulls from stream `i`.
fn interleavings(counts: &[usize]) -> Vec<Vec<usize>> {
    fn rec(left: &mut Vec<usize>, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if left.iter().all(|&c| c == 0) {
            out.push(prefix.clone());
            return;
        }
        for i in 0..left.len() {
            if left[i] > 0 {
                left[i] -= 1;
                prefix.push(i);
                rec(left, prefix, out);
                prefix.pop();
                left[i] += 1;
            }
        }
    }
    let mut out = Vec::new();
    rec(&mut counts.to_vec(), &mut Vec::new(), &mut out);
    out
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    interleavings(&vec![1; n])
}

/// Three messages over two groups, every destination assignment, every send
/// order, and every delivery interleaving on each of two replicas: each
/// worker sees its messages in global_seq order, so the `all` message sits at
/// the same place relative to the singletons everywhere.
#[test]
fn three_messages_two_groups_all_interleavings() {
    let dests = [GroupSet::Single(0), GroupSet::Single(1), GroupSet::All];
    let mut checked = 0u64;
    for a in dests {
        for b in dests {
            for c in dests {
                let assign = [a, b, c];
                for order in permutations(3) {
                    // expected per-thread sequence: messages in send order
                    let expected: Vec<Vec<u64>> = (0..2)
                        .map(|t| {
                            order
                                .iter()
                                .filter(|&&m| assign[m].contains(t))
                                .map(|&m| m as u64)
                                .collect()
                        })
                        .collect();
                    let counts: Vec<usize> = expected.iter().map(Vec::len).collect();
                    let schedules = interleavings(&counts);
                    for s0 in &schedules {
                        for s1 in &schedules {
                            let mut cfg = KernelConfig::new(2, 2);
                            cfg.record_deliveries = true;
                            let k = SequencerKernel::new(cfg).unwrap();
                            for &m in &order {
                                k.multicast(
                                    assign[m],
                                    MsgId {
                                        origin: 0,
                                        seq: m as u64,
                                    },
                                    Bytes::new(),
                                )
                                .unwrap();
                            }
                            for (r, sched) in [s0, s1].into_iter().enumerate() {
                                let mut got: Vec<Vec<(u64, u64)>> = vec![vec![]; 2];
                                for &t in sched {
                                    let msg = k.deliver(r, t).unwrap();
                                    k.ack(r, t);
                                    got[t].push((msg.msg_id.seq, msg.global_seq));
                                }
                                for t in 0..2 {
                                    let ids: Vec<u64> = got[t].iter().map(|x| x.0).collect();
                                    assert_eq!(
                                        ids, expected[t],
                                        "assign {assign:?} order {order:?}"
                                    );
                                    assert!(got[t].windows(2).all(|w| w[0].1 < w[1].1));
                                }
                            }
                            assert!(k.is_idle());
                            common::audit_deliveries(&k, true).unwrap();
                            checked += 1;
                        }
                    }
                }
            }
        }
    }
    assert!(checked > 1000, "{checked}");
}

#[test]
fn concurrent_run_passes_the_audit() {
    let k = common::random_multicast_run(11, 4, 2, 4_000);
    assert!(k.is_idle());
    let delivered = common::audit_deliveries(&k, true).unwrap();
    assert!(delivered >= 4_000 * 2);
    assert_eq!(k.log().unwrap().len(), 4_000);
}

#[test]
fn audit_catches_a_reordered_stream() {
    // two kernels fed the same messages in different orders look, to the
    // audit, like one replica that diverged
    let mut cfg = KernelConfig::new(1, 2);
    cfg.record_deliveries = true;
    let k = SequencerKernel::new(cfg).unwrap();
    k.multicast(
        GroupSet::Single(0),
        MsgId { origin: 0, seq: 0 },
        Bytes::new(),
    )
    .unwrap();
    k.multicast(
        GroupSet::Single(0),
        MsgId { origin: 0, seq: 1 },
        Bytes::new(),
    )
    .unwrap();
    k.deliver(0, 0).unwrap();
    assert!(common::audit_deliveries(&k, false).is_ok());
    assert!(
        common::audit_deliveries(&k, true).is_err(),
        "replica 1 lags; sets differ"
    );
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    /// Sequential producer, arbitrary destination lists and partial
    /// consumption: every stream stays a prefix of its group order.
    #[test]
    fn prefixes_agree_under_partial_consumption(
        dests in prop::collection::vec(prop_oneof![Just(None), (0usize..3).prop_map(Some)], 1..60),
        take in prop::collection::vec(0usize..30, 6),
    ) {
        let mut cfg = KernelConfig::new(3, 2);
        cfg.record_deliveries = true;
        let k = SequencerKernel::new(cfg).unwrap();
        for (i, d) in dests.iter().enumerate() {
            let dest = d.map_or(GroupSet::All, GroupSet::Single);
            k.multicast(dest, MsgId { origin: 1, seq: i as u64 }, Bytes::new()).unwrap();
        }
        for r in 0..2 {
            for t in 0..3 {
                let avail = dests.iter().filter(|d| d.is_none_or(|g| g == t)).count();
                for _ in 0..take[r * 3 + t].min(avail) {
                    k.deliver(r, t).unwrap();
                    k.ack(r, t);
                }
            }
        }
        prop_assert!(common::audit_deliveries(&k, false).is_ok());
    }
}
