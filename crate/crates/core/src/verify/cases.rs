//! Two concurrent commands, at least one routed optimistically, on
//! constructed tree states: both checks pass, one fails, both fail, and a
//! checked command racing an unchecked one.

use std::sync::Arc;
use std::time::Duration;

use crate::btree::{BPlusTree, SafetyVerdict, TreeService};
use crate::error::Result;
use crate::multicast::{KernelConfig, SequencerKernel};
use crate::smr::{
    CommandId, Engine, EngineConfig, EngineMode, Mode, Operation, RoutingConfig, TraceAction, Value,
};

use super::check_convergence;
use super::history::{HistoryRecorder, InitialState};
use super::linearizability::{check_linearizable, MapSpec, DEFAULT_BUDGET};

const FANOUT: usize = 4;
const MAX_KEY: u64 = 100;
const THREADS: usize = 2;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CaseOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// How a command is expected to travel through every replica.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
enum Path {
    /// Checked, passes, executes in parallel mode.
    Pass,
    /// Checked, fails, executes once in synchronous mode.
    Fail,
    /// Not checked, executes directly on its thread.
    Direct,
}

struct Case {
    name: &'static str,
    fixture: Vec<Operation>,
    commands: [(Operation, Path); 2],
}

fn v(x: u64) -> Value {
    Value::from_u64(x)
}

fn cases() -> Vec<Case> {
    // leaves [5 10 20] over [0, 49] and [50 60] over [50, 100]; partition
    // boundary at 49/50
    let base: Vec<Operation> = [5, 10, 20, 50, 60]
        .iter()
        .map(|&k| Operation::insert(k, v(k)))
        .collect();
    let with = |extra: &[Operation]| base.iter().chain(extra).copied().collect::<Vec<_>>();
    vec![
        Case {
            name: "a1",
            fixture: base.clone(),
            commands: [
                (Operation::insert(15, v(1)), Path::Pass),
                (Operation::insert(70, v(2)), Path::Pass),
            ],
        },
        Case {
            // left leaf at minimum fill: deleting from it would merge
            name: "a2",
            fixture: with(&[Operation::delete(20)]),
            commands: [
                (Operation::insert(70, v(1)), Path::Pass),
                (Operation::delete(5), Path::Fail),
            ],
        },
        Case {
            // both leaves full
            name: "a3",
            fixture: with(&[
                Operation::insert(30, v(30)),
                Operation::insert(70, v(70)),
                Operation::insert(80, v(80)),
            ]),
            commands: [
                (Operation::insert(15, v(1)), Path::Fail),
                (Operation::insert(90, v(2)), Path::Fail),
            ],
        },
        Case {
            name: "b-pass",
            fixture: base.clone(),
            commands: [
                (Operation::insert(15, v(1)), Path::Pass),
                (Operation::read(60), Path::Direct),
            ],
        },
        Case {
            name: "b-fail",
            fixture: with(&[Operation::insert(30, v(30))]),
            commands: [
                (Operation::insert(15, v(1)), Path::Fail),
                (Operation::update(60, v(2)), Path::Direct),
            ],
        },
    ]
}

fn build(fixture: &[Operation]) -> Result<BPlusTree> {
    let mut tree = BPlusTree::new(FANOUT, MAX_KEY)?;
    for op in fixture {
        match op.value {
            Some(val) => {
                tree.insert(op.key, val);
            }
            None => {
                tree.delete(op.key);
            }
        }
    }
    Ok(tree)
}

fn run_case(case: &Case) -> Result<Vec<String>> {
    let mut problems = Vec::new();
    let routing = RoutingConfig::new(THREADS, MAX_KEY, 1)?;
    let mut config = EngineConfig::new(EngineMode::OptPsmr, routing);
    config.trace = true;
    let kernel = Arc::new(SequencerKernel::new(KernelConfig::new(
        THREADS,
        routing.replicas,
    ))?);
    let fixture = build(&case.fixture)?;
    let initial = fixture.entries();
    let engine = Engine::start(config, kernel, |_| {
        TreeService::with_tree(build(&case.fixture).expect("fixture builds"), THREADS)
            .expect("valid service")
    })?;
    let history = Arc::new(HistoryRecorder::new());

    let results: Vec<Result<_>> = std::thread::scope(|s| {
        let handles: Vec<_> = case
            .commands
            .iter()
            .enumerate()
            .map(|(i, &(op, _))| {
                let mut client = engine
                    .client(i as u64 + 1)
                    .with_history(Arc::clone(&history));
                s.spawn(move || client.invoke(op))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("client thread"))
            .collect()
    });
    for r in results {
        r?;
    }
    if !engine.wait_quiescent(Duration::from_secs(10)) {
        problems.push("replicas did not quiesce".to_string());
    }

    if !check_convergence(&engine.digests())? {
        problems.push("replica digests differ".to_string());
    }
    let verdict = check_linearizable(
        &history.history(InitialState::empty()),
        &MapSpec::with_entries(initial),
        DEFAULT_BUDGET,
    )?;
    if !verdict.is_ok() {
        problems.push(format!("history not linearizable: {verdict}"));
    }

    let trace = engine.trace();
    for (i, &(op, path)) in case.commands.iter().enumerate() {
        let id = CommandId {
            client: i as u64 + 1,
            seq: 0,
        };
        for replica in 0..routing.replicas {
            let events: Vec<TraceAction> = trace
                .iter()
                .filter(|e| e.replica == replica && e.cmd_id == id)
                .map(|e| e.action)
                .collect();
            let checks: Vec<SafetyVerdict> = events
                .iter()
                .filter_map(|a| match a {
                    TraceAction::Checked { verdict, .. } => Some(*verdict),
                    _ => None,
                })
                .collect();
            let execs: Vec<(Mode, bool)> = events
                .iter()
                .filter_map(|a| match a {
                    TraceAction::Executed { mode, synchronous } => Some((*mode, *synchronous)),
                    _ => None,
                })
                .collect();
            let ok = match path {
                Path::Pass => {
                    checks.len() == 1 && checks[0].passed() && execs == [(Mode::Optimistic, false)]
                }
                Path::Fail => {
                    checks.len() == 1
                        && !checks[0].passed()
                        && execs == [(Mode::Conservative, true)]
                }
                Path::Direct => checks.is_empty() && execs == [(Mode::Conservative, false)],
            };
            if !ok {
                problems.push(format!(
                    "{op} on replica {replica}: expected {path:?}, saw {events:?}"
                ));
            }
        }
    }
    for (r, stats) in engine.stats().iter().enumerate() {
        if stats.overlap_violations != 0 {
            problems.push(format!(
                "replica {r} saw {} overlapping executions",
                stats.overlap_violations
            ));
        }
        if stats.executed() != 2 {
            problems.push(format!(
                "replica {r} executed {} commands, expected 2",
                stats.executed()
            ));
        }
    }
    for r in 0..routing.replicas {
        if let Err(e) = engine.service(r).tree().check_invariants() {
            problems.push(format!("replica {r} tree invariants: {e}"));
        }
    }
    engine.shutdown();
    Ok(problems)
}

/// Runs every case on a two-replica, two-thread opt-PSMR deployment and
/// checks convergence, linearizability and each command's execution path.
pub fn interleaving_cases() -> Result<Vec<CaseOutcome>> {
    cases()
        .iter()
        .map(|case| {
            let problems = run_case(case)?;
            Ok(CaseOutcome {
                name: case.name,
                passed: problems.is_empty(),
                detail: problems.join("; "),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_have_the_intended_shape() {
        let p = crate::btree::PartitionMap::new(THREADS, MAX_KEY).unwrap();
        for case in cases() {
            let tree = build(&case.fixture).unwrap();
            tree.check_invariants().unwrap();
            for (op, path) in &case.commands {
                let thread = p.owner(op.key);
                if let Ok(kind) = crate::btree::StructuralOp::try_from(op.kind) {
                    let verdict = crate::btree::safety_check(&tree, kind, op.key, &p, thread);
                    assert_eq!(
                        verdict.passed(),
                        *path == Path::Pass,
                        "{} {op}: {verdict}",
                        case.name
                    );
                } else {
                    assert_eq!(*path, Path::Direct);
                }
            }
        }
    }

    #[test]
    fn suite_passes() {
        for outcome in interleaving_cases().unwrap() {
            assert!(outcome.passed, "{}: {}", outcome.name, outcome.detail);
        }
    }
}
