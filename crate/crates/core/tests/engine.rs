mod common;

use std::sync::Arc;
use std::time::Duration;

use psmr::bench::{run_workload, scenario_crash, Mix};
use psmr::btree::TreeService;
use psmr::multicast::{KernelConfig, SequencerKernel};
use psmr::smr::{
    Engine, EngineConfig, EngineMode, FailedPath, Operation, Outcome, RoutingConfig, Value,
};

#[test]
fn every_mode_converges() {
    for mode in EngineMode::ALL {
        for seed in 0..3 {
            common::convergence_run(mode, seed, 2_000).unwrap();
        }
    }
}

#[test]
fn each_command_executes_once_per_replica() {
    for path in [FailedPath::Remulticast, FailedPath::ClientResubmit] {
        let mut s = common::spec(EngineMode::OptPsmr, 4, Mix::dependent_only(), 6, 300, 3);
        s.fanout = 4;
        s.max_key = 400;
        s.preload = 100;
        s.failed_path = path;
        let report = run_workload(&s).unwrap();
        let issued: u64 = report.accounting.iter().map(|a| a.issued).sum();
        assert_eq!(issued, 1_800);
        assert!(report.metrics.failed > 0, "fanout 4 must produce failures");
        for st in &report.replica_stats {
            assert_eq!(st.executed(), issued, "{path:?}: {st:?}");
            assert_eq!(
                st.checks_passed + st.checks_failed,
                issued,
                "{path:?}: {st:?}"
            );
            assert_eq!(st.overlap_violations, 0);
        }
        match path {
            FailedPath::Remulticast => assert!(report
                .replica_stats
                .iter()
                .all(|st| st.resubmit_notices == 0)),
            FailedPath::ClientResubmit => {
                assert!(report.replica_stats.iter().all(|st| st.remulticasts == 0))
            }
        }
        assert!(report.converged);
    }
}

#[test]
fn replicas_answer_alike() {
    let routing = RoutingConfig::new(2, 100, 1).unwrap();
    let kernel = Arc::new(SequencerKernel::new(KernelConfig::new(2, 2)).unwrap());
    let engine = Engine::start(EngineConfig::new(EngineMode::Psmr, routing), kernel, |_| {
        TreeService::preloaded(4, 100, 2, 10).unwrap()
    })
    .unwrap();
    let mut c = engine.client(1);
    assert_eq!(
        c.read(10).unwrap().outcome,
        Outcome::Value(Value::from_u64(10))
    );
    assert_eq!(c.read(11).unwrap().outcome, Outcome::Absent);
    assert_eq!(
        c.insert(11, Value::from_u64(5)).unwrap().outcome,
        Outcome::Ok
    );
    assert_eq!(
        c.update(12, Value::from_u64(5)).unwrap().outcome,
        Outcome::NotFound
    );
    assert_eq!(c.delete(11).unwrap().outcome, Outcome::Ok);
    assert_eq!(c.delete(11).unwrap().outcome, Outcome::NotFound);
    assert!(c.invoke(Operation::read(101)).is_err());
    assert!(engine.wait_quiescent(Duration::from_secs(5)));
    let d = engine.digests();
    assert_eq!(d[0], d[1]);
}

#[test]
fn crash_mid_run_is_invisible_to_clients() {
    let mut s = common::spec(EngineMode::OptPsmr, 4, common::half_reads(), 8, 1, 9);
    s.workload.ops_per_client = None;
    s.workload.duration = Duration::from_millis(1_200);
    s.workload.discard = Duration::from_millis(100);
    s.service_time = Duration::from_micros(100);
    let (_, report) = scenario_crash(&s, None).unwrap();
    assert!(
        report.client_errors.is_empty(),
        "{:?}",
        report.client_errors
    );
    assert_eq!(report.live_replicas, vec![0]);
    assert!(report.converged);
    for a in &report.accounting {
        assert_eq!(a.issued, a.answered, "{a:?}");
    }
}

#[test]
fn crash_at_start_behaves_as_one_replica() {
    let mut s = common::spec(EngineMode::Psmr, 2, common::half_reads(), 4, 200, 2);
    s.crash = Some(psmr::bench::CrashPlan {
        replica: 1,
        at: Duration::ZERO,
    });
    let report = run_workload(&s).unwrap();
    assert_eq!(report.live_replicas, vec![0]);
    assert_eq!(
        report.accounting.iter().map(|a| a.answered).sum::<u64>(),
        800
    );
}

#[test]
fn sequential_mode_rejects_parallel_threads() {
    let routing = RoutingConfig::new(4, 100, 1).unwrap();
    assert!(EngineConfig::new(EngineMode::SequentialSmr, routing)
        .validate()
        .is_err());
}
