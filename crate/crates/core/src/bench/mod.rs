//! Closed-loop benchmark harness and the experiment scenarios.

mod metrics;
mod run;
mod scenarios;
mod workload;

pub use metrics::{process_cpu_time, LatencyStats, Metrics, Sample};
pub use run::{
    run_workload, ClientAccounting, CrashPlan, PreloadLayout, RunReport, RunSpec, DEFAULT_WATCHDOG,
};
pub use scenarios::{
    run_scenario, scenario_crash, scenario_dependent_sweep, scenario_fail_cost,
    scenario_thread_sweep, scenario_tree_size, write_rows, PointRow, Scenario, ScenarioReport,
    DEPENDENT_PCTS, FAIL_COST_CLIENTS, FAIL_COST_DEFAULT_DELAY, THREAD_COUNTS, TREE_SIZES,
};
pub use workload::{CommandStream, Mix, WorkloadSpec};
