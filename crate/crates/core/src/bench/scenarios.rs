use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::smr::{EngineMode, FailedPath};

use super::run::{run_workload, CrashPlan, PreloadLayout, RunReport, RunSpec};
use super::workload::Mix;

/// Client counts of the fail-cost load sweep.
pub const FAIL_COST_CLIENTS: [usize; 3] = [1, 4, 16];
pub const DEPENDENT_PCTS: [f64; 8] = [0.0, 1.0, 5.0, 10.0, 25.0, 50.0, 75.0, 100.0];
pub const THREAD_COUNTS: [usize; 4] = [1, 2, 4, 8];
pub const TREE_SIZES: [u64; 4] = [100, 1_000, 10_000, 100_000];
/// Injected per-hop delay for the fail-cost scenario when none is configured.
pub const FAIL_COST_DEFAULT_DELAY: Duration = Duration::from_millis(2);

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub enum Scenario {
    FailCost,
    DependentSweep,
    ThreadSweep,
    Crash,
    TreeSize,
}

impl Scenario {
    pub const ALL: [Scenario; 5] = [
        Scenario::FailCost,
        Scenario::DependentSweep,
        Scenario::ThreadSweep,
        Scenario::Crash,
        Scenario::TreeSize,
    ];
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scenario::FailCost => "fail-cost",
            Scenario::DependentSweep => "dependent-sweep",
            Scenario::ThreadSweep => "thread-sweep",
            Scenario::Crash => "crash",
            Scenario::TreeSize => "tree-size",
        })
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scenario::ALL
            .into_iter()
            .find(|sc| sc.to_string() == s)
            .ok_or_else(|| Error::Config(format!("unknown scenario {s:?}")))
    }
}

/// One CSV row: a scenario point with its configuration and metrics.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PointRow {
    pub scenario: String,
    pub point: String,
    pub mode: String,
    pub threads: usize,
    pub replicas: usize,
    pub clients: usize,
    pub mix: String,
    pub preload: u64,
    pub preload_layout: String,
    pub max_key: u64,
    pub fanout: usize,
    pub seed: u64,
    pub failed_path: String,
    pub transport_delay_us: u64,
    pub service_time_us: u64,
    pub throughput_kcps: f64,
    pub per_thread_kcps: f64,
    pub lat_all_mean_ms: Option<f64>,
    pub lat_all_p50_ms: Option<f64>,
    pub lat_all_p99_ms: Option<f64>,
    pub lat_passed_mean_ms: Option<f64>,
    pub lat_passed_p50_ms: Option<f64>,
    pub lat_passed_p99_ms: Option<f64>,
    pub lat_failed_mean_ms: Option<f64>,
    pub lat_failed_p50_ms: Option<f64>,
    pub lat_failed_p99_ms: Option<f64>,
    pub optimistic: u64,
    pub failed: u64,
    pub fail_rate: f64,
    pub cpu_pct_best_effort: Option<f64>,
    pub commands: u64,
    pub window_s: f64,
    pub converged: bool,
}

impl PointRow {
    pub fn new(
        scenario: impl fmt::Display,
        point: String,
        spec: &RunSpec,
        report: &RunReport,
    ) -> Self {
        let m = &report.metrics;
        PointRow {
            scenario: scenario.to_string(),
            point,
            mode: spec.mode.to_string(),
            threads: spec.threads,
            replicas: spec.faults + 1,
            clients: spec.workload.clients,
            mix: spec.workload.mix.to_string(),
            preload: spec.preload,
            preload_layout: spec.preload_layout.to_string(),
            max_key: spec.max_key,
            fanout: spec.fanout,
            seed: spec.workload.seed,
            failed_path: match spec.failed_path {
                FailedPath::Remulticast => "remulticast".into(),
                FailedPath::ClientResubmit => "client-resubmit".into(),
            },
            transport_delay_us: spec.transport_delay.as_micros() as u64,
            service_time_us: spec.service_time.as_micros() as u64,
            throughput_kcps: m.throughput_kcps,
            per_thread_kcps: m.per_thread_throughput_normalized,
            lat_all_mean_ms: m.latency_all.map(|l| l.mean_ms),
            lat_all_p50_ms: m.latency_all.map(|l| l.p50_ms),
            lat_all_p99_ms: m.latency_all.map(|l| l.p99_ms),
            lat_passed_mean_ms: m.latency_passed.map(|l| l.mean_ms),
            lat_passed_p50_ms: m.latency_passed.map(|l| l.p50_ms),
            lat_passed_p99_ms: m.latency_passed.map(|l| l.p99_ms),
            lat_failed_mean_ms: m.latency_failed.map(|l| l.mean_ms),
            lat_failed_p50_ms: m.latency_failed.map(|l| l.p50_ms),
            lat_failed_p99_ms: m.latency_failed.map(|l| l.p99_ms),
            optimistic: m.optimistic,
            failed: m.failed,
            fail_rate: m.fail_rate,
            cpu_pct_best_effort: m.cpu_usage_best_effort,
            commands: m.commands,
            window_s: m.window_s,
            converged: report.converged,
        }
    }

    /// `scenario_mode_K_mix_seed.csv`
    pub fn file_name(&self, spec: &RunSpec) -> String {
        format!(
            "{}_{}_{}_{}_{}.csv",
            self.scenario,
            self.mode,
            self.threads,
            spec.workload.mix.tag(),
            self.seed
        )
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ScenarioReport {
    pub scenario: String,
    pub seed: u64,
    pub rows: Vec<PointRow>,
    /// Free-form findings (crash dip, ratios against reference values).
    pub notes: Vec<String>,
}

impl ScenarioReport {
    pub fn rows_for(&self, mode: EngineMode) -> impl Iterator<Item = &PointRow> {
        let mode = mode.to_string();
        self.rows.iter().filter(move |r| r.mode == mode)
    }

    /// Writes the aggregate CSV and the JSON summary into `dir`.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let csv_path = dir.join(format!("{}_summary_{}.csv", self.scenario, self.seed));
        write_rows(&csv_path, &self.rows)?;
        let json_path = dir.join(format!("{}_{}.json", self.scenario, self.seed));
        std::fs::write(&json_path, serde_json::to_string_pretty(self)?)?;
        Ok(vec![csv_path, json_path])
    }
}

pub fn write_rows(path: &Path, rows: &[PointRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Runs one point and, when `out` is set, writes its single-row CSV.
fn point(
    scenario: Scenario,
    label: String,
    spec: &RunSpec,
    out: Option<&Path>,
    rows: &mut Vec<PointRow>,
) -> Result<RunReport> {
    let report = run_workload(spec)?;
    let row = PointRow::new(scenario, label, spec, &report);
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        write_rows(&dir.join(row.file_name(spec)), std::slice::from_ref(&row))?;
    }
    rows.push(row);
    Ok(report)
}

fn with_mode(base: &RunSpec, mode: EngineMode, threads: usize) -> RunSpec {
    let mut spec = base.clone();
    spec.mode = mode;
    spec.threads = if mode == EngineMode::SequentialSmr {
        1
    } else {
        threads
    };
    spec
}

/// Dependent-only opt-PSMR at K = 8 with client resubmission, swept over
/// client counts.
pub fn scenario_fail_cost(base: &RunSpec, out: Option<&Path>) -> Result<ScenarioReport> {
    let mut spec = with_mode(base, EngineMode::OptPsmr, 8);
    spec.workload.mix = Mix::dependent_only();
    spec.failed_path = FailedPath::ClientResubmit;
    if spec.transport_delay.is_zero() {
        spec.transport_delay = FAIL_COST_DEFAULT_DELAY;
    }
    let mut rows = Vec::new();
    for clients in FAIL_COST_CLIENTS {
        spec.workload.clients = clients;
        point(
            Scenario::FailCost,
            format!("clients={clients}"),
            &spec,
            out,
            &mut rows,
        )?;
    }
    Ok(ScenarioReport {
        scenario: Scenario::FailCost.to_string(),
        seed: spec.workload.seed,
        rows,
        notes: vec![],
    })
}

/// Inserts and deletes from 0% to 100% of the workload, reads for the rest.
pub fn scenario_dependent_sweep(base: &RunSpec, out: Option<&Path>) -> Result<ScenarioReport> {
    let threads = if base.threads > 1 { base.threads } else { 8 };
    let mut rows = Vec::new();
    for pct in DEPENDENT_PCTS {
        for mode in EngineMode::ALL {
            let mut spec = with_mode(base, mode, threads);
            spec.workload.mix = Mix::with_dependent(pct)?;
            point(
                Scenario::DependentSweep,
                format!("dependent={pct}"),
                &spec,
                out,
                &mut rows,
            )?;
        }
    }
    let mut notes = Vec::new();
    let at = |mode: EngineMode, pct: f64| {
        rows.iter()
            .find(|r| r.mode == mode.to_string() && r.point == format!("dependent={pct}"))
            .map(|r| r.throughput_kcps)
    };
    if let (Some(opt), Some(psmr)) = (at(EngineMode::OptPsmr, 100.0), at(EngineMode::Psmr, 100.0)) {
        notes.push(format!(
            "opt-psmr/psmr throughput at 100% dependent, K={threads}: {:.2}x (reference 2.4x)",
            opt / psmr
        ));
    }
    Ok(ScenarioReport {
        scenario: Scenario::DependentSweep.to_string(),
        seed: base.workload.seed,
        rows,
        notes,
    })
}

/// Dependent-only workload for K in {1, 2, 4, 8}, P-SMR and opt-PSMR.
pub fn scenario_thread_sweep(base: &RunSpec, out: Option<&Path>) -> Result<ScenarioReport> {
    let mut rows = Vec::new();
    for mode in [EngineMode::Psmr, EngineMode::OptPsmr] {
        for k in THREAD_COUNTS {
            let mut spec = with_mode(base, mode, k);
            spec.workload.mix = Mix::dependent_only();
            point(
                Scenario::ThreadSweep,
                format!("K={k}"),
                &spec,
                out,
                &mut rows,
            )?;
        }
    }
    Ok(ScenarioReport {
        scenario: Scenario::ThreadSweep.to_string(),
        seed: base.workload.seed,
        rows,
        notes: vec![],
    })
}

/// Two replicas; replica 1 crashes in the middle of the measurement window.
pub fn scenario_crash(base: &RunSpec, out: Option<&Path>) -> Result<(ScenarioReport, RunReport)> {
    let mut spec = base.clone();
    spec.faults = 1;
    let mid = spec.workload.duration / 2;
    spec.crash = Some(CrashPlan {
        replica: 1,
        at: mid,
    });
    let mut rows = Vec::new();
    let report = point(
        Scenario::Crash,
        format!("crash@{}ms", mid.as_millis()),
        &spec,
        out,
        &mut rows,
    )?;
    let discard = spec.workload.discard;
    let end = report.elapsed.saturating_sub(discard);
    let before = report.throughput_between(discard, mid);
    let after = report.throughput_between(mid, end);
    let dip_window = Duration::from_millis(200);
    let dip = report.throughput_between(mid, mid + dip_window);
    let issued: u64 = report.accounting.iter().map(|a| a.issued).sum();
    let answered: u64 = report.accounting.iter().map(|a| a.answered).sum();
    let notes = vec![
        format!("throughput before crash {before:.3} Kcps, after {after:.3} Kcps, first {}ms after {dip:.3} Kcps", dip_window.as_millis()),
        format!("issued {issued}, answered {answered}, client errors {}", report.client_errors.len()),
        format!("live replicas {:?}, converged {}", report.live_replicas, report.converged),
    ];
    Ok((
        ScenarioReport {
            scenario: Scenario::Crash.to_string(),
            seed: spec.workload.seed,
            rows,
            notes,
        },
        report,
    ))
}

/// Insert-only opt-PSMR over growing trees built by ascending inserts, in a
/// key space ten times the largest tree; every point issues the same number
/// of commands.
pub fn scenario_tree_size(base: &RunSpec, out: Option<&Path>) -> Result<ScenarioReport> {
    let threads = if base.threads > 1 { base.threads } else { 8 };
    let mut spec = with_mode(base, EngineMode::OptPsmr, threads);
    spec.workload.mix = Mix::inserts_only();
    spec.preload_layout = PreloadLayout::Ascending;
    if spec.workload.ops_per_client.is_none() {
        spec.workload.ops_per_client = Some(500);
    }
    spec.workload.discard = Duration::ZERO;
    let largest = TREE_SIZES[TREE_SIZES.len() - 1];
    spec.max_key = spec.max_key.max(largest * 10);
    let mut rows = Vec::new();
    for n in TREE_SIZES {
        spec.preload = n;
        point(
            Scenario::TreeSize,
            format!("preload={n}"),
            &spec,
            out,
            &mut rows,
        )?;
    }
    Ok(ScenarioReport {
        scenario: Scenario::TreeSize.to_string(),
        seed: spec.workload.seed,
        rows,
        notes: vec![],
    })
}

pub fn run_scenario(
    scenario: Scenario,
    base: &RunSpec,
    out: Option<&Path>,
) -> Result<ScenarioReport> {
    match scenario {
        Scenario::FailCost => scenario_fail_cost(base, out),
        Scenario::DependentSweep => scenario_dependent_sweep(base, out),
        Scenario::ThreadSweep => scenario_thread_sweep(base, out),
        Scenario::Crash => scenario_crash(base, out).map(|(r, _)| r),
        Scenario::TreeSize => scenario_tree_size(base, out),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scenario_names() {
        for s in Scenario::ALL {
            assert_eq!(s.to_string().parse::<Scenario>().unwrap(), s);
        }
        assert!("warp-speed".parse::<Scenario>().is_err());
    }
}
