//! Command-line front end: `run`, `scenario` and `verify`.
//!
//! Configuration precedence is defaults, then a TOML file (`--config`), then
//! flags. Every flag has a file key with the same name in snake case.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::bench::{self, Mix, PointRow, PreloadLayout, RunSpec, Scenario, WorkloadSpec};
use crate::error::{Error, Result};
use crate::smr::{EngineMode, FailedPath};
use crate::verify::{check_linearizable, History, MapSpec, Verdict, DEFAULT_BUDGET};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VIOLATION: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_WATCHDOG: i32 = 3;
pub const EXIT_RUNTIME: i32 = 4;

pub const OUT_DIR_ENV: &str = "PSMR_OUT_DIR";

/// Fully resolved run configuration.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunConfig {
    pub mode: EngineMode,
    pub threads: usize,
    pub replicas: usize,
    pub faults: usize,
    pub max_key: u64,
    pub preload: u64,
    pub preload_layout: PreloadLayout,
    pub fanout: usize,
    pub mix: Mix,
    pub clients: usize,
    pub duration_s: f64,
    pub discard_s: f64,
    pub ops_per_client: Option<u64>,
    pub seed: u64,
    pub failed_path: FailedPath,
    pub transport_delay_us: u64,
    pub service_time_us: u64,
    pub out_dir: PathBuf,
    pub history: bool,
    pub verify: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            mode: EngineMode::OptPsmr,
            threads: 8,
            replicas: 2,
            faults: 1,
            max_key: 110_000,
            preload: 100_000,
            preload_layout: PreloadLayout::Packed,
            fanout: crate::btree::DEFAULT_FANOUT,
            mix: Mix::new(50.0, 0.0, 25.0, 25.0).expect("valid default mix"),
            clients: 16,
            duration_s: 10.0,
            discard_s: 2.0,
            ops_per_client: None,
            seed: 1,
            failed_path: FailedPath::Remulticast,
            transport_delay_us: 0,
            service_time_us: 200,
            out_dir: PathBuf::from("out"),
            history: true,
            verify: false,
        }
    }
}

/// One configuration layer; unset fields fall through to the layer below.
#[derive(Clone, Debug, Default, PartialEq, Deserialize, Args)]
#[serde(deny_unknown_fields)]
pub struct ConfigLayer {
    /// Engine: smr, psmr or opt-psmr.
    #[arg(long)]
    pub mode: Option<EngineMode>,
    /// Worker threads (and multicast groups) per replica, K.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Replica count n; must equal faults + 1.
    #[arg(long)]
    pub replicas: Option<usize>,
    /// Tolerated crashes f.
    #[arg(long)]
    pub faults: Option<usize>,
    /// Largest key M.
    #[arg(long)]
    pub max_key: Option<u64>,
    /// Keys loaded into the tree before the run.
    #[arg(long)]
    pub preload: Option<u64>,
    /// Preload layout: ascending, shuffled or packed.
    #[arg(long)]
    pub preload_layout: Option<PreloadLayout>,
    /// B+-tree fanout F.
    #[arg(long)]
    pub fanout: Option<usize>,
    /// Command mix, e.g. `read=50,insert=25,delete=25`.
    #[arg(long)]
    pub mix: Option<Mix>,
    /// Closed-loop clients.
    #[arg(long)]
    pub clients: Option<usize>,
    /// Run length in seconds.
    #[arg(long)]
    pub duration_s: Option<f64>,
    /// Seconds discarded at each end of the run.
    #[arg(long)]
    pub discard_s: Option<f64>,
    /// Stop each client after this many commands.
    #[arg(long)]
    pub ops_per_client: Option<u64>,
    /// Workload seed, echoed as the first output line.
    #[arg(long)]
    pub seed: Option<u64>,
    /// remulticast or client-resubmit.
    #[arg(long)]
    pub failed_path: Option<FailedPath>,
    /// Injected delay per client/replica hop, microseconds.
    #[arg(long)]
    pub transport_delay_us: Option<u64>,
    /// Synthetic execution time per command, microseconds.
    #[arg(long)]
    pub service_time_us: Option<u64>,
    /// Output directory (also `PSMR_OUT_DIR`).
    #[arg(long, env = OUT_DIR_ENV)]
    pub out_dir: Option<PathBuf>,
    /// Write the history log.
    #[arg(long)]
    pub history: Option<bool>,
    /// Check the history for linearizability after the run.
    #[arg(long)]
    pub verify: Option<bool>,
}

impl ConfigLayer {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("config file: {e}")))
    }

    pub fn apply(&self, cfg: &mut RunConfig) {
        macro_rules! set {
            ($($f:ident),*) => {$( if let Some(v) = &self.$f { cfg.$f = v.clone(); } )*};
        }
        set!(
            mode,
            threads,
            max_key,
            preload,
            preload_layout,
            fanout,
            mix,
            clients,
            duration_s,
            discard_s,
            seed,
            failed_path,
            transport_delay_us,
            service_time_us,
            out_dir,
            history,
            verify
        );
        if self.ops_per_client.is_some() {
            cfg.ops_per_client = self.ops_per_client;
        }
        match (self.replicas, self.faults) {
            (Some(n), None) => {
                cfg.replicas = n;
                cfg.faults = n.saturating_sub(1);
            }
            (None, Some(f)) => {
                cfg.faults = f;
                cfg.replicas = f + 1;
            }
            (Some(n), Some(f)) => {
                cfg.replicas = n;
                cfg.faults = f;
            }
            (None, None) => {}
        }
    }
}

impl RunConfig {
    /// Layers `file` and `flags` over the defaults and validates.
    pub fn resolve(file: Option<&ConfigLayer>, flags: &ConfigLayer) -> Result<(Self, Vec<String>)> {
        let mut cfg = RunConfig::default();
        if let Some(f) = file {
            f.apply(&mut cfg);
        }
        flags.apply(&mut cfg);
        let mut notes = Vec::new();
        if cfg.mode == EngineMode::SequentialSmr && cfg.threads != 1 {
            notes.push(format!(
                "mode smr runs one thread per replica; K coerced from {} to 1",
                cfg.threads
            ));
            cfg.threads = 1;
        }
        cfg.validate()?;
        Ok((cfg, notes))
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicas != self.faults + 1 {
            return Err(Error::Config(format!(
                "replicas must equal faults + 1 (replicas = {}, faults = {})",
                self.replicas, self.faults
            )));
        }
        if !(self.duration_s.is_finite()
            && self.duration_s > 0.0
            && self.discard_s.is_finite()
            && self.discard_s >= 0.0)
        {
            return Err(Error::Config(
                "duration_s must be positive and discard_s non-negative".into(),
            ));
        }
        self.to_spec().validate()
    }

    pub fn to_spec(&self) -> RunSpec {
        let workload = WorkloadSpec {
            mix: self.mix,
            clients: self.clients,
            duration: Duration::from_secs_f64(self.duration_s),
            discard: Duration::from_secs_f64(self.discard_s),
            seed: self.seed,
            ops_per_client: self.ops_per_client,
        };
        let mut spec = RunSpec::new(self.mode, self.threads, workload);
        spec.threads = self.threads;
        spec.faults = self.faults;
        spec.max_key = self.max_key;
        spec.preload = self.preload;
        spec.preload_layout = self.preload_layout;
        spec.fanout = self.fanout;
        spec.failed_path = self.failed_path;
        spec.transport_delay = Duration::from_micros(self.transport_delay_us);
        spec.service_time = Duration::from_micros(self.service_time_us);
        spec.record_history = self.history || self.verify;
        spec.verify_history = self.verify;
        spec
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "psmr",
    version,
    about = "State-machine replication engines, oracles and benchmarks"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// TOML file with any of the flag names as keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub layer: ConfigLayer,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one workload and write metrics and the history log.
    Run(ConfigArgs),
    /// Run a multi-point experiment: fail-cost, dependent-sweep,
    /// thread-sweep, crash or tree-size.
    Scenario {
        name: String,
        #[command(flatten)]
        args: ConfigArgs,
    },
    /// Check a history log for linearizability.
    Verify {
        history: PathBuf,
        /// Search step budget before giving up as inconclusive.
        #[arg(long, default_value_t = DEFAULT_BUDGET)]
        budget: u64,
    },
}

fn load_config(args: &ConfigArgs) -> Result<(RunConfig, Vec<String>)> {
    let file = match &args.config {
        Some(path) => Some(ConfigLayer::from_toml(&std::fs::read_to_string(path)?)?),
        None => None,
    };
    RunConfig::resolve(file.as_ref(), &args.layer)
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::KeyOutOfRange { .. } => EXIT_CONFIG,
        Error::Watchdog(_) => EXIT_WATCHDOG,
        _ => EXIT_RUNTIME,
    }
}

/// Parses `args` and runs the selected command, writing to `out`. Returns the
/// process exit code.
pub fn run_cli<I, T, W>(args: I, out: &mut W) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
    W: Write,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::Run(args) => {
            load_config(&args).and_then(|(cfg, notes)| cmd_run(&cfg, &notes, out))
        }
        Command::Scenario { name, args } => name
            .parse::<Scenario>()
            .map_err(|_| {
                Error::Config(format!(
                    "unknown scenario {name:?}; expected one of {}",
                    Scenario::ALL.map(|s| s.to_string()).join(", ")
                ))
            })
            .and_then(|sc| {
                load_config(&args).and_then(|(cfg, notes)| cmd_scenario(sc, &cfg, &notes, out))
            }),
        Command::Verify { history, budget } => cmd_verify(&history, budget, out),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn stem(prefix: &str, cfg: &RunConfig) -> String {
    format!(
        "{prefix}_{}_{}_{}_{}",
        cfg.mode,
        cfg.threads,
        cfg.mix.tag(),
        cfg.seed
    )
}

pub fn cmd_run<W: Write>(cfg: &RunConfig, notes: &[String], out: &mut W) -> Result<i32> {
    for n in notes {
        writeln!(out, "note: {n}")?;
    }
    writeln!(out, "seed {}", cfg.seed)?;
    let spec = cfg.to_spec();
    let report = bench::run_workload(&spec)?;
    std::fs::create_dir_all(&cfg.out_dir)?;
    let base = stem("run", cfg);
    let row = PointRow::new("run", "run".into(), &spec, &report);
    bench::write_rows(
        &cfg.out_dir.join(format!("{base}.csv")),
        std::slice::from_ref(&row),
    )?;

    let summary = serde_json::json!({
        "config": cfg,
        "metrics": report.metrics,
        "accounting": report.accounting,
        "replica_stats": report.replica_stats,
        "live_replicas": report.live_replicas,
        "converged": report.converged,
        "client_errors": report.client_errors,
        "elapsed_s": report.elapsed.as_secs_f64(),
        "linearizability": report.linearizability.as_ref().map(|v| v.to_string()),
    });
    std::fs::write(
        cfg.out_dir.join(format!("{base}.json")),
        serde_json::to_string_pretty(&summary)?,
    )?;
    if let Some(h) = &report.history {
        let path = cfg
            .out_dir
            .join(format!("history_{}.log", &base["run_".len()..]));
        h.write(BufWriter::new(File::create(&path)?))?;
        writeln!(out, "history {}", path.display())?;
    }

    let m = &report.metrics;
    let issued: u64 = report.accounting.iter().map(|a| a.issued).sum();
    writeln!(
        out,
        "mode {} K={} clients={} mix {}: {:.3} Kcps, fail rate {:.4}, issued {issued}, converged {}",
        cfg.mode, cfg.threads, cfg.clients, cfg.mix, m.throughput_kcps, m.fail_rate, report.converged
    )?;
    if let Some(l) = m.latency_all {
        writeln!(
            out,
            "latency mean {:.3} ms, p50 {:.3} ms, p99 {:.3} ms",
            l.mean_ms, l.p50_ms, l.p99_ms
        )?;
    }
    writeln!(out, "output {}", cfg.out_dir.join(&base).display())?;
    if let Some(v) = &report.linearizability {
        writeln!(out, "{v}")?;
        if v.is_violation() {
            return Ok(EXIT_VIOLATION);
        }
    }
    if !report.converged {
        writeln!(out, "replicas diverged")?;
        return Ok(EXIT_VIOLATION);
    }
    Ok(EXIT_OK)
}

pub fn cmd_scenario<W: Write>(
    scenario: Scenario,
    cfg: &RunConfig,
    notes: &[String],
    out: &mut W,
) -> Result<i32> {
    for n in notes {
        writeln!(out, "note: {n}")?;
    }
    writeln!(out, "seed {}", cfg.seed)?;
    let mut spec = cfg.to_spec();
    // scenario points are long and numerous; histories are not kept
    spec.record_history = false;
    spec.verify_history = false;
    let report = bench::run_scenario(scenario, &spec, Some(&cfg.out_dir))?;
    let written = report.write(&cfg.out_dir)?;
    writeln!(
        out,
        "{:<20} {:<9} {:>3} {:>12} {:>10} {:>10}",
        "point", "mode", "K", "Kcps", "fail_rate", "lat_ms"
    )?;
    for r in &report.rows {
        writeln!(
            out,
            "{:<20} {:<9} {:>3} {:>12.3} {:>10.4} {:>10.3}",
            r.point,
            r.mode,
            r.threads,
            r.throughput_kcps,
            r.fail_rate,
            r.lat_all_mean_ms.unwrap_or(f64::NAN)
        )?;
    }
    for n in &report.notes {
        writeln!(out, "{n}")?;
    }
    for p in written {
        writeln!(out, "wrote {}", p.display())?;
    }
    Ok(EXIT_OK)
}

pub fn cmd_verify<W: Write>(path: &Path, budget: u64, out: &mut W) -> Result<i32> {
    let history = History::read(BufReader::new(File::open(path)?))?;
    let spec = MapSpec::from_initial(history.initial);
    let verdict = check_linearizable(&history, &spec, budget)?;
    writeln!(out, "{verdict}")?;
    if let Verdict::Ok(w) = &verdict {
        let shown: Vec<String> = w
            .order
            .iter()
            .take(20)
            .map(|(c, s)| format!("{c}:{s}"))
            .collect();
        let more = if w.order.len() > shown.len() {
            " ..."
        } else {
            ""
        };
        writeln!(out, "witness {}{more}", shown.join(" "))?;
    }
    Ok(if verdict.is_violation() {
        EXIT_VIOLATION
    } else {
        EXIT_OK
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precedence_defaults_file_flags() {
        let file = ConfigLayer::from_toml("threads = 4\nseed = 9\nmix = \"insert=50,delete=50\"\n")
            .unwrap();
        let flags = ConfigLayer {
            seed: Some(11),
            ..Default::default()
        };
        let (cfg, _) = RunConfig::resolve(Some(&file), &flags).unwrap();
        assert_eq!(cfg.threads, 4);
        assert_eq!(cfg.seed, 11);
        assert_eq!(cfg.mix, Mix::dependent_only());
        assert_eq!(cfg.clients, RunConfig::default().clients);
    }

    #[test]
    fn smr_forces_one_thread() {
        let flags = ConfigLayer {
            mode: Some(EngineMode::SequentialSmr),
            ..Default::default()
        };
        let (cfg, notes) = RunConfig::resolve(None, &flags).unwrap();
        assert_eq!(cfg.threads, 1);
        assert_eq!(notes.len(), 1);
    }

    #[test]
    fn replicas_follow_faults() {
        let flags = ConfigLayer {
            faults: Some(2),
            ..Default::default()
        };
        assert_eq!(RunConfig::resolve(None, &flags).unwrap().0.replicas, 3);
        let bad = ConfigLayer {
            faults: Some(2),
            replicas: Some(2),
            ..Default::default()
        };
        assert!(RunConfig::resolve(None, &bad).is_err());
    }

    #[test]
    fn unknown_file_keys_are_rejected() {
        assert!(ConfigLayer::from_toml("thread = 4").is_err());
    }

    #[test]
    fn invalid_configs_fail() {
        for layer in [
            ConfigLayer {
                threads: Some(0),
                ..Default::default()
            },
            ConfigLayer {
                duration_s: Some(1.0),
                discard_s: Some(1.0),
                ..Default::default()
            },
            ConfigLayer {
                preload: Some(1_000_000),
                max_key: Some(10),
                ..Default::default()
            },
        ] {
            assert!(RunConfig::resolve(None, &layer).is_err(), "{layer:?}");
        }
    }
}
