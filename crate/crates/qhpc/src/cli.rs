//! Command-line front-end.
//!
//! Exit codes: 0 success; 1 `report` found violations or a metrics
//! mismatch; 2 bad input (scenario, descriptor, trace, usage); 3 `submit`
//! found no feasible placement; 4 the simulation aborted on an internal
//! invariant.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use qhpc_core::dctg::{build_graph, classify_paths, TaskKind, Template};
use qhpc_core::registry::{Registry, Tier};
use qhpc_core::scheduler::{qpu_feasible, rank_qpus};
use qhpc_core::simcore::metrics::parse_metrics_text;
use qhpc_core::simcore::{self, SimError, Trace};
use qhpc_core::SimTime;

use crate::report;
use crate::scenario::{self, Loaded, ScenarioError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INCONSISTENT: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_INFEASIBLE: i32 = 3;
pub const EXIT_ABORT: i32 = 4;

/// Tolerance used when comparing recomputed and emitted metrics.
pub const METRIC_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Parser)]
#[command(name = "qhpc", version, about = "Hybrid quantum-classical cluster scheduling simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check a job descriptor against a scenario's cluster.
    Submit {
        hwd: PathBuf,
        #[command(flatten)]
        scenario: ScenarioArg,
        /// Graph template to summarize (default: vqe_loop for quantum jobs,
        /// classical_only otherwise).
        #[arg(long)]
        template: Option<String>,
    },
    /// Run a scenario and write the trace and metrics.
    Run {
        #[command(flatten)]
        scenario: ScenarioArg,
        #[command(flatten)]
        overrides: Overrides,
        /// Directory for outputs not given explicitly.
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
        /// Trace output path (default: <out-dir>/trace.tsv).
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Metrics output path (default: <out-dir>/metrics.txt); the per-job
        /// CSV goes next to it with a `.csv` extension.
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
    /// Recompute metrics from a trace and check it for violations.
    Report {
        trace: PathBuf,
        /// Metrics file written by `run`, compared against the recomputation.
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
    /// Load and validate a scenario without running it.
    Validate {
        #[command(flatten)]
        scenario: ScenarioArg,
        #[command(flatten)]
        overrides: Overrides,
    },
}

#[derive(Debug, Args)]
struct ScenarioArg {
    /// Scenario file (default: $QHPC_SIM_CONFIG).
    #[arg(value_name = "SCENARIO", env = "QHPC_SIM_CONFIG")]
    path: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct Overrides {
    #[arg(long)]
    seed: Option<u64>,
    /// Simulation horizon in seconds.
    #[arg(long)]
    horizon: Option<f64>,
    /// auto, simultaneous, interleaved or async.
    #[arg(long)]
    mode: Option<String>,
    /// QSS weights as fidelity,connectivity,queue,latency (normalized).
    #[arg(long)]
    weights: Option<String>,
}

/// Parses `args` (including the program name), runs the command and
/// returns the exit code.
pub fn main_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() { err.write_all(text.as_bytes()) } else { out.write_all(text.as_bytes()) };
            return code;
        }
    };
    let result = match cli.command {
        Command::Submit { hwd, scenario, template } => submit(&hwd, scenario.path.as_deref(), template.as_deref(), out),
        Command::Run { scenario, overrides, out_dir, trace, metrics } => {
            let trace = trace.unwrap_or_else(|| out_dir.join("trace.tsv"));
            let metrics = metrics.unwrap_or_else(|| out_dir.join("metrics.txt"));
            run(scenario.path.as_deref(), &overrides, &trace, &metrics, out)
        }
        Command::Report { trace, metrics } => report_cmd(&trace, metrics.as_deref(), out),
        Command::Validate { scenario, overrides } => validate(scenario.path.as_deref(), &overrides, out),
    };
    match result {
        Ok(code) => code,
        Err((code, msg)) => {
            let _ = writeln!(err, "error: {msg}");
            code
        }
    }
}

type CmdResult = Result<i32, (i32, String)>;

fn input_err(e: impl std::fmt::Display) -> (i32, String) {
    (EXIT_INPUT, e.to_string())
}

fn io_err(path: &Path, e: std::io::Error) -> (i32, String) {
    (EXIT_INPUT, format!("{}: {e}", path.display()))
}

fn load(path: Option<&Path>, overrides: Option<&Overrides>) -> Result<Loaded, (i32, String)> {
    let path = path.ok_or_else(|| input_err("no scenario given (pass a path or set QHPC_SIM_CONFIG)"))?;
    let mut loaded = scenario::load(path).map_err(|e: ScenarioError| input_err(e))?;
    if let Some(o) = overrides {
        let c = &mut loaded.scenario.config;
        if let Some(s) = o.seed {
            c.seed = s;
        }
        if let Some(h) = o.horizon {
            if !(h > 0.0 && h.is_finite()) {
                return Err(input_err("--horizon must be a positive number of seconds"));
            }
            c.horizon = SimTime::duration_from_secs_f64(h);
        }
        if let Some(m) = &o.mode {
            c.policy.mode_override = scenario::parse_mode(m).map_err(|e| input_err(format!("--mode: {e}")))?;
        }
        if let Some(w) = &o.weights {
            c.policy.weights = scenario::parse_weights(w).map_err(|e| input_err(format!("--weights: {e}")))?;
        }
        loaded.scenario.validate().map_err(input_err)?;
    }
    Ok(loaded)
}

fn submit(hwd: &Path, scenario_path: Option<&Path>, template: Option<&str>, out: &mut dyn Write) -> CmdResult {
    let d = scenario::read_hwd(hwd).map_err(input_err)?;
    let loaded = load(scenario_path, None)?;
    let sc = &loaded.scenario;
    let registry = Registry::new(sc.resources.clone(), sc.config.drift, sc.config.seed).map_err(input_err)?;
    let w = |e: std::io::Error| input_err(e);
    let c = &d.classical;
    writeln!(
        out,
        "job {}: {} cores, {} gpus, {} GB, walltime {} s, priority {}",
        d.job_id, c.cpu_cores, c.gpu_count, c.memory_gb, c.walltime_s, d.priority
    )
    .map_err(w)?;

    let template = match template {
        Some(t) => t.parse::<Template>().map_err(|_| input_err(format!("unknown template `{t}`")))?,
        None if d.quantum.is_some() => Template::VqeLoop,
        None => Template::ClassicalOnly,
    };
    let g = build_graph(&d, template, &loaded.templates).map_err(input_err)?;
    let paths = classify_paths(&g);
    let qpu_nodes = g.nodes().iter().filter(|n| n.kind == TaskKind::Qpu).count();
    writeln!(
        out,
        "graph {}: {} nodes, {} edges, {} feedback loop(s), {} QPU node(s), {} latency-critical chain(s), {} latency-tolerant batch(es)",
        template.as_str(),
        g.len(),
        g.edges().len(),
        g.feedback_loops().len(),
        qpu_nodes,
        paths.latency_critical_chains.len(),
        paths.latency_tolerant_batches.len()
    )
    .map_err(w)?;

    let hosts: Vec<&str> = registry
        .records()
        .iter()
        .filter(|r| r.cpu_cores >= c.cpu_cores && r.gpu_count >= c.gpu_count)
        .map(|r| r.resource_id.as_str())
        .collect();
    if hosts.is_empty() {
        writeln!(out, "classical hosts: none").map_err(w)?;
    } else {
        writeln!(out, "classical hosts: {}", hosts.join(", ")).map_err(w)?;
    }

    let mut code = EXIT_OK;
    match &d.quantum {
        None => writeln!(out, "QPU candidates: 0").map_err(w)?,
        Some(q) => {
            let p = &sc.config.policy;
            let ranked = rank_qpus(&registry, q, &p.weights, &p.norms, &sc.config.fabric, |_| 0.0);
            writeln!(out, "QPU candidates: {}", ranked.len()).map_err(w)?;
            for (i, r) in ranked.iter().enumerate() {
                let rec = registry.get(r.index);
                let qp = rec.qpu.as_ref().expect("ranked records have a QPU");
                writeln!(
                    out,
                    "  {:>2}. {:<16} {} {:<16} {:>5} qubits {:<10} fidelity {:.6}  qss {:.6}{}",
                    i + 1,
                    rec.resource_id,
                    rec.tier,
                    qp.modality,
                    qp.qubit_count,
                    qp.connectivity,
                    qp.calibration.two_qubit_fidelity,
                    r.score.total,
                    if r.score.feasible { "" } else { "  (infeasible)" }
                )
                .map_err(w)?;
            }
            if !qpu_feasible(&registry, q) {
                writeln!(out, "no feasible QPU").map_err(w)?;
                code = EXIT_INFEASIBLE;
            }
        }
    }
    if hosts.is_empty() {
        writeln!(out, "no feasible classical resource").map_err(w)?;
        code = EXIT_INFEASIBLE;
    }
    Ok(code)
}

fn csv_path(metrics: &Path) -> PathBuf {
    metrics.with_extension("csv")
}

fn run(scenario_path: Option<&Path>, o: &Overrides, trace: &Path, metrics: &Path, out: &mut dyn Write) -> CmdResult {
    let loaded = load(scenario_path, Some(o))?;
    let output = simcore::run(&loaded.scenario).map_err(|e| match e {
        SimError::Scenario(m) => (EXIT_INPUT, m),
        e => (EXIT_ABORT, e.to_string()),
    })?;
    let csv = csv_path(metrics);
    for (path, text) in [(trace, output.trace.to_text()), (metrics, output.metrics.to_text())]
        .into_iter()
        .chain([(csv.as_path(), output.metrics.to_csv())])
    {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        }
        std::fs::write(path, text).map_err(|e| io_err(path, e))?;
    }
    let m = &output.metrics;
    let w = |e: std::io::Error| input_err(e);
    writeln!(out, "makespan_s: {}", m.makespan_s).map_err(w)?;
    for t in Tier::ALL {
        writeln!(out, "utilization_{}: {:.6}", t.as_str().to_lowercase(), m.utilization_of(t)).map_err(w)?;
    }
    writeln!(out, "qpu_idle_fraction: {:.6}", m.qpu_idle_fraction).map_err(w)?;
    writeln!(out, "cpu_idle_core_seconds: {}", m.cpu_idle_core_seconds).map_err(w)?;
    writeln!(
        out,
        "fallbacks: gpu_emulation={} queued={} degraded_notice={}",
        m.fallback_gpu_emulation, m.fallback_queued, m.fallback_degraded_notice
    )
    .map_err(w)?;
    writeln!(
        out,
        "jobs: completed={} degraded={} pending={}",
        m.completed_job_count, m.degraded_job_count, m.pending_job_count
    )
    .map_err(w)?;
    writeln!(out, "trace: {}", trace.display()).map_err(w)?;
    writeln!(out, "metrics: {} ({})", metrics.display(), csv.display()).map_err(w)?;
    Ok(EXIT_OK)
}

fn report_cmd(trace_path: &Path, metrics: Option<&Path>, out: &mut dyn Write) -> CmdResult {
    let text = std::fs::read_to_string(trace_path).map_err(|e| io_err(trace_path, e))?;
    let trace = Trace::parse(&text).map_err(|e| input_err(format!("{}: {e}", trace_path.display())))?;
    if trace.version != simcore::trace::FORMAT_VERSION {
        return Err(input_err(format!(
            "{}: trace format `{}` is not supported (expected `{}`)",
            trace_path.display(),
            trace.version,
            simcore::trace::FORMAT_VERSION
        )));
    }
    let rep = report::analyze(&trace).map_err(|e| input_err(format!("{}: {e}", trace_path.display())))?;
    let w = |e: std::io::Error| input_err(e);
    out.write_all(rep.to_text().as_bytes()).map_err(w)?;
    let mut code = if rep.violations.is_empty() { EXIT_OK } else { EXIT_INCONSISTENT };
    if let Some(mp) = metrics {
        let mtext = std::fs::read_to_string(mp).map_err(|e| io_err(mp, e))?;
        let emitted = parse_metrics_text(&mtext).map_err(|e| input_err(format!("{}: {e}", mp.display())))?;
        let diffs = report::compare_metrics(&rep.metrics, &emitted, METRIC_TOLERANCE);
        if diffs.is_empty() {
            writeln!(out, "metrics match {}", mp.display()).map_err(w)?;
        } else {
            writeln!(out, "metrics differ from {}:", mp.display()).map_err(w)?;
            for d in diffs {
                writeln!(out, "  {d}").map_err(w)?;
            }
            code = EXIT_INCONSISTENT;
        }
    }
    Ok(code)
}

fn validate(scenario_path: Option<&Path>, o: &Overrides, out: &mut dyn Write) -> CmdResult {
    let loaded = load(scenario_path, Some(o))?;
    let sc = &loaded.scenario;
    let w = |e: std::io::Error| input_err(e);
    let tiers: Vec<String> = Tier::ALL
        .iter()
        .map(|t| format!("{}={}", t.as_str(), sc.resources.iter().filter(|r| r.tier == *t).count()))
        .collect();
    writeln!(out, "resources: {} ({})", sc.resources.len(), tiers.join(" ")).map_err(w)?;
    let quantum = sc.jobs.iter().filter(|j| j.descriptor.quantum.is_some()).count();
    writeln!(out, "jobs: {} ({} with quantum work)", sc.jobs.len(), quantum).map_err(w)?;
    writeln!(out, "seed: {}", sc.config.seed).map_err(w)?;
    writeln!(out, "horizon_s: {}", sc.config.horizon).map_err(w)?;
    writeln!(out, "ok").map_err(w)?;
    Ok(EXIT_OK)
}
