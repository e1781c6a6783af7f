mod common;

use std::fs;
use std::path::Path;

use common::{bundled, qhpc};
use qhpc::cli::{EXIT_INCONSISTENT, EXIT_INFEASIBLE, EXIT_INPUT, EXIT_OK};
use qhpc_core::hwd::parse_hwd;
use qhpc_core::scheduler::select_qpu;
use qhpc_core::simcore::Trace;

const CLASSICAL: &str = "job_id: c\nclassical:\n  cpu_cores: 4\n  memory_gb: 1\n  walltime_s: 10\n  mpi_ranks: 1\n";

fn quantum_hwd(qubits: u32) -> String {
    format!(
        "job_id: q\nclassical:\n  cpu_cores: 4\n  memory_gb: 1\n  walltime_s: 10\n  mpi_ranks: 1\n\
         quantum:\n  qubits: {qubits}\n  connectivity: linear\n  shots: 1000\n  depth: 10\n  \
         modalities: [best_available]\n  fallback: queue_for_qpu\n"
    )
}

const THREE_QPUS: &str = "\
resources:
  - id: host
    tier: R1
    cores: 32
  - id: big-sc
    tier: R3
    cores: 8
    qpu:
      modality: superconducting
      qubits: 156
      connectivity: heavy_hex
      fidelity: 0.993
  - id: ion
    tier: R4
    qpu:
      modality: trapped_ion
      qubits: 36
      connectivity: all_to_all
      fidelity: 0.998
  - id: atoms
    tier: R4
    qpu:
      modality: neutral_atom
      qubits: 100
      connectivity: grid
      fidelity: 0.990
";

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn submit_classical_job_lists_no_qpus() {
    let dir = tempfile::tempdir().unwrap();
    let hwd = write(dir.path(), "c.hwd", CLASSICAL);
    let sc = write(dir.path(), "s.yaml", THREE_QPUS);
    let (code, out, _) = qhpc(&["submit", &hwd, &sc]);
    assert_eq!(code, EXIT_OK);
    assert!(out.contains("QPU candidates: 0"), "{out}");
}

#[test]
fn submit_too_many_qubits_is_infeasible() {
    let dir = tempfile::tempdir().unwrap();
    let hwd = write(dir.path(), "q.hwd", &quantum_hwd(200));
    let sc = write(dir.path(), "s.yaml", THREE_QPUS);
    let (code, out, _) = qhpc(&["submit", &hwd, &sc]);
    assert_eq!(code, EXIT_INFEASIBLE);
    assert!(out.contains("no feasible QPU"), "{out}");
}

#[test]
fn submit_ranking_leads_with_the_selected_qpu() {
    let dir = tempfile::tempdir().unwrap();
    let text = quantum_hwd(30);
    let hwd = write(dir.path(), "q.hwd", &text);
    let sc = write(dir.path(), "s.yaml", THREE_QPUS);
    let (code, out, _) = qhpc(&["submit", &hwd, &sc]);
    assert_eq!(code, EXIT_OK);

    let loaded = qhpc::load(Path::new(&sc)).unwrap();
    let registry = loaded.scenario.validate().unwrap();
    let demand = parse_hwd(&text).unwrap().quantum.unwrap();
    let cfg = &loaded.scenario.config;
    let (best, _) =
        select_qpu(&registry, &demand, &cfg.policy.weights, &cfg.policy.norms, &cfg.fabric, |_| 0.0).unwrap();
    let first = out.lines().find(|l| l.trim_start().starts_with("1.")).unwrap();
    assert!(first.contains(&registry.get(best).resource_id), "{out}");
    assert!(out.contains("QPU candidates: 3"), "{out}");
}

#[test]
fn unknown_key_reports_its_position() {
    let dir = tempfile::tempdir().unwrap();
    let sc = write(dir.path(), "s.yaml", "seed: 1\nhorizon: 10\n");
    let (code, _, err) = qhpc(&["validate", &sc]);
    assert_eq!(code, EXIT_INPUT);
    assert!(err.contains("s.yaml:2:1"), "{err}");
}

#[test]
fn missing_scenario_is_a_usage_error() {
    let (code, _, err) = qhpc(&["run", "/definitely/not/here.yaml"]);
    assert_eq!(code, EXIT_INPUT);
    assert!(err.contains("here.yaml"), "{err}");
}

#[test]
fn bad_weights_are_rejected() {
    let sc = bundled("vqe_vs_modes");
    let (code, _, err) = qhpc(&["validate", sc.to_str().unwrap(), "--weights", "1,0,x,0"]);
    assert_eq!(code, EXIT_INPUT, "{err}");
}

#[test]
fn run_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let sc = bundled("vqe_vs_modes");
    let mut traces = Vec::new();
    for k in 0..2 {
        let out_dir = dir.path().join(format!("r{k}/nested"));
        let (code, _, err) =
            qhpc(&["run", sc.to_str().unwrap(), "--seed", "7", "--out-dir", out_dir.to_str().unwrap()]);
        assert_eq!(code, EXIT_OK, "{err}");
        traces.push(fs::read(out_dir.join("trace.tsv")).unwrap());
        assert!(out_dir.join("metrics.txt").exists());
        assert!(out_dir.join("metrics.csv").exists());
    }
    assert_eq!(traces[0], traces[1]);
    assert!(String::from_utf8_lossy(&traces[0]).contains("seed=7"));
}

#[test]
fn empty_scenario_runs() {
    let dir = tempfile::tempdir().unwrap();
    let sc = write(
        dir.path(),
        "s.yaml",
        "horizon_s: 3600\nresources:\n  - id: q\n    tier: R4\n    qpu:
      modality: photonic
      qubits: 8
      connectivity: ring
      fidelity: 0.99\n",
    );
    let (code, out, err) = qhpc(&["run", &sc, "--out-dir", dir.path().to_str().unwrap()]);
    assert_eq!(code, EXIT_OK, "{err}");
    assert!(out.contains("jobs: completed=0 degraded=0 pending=0"), "{out}");
    let trace = Trace::parse(&fs::read_to_string(dir.path().join("trace.tsv")).unwrap()).unwrap();
    assert_eq!(trace.events.iter().filter(|e| e.kind.as_str() == "calib_poll").count(), 4);
}

#[test]
fn report_accepts_its_own_output() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let (code, _, err) = qhpc(&["run", bundled("vqe_vs_modes").to_str().unwrap(), "--out-dir", d]);
    assert_eq!(code, EXIT_OK, "{err}");
    let trace = format!("{d}/trace.tsv");
    let metrics = format!("{d}/metrics.txt");
    let (code, out, err) = qhpc(&["report", &trace, "--metrics", &metrics]);
    assert_eq!(code, EXIT_OK, "{out}{err}");
}

#[test]
fn report_catches_a_dropped_task_end() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let (code, _, _) = qhpc(&["run", bundled("vqe_vs_modes").to_str().unwrap(), "--out-dir", d]);
    assert_eq!(code, EXIT_OK);
    let path = dir.path().join("trace.tsv");
    let text = fs::read_to_string(&path).unwrap();
    let victim = text.lines().position(|l| l.contains("\ttask_end\t")).unwrap();
    let cut: Vec<&str> = text.lines().enumerate().filter(|(i, _)| *i != victim).map(|(_, l)| l).collect();
    fs::write(&path, cut.join("\n") + "\n").unwrap();
    let (code, out, err) = qhpc(&["report", path.to_str().unwrap()]);
    assert_ne!(code, EXIT_OK, "{out}");
    assert!(code == EXIT_INCONSISTENT || code == EXIT_INPUT, "{err}");
}

#[test]
fn report_matches_a_hundred_job_run() {
    let dir = tempfile::tempdir().unwrap();
    let sc = write(dir.path(), "s.yaml", &common::random_scenario(100, 100, 10));
    let d = dir.path().to_str().unwrap();
    let (code, _, err) = qhpc(&["run", &sc, "--out-dir", d]);
    assert_eq!(code, EXIT_OK, "{err}");
    let (code, out, err) = qhpc(&["report", &format!("{d}/trace.tsv"), "--metrics", &format!("{d}/metrics.txt")]);
    assert_eq!(code, EXIT_OK, "{out}{err}");
}

#[test]
fn scenario_from_environment() {
    // Only this test touches the variable.
    std::env::set_var("QHPC_SIM_CONFIG", bundled("vqe_vs_modes"));
    let (code, out, err) = qhpc(&["validate"]);
    std::env::remove_var("QHPC_SIM_CONFIG");
    assert_eq!(code, EXIT_OK, "{err}");
    assert!(out.contains("jobs: 6"), "{out}");
}

#[test]
fn graph_file_job_runs_its_loop() {
    let sc = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/graph_job.yaml");
    let loaded = qhpc::load(&sc).unwrap();
    assert_eq!(loaded.scenario.jobs[0].template, None);
    let out = qhpc_core::simcore::run(&loaded.scenario).unwrap();
    let phases = out.trace.events.iter().filter(|e| e.kind.as_str() == "qpu_phase_end").count();
    assert_eq!(phases, 10);
    assert_eq!(out.metrics.completed_job_count, 1);
    // fidelity 0.9995 needs no mitigation
    assert_eq!(out.metrics.total_shots_executed, 10_000);
}
