use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use super::*;
use crate::dctg::{build_graph, TemplateConfig};
use crate::device::{Connectivity, Modality};
use crate::hwd::{ClassicalDescriptor, FallbackPolicy, ModalityPreference, ModeHint, QuantumDescriptor, ShotSpec};
use crate::registry::{CalibrationProfile, QpuProfile, Tier};

fn cpu_node(id: &str, cores: u32) -> ResourceRecord {
    ResourceRecord {
        resource_id: id.to_string(),
        tier: Tier::R1,
        cpu_cores: cores,
        gpu_count: 0,
        memory_gb: 256.0,
        qpu: None,
        access_latency_class: LinkKind::InterNode,
    }
}

fn gpu_node(id: &str) -> ResourceRecord {
    ResourceRecord { tier: Tier::R2, gpu_count: 4, ..cpu_node(id, 32) }
}

fn qpu(id: &str, tier: Tier, modality: Modality, qubits: u32, fidelity: f64) -> ResourceRecord {
    ResourceRecord {
        resource_id: id.to_string(),
        tier,
        cpu_cores: if tier == Tier::R3 { 16 } else { 0 },
        gpu_count: 0,
        memory_gb: 64.0,
        qpu: Some(QpuProfile {
            modality,
            qubit_count: qubits,
            connectivity: Connectivity::AllToAll,
            calibration: CalibrationProfile {
                two_qubit_fidelity: fidelity,
                coherence_time_us: 100.0,
                timestamp: SimTime::ZERO,
                nominal_fidelity: fidelity,
            },
        }),
        access_latency_class: if tier == Tier::R3 { LinkKind::IntraNode } else { LinkKind::Wan },
    }
}

fn descriptor(id: &str, cores: u32, walltime_s: f64, quantum: Option<QuantumDescriptor>) -> HybridWorkloadDescriptor {
    HybridWorkloadDescriptor {
        job_id: id.to_string(),
        classical: ClassicalDescriptor { cpu_cores: cores, gpu_count: 0, memory_gb: 1.0, walltime_s, mpi_ranks: 1 },
        quantum,
        mode_hint: ModeHint::Auto,
        priority: 0,
    }
}

fn quantum(qubits: u32, fallback: FallbackPolicy) -> QuantumDescriptor {
    QuantumDescriptor {
        qubit_count: qubits,
        connectivity: Connectivity::Linear,
        shots: ShotSpec::Budget(1000),
        modality_preference: vec![ModalityPreference::BestAvailable],
        circuit_depth: 20,
        circuit: String::new(),
        fallback_policy: fallback,
    }
}

fn job(d: HybridWorkloadDescriptor, submit_s: u64, template: Template) -> JobSpec {
    let graph = build_graph(&d, template, &TemplateConfig::default()).unwrap();
    JobSpec { descriptor: d, submit: SimTime::from_secs(submit_s), template: Some(template), graph }
}

fn config(seed: u64, horizon_s: u64) -> SimConfig {
    SimConfig { seed, horizon: SimTime::from_secs(horizon_s), ..SimConfig::default() }
}

fn kinds(t: &Trace, kind: EventKind) -> Vec<&TraceEvent> {
    t.events.iter().filter(|e| e.kind == kind).collect()
}

fn mixed_cluster() -> Vec<ResourceRecord> {
    vec![
        cpu_node("cpu-0", 64),
        gpu_node("gpu-0"),
        qpu("qpu-sc", Tier::R3, Modality::Superconducting, 27, 0.995),
        qpu("qpu-ion", Tier::R4, Modality::TrappedIon, 32, 0.999),
    ]
}

fn vqe_scenario(seed: u64) -> Scenario {
    let jobs = (0..4)
        .map(|i| {
            job(
                descriptor(&alloc::format!("vqe-{i}"), 16, 3600.0, Some(quantum(8, FallbackPolicy::EmulateOnGpu))),
                i * 30,
                Template::VqeLoop,
            )
        })
        .collect();
    Scenario { resources: mixed_cluster(), jobs, config: config(seed, 3600) }
}

#[test]
fn empty_cluster_polls_on_schedule() {
    let sc = Scenario {
        resources: vec![qpu("q", Tier::R3, Modality::Superconducting, 5, 0.99)],
        jobs: Vec::new(),
        config: config(1, 3600),
    };
    let out = run(&sc).unwrap();
    let polls = kinds(&out.trace, EventKind::CalibPoll);
    assert_eq!(polls.len(), 4);
    let times: Vec<u64> = polls.iter().map(|e| e.time.as_nanos() / 1_000_000_000).collect();
    assert_eq!(times, [900, 1800, 2700, 3600]);
    assert_eq!(out.trace.events.first().unwrap().kind, EventKind::SimStart);
    assert_eq!(out.trace.events.last().unwrap().kind, EventKind::SimEnd);
}

#[test]
fn single_classical_job_fills_its_window() {
    let sc = Scenario {
        resources: vec![cpu_node("cpu-0", 8)],
        jobs: vec![job(descriptor("solo", 8, 100.0, None), 0, Template::ClassicalOnly)],
        config: config(0, 1000),
    };
    let out = run(&sc).unwrap();
    let m = &out.metrics;
    assert_eq!(m.completed_job_count, 1);
    assert_eq!(m.makespan_s, 100.0);
    assert_eq!(m.utilization[0], 1.0);
    assert_eq!(m.cpu_idle_core_seconds, 0.0);
    assert_eq!(m.mean_job_wait_s, 0.0);
}

#[test]
fn same_seed_same_bytes() {
    let a = run(&vqe_scenario(7)).unwrap().trace.to_text();
    let b = run(&vqe_scenario(7)).unwrap().trace.to_text();
    assert_eq!(a, b);
    assert_eq!(replay_check(&a, &b).unwrap(), Replay::Equal);
}

#[test]
fn seeds_diverge_at_first_poll() {
    let a = run(&vqe_scenario(1)).unwrap().trace.to_text();
    let b = run(&vqe_scenario(2)).unwrap().trace.to_text();
    match replay_check(&a, &b).unwrap() {
        Replay::Diverged { event: Some(i), field, .. } => {
            let t = Trace::parse(&a).unwrap();
            assert_eq!(t.events[i].kind, EventKind::CalibPoll);
            assert_eq!(field, "fidelity");
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn vqe_jobs_complete_and_respect_leases() {
    let out = run(&vqe_scenario(3)).unwrap();
    assert_eq!(out.metrics.completed_job_count, 4);
    assert_eq!(out.decisions.len(), 4);
    for d in &out.decisions {
        assert!(d.qpu_token.is_some());
        assert_ne!(d.mode, CoMode::AsyncStreaming);
    }
    // Each eval iteration is one QPU phase.
    assert_eq!(kinds(&out.trace, EventKind::QpuPhaseStart).len(), 40);
    // QPU phases never overlap on a device.
    let mut running: BTreeMap<String, String> = BTreeMap::new();
    for e in &out.trace.events {
        let job = e.get("job").map(String::from);
        match e.kind {
            EventKind::QpuPhaseStart => {
                let dev = e.get("device").unwrap().to_string();
                assert!(!running.values().any(|d| *d == dev), "{dev} double-booked at {}", e.time);
                running.insert(job.unwrap(), dev);
            }
            EventKind::QpuPhaseEnd => {
                running.remove(&job.unwrap());
            }
            _ => {}
        }
    }
}

#[test]
fn interleaved_releases_and_reacquires() {
    let mut sc = vqe_scenario(4);
    sc.config.policy.mode_override = Some(CoMode::Interleaved);
    sc.jobs.truncate(1);
    let out = run(&sc).unwrap();
    let released = kinds(&out.trace, EventKind::CoresReleased).len();
    let reacquired = kinds(&out.trace, EventKind::CoresReacquired).len();
    assert_eq!(released, 10);
    assert_eq!(reacquired, 10);
    assert_eq!(out.metrics.completed_job_count, 1);
}

#[test]
fn async_batches_share_the_device() {
    let sc = Scenario {
        resources: mixed_cluster(),
        jobs: (0..3)
            .map(|i| {
                job(
                    descriptor(&alloc::format!("batch-{i}"), 4, 3600.0, Some(quantum(8, FallbackPolicy::QueueForQpu))),
                    0,
                    Template::BatchedCircuits,
                )
            })
            .collect(),
        config: config(5, 3600),
    };
    let out = run(&sc).unwrap();
    assert!(out.decisions.iter().all(|d| d.mode == CoMode::AsyncStreaming));
    assert_eq!(out.metrics.completed_job_count, 3);
    // 0.995 on the chosen device puts it in the extrapolation band (x3).
    let d = out.decisions[0].qpu_token.as_ref().unwrap();
    assert_eq!(d.resource_id, "qpu-sc");
    assert_eq!(out.metrics.total_shots_executed, 3 * 8 * 1000 * 3);
}

#[test]
fn infeasible_jobs_take_their_fallback() {
    let jobs = vec![
        job(descriptor("emu", 4, 600.0, Some(quantum(40, FallbackPolicy::EmulateOnGpu))), 0, Template::BatchedCircuits),
        job(descriptor("wait", 4, 600.0, Some(quantum(40, FallbackPolicy::QueueForQpu))), 0, Template::VqeLoop),
        job(descriptor("degr", 4, 600.0, Some(quantum(40, FallbackPolicy::FailDegraded))), 0, Template::VqeLoop),
    ];
    // 40 qubits exceeds every device and the emulation cap.
    let mut sc = Scenario { resources: mixed_cluster(), jobs, config: config(0, 3600) };
    let out = run(&sc).unwrap();
    let m = &out.metrics;
    assert_eq!((m.fallback_gpu_emulation, m.fallback_queued, m.fallback_degraded_notice), (0, 2, 1));
    assert_eq!(m.degraded_job_count, 1);

    sc.config.midware.emulation_qubit_cap = 40;
    let out = run(&sc).unwrap();
    assert_eq!(out.metrics.fallback_gpu_emulation, 1);
    let emu = out.metrics.jobs.iter().find(|r| r.job_id == "emu").unwrap();
    assert_eq!(emu.status, JobStatus::Completed);
    assert_eq!(emu.shots_executed, 0);
    assert_eq!(emu.resource.as_deref(), Some("gpu-0"));
}

#[test]
fn emulated_loop_keeps_unrolled_names() {
    let jobs =
        vec![job(descriptor("emu", 4, 600.0, Some(quantum(40, FallbackPolicy::EmulateOnGpu))), 0, Template::VqeLoop)];
    let mut sc = Scenario { resources: mixed_cluster(), jobs, config: config(0, 3600) };
    sc.config.midware.emulation_qubit_cap = 40;
    let out = run(&sc).unwrap();
    assert_eq!(out.metrics.completed_job_count, 1);
    let gpu_tasks: Vec<_> =
        kinds(&out.trace, EventKind::TaskStart).into_iter().filter(|e| e.get("kind") == Some("GPU")).collect();
    assert_eq!(gpu_tasks.len(), TemplateConfig::default().vqe_iterations as usize);
    assert_eq!(gpu_tasks[0].get("task"), Some("eval#0"));
}

#[test]
fn dependencies_precede_dependents() {
    let out = run(&vqe_scenario(9)).unwrap();
    let mut ends: BTreeMap<(String, String), SimTime> = BTreeMap::new();
    for e in &out.trace.events {
        let key = |e: &TraceEvent| (e.get("job").unwrap().to_string(), e.get("task").unwrap().to_string());
        match e.kind {
            EventKind::TaskEnd | EventKind::QpuPhaseEnd => {
                ends.insert(key(e), e.time);
            }
            EventKind::TaskStart | EventKind::QpuPhaseStart => {
                let job = e.get("job").unwrap();
                let deps = e.get("deps").unwrap();
                if deps != "-" {
                    for d in deps.split(',') {
                        let end = ends.get(&(job.to_string(), d.to_string())).expect("dependency finished");
                        assert!(*end <= e.time);
                    }
                }
            }
            _ => {}
        }
    }
}

#[test]
fn horizon_cuts_the_run() {
    let mut sc = vqe_scenario(0);
    sc.config.horizon = SimTime::from_secs(5);
    let out = run(&sc).unwrap();
    assert!(out.trace.events.iter().all(|e| e.time <= SimTime::from_secs(5)));
    assert!(out.metrics.utilization.iter().all(|u| (0.0..=1.0).contains(u)));
}
