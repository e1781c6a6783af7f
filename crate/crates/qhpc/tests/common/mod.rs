#![allow(dead_code)]

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const MODALITIES: [&str; 4] = ["superconducting", "trapped_ion", "neutral_atom", "photonic"];
pub const CONNECTIVITY: [&str; 5] = ["linear", "ring", "grid", "heavy_hex", "all_to_all"];
pub const FALLBACKS: [&str; 3] = ["emulate_on_gpu", "queue_for_qpu", "fail_degraded"];
pub const MODES: [&str; 4] = ["auto", "simultaneous", "interleaved", "async_streaming"];

pub fn bundled(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(name).join("scenario.yaml")
}

/// Runs the CLI in-process and returns (exit code, stdout, stderr).
pub fn qhpc(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("qhpc").chain(args.iter().copied());
    let code = qhpc::cli::main_with(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

/// A random but always loadable scenario: `jobs` jobs over at most
/// `max_resources` resources, at least one of which has classical cores.
pub fn random_scenario(seed: u64, jobs: usize, max_resources: usize) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = String::new();
    writeln!(s, "seed: {seed}").unwrap();
    writeln!(s, "horizon_s: {}", rng.random_range(1800..=7200)).unwrap();
    writeln!(s, "policy:").unwrap();
    writeln!(s, "  backfill: {}", rng.random_bool(0.8)).unwrap();
    writeln!(s, "templates:").unwrap();
    writeln!(s, "  vqe_iterations: {}", rng.random_range(1..=6)).unwrap();
    writeln!(s, "  batch_size: {}", rng.random_range(1..=6)).unwrap();
    writeln!(s, "resources:").unwrap();

    let n_res = rng.random_range(1..=max_resources);
    let mut max_cores = 0u32;
    let mut max_gpus = 0u32;
    for r in 0..n_res {
        let tier = if r == 0 { rng.random_range(1..=3) } else { rng.random_range(1..=4) };
        writeln!(s, "  - id: res-{r}").unwrap();
        writeln!(s, "    tier: R{tier}").unwrap();
        writeln!(s, "    memory_gb: 256").unwrap();
        if tier != 4 {
            let cores = rng.random_range(8..=128);
            max_cores = max_cores.max(cores);
            writeln!(s, "    cores: {cores}").unwrap();
        }
        if tier == 2 || (tier == 3 && rng.random_bool(0.5)) {
            let gpus = rng.random_range(1..=8);
            max_gpus = max_gpus.max(gpus);
            writeln!(s, "    gpus: {gpus}").unwrap();
        }
        if tier >= 3 {
            writeln!(s, "    qpu:").unwrap();
            writeln!(s, "      modality: {}", MODALITIES.choose(&mut rng).unwrap()).unwrap();
            writeln!(s, "      qubits: {}", rng.random_range(5..=64)).unwrap();
            writeln!(s, "      connectivity: {}", CONNECTIVITY.choose(&mut rng).unwrap()).unwrap();
            writeln!(s, "      fidelity: {:.4}", rng.random_range(0.95..0.9995)).unwrap();
        }
    }

    writeln!(s, "jobs:").unwrap();
    if jobs == 0 {
        s.truncate(s.len() - "jobs:\n".len());
    }
    for j in 0..jobs {
        let quantum = rng.random_bool(0.6);
        let template = if !quantum {
            "classical_only"
        } else if rng.random_bool(0.6) {
            "vqe_loop"
        } else {
            "batched_circuits"
        };
        writeln!(s, "  - submit_s: {}", rng.random_range(0..600)).unwrap();
        writeln!(s, "    template: {template}").unwrap();
        writeln!(s, "    descriptor:").unwrap();
        writeln!(s, "      job_id: job-{j}").unwrap();
        writeln!(s, "      priority: {}", rng.random_range(0..3)).unwrap();
        if quantum {
            writeln!(s, "      mode: {}", MODES.choose(&mut rng).unwrap()).unwrap();
        }
        writeln!(s, "      classical:").unwrap();
        writeln!(s, "        cpu_cores: {}", rng.random_range(1..=max_cores)).unwrap();
        if max_gpus > 0 && rng.random_bool(0.2) {
            writeln!(s, "        gpu_count: {}", rng.random_range(1..=max_gpus)).unwrap();
        }
        writeln!(s, "        memory_gb: 8").unwrap();
        writeln!(s, "        walltime_s: {}", rng.random_range(10..=600)).unwrap();
        writeln!(s, "        mpi_ranks: 1").unwrap();
        if quantum {
            writeln!(s, "      quantum:").unwrap();
            writeln!(s, "        qubits: {}", rng.random_range(2..=40)).unwrap();
            writeln!(s, "        connectivity: {}", CONNECTIVITY.choose(&mut rng).unwrap()).unwrap();
            if rng.random_bool(0.3) {
                writeln!(s, "        confidence: 0.9").unwrap();
                writeln!(s, "        epsilon: 0.05").unwrap();
            } else {
                writeln!(s, "        shots: {}", rng.random_range(100..=4000)).unwrap();
            }
            writeln!(s, "        depth: {}", rng.random_range(1..=80)).unwrap();
            let first = MODALITIES.choose(&mut rng).unwrap();
            if rng.random_bool(0.5) {
                writeln!(s, "        modalities: [{first}, best_available]").unwrap();
            } else {
                writeln!(s, "        modalities: [{first}]").unwrap();
            }
            writeln!(s, "        fallback: {}", FALLBACKS.choose(&mut rng).unwrap()).unwrap();
        }
    }
    s
}

pub fn load_text(text: &str) -> qhpc::Loaded {
    qhpc::scenario::parse(text, Path::new("<generated>"), Path::new(".")).unwrap_or_else(|e| panic!("{e}\n{text}"))
}
