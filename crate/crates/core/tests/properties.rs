use std::collections::BTreeSet;

use proptest::prelude::*;
use qhpc_core::dctg::{classify_paths, unroll, Demand, DurationModel, TaskGraph, TaskKind, TaskNode};
use qhpc_core::fabric::{transfer_time, LinkClass};
use qhpc_core::hwd::{
    parse_hwd, shots_from_confidence, ClassicalDescriptor, FallbackPolicy, HybridWorkloadDescriptor,
    ModalityPreference, ModeHint, QuantumDescriptor, ShotSpec,
};
use qhpc_core::scheduler::{plan, Capacity, Hold, Request};
use qhpc_core::{Connectivity, Modality, SimTime};

fn connectivity() -> impl Strategy<Value = Connectivity> {
    prop::sample::select(Connectivity::ALL.to_vec())
}

fn modalities() -> impl Strategy<Value = Vec<ModalityPreference>> {
    (prop::sample::subsequence(Modality::ALL.to_vec(), 0..=4).prop_shuffle(), any::<bool>()).prop_map(|(ms, best)| {
        let mut v: Vec<ModalityPreference> = ms.into_iter().map(ModalityPreference::Specific).collect();
        if best || v.is_empty() {
            v.push(ModalityPreference::BestAvailable);
        }
        v
    })
}

fn shots() -> impl Strategy<Value = ShotSpec> {
    prop_oneof![
        (1u64..1_000_000).prop_map(ShotSpec::Budget),
        (0.5f64..0.999, 0.005f64..0.2).prop_map(|(target, epsilon)| ShotSpec::Confidence { target, epsilon }),
    ]
}

fn quantum() -> impl Strategy<Value = QuantumDescriptor> {
    (
        1u32..500,
        connectivity(),
        shots(),
        modalities(),
        1u32..100_000,
        "[ -~]{0,40}",
        prop::sample::select(vec![
            FallbackPolicy::EmulateOnGpu,
            FallbackPolicy::QueueForQpu,
            FallbackPolicy::FailDegraded,
        ]),
    )
        .prop_map(
            |(qubit_count, connectivity, shots, modality_preference, circuit_depth, circuit, fallback_policy)| {
                QuantumDescriptor {
                    qubit_count,
                    connectivity,
                    shots,
                    modality_preference,
                    circuit_depth,
                    circuit,
                    fallback_policy,
                }
            },
        )
}

fn descriptor() -> impl Strategy<Value = HybridWorkloadDescriptor> {
    (
        "[A-Za-z0-9_.-]{1,16}",
        0u32..1000,
        (1u32..1024, 0u32..16, 0.001f64..1e5, 0.001f64..1e6, 1u32..128),
        prop::option::of(quantum()),
        prop::sample::select(vec![
            ModeHint::Auto,
            ModeHint::Simultaneous,
            ModeHint::Interleaved,
            ModeHint::AsyncStreaming,
        ]),
    )
        .prop_map(|(job_id, priority, (cpu_cores, gpu_count, memory_gb, walltime_s, mpi_ranks), quantum, mode)| {
            let mode_hint = if quantum.is_some() { mode } else { ModeHint::Auto };
            HybridWorkloadDescriptor {
                job_id,
                classical: ClassicalDescriptor { cpu_cores, gpu_count, memory_gb, walltime_s, mpi_ranks },
                quantum,
                mode_hint,
                priority,
            }
        })
}

/// Random forward DAG over `n` nodes, optionally with one feedback loop over
/// a consecutive index range (chain edges plus the back-edge added).
fn graph() -> impl Strategy<Value = TaskGraph> {
    (2usize..12)
        .prop_flat_map(|n| {
            (
                Just(n),
                prop::collection::vec(any::<bool>(), n),
                prop::collection::vec(prop::bool::weighted(0.3), n * n),
                prop::option::of((0..n - 1, 1usize..4, 1u32..6)),
                prop::collection::vec(1u64..5000, n),
            )
        })
        .prop_map(|(n, qpu, edge_bits, lp, shot_counts)| {
            let id = |i: usize| format!("n{i:02}");
            let nodes = (0..n)
                .map(|i| TaskNode {
                    id: id(i),
                    kind: if qpu[i] { TaskKind::Qpu } else { TaskKind::Cpu },
                    duration: if qpu[i] {
                        DurationModel::Circuit { shots: shot_counts[i], depth: 10 }
                    } else {
                        DurationModel::Fixed(1.0)
                    },
                    demand: Demand { cores: 1, gpus: 0, qubits: if qpu[i] { 4 } else { 0 } },
                })
                .collect();
            let mut edges = BTreeSet::new();
            for i in 0..n {
                for j in i + 1..n {
                    if edge_bits[i * n + j] {
                        edges.insert((i, j));
                    }
                }
            }
            let mut loops = Vec::new();
            if let Some((a, len, iters)) = lp {
                let b = (a + len).min(n - 1);
                for i in a..b {
                    edges.insert((i, i + 1));
                }
                loops.push(((a..=b).map(id).collect::<Vec<_>>(), iters));
                let mut e: Vec<_> = edges.iter().map(|&(s, d)| (id(s), id(d), 8)).collect();
                e.push((id(b), id(a), 8));
                return TaskGraph::new(nodes, e, loops).expect("generated graph is valid");
            }
            let e = edges.iter().map(|&(s, d)| (id(s), id(d), 8)).collect();
            TaskGraph::new(nodes, e, loops).expect("generated graph is valid")
        })
}

fn reach(g: &TaskGraph) -> Vec<Vec<bool>> {
    let n = g.len();
    let mut r = vec![vec![false; n]; n];
    for e in g.edges() {
        r[e.src][e.dst] = true;
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                if r[i][k] && r[k][j] {
                    r[i][j] = true;
                }
            }
        }
    }
    r
}

fn circuit_shots(g: &TaskGraph) -> u64 {
    g.nodes()
        .iter()
        .map(|n| match n.duration {
            DurationModel::Circuit { shots, .. } => shots,
            DurationModel::Fixed(_) => 0,
        })
        .sum()
}

proptest! {
    #[test]
    fn hwd_round_trips(d in descriptor()) {
        let text = d.to_document();
        let back = parse_hwd(&text).map_err(|e| TestCaseError::fail(format!("{e}\n{text}")))?;
        prop_assert_eq!(&back, &d);
        prop_assert_eq!(back.to_document(), text);
    }

    #[test]
    fn shots_grow_with_confidence(c1 in 0.01f64..0.99, c2 in 0.01f64..0.99, eps in 0.001f64..0.5) {
        let (lo, hi) = if c1 <= c2 { (c1, c2) } else { (c2, c1) };
        prop_assert!(shots_from_confidence(lo, eps).unwrap() <= shots_from_confidence(hi, eps).unwrap());
    }

    #[test]
    fn shots_shrink_with_epsilon(c in 0.01f64..0.99, e1 in 0.001f64..0.5, e2 in 0.001f64..0.5) {
        let (lo, hi) = if e1 <= e2 { (e1, e2) } else { (e2, e1) };
        prop_assert!(shots_from_confidence(c, lo).unwrap() >= shots_from_confidence(c, hi).unwrap());
    }

    #[test]
    fn transfer_time_is_monotone(a in 0u64..1 << 40, b in 0u64..1 << 40, rtt in 0.0f64..1.0, bw in 1.0f64..1e12) {
        let link = LinkClass { rtt_s: rtt, bandwidth_bytes_per_s: bw };
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(transfer_time(lo, link) <= transfer_time(hi, link));
        prop_assert!(transfer_time(0, link) == rtt);
    }

    #[test]
    fn classification_partitions_qpu_nodes(g in graph()) {
        let c = classify_paths(&g);
        let mut seen = BTreeSet::new();
        for chain in &c.latency_critical_chains {
            prop_assert_eq!(chain.len(), 3);
            prop_assert!(seen.insert(chain[1].clone()));
        }
        let r = reach(&g);
        for batch in &c.latency_tolerant_batches {
            prop_assert!(!batch.is_empty());
            for (i, a) in batch.iter().enumerate() {
                prop_assert!(seen.insert(a.clone()));
                for b in &batch[i + 1..] {
                    let (x, y) = (g.node_index(a).unwrap(), g.node_index(b).unwrap());
                    prop_assert!(!r[x][y] && !r[y][x], "{} and {} are connected", a, b);
                }
            }
        }
        let qpus: BTreeSet<String> =
            g.nodes().iter().filter(|n| n.kind == TaskKind::Qpu).map(|n| n.id.clone()).collect();
        prop_assert_eq!(seen, qpus);
    }

    #[test]
    fn unroll_conserves_work(g in graph()) {
        let u = unroll(&g);
        prop_assert!(u.is_acyclic());
        prop_assert!(u.feedback_loops().is_empty());
        let mut nodes = g.len();
        let mut shots = circuit_shots(&g);
        for l in g.feedback_loops() {
            let k = l.max_iterations as usize;
            nodes += l.members.len() * (k - 1);
            let body: u64 = l
                .members
                .iter()
                .map(|&m| match g.node(m).duration {
                    DurationModel::Circuit { shots, .. } => shots,
                    DurationModel::Fixed(_) => 0,
                })
                .sum();
            shots += body * (k as u64 - 1);
        }
        prop_assert_eq!(u.len(), nodes);
        prop_assert_eq!(circuit_shots(&u), shots);
    }

    #[test]
    fn plan_never_oversubscribes(
        caps in prop::collection::vec((1u32..64, 0u32..4), 1..4),
        reqs in prop::collection::vec((0u32..5, 1u32..64, 0u32..4, 1u64..100, any::<bool>()), 0..8),
        holds in prop::collection::vec((0usize..4, 1u32..32, 1u64..100), 0..4),
    ) {
        let now = SimTime::from_secs(10);
        let capacities: Vec<Capacity> = caps.iter().map(|&(cores, gpus)| Capacity { cores, gpus }).collect();
        let holds: Vec<Hold> = holds
            .iter()
            .filter(|h| h.0 < capacities.len() && h.1 <= capacities[h.0].cores)
            .map(|&(resource, cores, rel)| Hold { resource, cores, gpus: 0, release: now + SimTime::from_secs(rel) })
            .collect();
        // Holds on one resource must themselves fit.
        for (r, c) in capacities.iter().enumerate() {
            let used: u32 = holds.iter().filter(|h| h.resource == r).map(|h| h.cores).sum();
            prop_assume!(used <= c.cores);
        }
        let requests: Vec<Request> = reqs
            .iter()
            .enumerate()
            .map(|(seq, &(priority, cores, gpus, dur, urgent))| Request {
                urgent,
                priority,
                submit: SimTime::ZERO,
                seq,
                cores,
                gpus,
                duration: SimTime::from_secs(dur),
                pin: None,
                not_before: SimTime::ZERO,
            })
            .collect();
        let out = plan(&requests, &capacities, &holds, now, true);
        let mut spans: Vec<(usize, SimTime, SimTime, u32, u32)> =
            holds.iter().map(|h| (h.resource, now, h.release, h.cores, h.gpus)).collect();
        for (i, r) in out.iter().enumerate() {
            let req = &requests[i];
            let fits_somewhere = capacities.iter().any(|c| req.cores <= c.cores && req.gpus <= c.gpus);
            prop_assert_eq!(r.is_some(), fits_somewhere);
            if let Some(r) = r {
                prop_assert!(r.start >= now);
                spans.push((r.resource, r.start, r.start + req.duration, req.cores, req.gpus));
            }
        }
        for &(res, t, _, _, _) in &spans {
            let (c, g) = spans
                .iter()
                .filter(|s| s.0 == res && s.1 <= t && t < s.2)
                .fold((0, 0), |(c, g), s| (c + s.3, g + s.4));
            prop_assert!(c <= capacities[res].cores && g <= capacities[res].gpus);
        }
    }
}
