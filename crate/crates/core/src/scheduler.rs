//! Quantum-aware policy engine.
//!
//! * QPU selection: a Quantum Suitability Score (QSS), a convex combination
//!   of fidelity, connectivity, queue and latency terms with hard
//!   feasibility cuts, evaluated under strict modality-preference tiering.
//! * Classical allocation: fair-share ordering with conservative backfill
//!   over per-resource availability profiles.
//! * Co-scheduling mode choice and the fallback policy for jobs no QPU can
//!   host.

use alloc::string::String;
use alloc::vec::Vec;

use crate::dctg::PathClassification;
use crate::device::satisfiable;
use crate::fabric::FabricParams;
use crate::hwd::{FallbackPolicy, ModalityPreference, ModeHint, QuantumDescriptor};
use crate::midware::MidwareParams;
use crate::registry::{CalibrationProfile, Registry, ResourceRecord, Tier};
use crate::time::SimTime;

/// Tolerance under which two QSS totals count as tied.
pub const QSS_TIE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QssWeights {
    pub fidelity: f64,
    pub connectivity: f64,
    pub queue: f64,
    pub latency: f64,
}

impl Default for QssWeights {
    fn default() -> Self {
        Self { fidelity: 0.4, connectivity: 0.2, queue: 0.2, latency: 0.2 }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PolicyError {
    #[error("QSS weights must be non-negative and sum to 1 (got {0})")]
    Weights(f64),
    #[error("policy parameter `{0}` out of range")]
    BadParam(&'static str),
}

impl QssWeights {
    pub fn new(fidelity: f64, connectivity: f64, queue: f64, latency: f64) -> Result<Self, PolicyError> {
        let w = Self { fidelity, connectivity, queue, latency };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        let parts = [self.fidelity, self.connectivity, self.queue, self.latency];
        let sum: f64 = parts.iter().sum();
        if parts.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) || libm::fabs(sum - 1.0) > 1e-9 {
            return Err(PolicyError::Weights(sum));
        }
        Ok(())
    }

    /// Divides every weight by their sum. Accepts any non-negative vector
    /// with a positive sum.
    pub fn normalized(fidelity: f64, connectivity: f64, queue: f64, latency: f64) -> Result<Self, PolicyError> {
        let sum = fidelity + connectivity + queue + latency;
        if !(sum > 0.0) || !sum.is_finite() {
            return Err(PolicyError::Weights(sum));
        }
        Self::new(fidelity / sum, connectivity / sum, queue / sum, latency / sum)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QssNorms {
    pub max_wait_s: f64,
    pub max_latency_s: f64,
}

impl Default for QssNorms {
    fn default() -> Self {
        Self { max_wait_s: 900.0, max_latency_s: 0.1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QssBreakdown {
    pub fidelity_term: f64,
    pub connectivity_term: f64,
    pub queue_term: f64,
    pub latency_term: f64,
    /// Weighted sum of the terms, or 0 when infeasible.
    pub total: f64,
    pub feasible: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("resource `{0}` has no QPU")]
pub struct NoQpuError(pub String);

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("no feasible QPU")]
pub struct NoFeasibleQpu;

/// Round-trip latency of a candidate's access link.
pub fn access_rtt(candidate: &ResourceRecord, fabric: &FabricParams) -> f64 {
    fabric.link(candidate.access_latency_class).rtt_s
}

pub fn qss(
    candidate: &ResourceRecord,
    demand: &QuantumDescriptor,
    queue_wait_s: f64,
    weights: &QssWeights,
    norms: &QssNorms,
    fabric: &FabricParams,
) -> Result<QssBreakdown, NoQpuError> {
    let qpu = candidate.qpu.as_ref().ok_or_else(|| NoQpuError(candidate.resource_id.clone()))?;
    let fidelity_term = qpu.calibration.two_qubit_fidelity;
    let connectivity_term = if satisfiable(demand.connectivity, qpu.connectivity) { 1.0 } else { 0.0 };
    let queue_term = 1.0 - (queue_wait_s.max(0.0) / norms.max_wait_s).min(1.0);
    let latency_term = 1.0 - (access_rtt(candidate, fabric) / norms.max_latency_s).min(1.0);
    let feasible = qpu.qubit_count >= demand.qubit_count && connectivity_term == 1.0;
    let total = if feasible {
        weights.fidelity * fidelity_term
            + weights.connectivity * connectivity_term
            + weights.queue * queue_term
            + weights.latency * latency_term
    } else {
        0.0
    };
    Ok(QssBreakdown { fidelity_term, connectivity_term, queue_term, latency_term, total, feasible })
}

/// One scored candidate, as listed by [`rank_qpus`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankedQpu {
    /// Index into the registry.
    pub index: usize,
    /// Position of the first preference entry admitting this device.
    pub tier: usize,
    pub score: QssBreakdown,
}

/// Scores every QPU admitted by the preference list and orders them the way
/// [`select_qpu`] prefers them: feasible first, then by preference position,
/// then by total (ties within [`QSS_TIE_EPS`] by resource id). The first
/// entry, when feasible, is the selection.
pub fn rank_qpus(
    registry: &Registry,
    demand: &QuantumDescriptor,
    weights: &QssWeights,
    norms: &QssNorms,
    fabric: &FabricParams,
    queue_wait_s: impl Fn(usize) -> f64,
) -> Vec<RankedQpu> {
    let mut ranked = Vec::new();
    for (index, r) in registry.records().iter().enumerate() {
        let Some(q) = &r.qpu else { continue };
        let Some(tier) = demand.modality_preference.iter().position(|p| p.admits(q.modality)) else {
            continue;
        };
        let score = qss(r, demand, queue_wait_s(index), weights, norms, fabric).expect("record has a QPU");
        ranked.push(RankedQpu { index, tier, score });
    }
    // Records are already in id order; a stable insertion keeps the first of
    // any near-tied group in front.
    let mut out: Vec<RankedQpu> = Vec::with_capacity(ranked.len());
    for c in ranked {
        let pos = out.iter().position(|o| ranks_before(&c, o)).unwrap_or(out.len());
        out.insert(pos, c);
    }
    out
}

fn ranks_before(a: &RankedQpu, b: &RankedQpu) -> bool {
    if a.score.feasible != b.score.feasible {
        return a.score.feasible;
    }
    if a.tier != b.tier {
        return a.tier < b.tier;
    }
    a.score.total > b.score.total + QSS_TIE_EPS
}

/// Picks the QPU for `demand`: the highest-scoring feasible device of the
/// earliest preference entry that has any feasible device.
pub fn select_qpu(
    registry: &Registry,
    demand: &QuantumDescriptor,
    weights: &QssWeights,
    norms: &QssNorms,
    fabric: &FabricParams,
    queue_wait_s: impl Fn(usize) -> f64,
) -> Result<(usize, QssBreakdown), NoFeasibleQpu> {
    for pref in &demand.modality_preference {
        let mut best: Option<(usize, QssBreakdown)> = None;
        for (index, r) in registry.records().iter().enumerate() {
            let Some(q) = &r.qpu else { continue };
            if !pref.admits(q.modality) {
                continue;
            }
            let s = qss(r, demand, queue_wait_s(index), weights, norms, fabric).expect("record has a QPU");
            if !s.feasible {
                continue;
            }
            if best.is_none_or(|(_, b)| s.total > b.total + QSS_TIE_EPS) {
                best = Some((index, s));
            }
        }
        if let Some(found) = best {
            return Ok(found);
        }
    }
    Err(NoFeasibleQpu)
}

/// Whether any QPU in the registry could host `demand`, ignoring load.
pub fn qpu_feasible(registry: &Registry, demand: &QuantumDescriptor) -> bool {
    registry.records().iter().any(|r| {
        r.qpu.as_ref().is_some_and(|q| {
            demand.modality_preference.iter().any(|p| p.admits(q.modality))
                && q.qubit_count >= demand.qubit_count
                && satisfiable(demand.connectivity, q.connectivity)
        })
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CoMode {
    Simultaneous,
    Interleaved,
    AsyncStreaming,
}

impl CoMode {
    pub fn as_str(self) -> &'static str {
        match self {
            CoMode::Simultaneous => "simultaneous",
            CoMode::Interleaved => "interleaved",
            CoMode::AsyncStreaming => "async_streaming",
        }
    }
}

impl core::str::FromStr for CoMode {
    type Err = ();
    fn from_str(s: &str) -> Result<Self, ()> {
        match s {
            "simultaneous" => Ok(CoMode::Simultaneous),
            "interleaved" => Ok(CoMode::Interleaved),
            "async_streaming" | "async" => Ok(CoMode::AsyncStreaming),
            _ => Err(()),
        }
    }
}

impl core::fmt::Display for CoMode {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Resolves a mode hint. `auto` picks interleaved for latency-critical
/// chains unless the mean quantum phase is shorter than `threshold_s`
/// (then simultaneous), async streaming when only independent batches
/// exist, and simultaneous for jobs without QPU work.
pub fn choose_mode(hint: ModeHint, paths: &PathClassification, mean_phase_s: f64, threshold_s: f64) -> CoMode {
    match hint {
        ModeHint::Simultaneous => CoMode::Simultaneous,
        ModeHint::Interleaved => CoMode::Interleaved,
        ModeHint::AsyncStreaming => CoMode::AsyncStreaming,
        ModeHint::Auto => {
            if !paths.latency_critical_chains.is_empty() {
                if mean_phase_s < threshold_s {
                    CoMode::Simultaneous
                } else {
                    CoMode::Interleaved
                }
            } else if !paths.latency_tolerant_batches.is_empty() {
                CoMode::AsyncStreaming
            } else {
                CoMode::Simultaneous
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FallbackTaken {
    None,
    GpuEmulation,
    Queued,
    DegradedNotice,
}

impl FallbackTaken {
    pub fn as_str(self) -> &'static str {
        match self {
            FallbackTaken::None => "none",
            FallbackTaken::GpuEmulation => "gpu_emulation",
            FallbackTaken::Queued => "queued",
            FallbackTaken::DegradedNotice => "degraded_notice",
        }
    }
}

impl core::str::FromStr for FallbackTaken {
    type Err = ();
    fn from_str(s: &str) -> Result<Self, ()> {
        match s {
            "none" => Ok(FallbackTaken::None),
            "gpu_emulation" => Ok(FallbackTaken::GpuEmulation),
            "queued" => Ok(FallbackTaken::Queued),
            "degraded_notice" => Ok(FallbackTaken::DegradedNotice),
            _ => Err(()),
        }
    }
}

/// Applies a job's fallback policy once QPU selection has failed.
/// GPU emulation needs an R2 node and a circuit within the emulation cap;
/// otherwise it degrades to queueing.
pub fn choose_fallback(demand: &QuantumDescriptor, registry: &Registry, midware: &MidwareParams) -> FallbackTaken {
    match demand.fallback_policy {
        FallbackPolicy::EmulateOnGpu => {
            let has_gpu_node = registry.records().iter().any(|r| r.tier == Tier::R2 && r.gpu_count >= 1);
            if has_gpu_node && demand.qubit_count <= midware.emulation_qubit_cap {
                FallbackTaken::GpuEmulation
            } else {
                FallbackTaken::Queued
            }
        }
        FallbackPolicy::QueueForQpu => FallbackTaken::Queued,
        FallbackPolicy::FailDegraded => FallbackTaken::DegradedNotice,
    }
}

/// A virtual QPU device handle carrying the calibration seen at issuance.
#[derive(Debug, Clone, PartialEq)]
pub struct QpuToken {
    pub token_id: String,
    pub resource_id: String,
    pub issued_at: SimTime,
    pub calibration_snapshot: CalibrationProfile,
    pub expires_at: SimTime,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassicalAllocation {
    pub resource_id: String,
    pub cores: u32,
    pub gpus: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleDecision {
    pub job_id: String,
    pub mode: CoMode,
    pub classical_allocation: ClassicalAllocation,
    pub qpu_token: Option<QpuToken>,
    pub start_time: SimTime,
    pub fallback_taken: FallbackTaken,
}

/// Classical capacity of one resource.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Capacity {
    pub cores: u32,
    pub gpus: u32,
}

/// An allocation currently in place, expected to end at `release`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Hold {
    pub resource: usize,
    pub cores: u32,
    pub gpus: u32,
    pub release: SimTime,
}

/// A pending allocation request.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Request {
    /// Re-acquisition requests of interleaved jobs jump the queue.
    pub urgent: bool,
    pub priority: u32,
    pub submit: SimTime,
    /// Final tie-break, typically the job's position in the scenario.
    pub seq: usize,
    pub cores: u32,
    pub gpus: u32,
    /// Expected holding time, used to place later reservations.
    pub duration: SimTime,
    /// Restricts placement to one resource.
    pub pin: Option<usize>,
    /// No reservation may begin before this time. Requests with
    /// `not_before > now` are claims on future capacity: they shape the plan
    /// but never start in the current pass.
    pub not_before: SimTime,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Reservation {
    pub resource: usize,
    pub start: SimTime,
}

/// Fair-share order: urgent requests, then priority (high first), submit
/// time, and sequence number. Returns indices into `requests`.
pub fn fair_share_order(requests: &[Request]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..requests.len()).collect();
    order.sort_by(|&a, &b| {
        let (x, y) = (&requests[a], &requests[b]);
        y.urgent.cmp(&x.urgent).then(y.priority.cmp(&x.priority)).then(x.submit.cmp(&y.submit)).then(x.seq.cmp(&y.seq))
    });
    order
}

/// Usage intervals of one resource: `[start, end)` with the amounts taken.
#[derive(Debug, Clone, Default)]
struct Profile {
    busy: Vec<(SimTime, SimTime, u32, u32)>,
}

impl Profile {
    fn usage_at(&self, t: SimTime) -> (u64, u64) {
        self.busy.iter().filter(|b| b.0 <= t && t < b.1).fold((0, 0), |(c, g), b| (c + b.2 as u64, g + b.3 as u64))
    }

    /// Earliest `t >= now` such that the demand fits throughout
    /// `[t, t + duration)`.
    fn earliest_fit(&self, cap: Capacity, now: SimTime, cores: u32, gpus: u32, duration: SimTime) -> Option<SimTime> {
        if cores > cap.cores || gpus > cap.gpus {
            return None;
        }
        let mut candidates: Vec<SimTime> =
            core::iter::once(now).chain(self.busy.iter().map(|b| b.1).filter(|&e| e > now)).collect();
        candidates.sort_unstable();
        candidates.dedup();
        'outer: for t in candidates {
            let end = t.saturating_add(duration);
            let checkpoints = core::iter::once(t).chain(self.busy.iter().map(|b| b.0).filter(|&s| s > t && s < end));
            for c in checkpoints {
                let (uc, ug) = self.usage_at(c);
                if uc + cores as u64 > cap.cores as u64 || ug + gpus as u64 > cap.gpus as u64 {
                    continue 'outer;
                }
            }
            return Some(t);
        }
        None
    }
}

/// One conservative-backfill pass.
///
/// Requests are visited in [`fair_share_order`]. Each receives the earliest
/// reservation (over the resources it may use, lowest index on ties) that
/// fits around current holds and the reservations of every request before
/// it, so a later request can only start now if doing so delays no earlier
/// one. Requests whose reservation begins at `now` start.
///
/// With `backfill` off the pass stops at the first request that cannot start
/// now; that request and everything behind it get no reservation.
/// Requests larger than every admissible resource get `None`.
pub fn plan(
    requests: &[Request],
    capacities: &[Capacity],
    holds: &[Hold],
    now: SimTime,
    backfill: bool,
) -> Vec<Option<Reservation>> {
    let mut profiles = alloc::vec![Profile::default(); capacities.len()];
    for h in holds {
        let release = if h.release > now { h.release } else { now + SimTime(1) };
        profiles[h.resource].busy.push((now, release, h.cores, h.gpus));
    }
    let mut out = alloc::vec![None; requests.len()];
    for i in fair_share_order(requests) {
        let r = &requests[i];
        let mut best: Option<Reservation> = None;
        for (res, cap) in capacities.iter().enumerate() {
            if r.pin.is_some_and(|p| p != res) {
                continue;
            }
            let from = now.max(r.not_before);
            if let Some(t) = profiles[res].earliest_fit(*cap, from, r.cores, r.gpus, r.duration) {
                if best.is_none_or(|b| t < b.start) {
                    best = Some(Reservation { resource: res, start: t });
                }
            }
        }
        let Some(b) = best else { continue };
        if !backfill && b.start != now && r.not_before <= now {
            break;
        }
        profiles[b.resource].busy.push((b.start, b.start.saturating_add(r.duration), r.cores, r.gpus));
        out[i] = Some(b);
    }
    out
}

/// Indices of requests that start at `now`, in fair-share order.
pub fn schedule_step(
    requests: &[Request],
    capacities: &[Capacity],
    holds: &[Hold],
    now: SimTime,
    backfill: bool,
) -> Vec<(usize, usize)> {
    let reservations = plan(requests, capacities, holds, now, backfill);
    fair_share_order(requests)
        .into_iter()
        .filter_map(|i| reservations[i].filter(|r| r.start == now).map(|r| (i, r.resource)))
        .collect()
}

pub fn preference_names(prefs: &[ModalityPreference]) -> Vec<&'static str> {
    prefs.iter().map(|p| p.as_str()).collect()
}
