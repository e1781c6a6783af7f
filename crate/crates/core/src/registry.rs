//! Unified resource registry: the tiered inventory of classical nodes and
//! QPUs, and the drifting calibration state of every QPU.
//!
//! Tiers:
//!
//! * `R1`: CPU-only nodes.
//! * `R2`: CPU+GPU nodes.
//! * `R3`: nodes with a co-located QPU, reached over the intra-node link.
//! * `R4`: remote or cloud QPUs, reached over the WAN.
//!
//! Fidelity drifts as a Gaussian random walk clamped to `[floor, 1]`, reset
//! to the nominal value whenever a recalibration boundary (a multiple of the
//! recalibration period) is crossed.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write as _;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::device::{satisfiable, Connectivity, Modality};
use crate::fabric::LinkKind;
use crate::hwd::valid_job_id;
use crate::time::SimTime;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Tier {
    R1,
    R2,
    R3,
    R4,
}

impl Tier {
    pub const ALL: [Tier; 4] = [Tier::R1, Tier::R2, Tier::R3, Tier::R4];

    pub fn as_str(self) -> &'static str {
        match self {
            Tier::R1 => "R1",
            Tier::R2 => "R2",
            Tier::R3 => "R3",
            Tier::R4 => "R4",
        }
    }

    pub fn has_qpu(self) -> bool {
        matches!(self, Tier::R3 | Tier::R4)
    }
}

impl core::fmt::Display for Tier {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl core::str::FromStr for Tier {
    type Err = ();
    fn from_str(s: &str) -> Result<Self, ()> {
        Tier::ALL.into_iter().find(|t| t.as_str() == s).ok_or(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationProfile {
    pub two_qubit_fidelity: f64,
    pub coherence_time_us: f64,
    /// Time of the last poll.
    pub timestamp: SimTime,
    /// Fidelity right after a recalibration.
    pub nominal_fidelity: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpuProfile {
    pub modality: Modality,
    pub qubit_count: u32,
    pub connectivity: Connectivity,
    pub calibration: CalibrationProfile,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResourceRecord {
    pub resource_id: String,
    pub tier: Tier,
    pub cpu_cores: u32,
    pub gpu_count: u32,
    pub memory_gb: f64,
    pub qpu: Option<QpuProfile>,
    pub access_latency_class: LinkKind,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RegistryError {
    #[error("resource `{id}`: {reason}")]
    Invalid { id: String, reason: String },
    #[error("duplicate resource id `{0}`")]
    DuplicateId(String),
    #[error("resource `{0}` has no QPU")]
    NoQpu(String),
    #[error("poll at {now} precedes last calibration at {last}")]
    StaleClock { now: SimTime, last: SimTime },
    #[error("drift parameter `{0}` out of range")]
    BadDrift(&'static str),
}

impl ResourceRecord {
    pub fn validate(&self) -> Result<(), RegistryError> {
        let bad = |reason: &str| Err(RegistryError::Invalid { id: self.resource_id.clone(), reason: reason.into() });
        if !valid_job_id(&self.resource_id) {
            return bad("id may only contain ASCII letters, digits, `_`, `-` and `.`");
        }
        if !(self.memory_gb >= 0.0 && self.memory_gb.is_finite()) {
            return bad("memory_gb must be a non-negative number");
        }
        match self.tier {
            Tier::R1 if self.gpu_count != 0 => return bad("R1 nodes have no GPUs"),
            Tier::R1 | Tier::R2 if self.qpu.is_some() => return bad("classical tiers cannot carry a QPU"),
            Tier::R2 if self.gpu_count < 1 => return bad("R2 nodes need at least one GPU"),
            Tier::R3 | Tier::R4 if self.qpu.is_none() => return bad("QPU tiers need a qpu profile"),
            Tier::R3 if self.access_latency_class != LinkKind::IntraNode => {
                return bad("R3 QPUs are reached over the intra_node link")
            }
            Tier::R4 if self.access_latency_class != LinkKind::Wan => {
                return bad("R4 QPUs are reached over the wan link")
            }
            _ => {}
        }
        if let Some(q) = &self.qpu {
            let c = &q.calibration;
            if q.qubit_count < 1 {
                return bad("qpu qubit count must be at least 1");
            }
            if !(c.two_qubit_fidelity > 0.0 && c.two_qubit_fidelity <= 1.0) {
                return bad("two-qubit fidelity must lie in (0, 1]");
            }
            if !(c.nominal_fidelity > 0.0 && c.nominal_fidelity <= 1.0) {
                return bad("nominal fidelity must lie in (0, 1]");
            }
            if !(c.coherence_time_us > 0.0 && c.coherence_time_us.is_finite()) {
                return bad("coherence time must be positive");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriftParams {
    pub step_sigma: f64,
    pub recalibration_period_s: f64,
    pub poll_period_s: f64,
    pub floor: f64,
}

impl Default for DriftParams {
    fn default() -> Self {
        Self { step_sigma: 0.002, recalibration_period_s: 86_400.0, poll_period_s: 900.0, floor: 0.5 }
    }
}

impl DriftParams {
    pub fn validate(&self) -> Result<(), RegistryError> {
        if !(self.step_sigma >= 0.0 && self.step_sigma.is_finite()) {
            return Err(RegistryError::BadDrift("step_sigma"));
        }
        if !(self.recalibration_period_s > 0.0 && self.recalibration_period_s.is_finite()) {
            return Err(RegistryError::BadDrift("recalibration_period_s"));
        }
        if !(self.poll_period_s > 0.0 && self.poll_period_s.is_finite()) {
            return Err(RegistryError::BadDrift("poll_period_s"));
        }
        if !(self.floor > 0.0 && self.floor <= 1.0) {
            return Err(RegistryError::BadDrift("floor"));
        }
        Ok(())
    }

    pub fn poll_period(&self) -> SimTime {
        SimTime::duration_from_secs_f64(self.poll_period_s)
    }

    pub fn recalibration_period(&self) -> SimTime {
        SimTime::duration_from_secs_f64(self.recalibration_period_s)
    }
}

/// Per-device seed: FNV-1a over the scenario seed and the resource id, so
/// adding a device never perturbs the others' trajectories.
pub fn device_seed(seed: u64, resource_id: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in seed.to_le_bytes().iter().chain(resource_id.as_bytes()) {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// The seeded random walk driving one QPU's fidelity.
#[derive(Debug, Clone)]
pub struct DriftProcess {
    pub params: DriftParams,
    rng: ChaCha8Rng,
}

impl DriftProcess {
    pub fn new(rng_seed: u64, params: DriftParams) -> Result<Self, RegistryError> {
        params.validate()?;
        Ok(Self { params, rng: ChaCha8Rng::seed_from_u64(rng_seed) })
    }

    /// Advances `profile` to `now`: reset to nominal if a recalibration
    /// boundary lies in `(timestamp, now]`, then one Gaussian step clamped to
    /// `[floor, 1]`.
    pub fn poll(&mut self, profile: &CalibrationProfile, now: SimTime) -> Result<CalibrationProfile, RegistryError> {
        if now < profile.timestamp {
            return Err(RegistryError::StaleClock { now, last: profile.timestamp });
        }
        let period = self.params.recalibration_period().as_nanos();
        let mut f = profile.two_qubit_fidelity;
        if profile.timestamp.as_nanos() / period < now.as_nanos() / period {
            f = profile.nominal_fidelity;
        }
        let normal = Normal::new(0.0, self.params.step_sigma).map_err(|_| RegistryError::BadDrift("step_sigma"))?;
        let step: f64 = normal.sample(&mut self.rng);
        f = (f + step).clamp(self.params.floor, 1.0);
        Ok(CalibrationProfile { two_qubit_fidelity: f, timestamp: now, ..*profile })
    }
}

/// Clauses left `None` match everything. Any quantum clause excludes
/// records without a QPU.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct QueryPredicate {
    pub min_qubits: Option<u32>,
    pub connectivity: Option<Connectivity>,
    pub modalities: Option<Vec<Modality>>,
    pub tiers: Option<Vec<Tier>>,
}

impl QueryPredicate {
    pub fn matches(&self, r: &ResourceRecord) -> bool {
        if let Some(tiers) = &self.tiers {
            if !tiers.contains(&r.tier) {
                return false;
            }
        }
        let quantum = self.min_qubits.is_some() || self.connectivity.is_some() || self.modalities.is_some();
        if !quantum {
            return true;
        }
        let Some(q) = &r.qpu else { return false };
        self.min_qubits.is_none_or(|n| q.qubit_count >= n)
            && self.connectivity.is_none_or(|c| satisfiable(c, q.connectivity))
            && self.modalities.as_ref().is_none_or(|ms| ms.contains(&q.modality))
    }
}

#[derive(Debug, Clone)]
pub struct Registry {
    records: Vec<ResourceRecord>,
    drift: Vec<Option<DriftProcess>>,
}

impl Registry {
    /// Builds a registry ordered by resource id. Each QPU gets its own drift
    /// process seeded from `(seed, resource_id)`.
    pub fn new(mut records: Vec<ResourceRecord>, drift: DriftParams, seed: u64) -> Result<Self, RegistryError> {
        drift.validate()?;
        records.sort_by(|a, b| a.resource_id.cmp(&b.resource_id));
        for w in records.windows(2) {
            if w[0].resource_id == w[1].resource_id {
                return Err(RegistryError::DuplicateId(w[0].resource_id.clone()));
            }
        }
        let mut procs = Vec::with_capacity(records.len());
        for r in &records {
            r.validate()?;
            procs.push(match r.qpu {
                Some(_) => Some(DriftProcess::new(device_seed(seed, &r.resource_id), drift)?),
                None => None,
            });
        }
        Ok(Self { records, drift: procs })
    }

    pub fn empty() -> Self {
        Self { records: Vec::new(), drift: Vec::new() }
    }

    pub fn records(&self) -> &[ResourceRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.records.binary_search_by(|r| r.resource_id.as_str().cmp(id)).ok()
    }

    pub fn get(&self, idx: usize) -> &ResourceRecord {
        &self.records[idx]
    }

    /// Polls the QPU at `idx`, storing and returning the new profile.
    pub fn poll(&mut self, idx: usize, now: SimTime) -> Result<CalibrationProfile, RegistryError> {
        let record = &mut self.records[idx];
        let (Some(qpu), Some(proc)) = (record.qpu.as_mut(), self.drift[idx].as_mut()) else {
            return Err(RegistryError::NoQpu(record.resource_id.clone()));
        };
        let next = proc.poll(&qpu.calibration, now)?;
        qpu.calibration = next;
        record.validate()?;
        Ok(next)
    }

    pub fn query(&self, predicate: &QueryPredicate) -> Vec<&ResourceRecord> {
        self.records.iter().filter(|r| predicate.matches(r)).collect()
    }

    /// One line per resource, in id order.
    pub fn snapshot_text(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            let _ = write!(
                out,
                "resource {} tier={} cores={} gpus={} memory_gb={} link={}",
                r.resource_id, r.tier, r.cpu_cores, r.gpu_count, r.memory_gb, r.access_latency_class
            );
            if let Some(q) = &r.qpu {
                let c = &q.calibration;
                let _ =
                    write!(
                    out,
                    " modality={} qubits={} connectivity={} fidelity={} nominal={} coherence_us={} calibrated_at={}",
                    q.modality, q.qubit_count, q.connectivity, c.two_qubit_fidelity, c.nominal_fidelity,
                    c.coherence_time_us, c.timestamp
                );
            }
            out.push('\n');
        }
        out
    }
}

pub fn describe(r: &ResourceRecord) -> String {
    match &r.qpu {
        Some(q) => format!("{} ({}, {} qubits, {})", r.resource_id, q.modality, q.qubit_count, q.connectivity),
        None => format!("{} ({}, {} cores, {} gpus)", r.resource_id, r.tier, r.cpu_cores, r.gpu_count),
    }
}
