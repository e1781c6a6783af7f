//! Deterministic discrete-event simulation of a hybrid cluster.
//!
//! Time is an integer nanosecond count; events are processed in
//! `(time, seq)` order where `seq` is assigned at enqueue, so a scenario and
//! seed always produce the same trace, byte for byte.
//!
//! Mode semantics:
//!
//! * `simultaneous`: the job keeps its cores and an exclusive lease on its
//!   QPU from start to end.
//! * `interleaved`: the job keeps the QPU lease but hands its cores back
//!   whenever a QPU task starts while no classical task of the job runs. It
//!   asks for them again, at top priority and pinned to the same resource,
//!   `reacquire_overhead_s` after the QPU work ends.
//! * `async_streaming`: QPU tasks go through the device's shared FIFO with
//!   no lease; classical tasks run as soon as their dependencies are done.
//!
//! A lease gives priority on the device rather than blocking it: streamed
//! tasks of other jobs may use the device while the holder has no QPU task
//! ready. A job that needs a lease does not start while another job holds
//! its selected device.

mod engine;
pub mod metrics;
#[cfg(test)]
mod tests;
pub mod trace;

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::dctg::{DurationModel, TaskGraph, TaskKind, Template};
use crate::fabric::{FabricParams, LinkKind};
use crate::hwd::HybridWorkloadDescriptor;
use crate::midware::MidwareParams;
use crate::registry::{DriftParams, Registry, ResourceRecord};
use crate::scheduler::{CoMode, QssNorms, QssWeights, ScheduleDecision};
use crate::time::SimTime;

pub use metrics::{JobRow, JobStatus, MetricsReport};
pub use trace::{replay_check, EventKind, FormatError, Replay, Trace, TraceEvent};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyParams {
    pub weights: QssWeights,
    pub norms: QssNorms,
    /// Mean quantum-phase length below which `auto` prefers simultaneous
    /// over interleaved.
    pub interleave_threshold_s: f64,
    /// Delay between the end of an interleaved QPU phase and the scheduler
    /// pass that can hand the cores back.
    pub reacquire_overhead_s: f64,
    pub backfill: bool,
    /// Forces one mode on every job with QPU work.
    pub mode_override: Option<CoMode>,
}

impl Default for PolicyParams {
    fn default() -> Self {
        Self {
            weights: QssWeights::default(),
            norms: QssNorms::default(),
            interleave_threshold_s: 1.0,
            reacquire_overhead_s: 0.05,
            backfill: true,
            mode_override: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub seed: u64,
    pub horizon: SimTime,
    pub fabric: FabricParams,
    pub midware: MidwareParams,
    pub drift: DriftParams,
    pub policy: PolicyParams,
    /// Safety valve: abort after this many processed events.
    pub max_events: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            horizon: SimTime::from_secs(86_400),
            fabric: FabricParams::default(),
            midware: MidwareParams::default(),
            drift: DriftParams::default(),
            policy: PolicyParams::default(),
            max_events: 5_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JobSpec {
    pub descriptor: HybridWorkloadDescriptor,
    pub submit: SimTime,
    /// Template the graph was built from; `None` for graphs read from a file.
    pub template: Option<Template>,
    pub graph: TaskGraph,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub resources: Vec<ResourceRecord>,
    pub jobs: Vec<JobSpec>,
    pub config: SimConfig,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error("scenario error: {0}")]
    Scenario(String),
    #[error("invariant violated at t={time}: {what}")]
    Invariant { time: SimTime, what: String },
    #[error("event limit of {0} reached")]
    EventLimit(u64),
}

fn scenario_err(e: impl core::fmt::Display) -> SimError {
    SimError::Scenario(e.to_string())
}

impl Scenario {
    pub fn validate(&self) -> Result<Registry, SimError> {
        let c = &self.config;
        c.fabric.validate().map_err(scenario_err)?;
        c.midware.validate().map_err(scenario_err)?;
        c.policy.weights.validate().map_err(scenario_err)?;
        let p = &c.policy;
        if !(p.norms.max_wait_s > 0.0 && p.norms.max_wait_s.is_finite()) {
            return Err(SimError::Scenario("policy max_wait_s must be positive".into()));
        }
        if !(p.norms.max_latency_s > 0.0 && p.norms.max_latency_s.is_finite()) {
            return Err(SimError::Scenario("policy max_latency_s must be positive".into()));
        }
        if !(p.interleave_threshold_s >= 0.0 && p.interleave_threshold_s.is_finite()) {
            return Err(SimError::Scenario("policy interleave_threshold_s must be non-negative".into()));
        }
        if !(p.reacquire_overhead_s >= 0.0 && p.reacquire_overhead_s.is_finite()) {
            return Err(SimError::Scenario("policy reacquire_overhead_s must be non-negative".into()));
        }
        if c.horizon == SimTime::ZERO {
            return Err(SimError::Scenario("horizon must be positive".into()));
        }
        let registry = Registry::new(self.resources.clone(), c.drift, c.seed).map_err(scenario_err)?;
        let mut ids = BTreeSet::new();
        for job in &self.jobs {
            let d = &job.descriptor;
            if !ids.insert(d.job_id.as_str()) {
                return Err(SimError::Scenario(format!("duplicate job id `{}`", d.job_id)));
            }
            d.validate(&Default::default()).map_err(scenario_err)?;
            if job.graph.is_empty() {
                return Err(SimError::Scenario(format!("job `{}` has an empty task graph", d.job_id)));
            }
            for n in job.graph.nodes() {
                if n.kind == TaskKind::Qpu && d.quantum.is_none() {
                    return Err(SimError::Scenario(format!(
                        "job `{}`: QPU node `{}` but no quantum section",
                        d.job_id, n.id
                    )));
                }
                if n.demand.gpus > d.classical.gpu_count && n.kind == TaskKind::Gpu {
                    return Err(SimError::Scenario(format!(
                        "job `{}`: node `{}` needs more GPUs than the job requests",
                        d.job_id, n.id
                    )));
                }
                if let DurationModel::Circuit { .. } = n.duration {
                    if n.demand.qubits > d.quantum.as_ref().map_or(0, |q| q.qubit_count) {
                        return Err(SimError::Scenario(format!(
                            "job `{}`: node `{}` uses more qubits than the job requests",
                            d.job_id, n.id
                        )));
                    }
                }
            }
        }
        Ok(registry)
    }
}

/// What a run produces.
#[derive(Debug, Clone, PartialEq)]
pub struct SimOutput {
    pub trace: Trace,
    pub metrics: MetricsReport,
    pub decisions: Vec<ScheduleDecision>,
}

pub fn run(scenario: &Scenario) -> Result<SimOutput, SimError> {
    let registry = scenario.validate()?;
    engine::Engine::new(scenario, registry).run()
}

/// Header constants recorded in every trace.
pub fn header_params(cfg: &SimConfig) -> Vec<(String, String)> {
    let mut p: Vec<(String, String)> = Vec::new();
    let mut put = |k: &str, v: String| p.push((k.to_string(), v));
    put("seed", format!("{}", cfg.seed));
    put("horizon_s", format!("{}", cfg.horizon));
    for kind in LinkKind::ALL {
        let l = cfg.fabric.link(kind);
        put(&format!("fabric.{kind}.rtt_s"), format!("{}", l.rtt_s));
        put(&format!("fabric.{kind}.bandwidth_bytes_per_s"), format!("{}", l.bandwidth_bytes_per_s));
    }
    for m in crate::device::Modality::ALL {
        put(&format!("fabric.gate_time_s.{m}"), format!("{}", cfg.fabric.gate_time_s.get(m)));
        put(&format!("fabric.per_shot_overhead_s.{m}"), format!("{}", cfg.fabric.per_shot_overhead_s.get(m)));
    }
    let m = &cfg.midware;
    put("midware.opt_factor", format!("{}", m.opt_factor));
    put("midware.routing_overhead", format!("{}", m.routing_overhead));
    put("midware.compile_base_s", format!("{}", m.compile_base_s));
    put("midware.compile_per_layer_s", format!("{}", m.compile_per_layer_s));
    put("midware.no_mitigation_fidelity", format!("{}", m.no_mitigation_fidelity));
    put("midware.zne_fidelity", format!("{}", m.zne_fidelity));
    put("midware.low_fidelity_scheme", m.low_fidelity_scheme.as_str().to_string());
    put("midware.zne_multiplier", format!("{}", m.zne_multiplier));
    put("midware.pec_multiplier", format!("{}", m.pec_multiplier));
    put("midware.cdr_multiplier", format!("{}", m.cdr_multiplier));
    put("midware.flops_per_amplitude_layer", format!("{}", m.flops_per_amplitude_layer));
    put("midware.gpu_flops", format!("{}", m.gpu_flops));
    put("midware.emulation_shot_s", format!("{}", m.emulation_shot_s));
    put("midware.emulation_qubit_cap", format!("{}", m.emulation_qubit_cap));
    let d = &cfg.drift;
    put("drift.step_sigma", format!("{}", d.step_sigma));
    put("drift.recalibration_period_s", format!("{}", d.recalibration_period_s));
    put("drift.poll_period_s", format!("{}", d.poll_period_s));
    put("drift.floor", format!("{}", d.floor));
    let pol = &cfg.policy;
    let w = &pol.weights;
    put("policy.weights", format!("{},{},{},{}", w.fidelity, w.connectivity, w.queue, w.latency));
    put("policy.max_wait_s", format!("{}", pol.norms.max_wait_s));
    put("policy.max_latency_s", format!("{}", pol.norms.max_latency_s));
    put("policy.interleave_threshold_s", format!("{}", pol.interleave_threshold_s));
    put("policy.reacquire_overhead_s", format!("{}", pol.reacquire_overhead_s));
    put("policy.backfill", format!("{}", pol.backfill));
    put("policy.mode", pol.mode_override.map_or("auto", |m| m.as_str()).to_string());
    p
}
