//! Aggregate run statistics.
//!
//! Definitions:
//!
//! * `makespan_s`: latest end of a finished (completed or degraded) job minus
//!   the earliest submission; 0 when no job finished.
//! * `utilization_rN`: core-seconds allocated on tier `N` resources inside
//!   the makespan window, over the tier's cores times the window length.
//! * `qpu_idle_fraction`: per QPU, `(horizon - busy) / horizon`, averaged
//!   over QPUs (0 without QPUs).
//! * `mean_job_wait_s`: mean of start minus submit over started jobs.
//! * `cpu_idle_core_seconds`: core-seconds a job held while none of its
//!   classical tasks ran, summed over jobs.
//! * `total_shots_executed`: shots of completed QPU phases (emulated shots
//!   are not counted).

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::Write as _;

use crate::registry::Tier;
use crate::scheduler::{CoMode, FallbackTaken};
use crate::time::SimTime;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum JobStatus {
    /// Submitted, not started.
    Pending,
    /// Waiting for a QPU that no device can provide.
    Queued,
    /// Started but unfinished at the horizon.
    Running,
    Completed,
    Degraded,
    /// Submission time lies beyond the horizon.
    Unsubmitted,
}

impl JobStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            JobStatus::Pending => "pending",
            JobStatus::Queued => "queued",
            JobStatus::Running => "running",
            JobStatus::Completed => "completed",
            JobStatus::Degraded => "degraded",
            JobStatus::Unsubmitted => "unsubmitted",
        }
    }

    pub fn finished(self) -> bool {
        matches!(self, JobStatus::Completed | JobStatus::Degraded)
    }
}

impl core::str::FromStr for JobStatus {
    type Err = ();
    fn from_str(s: &str) -> Result<Self, ()> {
        [
            JobStatus::Pending,
            JobStatus::Queued,
            JobStatus::Running,
            JobStatus::Completed,
            JobStatus::Degraded,
            JobStatus::Unsubmitted,
        ]
        .into_iter()
        .find(|j| j.as_str() == s)
        .ok_or(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JobRow {
    pub job_id: String,
    pub status: JobStatus,
    pub submit: SimTime,
    pub start: Option<SimTime>,
    pub end: Option<SimTime>,
    pub mode: Option<CoMode>,
    pub resource: Option<String>,
    pub qpu: Option<String>,
    pub fallback: FallbackTaken,
    pub shots_executed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub horizon_s: f64,
    pub makespan_s: f64,
    /// Indexed by tier: R1, R2, R3, R4.
    pub utilization: [f64; 4],
    pub qpu_idle_fraction: f64,
    pub mean_job_wait_s: f64,
    pub fallback_gpu_emulation: u64,
    pub fallback_queued: u64,
    pub fallback_degraded_notice: u64,
    pub degraded_job_count: u64,
    pub completed_job_count: u64,
    pub pending_job_count: u64,
    pub total_shots_executed: u64,
    pub cpu_idle_core_seconds: f64,
    pub jobs: Vec<JobRow>,
}

/// Numeric fields in document order.
pub const METRIC_KEYS: [&str; 16] = [
    "horizon_s",
    "makespan_s",
    "utilization_r1",
    "utilization_r2",
    "utilization_r3",
    "utilization_r4",
    "qpu_idle_fraction",
    "mean_job_wait_s",
    "fallback_gpu_emulation",
    "fallback_queued",
    "fallback_degraded_notice",
    "degraded_job_count",
    "completed_job_count",
    "pending_job_count",
    "total_shots_executed",
    "cpu_idle_core_seconds",
];

impl MetricsReport {
    pub fn utilization_of(&self, tier: Tier) -> f64 {
        self.utilization[tier as usize]
    }

    /// `(key, value)` pairs in [`METRIC_KEYS`] order.
    pub fn values(&self) -> [(&'static str, f64); 16] {
        let v = [
            self.horizon_s,
            self.makespan_s,
            self.utilization[0],
            self.utilization[1],
            self.utilization[2],
            self.utilization[3],
            self.qpu_idle_fraction,
            self.mean_job_wait_s,
            self.fallback_gpu_emulation as f64,
            self.fallback_queued as f64,
            self.fallback_degraded_notice as f64,
            self.degraded_job_count as f64,
            self.completed_job_count as f64,
            self.pending_job_count as f64,
            self.total_shots_executed as f64,
            self.cpu_idle_core_seconds,
        ];
        core::array::from_fn(|i| (METRIC_KEYS[i], v[i]))
    }

    /// `key: value` document, one metric per line.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.values() {
            let _ = writeln!(out, "{k}: {v}");
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("job_id,status,submit_s,start_s,end_s,wait_s,mode,resource,qpu,fallback,shots_executed\n");
        let t = |x: Option<SimTime>| x.map_or(String::new(), |t| t.to_string());
        for j in &self.jobs {
            let wait = j.start.map_or(String::new(), |s| (s.saturating_sub(j.submit)).to_string());
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{}",
                j.job_id,
                j.status.as_str(),
                j.submit,
                t(j.start),
                t(j.end),
                wait,
                j.mode.map_or("", |m| m.as_str()),
                j.resource.as_deref().unwrap_or(""),
                j.qpu.as_deref().unwrap_or(""),
                j.fallback.as_str(),
                j.shots_executed
            );
        }
        out
    }
}

/// Reads the numeric part of a metrics document written by
/// [`MetricsReport::to_text`].
pub fn parse_metrics_text(text: &str) -> Result<Vec<(String, f64)>, String> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (k, v) = line.split_once(": ").ok_or_else(|| format!("line {}: expected `key: value`", i + 1))?;
        let v: f64 = v.trim().parse().map_err(|_| format!("line {}: `{v}` is not a number", i + 1))?;
        out.push((k.to_string(), v));
    }
    Ok(out)
}

/// Total length of the union of half-open intervals.
pub fn union_len(intervals: &[(SimTime, SimTime)]) -> u64 {
    let mut v: Vec<(u64, u64)> = intervals.iter().filter(|(a, b)| b > a).map(|(a, b)| (a.0, b.0)).collect();
    v.sort_unstable();
    let mut total = 0;
    let mut cur: Option<(u64, u64)> = None;
    for (a, b) in v {
        match cur {
            Some((s, e)) if a <= e => cur = Some((s, e.max(b))),
            Some((s, e)) => {
                total += e - s;
                cur = Some((a, b));
            }
            None => cur = Some((a, b)),
        }
    }
    if let Some((s, e)) = cur {
        total += e - s;
    }
    total
}

/// Per-job facts gathered by the engine.
#[derive(Debug, Clone)]
pub(crate) struct JobFacts {
    pub row: JobRow,
    pub submitted: bool,
    pub cores: u32,
    pub tier: Option<Tier>,
    /// Intervals during which the job held its cores (closed at the horizon).
    pub held: Vec<(SimTime, SimTime)>,
    /// Intervals during which one of its classical tasks ran.
    pub busy: Vec<(SimTime, SimTime)>,
}

pub(crate) struct Inputs<'a> {
    pub horizon: SimTime,
    /// `(tier, cores)` per resource.
    pub resources: &'a [(Tier, u32)],
    pub jobs: Vec<JobFacts>,
    /// Busy nanoseconds per QPU (clipped to the horizon).
    pub qpu_busy: Vec<u64>,
    pub fallbacks: [u64; 3],
}

pub(crate) fn compute(inp: Inputs<'_>) -> MetricsReport {
    let h = inp.horizon.as_nanos();
    let w0 = inp.jobs.iter().filter(|j| j.submitted).map(|j| j.row.submit.0).min();
    let w1 = inp.jobs.iter().filter(|j| j.row.status.finished()).filter_map(|j| j.row.end.map(|e| e.0)).max();
    let window = match (w0, w1) {
        (Some(a), Some(b)) if b > a => Some((a, b)),
        _ => None,
    };
    let makespan_s = window.map_or(0.0, |(a, b)| (b - a) as f64 / 1e9);

    let mut utilization = [0.0; 4];
    if let Some((a, b)) = window {
        for tier in Tier::ALL {
            let cap: u128 = inp.resources.iter().filter(|r| r.0 == tier).map(|r| r.1 as u128).sum();
            if cap == 0 {
                continue;
            }
            let mut used: u128 = 0;
            for j in inp.jobs.iter().filter(|j| j.tier == Some(tier)) {
                let clipped: Vec<(SimTime, SimTime)> =
                    j.held.iter().map(|&(s, e)| (SimTime(s.0.max(a)), SimTime(e.0.min(b)))).collect();
                used += union_len(&clipped) as u128 * j.cores as u128;
            }
            utilization[tier as usize] = used as f64 / (cap * (b - a) as u128) as f64;
        }
    }

    let qpu_idle_fraction = if inp.qpu_busy.is_empty() {
        0.0
    } else {
        let sum: f64 = inp.qpu_busy.iter().map(|&b| (h - b.min(h)) as f64 / h as f64).sum();
        sum / inp.qpu_busy.len() as f64
    };

    let waits: Vec<u64> = inp.jobs.iter().filter_map(|j| j.row.start.map(|s| s.0 - j.row.submit.0)).collect();
    let mean_job_wait_s = if waits.is_empty() {
        0.0
    } else {
        waits.iter().map(|&w| w as u128).sum::<u128>() as f64 / waits.len() as f64 / 1e9
    };

    let mut idle: u128 = 0;
    for j in &inp.jobs {
        let held = union_len(&j.held);
        let busy = union_len(&j.busy);
        idle += (held.saturating_sub(busy)) as u128 * j.cores as u128;
    }

    let count = |s: JobStatus| inp.jobs.iter().filter(|j| j.row.status == s).count() as u64;
    let completed = count(JobStatus::Completed);
    let degraded = count(JobStatus::Degraded);
    MetricsReport {
        horizon_s: inp.horizon.as_secs_f64(),
        makespan_s,
        utilization,
        qpu_idle_fraction,
        mean_job_wait_s,
        fallback_gpu_emulation: inp.fallbacks[0],
        fallback_queued: inp.fallbacks[1],
        fallback_degraded_notice: inp.fallbacks[2],
        degraded_job_count: degraded,
        completed_job_count: completed,
        pending_job_count: inp.jobs.len() as u64 - completed - degraded,
        total_shots_executed: inp.jobs.iter().map(|j| j.row.shots_executed).sum(),
        cpu_idle_core_seconds: idle as f64 / 1e9,
        jobs: inp.jobs.into_iter().map(|j| j.row).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn union_of_intervals() {
        let s = SimTime::from_secs;
        assert_eq!(union_len(&[]), 0);
        assert_eq!(union_len(&[(s(0), s(2)), (s(1), s(3)), (s(5), s(6))]), 4_000_000_000);
        assert_eq!(union_len(&[(s(3), s(3))]), 0);
    }

    #[test]
    fn text_round_trip() {
        let m = MetricsReport {
            horizon_s: 10.0,
            makespan_s: 1.5,
            utilization: [1.0, 0.0, 0.25, 0.0],
            qpu_idle_fraction: 0.75,
            mean_job_wait_s: 0.1,
            fallback_gpu_emulation: 1,
            fallback_queued: 0,
            fallback_degraded_notice: 2,
            degraded_job_count: 2,
            completed_job_count: 3,
            pending_job_count: 0,
            total_shots_executed: 1000,
            cpu_idle_core_seconds: 12.5,
            jobs: Vec::new(),
        };
        let parsed = parse_metrics_text(&m.to_text()).unwrap();
        assert_eq!(parsed.len(), 16);
        for ((k, v), (k2, v2)) in parsed.iter().zip(m.values()) {
            assert_eq!(k, k2);
            assert_eq!(*v, v2);
        }
    }
}
