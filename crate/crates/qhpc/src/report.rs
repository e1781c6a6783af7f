//! Rebuilds metrics from a trace alone and checks the trace for
//! conservation, exclusivity and causality violations.
//!
//! Nothing here calls into the simulator's metrics code: the numbers are
//! derived from the events and `#resource` / `#job` declarations, so
//! comparing them with the metrics file written by a run is a real check.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use qhpc_core::simcore::metrics::METRIC_KEYS;
use qhpc_core::simcore::trace::{parse_time, EventKind, Trace, TraceEvent};
use qhpc_core::SimTime;

/// Per-job line of the report.
#[derive(Debug, Clone, PartialEq)]
pub struct JobLine {
    pub job_id: String,
    pub status: String,
    pub submit: SimTime,
    pub start: Option<SimTime>,
    pub end: Option<SimTime>,
    pub mode: String,
    pub resource: String,
    pub qpu: String,
    pub fallback: String,
    pub shots: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    /// `(key, value)` in the same order and with the same keys as a metrics
    /// file.
    pub metrics: Vec<(&'static str, f64)>,
    pub jobs: Vec<JobLine>,
    pub violations: Vec<String>,
}

impl Report {
    pub fn metric(&self, key: &str) -> Option<f64> {
        self.metrics.iter().find(|(k, _)| *k == key).map(|(_, v)| *v)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<16} {:<11} {:>14} {:>14} {:>14} {:<15} {:<12} {:<12} {:<14} {:>10}",
            "job", "status", "submit_s", "start_s", "end_s", "mode", "resource", "qpu", "fallback", "shots"
        );
        let t = |x: Option<SimTime>| x.map_or("-".to_string(), |t| t.to_string());
        for j in &self.jobs {
            let _ = writeln!(
                out,
                "{:<16} {:<11} {:>14} {:>14} {:>14} {:<15} {:<12} {:<12} {:<14} {:>10}",
                j.job_id,
                j.status,
                j.submit.to_string(),
                t(j.start),
                t(j.end),
                j.mode,
                j.resource,
                j.qpu,
                j.fallback,
                j.shots
            );
        }
        out.push('\n');
        for (k, v) in &self.metrics {
            let _ = writeln!(out, "{k}: {v}");
        }
        if self.violations.is_empty() {
            out.push_str("\nno violations\n");
        } else {
            let _ = writeln!(out, "\n{} violation(s):", self.violations.len());
            for v in &self.violations {
                let _ = writeln!(out, "  {v}");
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("trace is missing data: {0}")]
pub struct IncompleteTrace(pub String);

struct Res {
    tier: String,
    cores: u64,
    gpus: u64,
    qpu: bool,
}

#[derive(Default)]
struct Job {
    submit: SimTime,
    submitted: bool,
    status: Option<String>,
    start: Option<SimTime>,
    end: Option<SimTime>,
    mode: String,
    resource: String,
    qpu: String,
    fallback: String,
    cores: u64,
    gpus: u64,
    shots: u64,
    held: Vec<(u64, u64)>,
    held_since: Option<u64>,
    busy: Vec<(u64, u64)>,
    /// Running classical tasks: id -> start.
    running: BTreeMap<String, u64>,
    /// Finished tasks: id -> end.
    done: BTreeMap<String, u64>,
    /// Running QPU tasks: id -> (device, start).
    phases: BTreeMap<String, (String, u64)>,
}

fn union_len(iv: &[(u64, u64)]) -> u64 {
    let mut v: Vec<(u64, u64)> = iv.iter().copied().filter(|(a, b)| b > a).collect();
    v.sort_unstable();
    let mut total = 0;
    let mut cur: Option<(u64, u64)> = None;
    for (a, b) in v {
        cur = match cur {
            Some((s, e)) if a <= e => Some((s, e.max(b))),
            Some((s, e)) => {
                total += e - s;
                Some((a, b))
            }
            None => Some((a, b)),
        };
    }
    total + cur.map_or(0, |(s, e)| e - s)
}

fn field<'a>(e: &'a TraceEvent, key: &str) -> Result<&'a str, IncompleteTrace> {
    e.get(key).ok_or_else(|| IncompleteTrace(format!("{} event at {} lacks `{key}`", e.kind.as_str(), e.time)))
}

fn num<T: std::str::FromStr>(text: &str, what: &str) -> Result<T, IncompleteTrace> {
    text.parse().map_err(|_| IncompleteTrace(format!("`{text}` is not a valid {what}")))
}

/// Recomputes metrics and checks invariants. Violations are collected,
/// not fatal; missing declarations or fields are.
pub fn analyze(trace: &Trace) -> Result<Report, IncompleteTrace> {
    let horizon = trace
        .param("horizon_s")
        .and_then(parse_time)
        .ok_or_else(|| IncompleteTrace("header lacks `horizon_s`".into()))?
        .as_nanos();
    let mut resources: BTreeMap<String, Res> = BTreeMap::new();
    let mut jobs: BTreeMap<String, Job> = BTreeMap::new();
    let mut order: Vec<String> = Vec::new();
    for d in &trace.declarations {
        let get = |k: &str| d.get(k).ok_or_else(|| IncompleteTrace(format!("#{} declaration lacks `{k}`", d.tag)));
        match d.tag.as_str() {
            "resource" => {
                let r = Res {
                    tier: get("tier")?.to_string(),
                    cores: num(get("cores")?, "core count")?,
                    gpus: num(get("gpus")?, "GPU count")?,
                    qpu: d.get("modality").is_some(),
                };
                resources.insert(get("id")?.to_string(), r);
            }
            "job" => {
                let id = get("id")?.to_string();
                let submit = parse_time(get("submit_s")?).ok_or_else(|| IncompleteTrace("bad submit_s".into()))?;
                order.push(id.clone());
                jobs.insert(id, Job { submit, ..Job::default() });
            }
            _ => {}
        }
    }

    let mut violations = Vec::new();
    let mut used: BTreeMap<String, (u64, u64)> = BTreeMap::new();
    let mut device_busy: BTreeMap<String, Vec<(u64, u64)>> = BTreeMap::new();
    let mut device_running: BTreeMap<String, (String, String)> = BTreeMap::new();
    let mut fallbacks = [0u64; 3];
    let mut last = 0;

    for (i, e) in trace.events.iter().enumerate() {
        let now = e.time.as_nanos();
        if now < last {
            violations.push(format!("event {i}: time goes backwards"));
        }
        last = now;
        if now > horizon {
            violations.push(format!("event {i}: after the horizon"));
        }
        let job_id = match e.kind {
            EventKind::SimStart
            | EventKind::SimEnd
            | EventKind::SchedPass
            | EventKind::CalibPoll
            | EventKind::Recalibration => {
                continue;
            }
            _ => field(e, "job")?,
        };
        let Some(job) = jobs.get_mut(job_id) else {
            violations.push(format!("event {i}: undeclared job `{job_id}`"));
            continue;
        };
        match e.kind {
            EventKind::JobSubmit => job.submitted = true,
            EventKind::Fallback => match field(e, "action")? {
                "gpu_emulation" => fallbacks[0] += 1,
                "queued" => fallbacks[1] += 1,
                "degraded_notice" => fallbacks[2] += 1,
                other => violations.push(format!("event {i}: unknown fallback action `{other}`")),
            },
            EventKind::JobStart => {
                if job.start.is_some() {
                    violations.push(format!("event {i}: job `{job_id}` started twice"));
                }
                job.start = Some(e.time);
                job.resource = field(e, "resource")?.to_string();
                job.cores = num(field(e, "cores")?, "core count")?;
                job.gpus = num(field(e, "gpus")?, "GPU count")?;
                job.mode = field(e, "mode")?.to_string();
                job.qpu = field(e, "qpu")?.to_string();
                job.fallback = field(e, "fallback")?.to_string();
                job.held_since = Some(now);
                acquire(&mut used, &resources, &job.resource, job.cores, job.gpus, i, &mut violations);
            }
            EventKind::CoresReleased => {
                match job.held_since.take() {
                    Some(s) => job.held.push((s, now)),
                    None => violations.push(format!("event {i}: `{job_id}` released cores it did not hold")),
                }
                if job.mode != "interleaved" {
                    violations.push(format!("event {i}: cores released outside interleaved mode"));
                }
                release(&mut used, &job.resource, job.cores, job.gpus);
            }
            EventKind::CoresReacquired => {
                if job.held_since.is_some() {
                    violations.push(format!("event {i}: `{job_id}` reacquired cores it already held"));
                }
                job.held_since = Some(now);
                acquire(&mut used, &resources, &job.resource, job.cores, job.gpus, i, &mut violations);
            }
            EventKind::TaskStart | EventKind::QpuPhaseStart => {
                let task = field(e, "task")?.to_string();
                let deps = field(e, "deps")?;
                if deps != "-" {
                    for d in deps.split(',') {
                        match job.done.get(d) {
                            Some(&end) if end <= now => {}
                            _ => violations.push(format!(
                                "event {i}: task `{task}` of `{job_id}` starts before dependency `{d}` ended"
                            )),
                        }
                    }
                }
                if job.start.is_none_or(|s| s.as_nanos() > now) {
                    violations.push(format!("event {i}: task `{task}` of `{job_id}` starts before its job"));
                }
                if e.kind == EventKind::QpuPhaseStart {
                    let device = field(e, "device")?.to_string();
                    if field(e, "token")? == "-" {
                        violations.push(format!("event {i}: QPU phase without a token"));
                    }
                    if let Some((j, t)) = device_running.get(&device) {
                        violations.push(format!("event {i}: `{device}` already runs `{t}` of `{j}`"));
                    }
                    device_running.insert(device.clone(), (job_id.to_string(), task.clone()));
                    job.phases.insert(task, (device, now));
                } else if field(e, "kind")? == "QPU" {
                    // A skipped QPU node of a degraded job.
                    job.running.insert(task, u64::MAX);
                } else {
                    if job.held_since.is_none() {
                        violations.push(format!("event {i}: classical task `{task}` runs without held cores"));
                    }
                    job.running.insert(task, now);
                }
            }
            EventKind::TaskEnd => {
                let task = field(e, "task")?.to_string();
                match job.running.remove(&task) {
                    Some(u64::MAX) => {}
                    Some(s) => job.busy.push((s, now)),
                    None => violations.push(format!("event {i}: task `{task}` of `{job_id}` ends without starting")),
                }
                job.done.insert(task, now);
            }
            EventKind::QpuPhaseEnd => {
                let task = field(e, "task")?.to_string();
                job.shots += num::<u64>(field(e, "shots")?, "shot count")?;
                match job.phases.remove(&task) {
                    Some((device, s)) => {
                        device_busy.entry(device.clone()).or_default().push((s, now));
                        device_running.remove(&device);
                    }
                    None => {
                        violations.push(format!("event {i}: QPU phase `{task}` of `{job_id}` ends without starting"))
                    }
                }
                job.done.insert(task, now);
            }
            EventKind::JobEnd => {
                job.status = Some(field(e, "status")?.to_string());
                job.end = Some(e.time);
                if let Some(s) = job.held_since.take() {
                    job.held.push((s, now));
                    release(&mut used, &job.resource, job.cores, job.gpus);
                }
                if !job.running.is_empty() || !job.phases.is_empty() {
                    violations.push(format!("event {i}: job `{job_id}` ends with tasks still running"));
                }
            }
            _ => {}
        }
    }

    // Close whatever is still open at the horizon.
    for job in jobs.values_mut() {
        if let Some(s) = job.held_since.take() {
            job.held.push((s, horizon));
        }
        for (_, s) in std::mem::take(&mut job.running) {
            if s != u64::MAX {
                job.busy.push((s, horizon));
            }
        }
        for (_, (device, s)) in std::mem::take(&mut job.phases) {
            device_busy.entry(device).or_default().push((s, horizon));
        }
    }

    let finished = |j: &Job| matches!(j.status.as_deref(), Some("completed" | "degraded"));
    let w0 = jobs.values().filter(|j| j.submitted).map(|j| j.submit.as_nanos()).min();
    let w1 = jobs.values().filter(|j| finished(j)).filter_map(|j| j.end.map(|e| e.as_nanos())).max();
    let window = match (w0, w1) {
        (Some(a), Some(b)) if b > a => Some((a, b)),
        _ => None,
    };
    let makespan = window.map_or(0.0, |(a, b)| (b - a) as f64 / 1e9);
    let mut utilization = [0.0; 4];
    if let Some((a, b)) = window {
        for (slot, tier) in ["R1", "R2", "R3", "R4"].iter().enumerate() {
            let cap: u128 = resources.values().filter(|r| r.tier == *tier).map(|r| r.cores as u128).sum();
            if cap == 0 {
                continue;
            }
            let mut total: u128 = 0;
            for j in jobs.values() {
                let on_tier = resources.get(&j.resource).is_some_and(|r| r.tier == *tier);
                if !on_tier {
                    continue;
                }
                let clipped: Vec<(u64, u64)> = j.held.iter().map(|&(s, e)| (s.max(a), e.min(b))).collect();
                total += union_len(&clipped) as u128 * j.cores as u128;
            }
            utilization[slot] = total as f64 / (cap * (b - a) as u128) as f64;
        }
    }
    let qpus: Vec<&String> = resources.iter().filter(|(_, r)| r.qpu).map(|(id, _)| id).collect();
    let qpu_idle = if qpus.is_empty() {
        0.0
    } else {
        let sum: f64 = qpus
            .iter()
            .map(|id| {
                let busy = device_busy.get(*id).map_or(0, |v| union_len(v)).min(horizon);
                (horizon - busy) as f64 / horizon as f64
            })
            .sum();
        sum / qpus.len() as f64
    };
    let waits: Vec<u64> =
        order.iter().filter_map(|id| jobs[id].start.map(|s| s.as_nanos() - jobs[id].submit.as_nanos())).collect();
    let mean_wait = if waits.is_empty() {
        0.0
    } else {
        waits.iter().map(|&w| w as u128).sum::<u128>() as f64 / waits.len() as f64 / 1e9
    };
    let mut idle: u128 = 0;
    for j in jobs.values() {
        idle += union_len(&j.held).saturating_sub(union_len(&j.busy)) as u128 * j.cores as u128;
    }
    let count = |s: &str| jobs.values().filter(|j| j.status.as_deref() == Some(s)).count() as u64;
    let completed = count("completed");
    let degraded = count("degraded");
    let values = [
        horizon as f64 / 1e9,
        makespan,
        utilization[0],
        utilization[1],
        utilization[2],
        utilization[3],
        qpu_idle,
        mean_wait,
        fallbacks[0] as f64,
        fallbacks[1] as f64,
        fallbacks[2] as f64,
        degraded as f64,
        completed as f64,
        (jobs.len() as u64 - completed - degraded) as f64,
        jobs.values().map(|j| j.shots).sum::<u64>() as f64,
        idle as f64 / 1e9,
    ];
    let metrics = METRIC_KEYS.iter().copied().zip(values).collect();

    let lines = order
        .iter()
        .map(|id| {
            let j = &jobs[id];
            let status = match (&j.status, j.submitted, j.start) {
                (Some(s), _, _) => s.clone(),
                (None, false, _) => "unsubmitted".into(),
                (None, true, Some(_)) => "running".into(),
                (None, true, None) if j.fallback_queued() => "queued".into(),
                (None, true, None) => "pending".into(),
            };
            JobLine {
                job_id: id.clone(),
                status,
                submit: j.submit,
                start: j.start,
                end: j.end,
                mode: dash(&j.mode),
                resource: dash(&j.resource),
                qpu: dash(&j.qpu),
                fallback: if j.fallback.is_empty() { "none".into() } else { j.fallback.clone() },
                shots: j.shots,
            }
        })
        .collect();
    Ok(Report { metrics, jobs: lines, violations })
}

impl Job {
    fn fallback_queued(&self) -> bool {
        self.fallback == "queued"
    }
}

fn dash(s: &str) -> String {
    if s.is_empty() {
        "-".into()
    } else {
        s.to_string()
    }
}

fn acquire(
    used: &mut BTreeMap<String, (u64, u64)>,
    resources: &BTreeMap<String, Res>,
    res: &str,
    cores: u64,
    gpus: u64,
    i: usize,
    violations: &mut Vec<String>,
) {
    let u = used.entry(res.to_string()).or_default();
    u.0 += cores;
    u.1 += gpus;
    match resources.get(res) {
        Some(r) if u.0 <= r.cores && u.1 <= r.gpus => {}
        Some(_) => violations.push(format!("event {i}: `{res}` over capacity ({} cores, {} gpus)", u.0, u.1)),
        None => violations.push(format!("event {i}: undeclared resource `{res}`")),
    }
}

fn release(used: &mut BTreeMap<String, (u64, u64)>, res: &str, cores: u64, gpus: u64) {
    let u = used.entry(res.to_string()).or_default();
    u.0 = u.0.saturating_sub(cores);
    u.1 = u.1.saturating_sub(gpus);
}

/// Keys whose values differ by more than `tol` (absolute), plus keys
/// missing from either side.
pub fn compare_metrics(recomputed: &[(&'static str, f64)], emitted: &[(String, f64)], tol: f64) -> Vec<String> {
    let mut out = Vec::new();
    let emitted: BTreeMap<&str, f64> = emitted.iter().map(|(k, v)| (k.as_str(), *v)).collect();
    let mut seen = BTreeSet::new();
    for (k, v) in recomputed {
        seen.insert(*k);
        match emitted.get(k) {
            Some(e) if (e - v).abs() <= tol => {}
            Some(e) => out.push(format!("{k}: trace gives {v}, metrics file says {e}")),
            None => out.push(format!("{k}: missing from metrics file")),
        }
    }
    for k in emitted.keys() {
        if !seen.contains(k) {
            out.push(format!("{k}: unknown key in metrics file"));
        }
    }
    out
}
