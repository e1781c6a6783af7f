//! The event loop.

use alloc::collections::{BTreeMap, BTreeSet, VecDeque};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use super::metrics::{self, JobFacts, JobRow, JobStatus};
use super::trace::{EventKind, HeaderLine, Trace, TraceEvent, FORMAT_VERSION};
use super::{header_params, Scenario, SimError, SimOutput};
use crate::dctg::{classify_paths, unroll, DurationModel, TaskGraph, TaskKind, TaskNode};
use crate::fabric::{transfer_time, LinkClass};
use crate::hwd::QuantumDescriptor;
use crate::midware::{compile_estimate, emulation_cost};
use crate::registry::Registry;
use crate::scheduler::{
    choose_fallback, choose_mode, qpu_feasible, schedule_step, select_qpu, Capacity, ClassicalAllocation, CoMode,
    FallbackTaken, Hold, QpuToken, Request, ScheduleDecision,
};
use crate::time::SimTime;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Ev {
    Submit(usize),
    Pass,
    TaskEnd(usize, usize),
    Wake(usize),
    Poll(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum TaskState {
    Waiting,
    Queued,
    Running,
    Done,
}

#[derive(Debug, Clone)]
struct TaskRt {
    preds: Vec<usize>,
    succs: Vec<(usize, u64)>,
    preds_left: usize,
    ready_at: SimTime,
    state: TaskState,
    duration_s: f64,
    duration: SimTime,
    shots: u64,
    depth: u32,
    start: SimTime,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Reacquire {
    None,
    /// Cores handed back; the claim shapes reservations from `not_before`.
    Claim(SimTime),
    /// QPU work done; the request is live from `not_before`.
    Requested(SimTime),
}

#[derive(Debug, Clone)]
struct Exec {
    mode: CoMode,
    resource: usize,
    holding: bool,
    start: SimTime,
    device: Option<usize>,
    token: Option<QpuToken>,
    link: Option<LinkClass>,
    shot_multiplier: f64,
    tasks: Vec<TaskRt>,
    order: Vec<usize>,
    remaining: usize,
    running_classical: usize,
    qpu_active: usize,
    reacquire: Reacquire,
    wakes: BTreeSet<SimTime>,
    held: Vec<(SimTime, SimTime)>,
    held_since: Option<SimTime>,
    busy: Vec<(SimTime, SimTime)>,
    shots_done: u64,
    end: Option<SimTime>,
}

#[derive(Debug, Clone)]
struct JobRt {
    id: String,
    priority: u32,
    submit: SimTime,
    cores: u32,
    gpus: u32,
    walltime: SimTime,
    quantum: Option<QuantumDescriptor>,
    original: TaskGraph,
    graph: TaskGraph,
    status: JobStatus,
    fallback: FallbackTaken,
    degraded: bool,
    exec: Option<Exec>,
}

impl JobRt {
    fn has_qpu_work(&self) -> bool {
        !self.degraded && self.graph.nodes().iter().any(|n| n.kind == TaskKind::Qpu)
    }

    fn est_release(&self) -> SimTime {
        let e = self.exec.as_ref().expect("running job");
        e.start.saturating_add(self.walltime)
    }
}

#[derive(Debug, Clone, Default)]
struct Device {
    holder: Option<usize>,
    running: Option<(usize, usize, SimTime)>,
    holder_queue: VecDeque<(usize, usize)>,
    fifo: VecDeque<(usize, usize)>,
    busy: Vec<(SimTime, SimTime)>,
}

pub(crate) struct Engine<'a> {
    sc: &'a Scenario,
    registry: Registry,
    caps: Vec<Capacity>,
    used: Vec<(u32, u32)>,
    devices: Vec<Option<Device>>,
    jobs: Vec<JobRt>,
    queue: BTreeMap<(SimTime, u64), Ev>,
    seq: u64,
    now: SimTime,
    events: Vec<TraceEvent>,
    pass_times: BTreeSet<SimTime>,
    decisions: Vec<ScheduleDecision>,
    fallbacks: [u64; 3],
}

type Fields = Vec<(String, String)>;

fn f(k: &str, v: impl ToString) -> (String, String) {
    (k.to_string(), v.to_string())
}

impl<'a> Engine<'a> {
    pub(crate) fn new(sc: &'a Scenario, registry: Registry) -> Self {
        let caps = registry.records().iter().map(|r| Capacity { cores: r.cpu_cores, gpus: r.gpu_count }).collect();
        let devices = registry.records().iter().map(|r| r.qpu.map(|_| Device::default())).collect();
        let jobs = sc
            .jobs
            .iter()
            .map(|j| {
                let d = &j.descriptor;
                JobRt {
                    id: d.job_id.clone(),
                    priority: d.priority,
                    submit: j.submit,
                    cores: d.classical.cpu_cores,
                    gpus: d.classical.gpu_count,
                    walltime: SimTime::duration_from_secs_f64(d.classical.walltime_s),
                    quantum: d.quantum.clone(),
                    original: j.graph.clone(),
                    graph: unroll(&j.graph),
                    status: JobStatus::Unsubmitted,
                    fallback: FallbackTaken::None,
                    degraded: false,
                    exec: None,
                }
            })
            .collect();
        Self {
            sc,
            used: vec![(0, 0); registry.len()],
            caps,
            devices,
            registry,
            jobs,
            queue: BTreeMap::new(),
            seq: 0,
            now: SimTime::ZERO,
            events: Vec::new(),
            pass_times: BTreeSet::new(),
            decisions: Vec::new(),
            fallbacks: [0; 3],
        }
    }

    fn horizon(&self) -> SimTime {
        self.sc.config.horizon
    }

    fn push(&mut self, t: SimTime, ev: Ev) {
        self.queue.insert((t, self.seq), ev);
        self.seq += 1;
    }

    fn emit(&mut self, kind: EventKind, fields: Fields) {
        self.events.push(TraceEvent { time: self.now, kind, fields });
    }

    fn violated(&self, what: impl Into<String>) -> SimError {
        SimError::Invariant { time: self.now, what: what.into() }
    }

    fn request_pass(&mut self, t: SimTime) {
        if t <= self.horizon() && self.pass_times.insert(t) {
            self.push(t, Ev::Pass);
        }
    }

    pub(crate) fn run(mut self) -> Result<SimOutput, SimError> {
        let cfg = &self.sc.config;
        self.emit(EventKind::SimStart, vec![f("jobs", self.jobs.len()), f("resources", self.registry.len())]);
        for j in 0..self.jobs.len() {
            if self.jobs[j].submit <= cfg.horizon {
                let t = self.jobs[j].submit;
                self.push(t, Ev::Submit(j));
            }
        }
        let period = cfg.drift.poll_period();
        for d in 0..self.devices.len() {
            if self.devices[d].is_some() && period <= cfg.horizon {
                self.push(period, Ev::Poll(d));
            }
        }
        let mut processed: u64 = 0;
        while let Some((&(t, _), _)) = self.queue.first_key_value() {
            if t > cfg.horizon {
                break;
            }
            let ((t, _), ev) = self.queue.pop_first().expect("queue is non-empty");
            processed += 1;
            if processed > cfg.max_events {
                return Err(SimError::EventLimit(cfg.max_events));
            }
            if t < self.now {
                return Err(self.violated("event scheduled in the past"));
            }
            self.now = t;
            self.check_staleness()?;
            match ev {
                Ev::Submit(j) => self.on_submit(j)?,
                Ev::Pass => self.on_pass()?,
                Ev::TaskEnd(j, t) => self.on_task_end(j, t)?,
                Ev::Wake(j) => {
                    if let Some(e) = self.jobs[j].exec.as_mut() {
                        e.wakes.remove(&t);
                    }
                    self.dispatch(j)?;
                }
                Ev::Poll(d) => self.on_poll(d)?,
            }
        }
        self.now = cfg.horizon;
        self.emit(EventKind::SimEnd, Vec::new());
        Ok(self.finish())
    }

    fn check_staleness(&self) -> Result<(), SimError> {
        let period = self.sc.config.drift.poll_period();
        for r in self.registry.records() {
            if let Some(q) = &r.qpu {
                if self.now.saturating_sub(q.calibration.timestamp) > period {
                    return Err(self.violated(format!("calibration of `{}` is stale", r.resource_id)));
                }
            }
        }
        Ok(())
    }

    fn on_poll(&mut self, d: usize) -> Result<(), SimError> {
        let drift = self.sc.config.drift;
        let last = self.registry.get(d).qpu.expect("device has a QPU").calibration;
        let recal = drift.recalibration_period().as_nanos();
        let crossed = last.timestamp.as_nanos() / recal < self.now.as_nanos() / recal;
        let profile = self.registry.poll(d, self.now).map_err(|e| self.violated(e.to_string()))?;
        let id = self.registry.get(d).resource_id.clone();
        if crossed {
            self.emit(EventKind::Recalibration, vec![f("resource", &id), f("fidelity", profile.nominal_fidelity)]);
        }
        self.emit(EventKind::CalibPoll, vec![f("resource", &id), f("fidelity", profile.two_qubit_fidelity)]);
        let next = self.now.saturating_add(drift.poll_period());
        if next <= self.horizon() {
            self.push(next, Ev::Poll(d));
        }
        Ok(())
    }

    fn on_submit(&mut self, j: usize) -> Result<(), SimError> {
        self.jobs[j].status = JobStatus::Pending;
        let id = self.jobs[j].id.clone();
        self.emit(EventKind::JobSubmit, vec![f("job", &id)]);
        let needs_qpu = self.jobs[j].has_qpu_work();
        if let (true, Some(q)) = (needs_qpu, self.jobs[j].quantum.clone()) {
            if !qpu_feasible(&self.registry, &q) {
                let action = choose_fallback(&q, &self.registry, &self.sc.config.midware);
                self.emit(
                    EventKind::Fallback,
                    vec![f("job", &id), f("action", action.as_str()), f("policy", q.fallback_policy.as_str())],
                );
                let job = &mut self.jobs[j];
                job.fallback = action;
                match action {
                    FallbackTaken::GpuEmulation => {
                        self.fallbacks[0] += 1;
                        job.graph = emulated(&job.graph, &self.sc.config.midware)
                            .map_err(|e| SimError::Invariant { time: self.now, what: e })?;
                        job.gpus = job.gpus.max(1);
                    }
                    FallbackTaken::Queued => {
                        self.fallbacks[1] += 1;
                        job.status = JobStatus::Queued;
                    }
                    FallbackTaken::DegradedNotice => {
                        self.fallbacks[2] += 1;
                        job.degraded = true;
                    }
                    FallbackTaken::None => {}
                }
            }
        }
        self.request_pass(self.now);
        Ok(())
    }

    fn queue_wait(&self, d: usize) -> f64 {
        let Some(dev) = &self.devices[d] else {
            return 0.0;
        };
        let mut w = SimTime::ZERO;
        if let Some((_, _, end)) = dev.running {
            w = w + end.saturating_sub(self.now);
        }
        for &(j, t) in dev.holder_queue.iter().chain(dev.fifo.iter()) {
            w = w.saturating_add(self.jobs[j].exec.as_ref().expect("running job").tasks[t].duration);
        }
        if let Some(h) = dev.holder {
            w = w.saturating_add(self.jobs[h].est_release().saturating_sub(self.now));
        }
        w.as_secs_f64()
    }

    fn on_pass(&mut self) -> Result<(), SimError> {
        self.pass_times.remove(&self.now);
        let now = self.now;
        let mut requests = Vec::new();
        // (job, is_reacquire)
        let mut owners = Vec::new();
        let mut holds = Vec::new();
        let mut pending = 0;
        let mut live_reacquire = 0;
        for (j, job) in self.jobs.iter().enumerate() {
            match (&job.status, &job.exec) {
                (JobStatus::Pending, _) => {
                    pending += 1;
                    requests.push(Request {
                        urgent: false,
                        priority: job.priority,
                        submit: job.submit,
                        seq: j,
                        cores: job.cores,
                        gpus: job.gpus,
                        duration: job.walltime,
                        pin: None,
                        not_before: job.submit,
                    });
                    owners.push((j, false));
                }
                (JobStatus::Running, Some(e)) => {
                    let release = job.est_release();
                    if e.holding {
                        holds.push(Hold { resource: e.resource, cores: job.cores, gpus: job.gpus, release });
                    }
                    let nb = match e.reacquire {
                        Reacquire::None => continue,
                        Reacquire::Claim(t) => t,
                        Reacquire::Requested(t) => {
                            if t <= now {
                                live_reacquire += 1;
                            }
                            t
                        }
                    };
                    let from = nb.max(now);
                    let duration = if release > from { release - from } else { SimTime(1) };
                    requests.push(Request {
                        urgent: true,
                        priority: job.priority,
                        submit: job.submit,
                        seq: j,
                        cores: job.cores,
                        gpus: job.gpus,
                        duration,
                        pin: Some(e.resource),
                        not_before: nb,
                    });
                    owners.push((j, true));
                }
                _ => {}
            }
        }
        self.emit(EventKind::SchedPass, vec![f("pending", pending), f("reacquire", live_reacquire)]);
        let starts = schedule_step(&requests, &self.caps, &holds, now, self.sc.config.policy.backfill);
        for (ri, res) in starts {
            let (j, reacquire) = owners[ri];
            if reacquire {
                let live = matches!(self.jobs[j].exec.as_ref().map(|e| e.reacquire), Some(Reacquire::Requested(t)) if t <= now);
                if live {
                    self.grant_reacquire(j)?;
                }
            } else {
                self.try_start(j, res)?;
            }
        }
        Ok(())
    }

    fn allocate(&mut self, res: usize, cores: u32, gpus: u32) -> Result<(), SimError> {
        let (c, g) = self.used[res];
        let (c, g) = (c + cores, g + gpus);
        let cap = self.caps[res];
        if c > cap.cores || g > cap.gpus {
            let id = self.registry.get(res).resource_id.clone();
            return Err(self.violated(format!(
                "allocation on `{id}` exceeds capacity ({c}/{} cores, {g}/{} gpus)",
                cap.cores, cap.gpus
            )));
        }
        self.used[res] = (c, g);
        Ok(())
    }

    fn release(&mut self, res: usize, cores: u32, gpus: u32) {
        let (c, g) = self.used[res];
        self.used[res] = (c - cores, g - gpus);
    }

    fn try_start(&mut self, j: usize, res: usize) -> Result<(), SimError> {
        let now = self.now;
        let cfg = &self.sc.config;
        let job = &self.jobs[j];
        let mut mode = CoMode::Simultaneous;
        let mut device = None;
        let mut token = None;
        let mut qss_total = None;
        let mut compile_s = 0.0;
        let mut multiplier = 1.0;
        let mut per_node: Vec<(f64, u64, u32)> = Vec::new();
        let nodes: Vec<TaskNode> = job.graph.nodes().to_vec();
        if job.has_qpu_work() {
            let q = job.quantum.clone().expect("QPU work implies a quantum section");
            let (d, score) = select_qpu(&self.registry, &q, &cfg.policy.weights, &cfg.policy.norms, &cfg.fabric, |d| {
                self.queue_wait(d)
            })
            .map_err(|_| self.violated(format!("job `{}` lost its feasible QPU", job.id)))?;
            let record = self.registry.get(d);
            let profile = record.qpu.expect("selected record has a QPU");
            let est = compile_estimate(&q, &profile, &cfg.midware).map_err(|e| self.violated(e.to_string()))?;
            compile_s = est.compile_time_s;
            multiplier = est.mitigation_shot_multiplier;
            let mut phases = Vec::new();
            for n in &nodes {
                let entry = match n.duration {
                    DurationModel::Circuit { shots, depth } => {
                        let node_q = QuantumDescriptor { circuit_depth: depth, ..q.clone() };
                        let e = compile_estimate(&node_q, &profile, &cfg.midware)
                            .map_err(|e| self.violated(e.to_string()))?;
                        let shots = e.effective_shots(shots);
                        let t = cfg.fabric.qpu_exec_time(shots, e.optimized_depth, profile.modality);
                        phases.push(t);
                        (t, shots, e.optimized_depth)
                    }
                    DurationModel::Fixed(s) => (s, 0, 0),
                };
                per_node.push(entry);
            }
            let mean_phase = phases.iter().sum::<f64>() / phases.len() as f64;
            mode = match cfg.policy.mode_override {
                Some(m) => m,
                None => choose_mode(
                    self.sc.jobs[j].descriptor.mode_hint,
                    &classify_paths(&job.original),
                    mean_phase,
                    cfg.policy.interleave_threshold_s,
                ),
            };
            let dev = self.devices[d].as_ref().expect("QPU record has a device");
            if mode != CoMode::AsyncStreaming && dev.holder.is_some() {
                return Ok(());
            }
            let snapshot = profile.calibration;
            if now.saturating_sub(snapshot.timestamp) > cfg.drift.poll_period() {
                return Err(self.violated(format!("token for `{}` would carry a stale calibration", job.id)));
            }
            token = Some(QpuToken {
                token_id: format!("tok-{}", job.id),
                resource_id: record.resource_id.clone(),
                issued_at: now,
                calibration_snapshot: snapshot,
                expires_at: now.saturating_add(job.walltime),
            });
            device = Some(d);
            qss_total = Some(score.total);
        } else {
            for n in &nodes {
                per_node.push(match n.duration {
                    DurationModel::Fixed(s) => (s, 0, 0),
                    // Degraded jobs skip their QPU nodes.
                    DurationModel::Circuit { shots, depth } => (0.0, shots, depth),
                });
            }
        }

        let job = &self.jobs[j];
        let (cores, gpus) = (job.cores, job.gpus);
        let res_id = self.registry.get(res).resource_id.clone();
        let qpu_id = device.map(|d| self.registry.get(d).resource_id.clone());
        let mut fields = vec![
            f("job", &job.id),
            f("resource", &res_id),
            f("cores", cores),
            f("gpus", gpus),
            f("mode", mode.as_str()),
            f("qpu", qpu_id.as_deref().unwrap_or("-")),
            f("token", token.as_ref().map_or("-", |t| t.token_id.as_str())),
            f("fallback", job.fallback.as_str()),
        ];
        if let Some(total) = qss_total {
            fields.push(f("qss", total));
        }
        if device.is_some() {
            fields.push(f("compile_s", SimTime::from_secs_f64(compile_s)));
        }
        self.emit(EventKind::JobStart, fields);
        self.allocate(res, cores, gpus)?;
        if let (Some(d), true) = (device, mode != CoMode::AsyncStreaming) {
            let dev = self.devices[d].as_mut().expect("device exists");
            if dev.holder.is_some() {
                return Err(self.violated("QPU lease granted twice"));
            }
            dev.holder = Some(j);
        }

        let compile_done = now.saturating_add(SimTime::from_secs_f64(compile_s));
        let g = &self.jobs[j].graph;
        let mut tasks: Vec<TaskRt> = (0..g.len())
            .map(|v| {
                let (secs, shots, depth) = per_node[v];
                let skipped = g.node(v).kind == TaskKind::Qpu && device.is_none();
                TaskRt {
                    preds: Vec::new(),
                    succs: Vec::new(),
                    preds_left: 0,
                    ready_at: if g.node(v).kind == TaskKind::Qpu { compile_done } else { now },
                    state: TaskState::Waiting,
                    duration_s: secs,
                    duration: if skipped { SimTime::ZERO } else { SimTime::duration_from_secs_f64(secs) },
                    shots,
                    depth,
                    start: SimTime::ZERO,
                }
            })
            .collect();
        for e in g.edges() {
            tasks[e.dst].preds.push(e.src);
            tasks[e.dst].preds_left += 1;
            tasks[e.src].succs.push((e.dst, e.bytes));
        }
        let order = g.topo_order();
        let link = device.map(|d| cfg.fabric.link(self.registry.get(d).access_latency_class));
        let decision = ScheduleDecision {
            job_id: self.jobs[j].id.clone(),
            mode,
            classical_allocation: ClassicalAllocation { resource_id: res_id, cores, gpus },
            qpu_token: token.clone(),
            start_time: now,
            fallback_taken: self.jobs[j].fallback,
        };
        self.decisions.push(decision);
        let remaining = tasks.len();
        let job = &mut self.jobs[j];
        job.status = JobStatus::Running;
        job.exec = Some(Exec {
            mode,
            resource: res,
            holding: true,
            start: now,
            device,
            token,
            link,
            shot_multiplier: multiplier,
            tasks,
            order,
            remaining,
            running_classical: 0,
            qpu_active: 0,
            reacquire: Reacquire::None,
            wakes: BTreeSet::new(),
            held: Vec::new(),
            held_since: Some(now),
            busy: Vec::new(),
            shots_done: 0,
            end: None,
        });
        self.dispatch(j)
    }

    fn deps_field(&self, j: usize, t: usize) -> String {
        let job = &self.jobs[j];
        let e = job.exec.as_ref().expect("running job");
        let mut ids: Vec<&str> = e.tasks[t].preds.iter().map(|&p| job.graph.node(p).id.as_str()).collect();
        ids.sort_unstable();
        if ids.is_empty() {
            "-".to_string()
        } else {
            ids.join(",")
        }
    }

    fn check_causality(&self, j: usize, t: usize) -> Result<(), SimError> {
        let e = self.jobs[j].exec.as_ref().expect("running job");
        let task = &e.tasks[t];
        if task.preds.iter().any(|&p| e.tasks[p].state != TaskState::Done) || self.now < task.ready_at {
            let id = &self.jobs[j].graph.node(t).id;
            return Err(self.violated(format!("task `{id}` of `{}` started before its dependencies", self.jobs[j].id)));
        }
        Ok(())
    }

    /// Starts, queues or skips every ready task of job `j`.
    fn dispatch(&mut self, j: usize) -> Result<(), SimError> {
        if self.jobs[j].status != JobStatus::Running {
            return Ok(());
        }
        let mut device_touched = false;
        loop {
            let mut progress = false;
            let order = self.jobs[j].exec.as_ref().expect("running job").order.clone();
            for t in order {
                let now = self.now;
                let job = &mut self.jobs[j];
                let kind = job.graph.node(t).kind;
                let degraded = job.degraded;
                let e = job.exec.as_mut().expect("running job");
                let task = &e.tasks[t];
                if task.state != TaskState::Waiting || task.preds_left > 0 {
                    continue;
                }
                if task.ready_at > now {
                    let at = task.ready_at;
                    if e.wakes.insert(at) {
                        self.push(at, Ev::Wake(j));
                    }
                    continue;
                }
                if kind == TaskKind::Qpu && (degraded || e.device.is_none()) {
                    self.check_causality(j, t)?;
                    let deps = self.deps_field(j, t);
                    let id = self.jobs[j].graph.node(t).id.clone();
                    let jid = self.jobs[j].id.clone();
                    self.emit(
                        EventKind::TaskStart,
                        vec![
                            f("job", &jid),
                            f("task", &id),
                            f("kind", "QPU"),
                            f("device", "-"),
                            f("duration_s", 0),
                            f("deps", deps),
                            f("skipped", 1),
                        ],
                    );
                    self.emit(EventKind::TaskEnd, vec![f("job", &jid), f("task", &id), f("skipped", 1)]);
                    self.complete_task(j, t);
                    progress = true;
                } else if kind == TaskKind::Qpu {
                    let e = self.jobs[j].exec.as_mut().expect("running job");
                    e.tasks[t].state = TaskState::Queued;
                    e.qpu_active += 1;
                    let (d, mode) = (e.device.expect("QPU job has a device"), e.mode);
                    let dev = self.devices[d].as_mut().expect("device exists");
                    if mode == CoMode::AsyncStreaming {
                        dev.fifo.push_back((j, t));
                    } else {
                        dev.holder_queue.push_back((j, t));
                    }
                    device_touched = true;
                } else if e.holding {
                    self.check_causality(j, t)?;
                    let deps = self.deps_field(j, t);
                    let job = &mut self.jobs[j];
                    let res_id = self.registry.get(job.exec.as_ref().expect("running").resource).resource_id.clone();
                    let e = job.exec.as_mut().expect("running job");
                    let task = &mut e.tasks[t];
                    task.state = TaskState::Running;
                    task.start = now;
                    let end = now.saturating_add(task.duration);
                    let dur = task.duration_s;
                    e.running_classical += 1;
                    let fields = vec![
                        f("job", &job.id),
                        f("task", &job.graph.node(t).id),
                        f("kind", kind.as_str()),
                        f("device", res_id),
                        f("duration_s", dur),
                        f("deps", deps),
                    ];
                    self.emit(EventKind::TaskStart, fields);
                    self.push(end, Ev::TaskEnd(j, t));
                }
            }
            if !progress {
                break;
            }
        }
        if self.jobs[j].exec.as_ref().is_some_and(|e| e.remaining == 0) {
            self.finish_job(j)?;
        }
        if device_touched {
            let d = self.jobs[j].exec.as_ref().and_then(|e| e.device).expect("QPU job has a device");
            self.device_dispatch(d)?;
        }
        Ok(())
    }

    /// Marks `t` done and releases its successors, charging the transfer
    /// delay on edges that touch a QPU node.
    fn complete_task(&mut self, j: usize, t: usize) {
        let now = self.now;
        let job = &mut self.jobs[j];
        let src_qpu = job.graph.node(t).kind == TaskKind::Qpu;
        let e = job.exec.as_mut().expect("running job");
        e.tasks[t].state = TaskState::Done;
        e.remaining -= 1;
        let succs = e.tasks[t].succs.clone();
        for (s, bytes) in succs {
            let dst_qpu = job.graph.node(s).kind == TaskKind::Qpu;
            let delay = match e.link {
                Some(link) if src_qpu || dst_qpu => {
                    let bytes = if src_qpu { scale_bytes(bytes, e.shot_multiplier) } else { bytes };
                    SimTime::from_secs_f64(transfer_time(bytes, link))
                }
                _ => SimTime::ZERO,
            };
            let task = &mut e.tasks[s];
            task.preds_left -= 1;
            task.ready_at = task.ready_at.max(now.saturating_add(delay));
        }
    }

    fn device_dispatch(&mut self, d: usize) -> Result<(), SimError> {
        let dev = self.devices[d].as_mut().expect("device exists");
        if dev.running.is_some() {
            return Ok(());
        }
        let Some((j, t)) = dev.holder_queue.pop_front().or_else(|| dev.fifo.pop_front()) else {
            return Ok(());
        };
        let now = self.now;
        self.check_causality(j, t)?;
        let period = self.sc.config.drift.poll_period();
        let deps = self.deps_field(j, t);
        let overhead = SimTime::from_secs_f64(self.sc.config.policy.reacquire_overhead_s);
        let qpu_id = self.registry.get(d).resource_id.clone();
        let job = &mut self.jobs[j];
        let e = job.exec.as_mut().expect("running job");
        let Some(token) = &e.token else {
            return Err(SimError::Invariant { time: now, what: format!("QPU phase of `{}` without a token", job.id) });
        };
        if token.issued_at.saturating_sub(token.calibration_snapshot.timestamp) > period {
            return Err(SimError::Invariant { time: now, what: format!("stale token for `{}`", job.id) });
        }
        let token_id = token.token_id.clone();
        let task = &mut e.tasks[t];
        task.state = TaskState::Running;
        task.start = now;
        let end = now.saturating_add(task.duration);
        let fields = vec![
            f("job", &job.id),
            f("task", &job.graph.node(t).id),
            f("kind", "QPU"),
            f("device", &qpu_id),
            f("duration_s", task.duration_s),
            f("deps", deps),
            f("shots", task.shots),
            f("depth", task.depth),
            f("token", token_id),
        ];
        let dev = self.devices[d].as_mut().expect("device exists");
        if dev.running.is_some() {
            return Err(SimError::Invariant { time: now, what: format!("QPU `{qpu_id}` runs two tasks") });
        }
        dev.running = Some((j, t, end));
        self.emit(EventKind::QpuPhaseStart, fields);
        self.push(end, Ev::TaskEnd(j, t));

        let job = &mut self.jobs[j];
        let e = job.exec.as_mut().expect("running job");
        if e.mode == CoMode::Interleaved {
            if e.holding && e.running_classical == 0 {
                e.holding = false;
                let since = e.held_since.take().expect("held cores have a start");
                e.held.push((since, now));
                e.reacquire = Reacquire::Claim(end.saturating_add(overhead));
                let (res, cores, gpus) = (e.resource, job.cores, job.gpus);
                let fields = vec![
                    f("job", &job.id),
                    f("resource", &self.registry.get(res).resource_id),
                    f("cores", cores),
                    f("gpus", gpus),
                ];
                self.release(res, cores, gpus);
                self.emit(EventKind::CoresReleased, fields);
                self.request_pass(now);
            } else if let Reacquire::Claim(nb) = e.reacquire {
                e.reacquire = Reacquire::Claim(nb.max(end.saturating_add(overhead)));
            }
        }
        Ok(())
    }

    fn on_task_end(&mut self, j: usize, t: usize) -> Result<(), SimError> {
        let now = self.now;
        let overhead = SimTime::from_secs_f64(self.sc.config.policy.reacquire_overhead_s);
        self.request_pass(now);
        let job = &mut self.jobs[j];
        let kind = job.graph.node(t).kind;
        let task_id = job.graph.node(t).id.clone();
        let e = job.exec.as_mut().expect("running job");
        let start = e.tasks[t].start;
        if kind == TaskKind::Qpu {
            let shots = e.tasks[t].shots;
            e.shots_done += shots;
            e.qpu_active -= 1;
            let d = e.device.expect("QPU job has a device");
            let fields = vec![f("job", &job.id), f("task", &task_id), f("shots", shots)];
            let dev = self.devices[d].as_mut().expect("device exists");
            if dev.running.map(|(rj, rt, _)| (rj, rt)) != Some((j, t)) {
                return Err(self.violated("QPU task ended on a device it was not running on"));
            }
            dev.running = None;
            dev.busy.push((start, now));
            self.emit(EventKind::QpuPhaseEnd, fields);
            self.complete_task(j, t);
            let e = self.jobs[j].exec.as_mut().expect("running job");
            if e.mode == CoMode::Interleaved && !e.holding && e.qpu_active == 0 && e.remaining > 0 {
                let nb = now.saturating_add(overhead);
                e.reacquire = Reacquire::Requested(nb);
                self.request_pass(nb);
            }
            self.dispatch(j)?;
            self.device_dispatch(d)?;
        } else {
            e.running_classical -= 1;
            e.busy.push((start, now));
            let fields = vec![f("job", &job.id), f("task", &task_id)];
            self.emit(EventKind::TaskEnd, fields);
            self.complete_task(j, t);
            self.dispatch(j)?;
        }
        Ok(())
    }

    fn grant_reacquire(&mut self, j: usize) -> Result<(), SimError> {
        let now = self.now;
        let job = &self.jobs[j];
        let e = job.exec.as_ref().expect("running job");
        let (res, cores, gpus) = (e.resource, job.cores, job.gpus);
        let fields = vec![
            f("job", &job.id),
            f("resource", &self.registry.get(res).resource_id),
            f("cores", cores),
            f("gpus", gpus),
        ];
        self.allocate(res, cores, gpus)?;
        self.emit(EventKind::CoresReacquired, fields);
        let e = self.jobs[j].exec.as_mut().expect("running job");
        e.holding = true;
        e.held_since = Some(now);
        e.reacquire = Reacquire::None;
        self.dispatch(j)
    }

    fn finish_job(&mut self, j: usize) -> Result<(), SimError> {
        let now = self.now;
        let job = &mut self.jobs[j];
        let status = if job.degraded { JobStatus::Degraded } else { JobStatus::Completed };
        job.status = status;
        let e = job.exec.as_mut().expect("running job");
        e.end = Some(now);
        e.reacquire = Reacquire::None;
        let fields = vec![f("job", &job.id), f("status", status.as_str())];
        let (holding, res, device, mode) = (e.holding, e.resource, e.device, e.mode);
        if holding {
            e.holding = false;
            let since = e.held_since.take().expect("held cores have a start");
            e.held.push((since, now));
        }
        let (cores, gpus) = (job.cores, job.gpus);
        self.emit(EventKind::JobEnd, fields);
        if holding {
            self.release(res, cores, gpus);
        }
        if let (Some(d), true) = (device, mode != CoMode::AsyncStreaming) {
            let dev = self.devices[d].as_mut().expect("device exists");
            if dev.holder != Some(j) {
                return Err(self.violated("QPU lease released by a job that did not hold it"));
            }
            dev.holder = None;
            self.device_dispatch(d)?;
        }
        self.request_pass(now);
        Ok(())
    }

    fn finish(self) -> SimOutput {
        let horizon = self.horizon();
        let clip = |iv: &[(SimTime, SimTime)]| -> Vec<(SimTime, SimTime)> {
            iv.iter().map(|&(s, e)| (s.min(horizon), e.min(horizon))).collect()
        };
        let mut facts = Vec::with_capacity(self.jobs.len());
        for job in &self.jobs {
            let mut row = JobRow {
                job_id: job.id.clone(),
                status: job.status,
                submit: job.submit,
                start: None,
                end: None,
                mode: None,
                resource: None,
                qpu: None,
                fallback: job.fallback,
                shots_executed: 0,
            };
            let mut fact = JobFacts {
                row: row.clone(),
                submitted: job.status != JobStatus::Unsubmitted,
                cores: job.cores,
                tier: None,
                held: Vec::new(),
                busy: Vec::new(),
            };
            if let Some(e) = &job.exec {
                row.start = Some(e.start);
                row.end = e.end;
                row.mode = Some(e.mode);
                row.resource = Some(self.registry.get(e.resource).resource_id.clone());
                row.qpu = e.device.map(|d| self.registry.get(d).resource_id.clone());
                row.shots_executed = e.shots_done;
                let mut held = e.held.clone();
                if let Some(since) = e.held_since {
                    held.push((since, horizon));
                }
                let mut busy = e.busy.clone();
                for task in &e.tasks {
                    if task.state == TaskState::Running && task.duration > SimTime::ZERO {
                        busy.push((task.start, horizon));
                    }
                }
                // Running QPU tasks are not classical work.
                let busy: Vec<(SimTime, SimTime)> = busy
                    .into_iter()
                    .filter(|&(s, _)| {
                        !e.tasks.iter().enumerate().any(|(i, t)| {
                            t.state == TaskState::Running && t.start == s && job.graph.node(i).kind == TaskKind::Qpu
                        })
                    })
                    .collect();
                fact.held = clip(&held);
                fact.busy = clip(&busy);
                fact.tier = Some(self.registry.get(e.resource).tier);
            }
            fact.row = row;
            facts.push(fact);
        }
        let mut qpu_busy = Vec::new();
        for dev in self.devices.iter().flatten() {
            let mut busy = dev.busy.clone();
            if let Some((j, t, _)) = dev.running {
                let start = self.jobs[j].exec.as_ref().expect("running job").tasks[t].start;
                busy.push((start, horizon));
            }
            qpu_busy.push(metrics::union_len(&clip(&busy)));
        }
        let resources: Vec<_> = self.registry.records().iter().map(|r| (r.tier, r.cpu_cores)).collect();
        let metrics = metrics::compute(metrics::Inputs {
            horizon,
            resources: &resources,
            jobs: facts,
            qpu_busy,
            fallbacks: self.fallbacks,
        });
        let mut declarations = Vec::new();
        for r in self.registry.records() {
            let mut fields = vec![
                f("id", &r.resource_id),
                f("tier", r.tier),
                f("cores", r.cpu_cores),
                f("gpus", r.gpu_count),
                f("memory_gb", r.memory_gb),
                f("link", r.access_latency_class),
            ];
            if let Some(q) = &r.qpu {
                fields.extend([
                    f("modality", q.modality),
                    f("qubits", q.qubit_count),
                    f("connectivity", q.connectivity),
                    f("nominal_fidelity", q.calibration.nominal_fidelity),
                    f("coherence_us", q.calibration.coherence_time_us),
                ]);
            }
            declarations.push(HeaderLine { tag: "resource".into(), fields });
        }
        for (spec, job) in self.sc.jobs.iter().zip(&self.jobs) {
            let d = &spec.descriptor;
            let mut fields = vec![
                f("id", &d.job_id),
                f("submit_s", spec.submit),
                f("priority", d.priority),
                f("cores", d.classical.cpu_cores),
                f("gpus", d.classical.gpu_count),
                f("walltime_s", d.classical.walltime_s),
                f("mode_hint", d.mode_hint.as_str()),
                f("template", spec.template.map_or("graph", |t| t.as_str())),
                f("nodes", job.graph.len()),
            ];
            if let Some(q) = &d.quantum {
                fields.extend([
                    f("qubits", q.qubit_count),
                    f("connectivity", q.connectivity),
                    f("shots", q.effective_shots()),
                    f("depth", q.circuit_depth),
                    f("fallback_policy", q.fallback_policy.as_str()),
                ]);
            }
            declarations.push(HeaderLine { tag: "job".into(), fields });
        }
        SimOutput {
            trace: Trace {
                version: FORMAT_VERSION.into(),
                params: header_params(&self.sc.config),
                declarations,
                events: self.events,
            },
            metrics,
            decisions: self.decisions,
        }
    }
}

fn scale_bytes(bytes: u64, multiplier: f64) -> u64 {
    let b = libm::ceil(bytes as f64 * multiplier - 1e-9);
    if b >= u64::MAX as f64 {
        u64::MAX
    } else {
        b as u64
    }
}

/// Rewrites QPU nodes as GPU nodes whose service time is the state-vector
/// emulation cost of the circuit.
fn emulated(g: &TaskGraph, midware: &crate::midware::MidwareParams) -> Result<TaskGraph, String> {
    let mut costs = Vec::with_capacity(g.len());
    for n in g.nodes() {
        costs.push(match n.duration {
            DurationModel::Circuit { shots, depth } => {
                Some(emulation_cost(n.demand.qubits, depth, shots, midware).map_err(|e| e.to_string())?)
            }
            DurationModel::Fixed(_) => None,
        });
    }
    let mut costs = costs.into_iter();
    g.map_nodes(|n| match costs.next().flatten() {
        Some(cost) => TaskNode {
            id: n.id.clone(),
            kind: TaskKind::Gpu,
            duration: DurationModel::Fixed(cost),
            demand: crate::dctg::Demand { cores: 0, gpus: n.demand.gpus.max(1), qubits: 0 },
        },
        None => n.clone(),
    })
    .map_err(|e| e.to_string())
}
