//! Scenario files: the cluster, the job list and every tunable constant.
//!
//! ```text
//! seed: 7
//! horizon_s: 3600
//! resources:
//!   - id: cpu-0
//!     tier: R1
//!     cores: 64
//!     memory_gb: 256
//!   - id: qpu-a
//!     tier: R3
//!     cores: 16
//!     qpu:
//!       modality: superconducting
//!       qubits: 27
//!       connectivity: heavy_hex
//!       fidelity: 0.995
//! jobs:
//!   - hwd: jobs/vqe.hwd
//!     submit_s: 0
//!     template: vqe_loop
//! policy:
//!   weights: [0.4, 0.2, 0.2, 0.2]
//! ```
//!
//! Relative paths (`hwd:`, `graph:`) resolve against the scenario file's
//! directory. Optional blocks: `policy`, `fabric`, `midware`, `drift`,
//! `templates`. Unknown keys are errors.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use qhpc_core::dctg::{build_graph, parse_graph_text, Template, TemplateConfig};
use qhpc_core::doc::{self, Entry, Node};
use qhpc_core::fabric::{LinkClass, LinkKind};
use qhpc_core::hwd::{parse_hwd, HwdError, HwdLimits, HybridWorkloadDescriptor};
use qhpc_core::registry::{CalibrationProfile, QpuProfile, ResourceRecord, Tier};
use qhpc_core::scheduler::{CoMode, QssWeights};
use qhpc_core::simcore::{JobSpec, Scenario, SimConfig};
use qhpc_core::{Modality, SimTime};

/// A problem in a scenario file or in a file it references.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub struct ScenarioError {
    pub file: PathBuf,
    /// 1-based position, when known.
    pub pos: Option<(usize, usize)>,
    pub message: String,
}

impl fmt::Display for ScenarioError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.pos {
            Some((l, c)) => write!(f, "{}:{l}:{c}: {}", self.file.display(), self.message),
            None => write!(f, "{}: {}", self.file.display(), self.message),
        }
    }
}

/// A loaded scenario plus the template settings used to build its graphs.
#[derive(Debug, Clone, PartialEq)]
pub struct Loaded {
    pub scenario: Scenario,
    pub templates: TemplateConfig,
}

pub fn load(path: &Path) -> Result<Loaded, ScenarioError> {
    let text = std::fs::read_to_string(path).map_err(|e| ScenarioError {
        file: path.to_path_buf(),
        pos: None,
        message: format!("cannot read: {e}"),
    })?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    parse(&text, path, &base)
}

/// Parses scenario text. `file` names it in errors; `base` resolves
/// relative references.
pub fn parse(text: &str, file: &Path, base: &Path) -> Result<Loaded, ScenarioError> {
    let cx = Cx { file, base };
    let root = doc::parse(text).map_err(|e| cx.at_pos(e.line, e.column, e.reason))?;
    let mut top = cx.section("", &root)?;
    let mut config = SimConfig::default();
    if let Some(v) = top.parse::<u64>("seed", "an unsigned integer")? {
        config.seed = v;
    }
    if let Some(v) = top.positive("horizon_s")? {
        config.horizon = SimTime::duration_from_secs_f64(v);
    }
    if let Some(v) = top.parse::<u64>("max_events", "an unsigned integer")? {
        config.max_events = v;
    }
    if let Some(n) = top.node("policy") {
        cx.policy(n, &mut config)?;
    }
    if let Some(n) = top.node("fabric") {
        cx.fabric(n, &mut config)?;
    }
    if let Some(n) = top.node("midware") {
        cx.midware(n, &mut config)?;
    }
    if let Some(n) = top.node("drift") {
        let mut s = cx.section("drift", n)?;
        let d = &mut config.drift;
        s.set_f64("step_sigma", &mut d.step_sigma)?;
        s.set_f64("recalibration_period_s", &mut d.recalibration_period_s)?;
        s.set_f64("poll_period_s", &mut d.poll_period_s)?;
        s.set_f64("floor", &mut d.floor)?;
        s.finish()?;
        d.validate().map_err(|e| cx.at(n, e.to_string()))?;
    }
    let mut templates = TemplateConfig::default();
    if let Some(n) = top.node("templates") {
        let mut s = cx.section("templates", n)?;
        if let Some(v) = s.parse::<u32>("vqe_iterations", "an unsigned integer")? {
            templates.vqe_iterations = v;
        }
        if let Some(v) = s.parse::<u32>("batch_size", "an unsigned integer")? {
            templates.batch_size = v;
        }
        s.set_f64("init_s", &mut templates.init_s)?;
        s.set_f64("optimize_s", &mut templates.optimize_s)?;
        s.set_f64("measure_s", &mut templates.measure_s)?;
        s.set_f64("finalize_s", &mut templates.finalize_s)?;
        s.set_f64("prep_s", &mut templates.prep_s)?;
        s.set_f64("reduce_s", &mut templates.reduce_s)?;
        s.finish()?;
    }
    let mut resources = Vec::new();
    if let Some(n) = top.node("resources") {
        for item in cx.seq("resources", n)? {
            resources.push(cx.resource(item)?);
        }
    }
    let mut jobs = Vec::new();
    if let Some(n) = top.node("jobs") {
        for item in cx.seq("jobs", n)? {
            jobs.push(cx.job(item, &templates)?);
        }
    }
    top.finish()?;
    let scenario = Scenario { resources, jobs, config };
    scenario.validate().map_err(|e| cx.whole(e.to_string()))?;
    Ok(Loaded { scenario, templates })
}

/// Parses `f,c,q,l` (commas, optional spaces) into normalized weights.
pub fn parse_weights(text: &str) -> Result<QssWeights, String> {
    let parts: Vec<f64> = text
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|_| format!("`{}` is not a number", p.trim())))
        .collect::<Result<_, _>>()?;
    weights_from(&parts)
}

fn weights_from(parts: &[f64]) -> Result<QssWeights, String> {
    let [f, c, q, l] = parts else {
        return Err(format!("expected 4 weights (fidelity, connectivity, queue, latency), got {}", parts.len()));
    };
    if parts.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err("weights must be non-negative".into());
    }
    QssWeights::normalized(*f, *c, *q, *l).map_err(|e| e.to_string())
}

/// Parses a `--mode` value. `auto` clears any override.
pub fn parse_mode(text: &str) -> Result<Option<CoMode>, String> {
    match text {
        "auto" => Ok(None),
        "async" => Ok(Some(CoMode::AsyncStreaming)),
        other => other.parse().map(Some).map_err(|_| format!("unknown mode `{other}`")),
    }
}

struct Cx<'a> {
    file: &'a Path,
    base: &'a Path,
}

struct Section<'c, 'n> {
    cx: &'c Cx<'c>,
    path: String,
    node: &'n Node,
    entries: &'n [Entry],
    seen: Vec<&'n str>,
}

impl<'a> Cx<'a> {
    fn at_pos(&self, line: usize, column: usize, message: impl Into<String>) -> ScenarioError {
        ScenarioError { file: self.file.to_path_buf(), pos: Some((line, column)), message: message.into() }
    }

    fn at(&self, n: &Node, message: impl Into<String>) -> ScenarioError {
        self.at_pos(n.pos.line, n.pos.column, message)
    }

    fn whole(&self, message: impl Into<String>) -> ScenarioError {
        ScenarioError { file: self.file.to_path_buf(), pos: None, message: message.into() }
    }

    fn section<'n>(&'a self, path: &str, n: &'n Node) -> Result<Section<'a, 'n>, ScenarioError> {
        match n.as_map() {
            Some(entries) => Ok(Section { cx: self, path: path.to_string(), node: n, entries, seen: Vec::new() }),
            None => Err(self.at(n, format!("`{}` must be a mapping, found a {}", show(path), n.kind_name()))),
        }
    }

    fn seq<'n>(&self, path: &str, n: &'n Node) -> Result<&'n [Node], ScenarioError> {
        n.as_seq().ok_or_else(|| self.at(n, format!("`{path}` must be a list, found a {}", n.kind_name())))
    }

    fn resolve(&self, rel: &str) -> PathBuf {
        let p = Path::new(rel);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    fn policy(&self, n: &Node, config: &mut SimConfig) -> Result<(), ScenarioError> {
        let mut s = self.section("policy", n)?;
        let p = &mut config.policy;
        if let Some(w) = s.node("weights") {
            let parsed = match (w.as_scalar(), w.as_seq()) {
                (Some(t), _) => parse_weights(t),
                (_, Some(items)) => items
                    .iter()
                    .map(|i| {
                        i.as_scalar().and_then(|t| t.parse::<f64>().ok()).ok_or("weights must be numbers".to_string())
                    })
                    .collect::<Result<Vec<_>, _>>()
                    .and_then(|v| weights_from(&v)),
                _ => Err("weights must be a list of four numbers".into()),
            };
            p.weights = parsed.map_err(|e| self.at(w, format!("policy.weights: {e}")))?;
        }
        s.set_f64("max_wait_s", &mut p.norms.max_wait_s)?;
        s.set_f64("max_latency_s", &mut p.norms.max_latency_s)?;
        s.set_f64("interleave_threshold_s", &mut p.interleave_threshold_s)?;
        s.set_f64("reacquire_overhead_s", &mut p.reacquire_overhead_s)?;
        if let Some(v) = s.parse::<bool>("backfill", "`true` or `false`")? {
            p.backfill = v;
        }
        if let Some(t) = s.scalar("mode")? {
            p.mode_override = parse_mode(t).map_err(|e| self.at(s.node("mode").unwrap_or(n), e))?;
        }
        s.finish()
    }

    fn fabric(&self, n: &Node, config: &mut SimConfig) -> Result<(), ScenarioError> {
        let mut s = self.section("fabric", n)?;
        let f = &mut config.fabric;
        for kind in LinkKind::ALL {
            if let Some(ln) = s.node(kind.as_str()) {
                let path = format!("fabric.{kind}");
                let mut l = self.section(&path, ln)?;
                let link: &mut LinkClass = f.link_mut(kind);
                l.set_f64("rtt_s", &mut link.rtt_s)?;
                l.set_f64("bandwidth_bytes_per_s", &mut link.bandwidth_bytes_per_s)?;
                l.finish()?;
            }
        }
        for (key, table) in [("gate_time_s", &mut f.gate_time_s), ("per_shot_overhead_s", &mut f.per_shot_overhead_s)] {
            if let Some(tn) = s.node(key) {
                let path = format!("fabric.{key}");
                let mut t = self.section(&path, tn)?;
                for m in Modality::ALL {
                    let mut v = table.get(m);
                    t.set_f64(m.as_str(), &mut v)?;
                    table.set(m, v);
                }
                t.finish()?;
            }
        }
        s.finish()?;
        config.fabric.validate().map_err(|e| self.at(n, e.to_string()))
    }

    fn midware(&self, n: &Node, config: &mut SimConfig) -> Result<(), ScenarioError> {
        let mut s = self.section("midware", n)?;
        let m = &mut config.midware;
        s.set_f64("opt_factor", &mut m.opt_factor)?;
        s.set_f64("routing_overhead", &mut m.routing_overhead)?;
        s.set_f64("compile_base_s", &mut m.compile_base_s)?;
        s.set_f64("compile_per_layer_s", &mut m.compile_per_layer_s)?;
        s.set_f64("no_mitigation_fidelity", &mut m.no_mitigation_fidelity)?;
        s.set_f64("zne_fidelity", &mut m.zne_fidelity)?;
        if let Some(v) = s.parse("low_fidelity_scheme", "`pec` or `cdr`")? {
            m.low_fidelity_scheme = v;
        }
        s.set_f64("zne_multiplier", &mut m.zne_multiplier)?;
        s.set_f64("pec_multiplier", &mut m.pec_multiplier)?;
        s.set_f64("cdr_multiplier", &mut m.cdr_multiplier)?;
        s.set_f64("flops_per_amplitude_layer", &mut m.flops_per_amplitude_layer)?;
        s.set_f64("gpu_flops", &mut m.gpu_flops)?;
        s.set_f64("emulation_shot_s", &mut m.emulation_shot_s)?;
        if let Some(v) = s.parse::<u32>("emulation_qubit_cap", "an unsigned integer")? {
            m.emulation_qubit_cap = v;
        }
        s.finish()?;
        config.midware.validate().map_err(|e| self.at(n, e.to_string()))
    }

    fn resource(&self, n: &Node) -> Result<ResourceRecord, ScenarioError> {
        let mut s = self.section("resources[]", n)?;
        let id = s.required("id")?.to_string();
        let tier: Tier = s.required_parse("tier", "one of R1, R2, R3, R4")?;
        let cpu_cores = s.parse::<u32>("cores", "an unsigned integer")?.unwrap_or(0);
        let gpu_count = s.parse::<u32>("gpus", "an unsigned integer")?.unwrap_or(0);
        let memory_gb = s.parse::<f64>("memory_gb", "a number")?.unwrap_or(0.0);
        let default_link = match tier {
            Tier::R3 => LinkKind::IntraNode,
            Tier::R4 => LinkKind::Wan,
            _ => LinkKind::InterNode,
        };
        let access_latency_class = s.parse("link", "intra_node, inter_node or wan")?.unwrap_or(default_link);
        let qpu = match s.node("qpu") {
            None => None,
            Some(qn) => {
                let mut q = self.section("resources[].qpu", qn)?;
                let modality = q.required_parse("modality", "a known modality")?;
                let qubit_count = q.required_parse("qubits", "an unsigned integer")?;
                let connectivity = q.required_parse("connectivity", "a known connectivity class")?;
                let fidelity: f64 = q.required_parse("fidelity", "a number")?;
                let nominal = q.parse::<f64>("nominal_fidelity", "a number")?.unwrap_or(fidelity);
                let coherence = q.parse::<f64>("coherence_us", "a number")?.unwrap_or(100.0);
                q.finish()?;
                Some(QpuProfile {
                    modality,
                    qubit_count,
                    connectivity,
                    calibration: CalibrationProfile {
                        two_qubit_fidelity: fidelity,
                        coherence_time_us: coherence,
                        timestamp: SimTime::ZERO,
                        nominal_fidelity: nominal,
                    },
                })
            }
        };
        s.finish()?;
        let r = ResourceRecord { resource_id: id, tier, cpu_cores, gpu_count, memory_gb, qpu, access_latency_class };
        r.validate().map_err(|e| self.at(n, e.to_string()))?;
        Ok(r)
    }

    fn job(&self, n: &Node, templates: &TemplateConfig) -> Result<JobSpec, ScenarioError> {
        let mut s = self.section("jobs[]", n)?;
        let descriptor = match (s.node("hwd"), s.node("descriptor")) {
            (Some(_), Some(_)) => return Err(self.at(n, "a job takes either `hwd` or `descriptor`, not both")),
            (None, None) => return Err(self.at(n, "a job needs `hwd` (a file) or an inline `descriptor`")),
            (Some(h), None) => {
                let rel = h.as_scalar().ok_or_else(|| self.at(h, "`hwd` must be a file path"))?;
                let path = self.resolve(rel);
                read_hwd(&path)?
            }
            (None, Some(d)) => HybridWorkloadDescriptor::from_node(d, &HwdLimits::default()).map_err(|e| match e {
                HwdError::Parse { line, column, reason } => self.at_pos(line, column, reason),
                HwdError::Validation { field, reason } => self.at(d, format!("descriptor.{field}: {reason}")),
            })?,
        };
        let submit_s = s.parse::<f64>("submit_s", "a number")?.unwrap_or(0.0);
        if !(submit_s >= 0.0 && submit_s.is_finite()) {
            return Err(self.at(n, "submit_s must be a non-negative number"));
        }
        let template: Option<Template> = s.parse("template", "vqe_loop, batched_circuits or classical_only")?;
        let graph_path = s.scalar("graph")?;
        s.finish()?;
        let (template, graph) = match (template, graph_path) {
            (Some(_), Some(_)) => return Err(self.at(n, "a job takes either `template` or `graph`, not both")),
            (None, Some(rel)) => {
                let path = self.resolve(rel);
                let text = std::fs::read_to_string(&path).map_err(|e| ScenarioError {
                    file: path.clone(),
                    pos: None,
                    message: format!("cannot read: {e}"),
                })?;
                let g = parse_graph_text(&text).map_err(|e| ScenarioError {
                    file: path,
                    pos: None,
                    message: e.to_string(),
                })?;
                (None, g)
            }
            (t, None) => {
                let t =
                    t.unwrap_or(if descriptor.quantum.is_some() { Template::VqeLoop } else { Template::ClassicalOnly });
                let g = build_graph(&descriptor, t, templates)
                    .map_err(|e| self.at(n, format!("job `{}`: {e}", descriptor.job_id)))?;
                (Some(t), g)
            }
        };
        Ok(JobSpec { descriptor, submit: SimTime::from_secs_f64(submit_s), template, graph })
    }
}

/// Reads and validates a descriptor file.
pub fn read_hwd(path: &Path) -> Result<HybridWorkloadDescriptor, ScenarioError> {
    let text = std::fs::read_to_string(path).map_err(|e| ScenarioError {
        file: path.to_path_buf(),
        pos: None,
        message: format!("cannot read: {e}"),
    })?;
    parse_hwd(&text).map_err(|e| hwd_error(path, e))
}

pub fn hwd_error(path: &Path, e: HwdError) -> ScenarioError {
    match e {
        HwdError::Parse { line, column, reason } => {
            ScenarioError { file: path.to_path_buf(), pos: Some((line, column)), message: reason }
        }
        e @ HwdError::Validation { .. } => {
            ScenarioError { file: path.to_path_buf(), pos: None, message: e.to_string() }
        }
    }
}

fn show(path: &str) -> &str {
    if path.is_empty() {
        "<root>"
    } else {
        path
    }
}

impl<'c, 'n> Section<'c, 'n> {
    fn key(&self, k: &str) -> String {
        if self.path.is_empty() {
            k.to_string()
        } else {
            format!("{}.{k}", self.path)
        }
    }

    fn node(&mut self, key: &'n str) -> Option<&'n Node> {
        self.seen.push(key);
        self.entries.iter().find(|e| e.key == key).map(|e| &e.node)
    }

    fn scalar(&mut self, key: &'n str) -> Result<Option<&'n str>, ScenarioError> {
        match self.node(key) {
            None => Ok(None),
            Some(n) => n.as_scalar().map(Some).ok_or_else(|| {
                self.cx.at(n, format!("`{}` must be a scalar, found a {}", self.key(key), n.kind_name()))
            }),
        }
    }

    fn required(&mut self, key: &'n str) -> Result<&'n str, ScenarioError> {
        self.scalar(key)?.ok_or_else(|| self.cx.at(self.node, format!("missing required key `{}`", self.key(key))))
    }

    fn parse<T: FromStr>(&mut self, key: &'n str, what: &str) -> Result<Option<T>, ScenarioError> {
        let Some(t) = self.scalar(key)? else {
            return Ok(None);
        };
        match t.parse() {
            Ok(v) => Ok(Some(v)),
            Err(_) => {
                let n = self.entries.iter().find(|e| e.key == key).map_or(self.node, |e| &e.node);
                Err(self.cx.at(n, format!("`{}`: `{t}` is not {what}", self.key(key))))
            }
        }
    }

    fn required_parse<T: FromStr>(&mut self, key: &'n str, what: &str) -> Result<T, ScenarioError> {
        self.parse(key, what)?.ok_or_else(|| self.cx.at(self.node, format!("missing required key `{}`", self.key(key))))
    }

    fn set_f64(&mut self, key: &'n str, slot: &mut f64) -> Result<(), ScenarioError> {
        if let Some(v) = self.parse::<f64>(key, "a number")? {
            *slot = v;
        }
        Ok(())
    }

    fn positive(&mut self, key: &'n str) -> Result<Option<f64>, ScenarioError> {
        match self.parse::<f64>(key, "a number")? {
            Some(v) if !(v > 0.0 && v.is_finite()) => {
                Err(self.cx.at(self.node, format!("`{}` must be a positive number", self.key(key))))
            }
            other => Ok(other),
        }
    }

    fn finish(self) -> Result<(), ScenarioError> {
        for e in self.entries {
            if !self.seen.contains(&e.key.as_str()) {
                return Err(self.cx.at_pos(e.pos.line, e.pos.column, format!("unknown key `{}`", self.key(&e.key))));
            }
        }
        Ok(())
    }
}
