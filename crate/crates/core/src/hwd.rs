//! Hybrid workload descriptors: the job-submission document pairing classical
//! resource needs with quantum circuit requirements.
//!
//! Descriptor files use the restricted syntax of [`crate::doc`]:
//!
//! ```text
//! job_id: vqe-h2
//! priority: 2
//! mode: auto
//! classical:
//!   cpu_cores: 16
//!   gpu_count: 0
//!   memory_gb: 64
//!   walltime_s: 3600
//!   mpi_ranks: 4
//! quantum:
//!   qubits: 12
//!   connectivity: heavy_hex
//!   confidence: 0.95
//!   epsilon: 0.05
//!   modalities: [trapped_ion, best_available]
//!   depth: 120
//!   circuit: "OPENQASM 3.0; ..."
//!   fallback: emulate_on_gpu
//! ```
//!
//! Defaults: `priority` 0, `mode` auto, `classical.gpu_count` 0, `epsilon`
//! 0.01 (only meaningful with `confidence`), `circuit` empty. Every other key
//! is required and unknown keys are rejected.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::{self, Write as _};
use core::str::FromStr;

use crate::device::{Connectivity, Modality};
use crate::doc::{self, Entry, Node, Pos, Scalar};

pub const DEFAULT_EPSILON: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum HwdError {
    #[error("parse error at {line}:{column}: {reason}")]
    Parse { line: usize, column: usize, reason: String },
    #[error("invalid `{field}`: {reason}")]
    Validation { field: String, reason: String },
}

impl From<doc::SyntaxError> for HwdError {
    fn from(e: doc::SyntaxError) -> Self {
        HwdError::Parse { line: e.line, column: e.column, reason: e.reason }
    }
}

fn invalid<T>(field: impl Into<String>, reason: impl Into<String>) -> Result<T, HwdError> {
    Err(HwdError::Validation { field: field.into(), reason: reason.into() })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("target confidence must lie in (0, 1) and epsilon must be positive")]
pub struct DomainError;

/// Requested co-scheduling mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum ModeHint {
    Simultaneous,
    Interleaved,
    AsyncStreaming,
    #[default]
    Auto,
}

impl ModeHint {
    pub fn as_str(self) -> &'static str {
        match self {
            ModeHint::Simultaneous => "simultaneous",
            ModeHint::Interleaved => "interleaved",
            ModeHint::AsyncStreaming => "async_streaming",
            ModeHint::Auto => "auto",
        }
    }
}

impl FromStr for ModeHint {
    type Err = ();
    fn from_str(s: &str) -> Result<Self, ()> {
        match s {
            "simultaneous" => Ok(ModeHint::Simultaneous),
            "interleaved" => Ok(ModeHint::Interleaved),
            "async_streaming" | "async" => Ok(ModeHint::AsyncStreaming),
            "auto" => Ok(ModeHint::Auto),
            _ => Err(()),
        }
    }
}

/// What to do when no QPU can host the job.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FallbackPolicy {
    EmulateOnGpu,
    QueueForQpu,
    FailDegraded,
}

impl FallbackPolicy {
    pub fn as_str(self) -> &'static str {
        match self {
            FallbackPolicy::EmulateOnGpu => "emulate_on_gpu",
            FallbackPolicy::QueueForQpu => "queue_for_qpu",
            FallbackPolicy::FailDegraded => "fail_degraded",
        }
    }
}

impl FromStr for FallbackPolicy {
    type Err = ();
    fn from_str(s: &str) -> Result<Self, ()> {
        match s {
            "emulate_on_gpu" => Ok(FallbackPolicy::EmulateOnGpu),
            "queue_for_qpu" => Ok(FallbackPolicy::QueueForQpu),
            "fail_degraded" => Ok(FallbackPolicy::FailDegraded),
            _ => Err(()),
        }
    }
}

/// One entry of a modality preference list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModalityPreference {
    Specific(Modality),
    BestAvailable,
}

impl ModalityPreference {
    pub fn as_str(self) -> &'static str {
        match self {
            ModalityPreference::Specific(m) => m.as_str(),
            ModalityPreference::BestAvailable => "best_available",
        }
    }

    pub fn admits(self, m: Modality) -> bool {
        match self {
            ModalityPreference::Specific(want) => want == m,
            ModalityPreference::BestAvailable => true,
        }
    }
}

impl FromStr for ModalityPreference {
    type Err = ();
    fn from_str(s: &str) -> Result<Self, ()> {
        if s == "best_available" {
            Ok(ModalityPreference::BestAvailable)
        } else {
            s.parse().map(ModalityPreference::Specific)
        }
    }
}

/// How many shots a job asks for.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ShotSpec {
    Budget(u64),
    Confidence { target: f64, epsilon: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassicalDescriptor {
    pub cpu_cores: u32,
    pub gpu_count: u32,
    pub memory_gb: f64,
    pub walltime_s: f64,
    pub mpi_ranks: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantumDescriptor {
    pub qubit_count: u32,
    pub connectivity: Connectivity,
    pub shots: ShotSpec,
    pub modality_preference: Vec<ModalityPreference>,
    pub circuit_depth: u32,
    /// Circuit source, carried verbatim and never interpreted.
    pub circuit: String,
    pub fallback_policy: FallbackPolicy,
}

impl QuantumDescriptor {
    /// Shots per circuit evaluation, converting a confidence target with the
    /// Hoeffding bound when needed.
    pub fn effective_shots(&self) -> u64 {
        match self.shots {
            ShotSpec::Budget(n) => n,
            ShotSpec::Confidence { target, epsilon } => shots_from_confidence(target, epsilon).unwrap_or(u64::MAX),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HybridWorkloadDescriptor {
    pub job_id: String,
    pub classical: ClassicalDescriptor,
    pub quantum: Option<QuantumDescriptor>,
    pub mode_hint: ModeHint,
    pub priority: u32,
}

/// Cluster-wide upper bounds applied while validating descriptors.
#[derive(Debug, Clone, PartialEq)]
pub struct HwdLimits {
    pub max_cpu_cores: u32,
    pub max_gpu_count: u32,
    pub max_memory_gb: f64,
    pub max_walltime_s: f64,
    pub max_mpi_ranks: u32,
    pub max_qubits: u32,
    pub max_depth: u32,
    pub max_shots: u64,
}

impl Default for HwdLimits {
    fn default() -> Self {
        Self {
            max_cpu_cores: 1 << 20,
            max_gpu_count: 1 << 16,
            max_memory_gb: 1e8,
            max_walltime_s: 3.0e7,
            max_mpi_ranks: 1 << 20,
            max_qubits: 1 << 20,
            max_depth: 1 << 30,
            max_shots: 1 << 40,
        }
    }
}

/// Minimum number of shots so that the sample mean of a `[0, 1]`-bounded
/// observable lies within `epsilon` of its expectation with probability at
/// least `target_confidence` (two-sided Hoeffding bound):
/// `ceil(ln(2 / (1 - c)) / (2 eps^2))`.
pub fn shots_from_confidence(target_confidence: f64, epsilon: f64) -> Result<u64, DomainError> {
    if !(target_confidence > 0.0 && target_confidence < 1.0) || !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(DomainError);
    }
    let shots = libm::ceil(libm::log(2.0 / (1.0 - target_confidence)) / (2.0 * epsilon * epsilon));
    if !(shots < u64::MAX as f64) {
        return Err(DomainError);
    }
    Ok(shots as u64)
}

pub fn valid_job_id(id: &str) -> bool {
    !id.is_empty() && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'))
}

/// Parses and validates a descriptor document with default limits.
pub fn parse_hwd(text: &str) -> Result<HybridWorkloadDescriptor, HwdError> {
    parse_hwd_with(text, &HwdLimits::default())
}

pub fn parse_hwd_with(text: &str, limits: &HwdLimits) -> Result<HybridWorkloadDescriptor, HwdError> {
    let root = doc::parse(text)?;
    HybridWorkloadDescriptor::from_node(&root, limits)
}

/// Walks one mapping, remembering which keys were read so the rest can be
/// reported as unknown.
struct Fields<'a> {
    path: &'a str,
    entries: &'a [Entry],
    seen: Vec<&'a str>,
}

impl<'a> Fields<'a> {
    fn new(path: &'a str, node: &'a Node) -> Result<Self, HwdError> {
        match node.as_map() {
            Some(entries) => Ok(Self { path, entries, seen: Vec::new() }),
            None => invalid(display_path(path), format!("expected a mapping, found a {}", node.kind_name())),
        }
    }

    fn field(&self, key: &str) -> String {
        if self.path.is_empty() {
            key.to_string()
        } else {
            format!("{}.{key}", self.path)
        }
    }

    fn node(&mut self, key: &'a str) -> Option<&'a Node> {
        self.seen.push(key);
        self.entries.iter().find(|e| e.key == key).map(|e| &e.node)
    }

    fn scalar(&mut self, key: &'a str) -> Result<Option<&'a str>, HwdError> {
        match self.node(key) {
            None => Ok(None),
            Some(n) => match n.as_scalar() {
                Some(s) => Ok(Some(s)),
                None => invalid(self.field(key), format!("expected a scalar, found a {}", n.kind_name())),
            },
        }
    }

    fn required(&mut self, key: &'a str) -> Result<&'a str, HwdError> {
        match self.scalar(key)? {
            Some(s) => Ok(s),
            None => invalid(self.field(key), "missing required key"),
        }
    }

    fn number<T: FromStr>(&self, key: &str, text: &str, what: &str) -> Result<T, HwdError> {
        text.parse::<T>().or_else(|_| invalid(self.field(key), format!("`{text}` is not {what}")))
    }

    fn finish(self) -> Result<(), HwdError> {
        for e in self.entries {
            if !self.seen.contains(&e.key.as_str()) {
                return invalid(self.field(&e.key), unknown_key(e.pos));
            }
        }
        Ok(())
    }
}

fn unknown_key(pos: Pos) -> String {
    format!("unknown key (line {}, column {})", pos.line, pos.column)
}

fn display_path(path: &str) -> &str {
    if path.is_empty() {
        "<root>"
    } else {
        path
    }
}

impl HybridWorkloadDescriptor {
    /// Builds a descriptor from an already-parsed mapping node (used for
    /// inline descriptors embedded in scenario files).
    pub fn from_node(root: &Node, limits: &HwdLimits) -> Result<Self, HwdError> {
        let mut top = Fields::new("", root)?;
        let job_id = top.required("job_id")?.to_string();
        let priority = match top.scalar("priority")? {
            Some(t) => top.number::<u32>("priority", t, "a non-negative integer")?,
            None => 0,
        };
        let mode_hint = match top.scalar("mode")? {
            Some(t) => t.parse().or_else(|_| {
                invalid("mode", format!("`{t}` is not one of simultaneous, interleaved, async_streaming, auto"))
            })?,
            None => ModeHint::Auto,
        };
        let classical = match top.node("classical") {
            Some(n) => parse_classical(n)?,
            None => return invalid("classical", "missing required key"),
        };
        let quantum = match top.node("quantum") {
            Some(n) => Some(parse_quantum(n)?),
            None => None,
        };
        top.finish()?;
        let d = Self { job_id, classical, quantum, mode_hint, priority };
        d.validate(limits)?;
        Ok(d)
    }

    /// Checks every descriptor invariant.
    pub fn validate(&self, limits: &HwdLimits) -> Result<(), HwdError> {
        if self.job_id.is_empty() {
            return invalid("job_id", "must not be empty");
        }
        if !valid_job_id(&self.job_id) {
            return invalid("job_id", "may only contain ASCII letters, digits, `_`, `-` and `.`");
        }
        if self.quantum.is_none() && self.mode_hint != ModeHint::Auto {
            return invalid("mode", "a co-scheduling mode needs a quantum section");
        }
        let c = &self.classical;
        if c.cpu_cores < 1 {
            return invalid("classical.cpu_cores", "must be at least 1");
        }
        if c.cpu_cores > limits.max_cpu_cores {
            return invalid("classical.cpu_cores", format!("exceeds cluster maximum {}", limits.max_cpu_cores));
        }
        if c.gpu_count > limits.max_gpu_count {
            return invalid("classical.gpu_count", format!("exceeds cluster maximum {}", limits.max_gpu_count));
        }
        if !(c.memory_gb > 0.0) || !c.memory_gb.is_finite() {
            return invalid("classical.memory_gb", "must be a positive number");
        }
        if c.memory_gb > limits.max_memory_gb {
            return invalid("classical.memory_gb", format!("exceeds cluster maximum {}", limits.max_memory_gb));
        }
        if !(c.walltime_s > 0.0) || !c.walltime_s.is_finite() {
            return invalid("classical.walltime_s", "must be a positive number");
        }
        if c.walltime_s > limits.max_walltime_s {
            return invalid("classical.walltime_s", format!("exceeds cluster maximum {}", limits.max_walltime_s));
        }
        if c.mpi_ranks < 1 {
            return invalid("classical.mpi_ranks", "must be at least 1");
        }
        if c.mpi_ranks > limits.max_mpi_ranks {
            return invalid("classical.mpi_ranks", format!("exceeds cluster maximum {}", limits.max_mpi_ranks));
        }
        if let Some(q) = &self.quantum {
            q.validate(limits)?;
        }
        Ok(())
    }

    /// Canonical document text. Parsing the output yields `self` again.
    pub fn to_document(&self) -> String {
        let mut out = String::new();
        self.write_document(&mut out).expect("writing to a String cannot fail");
        out
    }

    fn write_document(&self, out: &mut String) -> fmt::Result {
        writeln!(out, "job_id: {}", Scalar(&self.job_id))?;
        writeln!(out, "priority: {}", self.priority)?;
        writeln!(out, "mode: {}", self.mode_hint.as_str())?;
        let c = &self.classical;
        writeln!(out, "classical:")?;
        writeln!(out, "  cpu_cores: {}", c.cpu_cores)?;
        writeln!(out, "  gpu_count: {}", c.gpu_count)?;
        writeln!(out, "  memory_gb: {}", c.memory_gb)?;
        writeln!(out, "  walltime_s: {}", c.walltime_s)?;
        writeln!(out, "  mpi_ranks: {}", c.mpi_ranks)?;
        if let Some(q) = &self.quantum {
            writeln!(out, "quantum:")?;
            writeln!(out, "  qubits: {}", q.qubit_count)?;
            writeln!(out, "  connectivity: {}", q.connectivity)?;
            match q.shots {
                ShotSpec::Budget(n) => writeln!(out, "  shots: {n}")?,
                ShotSpec::Confidence { target, epsilon } => {
                    writeln!(out, "  confidence: {target}")?;
                    writeln!(out, "  epsilon: {epsilon}")?;
                }
            }
            out.push_str("  modalities: [");
            for (i, m) in q.modality_preference.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                out.push_str(m.as_str());
            }
            out.push_str("]\n");
            writeln!(out, "  depth: {}", q.circuit_depth)?;
            if !q.circuit.is_empty() {
                writeln!(out, "  circuit: {}", Scalar(&q.circuit))?;
            }
            writeln!(out, "  fallback: {}", q.fallback_policy.as_str())?;
        }
        Ok(())
    }
}

impl QuantumDescriptor {
    pub fn validate(&self, limits: &HwdLimits) -> Result<(), HwdError> {
        if self.qubit_count < 1 {
            return invalid("quantum.qubits", "must be at least 1");
        }
        if self.qubit_count > limits.max_qubits {
            return invalid("quantum.qubits", format!("exceeds cluster maximum {}", limits.max_qubits));
        }
        match self.shots {
            ShotSpec::Budget(n) => {
                if n < 1 {
                    return invalid("quantum.shots", "must be at least 1");
                }
                if n > limits.max_shots {
                    return invalid("quantum.shots", format!("exceeds cluster maximum {}", limits.max_shots));
                }
            }
            ShotSpec::Confidence { target, epsilon } => {
                if !(target > 0.0 && target < 1.0) {
                    return invalid("quantum.confidence", "must lie strictly between 0 and 1");
                }
                if !(epsilon > 0.0) || !epsilon.is_finite() {
                    return invalid("quantum.epsilon", "must be a positive number");
                }
                match shots_from_confidence(target, epsilon) {
                    Ok(n) if n <= limits.max_shots => {}
                    _ => return invalid("quantum.epsilon", "implied shot count exceeds the cluster maximum"),
                }
            }
        }
        if self.modality_preference.is_empty() {
            return invalid("quantum.modalities", "must list at least one modality");
        }
        for (i, m) in self.modality_preference.iter().enumerate() {
            if *m == ModalityPreference::BestAvailable && i + 1 != self.modality_preference.len() {
                return invalid("quantum.modalities", "`best_available` may only appear last");
            }
            if self.modality_preference[..i].contains(m) {
                return invalid("quantum.modalities", format!("`{}` listed twice", m.as_str()));
            }
        }
        if self.circuit_depth < 1 {
            return invalid("quantum.depth", "must be at least 1");
        }
        if self.circuit_depth > limits.max_depth {
            return invalid("quantum.depth", format!("exceeds cluster maximum {}", limits.max_depth));
        }
        Ok(())
    }
}

fn parse_classical(node: &Node) -> Result<ClassicalDescriptor, HwdError> {
    let mut f = Fields::new("classical", node)?;
    let t = f.required("cpu_cores")?;
    let cpu_cores = f.number("cpu_cores", t, "a positive integer")?;
    let gpu_count = match f.scalar("gpu_count")? {
        Some(t) => f.number("gpu_count", t, "a non-negative integer")?,
        None => 0,
    };
    let t = f.required("memory_gb")?;
    let memory_gb = f.number("memory_gb", t, "a number")?;
    let t = f.required("walltime_s")?;
    let walltime_s = f.number("walltime_s", t, "a number")?;
    let t = f.required("mpi_ranks")?;
    let mpi_ranks = f.number("mpi_ranks", t, "a positive integer")?;
    f.finish()?;
    Ok(ClassicalDescriptor { cpu_cores, gpu_count, memory_gb, walltime_s, mpi_ranks })
}

fn parse_quantum(node: &Node) -> Result<QuantumDescriptor, HwdError> {
    let mut f = Fields::new("quantum", node)?;
    let t = f.required("qubits")?;
    let qubit_count = f.number("qubits", t, "a positive integer")?;
    let t = f.required("connectivity")?;
    let connectivity =
        t.parse().or_else(|_| invalid("quantum.connectivity", format!("`{t}` is not a known connectivity class")))?;

    let shots = f.scalar("shots")?;
    let confidence = f.scalar("confidence")?;
    let epsilon = f.scalar("epsilon")?;
    let shots = match (shots, confidence) {
        (Some(_), Some(_)) => return invalid("quantum.confidence", "`shots` and `confidence` are mutually exclusive"),
        (None, None) => return invalid("quantum.shots", "one of `shots` or `confidence` is required"),
        (Some(t), None) => {
            if epsilon.is_some() {
                return invalid("quantum.epsilon", "only meaningful together with `confidence`");
            }
            ShotSpec::Budget(f.number("shots", t, "a positive integer")?)
        }
        (None, Some(t)) => {
            let target = f.number("confidence", t, "a number")?;
            let epsilon = match epsilon {
                Some(e) => f.number("epsilon", e, "a number")?,
                None => DEFAULT_EPSILON,
            };
            ShotSpec::Confidence { target, epsilon }
        }
    };

    let modality_preference = match f.node("modalities") {
        None => return invalid("quantum.modalities", "missing required key"),
        Some(n) => {
            let Some(items) = n.as_seq() else {
                return invalid("quantum.modalities", format!("expected a sequence, found a {}", n.kind_name()));
            };
            let mut prefs = Vec::with_capacity(items.len());
            for item in items {
                let text = item.as_scalar().unwrap_or("");
                let m = text
                    .parse()
                    .or_else(|_| invalid("quantum.modalities", format!("`{text}` is not a known modality")))?;
                prefs.push(m);
            }
            prefs
        }
    };
    let t = f.required("depth")?;
    let circuit_depth = f.number("depth", t, "a positive integer")?;
    let circuit = f.scalar("circuit")?.unwrap_or("").to_string();
    let t = f.required("fallback")?;
    let fallback_policy =
        t.parse().or_else(|_| invalid("quantum.fallback", format!("`{t}` is not a known fallback policy")))?;
    f.finish()?;
    Ok(QuantumDescriptor {
        qubit_count,
        connectivity,
        shots,
        modality_preference,
        circuit_depth,
        circuit,
        fallback_policy,
    })
}
