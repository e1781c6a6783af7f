//! Directed cyclic task graphs.
//!
//! Nodes are typed (CPU, GPU, QPU, FPGA) and connected by data edges. Cycles
//! are only allowed as declared feedback loops: a loop lists its members from
//! head to tail, the edge `tail -> head` is its back-edge, and the loop runs
//! for exactly `max_iterations` rounds. Loops must be vertex-disjoint, and
//! removing all back-edges must leave a DAG.

use alloc::collections::{BTreeMap, BTreeSet, VecDeque};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Write as _;

use crate::hwd::HybridWorkloadDescriptor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TaskKind {
    Cpu,
    Gpu,
    Qpu,
    Fpga,
}

impl TaskKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::Cpu => "CPU",
            TaskKind::Gpu => "GPU",
            TaskKind::Qpu => "QPU",
            TaskKind::Fpga => "FPGA",
        }
    }

    pub fn is_classical(self) -> bool {
        self != TaskKind::Qpu
    }
}

impl core::str::FromStr for TaskKind {
    type Err = ();
    fn from_str(s: &str) -> Result<Self, ()> {
        match s {
            "CPU" => Ok(TaskKind::Cpu),
            "GPU" => Ok(TaskKind::Gpu),
            "QPU" => Ok(TaskKind::Qpu),
            "FPGA" => Ok(TaskKind::Fpga),
            _ => Err(()),
        }
    }
}

impl core::fmt::Display for TaskKind {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DurationModel {
    /// Service time in seconds (CPU, GPU, FPGA nodes).
    Fixed(f64),
    /// QPU work; the time is derived by the fabric cost model.
    Circuit { shots: u64, depth: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Demand {
    pub cores: u32,
    pub gpus: u32,
    pub qubits: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskNode {
    pub id: String,
    pub kind: TaskKind,
    pub duration: DurationModel,
    pub demand: Demand,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeedbackLoop {
    /// Node indices from head to tail.
    pub members: Vec<usize>,
    pub max_iterations: u32,
}

impl FeedbackLoop {
    pub fn head(&self) -> usize {
        self.members[0]
    }

    pub fn tail(&self) -> usize {
        *self.members.last().expect("loops are non-empty")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GraphError {
    #[error("node id `{0}` must be non-empty and free of whitespace and `#`")]
    BadNodeId(String),
    #[error("duplicate node `{0}`")]
    DuplicateNode(String),
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("node `{0}`: {1}")]
    BadNode(String, &'static str),
    #[error("self-loop on `{0}`")]
    SelfLoop(String),
    #[error("duplicate edge `{0}` -> `{1}`")]
    DuplicateEdge(String, String),
    #[error("feedback loop {0} needs at least two members")]
    LoopTooSmall(usize),
    #[error("feedback loop {0} has zero iterations")]
    ZeroIterations(usize),
    #[error("node `{0}` belongs to more than one feedback loop")]
    OverlappingLoops(String),
    #[error("feedback loop {0} has no back-edge `{1}` -> `{2}`")]
    MissingBackEdge(usize, String, String),
    #[error("graph has a cycle not declared as a feedback loop")]
    UncoveredCycle,
    #[error("feedback loop {0} does not match the nodes between its head and tail")]
    LoopBodyMismatch(usize),
    #[error("feedback loops {0} and {1} form a cycle through each other")]
    InteractingLoops(usize, usize),
    #[error("line {line}: {reason}")]
    Syntax { line: usize, reason: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskGraph {
    nodes: Vec<TaskNode>,
    edges: Vec<Edge>,
    loops: Vec<FeedbackLoop>,
    index: BTreeMap<String, usize>,
}

fn valid_node_id(id: &str) -> bool {
    !id.is_empty() && !id.chars().any(|c| c.is_whitespace() || c == '#')
}

impl TaskGraph {
    /// Builds and validates a graph from id-based edges and loops.
    pub fn new(
        nodes: Vec<TaskNode>,
        edges: Vec<(String, String, u64)>,
        loops: Vec<(Vec<String>, u32)>,
    ) -> Result<Self, GraphError> {
        let mut index = BTreeMap::new();
        for (i, n) in nodes.iter().enumerate() {
            if !valid_node_id(&n.id) {
                return Err(GraphError::BadNodeId(n.id.clone()));
            }
            if index.insert(n.id.clone(), i).is_some() {
                return Err(GraphError::DuplicateNode(n.id.clone()));
            }
        }
        let lookup = |id: &str| index.get(id).copied().ok_or_else(|| GraphError::UnknownNode(id.to_string()));
        let mut e = Vec::with_capacity(edges.len());
        for (s, d, bytes) in &edges {
            e.push(Edge { src: lookup(s)?, dst: lookup(d)?, bytes: *bytes });
        }
        let mut l = Vec::with_capacity(loops.len());
        for (members, iters) in &loops {
            let members = members.iter().map(|m| lookup(m)).collect::<Result<Vec<_>, _>>()?;
            l.push(FeedbackLoop { members, max_iterations: *iters });
        }
        let g = Self { nodes, edges: e, loops: l, index };
        g.validate()?;
        Ok(g)
    }

    fn from_indexed(nodes: Vec<TaskNode>, edges: Vec<Edge>, loops: Vec<FeedbackLoop>) -> Result<Self, GraphError> {
        let mut index = BTreeMap::new();
        for (i, n) in nodes.iter().enumerate() {
            if index.insert(n.id.clone(), i).is_some() {
                return Err(GraphError::DuplicateNode(n.id.clone()));
            }
        }
        let g = Self { nodes, edges, loops, index };
        g.validate()?;
        Ok(g)
    }

    /// Same edges and loops, nodes replaced one for one. Ids must not change.
    pub fn map_nodes(&self, f: impl FnMut(&TaskNode) -> TaskNode) -> Result<Self, GraphError> {
        let nodes: Vec<TaskNode> = self.nodes.iter().map(f).collect();
        if let Some((n, _)) = nodes.iter().zip(&self.nodes).find(|(a, b)| a.id != b.id) {
            return Err(GraphError::UnknownNode(n.id.clone()));
        }
        Self::from_indexed(nodes, self.edges.clone(), self.loops.clone())
    }

    pub fn nodes(&self) -> &[TaskNode] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn feedback_loops(&self) -> &[FeedbackLoop] {
        &self.loops
    }

    pub fn node_index(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn node(&self, idx: usize) -> &TaskNode {
        &self.nodes[idx]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn is_back_edge(&self, e: &Edge) -> bool {
        self.loops.iter().any(|l| e.src == l.tail() && e.dst == l.head())
    }

    /// Edges with all loop back-edges removed.
    pub fn forward_edges(&self) -> impl Iterator<Item = &Edge> {
        self.edges.iter().filter(move |e| !self.is_back_edge(e))
    }

    fn adjacency(&self, include_back: bool) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.nodes.len()];
        for e in &self.edges {
            if include_back || !self.is_back_edge(e) {
                adj[e.src].push(e.dst);
            }
        }
        adj
    }

    fn validate(&self) -> Result<(), GraphError> {
        let name = |i: usize| self.nodes[i].id.clone();
        for n in &self.nodes {
            match (n.kind, n.duration) {
                (TaskKind::Qpu, DurationModel::Circuit { shots, depth }) => {
                    if shots == 0 || depth == 0 {
                        return Err(GraphError::BadNode(n.id.clone(), "shots and depth must be positive"));
                    }
                    if n.demand.qubits == 0 {
                        return Err(GraphError::BadNode(n.id.clone(), "QPU nodes need at least one qubit"));
                    }
                }
                (TaskKind::Qpu, DurationModel::Fixed(_)) => {
                    return Err(GraphError::BadNode(n.id.clone(), "QPU nodes take a shots/depth duration model"))
                }
                (_, DurationModel::Circuit { .. }) => {
                    return Err(GraphError::BadNode(n.id.clone(), "only QPU nodes take a shots/depth duration model"))
                }
                (_, DurationModel::Fixed(s)) => {
                    if !(s > 0.0 && s.is_finite()) {
                        return Err(GraphError::BadNode(n.id.clone(), "duration must be positive"));
                    }
                }
            }
        }
        let mut seen = BTreeSet::new();
        for e in &self.edges {
            if e.src == e.dst {
                return Err(GraphError::SelfLoop(name(e.src)));
            }
            if !seen.insert((e.src, e.dst)) {
                return Err(GraphError::DuplicateEdge(name(e.src), name(e.dst)));
            }
        }
        let mut owner = vec![None; self.nodes.len()];
        for (li, l) in self.loops.iter().enumerate() {
            if l.members.len() < 2 {
                return Err(GraphError::LoopTooSmall(li));
            }
            if l.max_iterations == 0 {
                return Err(GraphError::ZeroIterations(li));
            }
            for &m in &l.members {
                if owner[m].replace(li).is_some() {
                    return Err(GraphError::OverlappingLoops(name(m)));
                }
            }
            if !seen.contains(&(l.tail(), l.head())) {
                return Err(GraphError::MissingBackEdge(li, name(l.tail()), name(l.head())));
            }
        }
        let fwd = self.adjacency(false);
        if topo_sort(&fwd).is_none() {
            return Err(GraphError::UncoveredCycle);
        }
        let reach = reachability(&fwd);
        for (li, l) in self.loops.iter().enumerate() {
            let body: BTreeSet<usize> =
                (0..self.nodes.len()).filter(|&v| reach[l.head()][v] && reach[v][l.tail()]).collect();
            let members: BTreeSet<usize> = l.members.iter().copied().collect();
            if body != members {
                return Err(GraphError::LoopBodyMismatch(li));
            }
        }
        // A cycle through two or more back-edges exists iff the "head of A
        // reaches tail of B" relation between loops has a cycle.
        let k = self.loops.len();
        let mut inter = vec![Vec::new(); k];
        for a in 0..k {
            for b in 0..k {
                if a != b && reach[self.loops[a].head()][self.loops[b].tail()] {
                    inter[a].push(b);
                }
            }
        }
        if topo_sort(&inter).is_none() {
            let (a, b) = (0..k)
                .flat_map(|a| inter[a].iter().map(move |&b| (a, b)))
                .find(|&(a, b)| inter[b].contains(&a))
                .unwrap_or((0, 0));
            return Err(GraphError::InteractingLoops(a, b));
        }
        Ok(())
    }

    /// Topological order of the graph with back-edges removed, breaking ties
    /// by node id.
    pub fn topo_order(&self) -> Vec<usize> {
        topo_sort_by_id(&self.adjacency(false), &self.nodes).expect("validated graphs are acyclic without back-edges")
    }

    /// Whether a topological sort of all edges, back-edges included,
    /// succeeds.
    pub fn is_acyclic(&self) -> bool {
        topo_sort(&self.adjacency(true)).is_some()
    }

    /// Predecessor node indices over forward edges.
    pub fn predecessors(&self, v: usize) -> Vec<usize> {
        self.forward_edges().filter(|e| e.dst == v).map(|e| e.src).collect()
    }

    pub fn successors(&self, v: usize) -> Vec<usize> {
        self.forward_edges().filter(|e| e.src == v).map(|e| e.dst).collect()
    }

    pub fn loop_of(&self, v: usize) -> Option<usize> {
        self.loops.iter().position(|l| l.members.contains(&v))
    }

    /// Line-oriented text form; [`parse_graph_text`] reads it back.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for n in &self.nodes {
            let _ = write!(out, "node {} {}", n.id, n.kind);
            match n.duration {
                DurationModel::Fixed(s) => {
                    let _ = write!(out, " duration={s}");
                }
                DurationModel::Circuit { shots, depth } => {
                    let _ = write!(out, " shots={shots} depth={depth}");
                }
            }
            let _ = writeln!(out, " cores={} gpus={} qubits={}", n.demand.cores, n.demand.gpus, n.demand.qubits);
        }
        for e in &self.edges {
            let _ = writeln!(out, "edge {} {} {}", self.nodes[e.src].id, self.nodes[e.dst].id, e.bytes);
        }
        for l in &self.loops {
            out.push_str("loop");
            for &m in &l.members {
                out.push(' ');
                out.push_str(&self.nodes[m].id);
            }
            let _ = writeln!(out, " {}", l.max_iterations);
        }
        out
    }
}

fn topo_sort(adj: &[Vec<usize>]) -> Option<Vec<usize>> {
    let n = adj.len();
    let mut indeg = vec![0usize; n];
    for outs in adj {
        for &d in outs {
            indeg[d] += 1;
        }
    }
    let mut queue: VecDeque<usize> = (0..n).filter(|&v| indeg[v] == 0).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(v) = queue.pop_front() {
        order.push(v);
        for &d in &adj[v] {
            indeg[d] -= 1;
            if indeg[d] == 0 {
                queue.push_back(d);
            }
        }
    }
    (order.len() == n).then_some(order)
}

fn topo_sort_by_id(adj: &[Vec<usize>], nodes: &[TaskNode]) -> Option<Vec<usize>> {
    let n = adj.len();
    let mut indeg = vec![0usize; n];
    for outs in adj {
        for &d in outs {
            indeg[d] += 1;
        }
    }
    let mut ready: BTreeSet<(&str, usize)> =
        (0..n).filter(|&v| indeg[v] == 0).map(|v| (nodes[v].id.as_str(), v)).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(first) = ready.pop_first() {
        let v = first.1;
        order.push(v);
        for &d in &adj[v] {
            indeg[d] -= 1;
            if indeg[d] == 0 {
                ready.insert((nodes[d].id.as_str(), d));
            }
        }
    }
    (order.len() == n).then_some(order)
}

/// `reach[a][b]`: a path of length >= 0 leads from `a` to `b`.
fn reachability(adj: &[Vec<usize>]) -> Vec<Vec<bool>> {
    let n = adj.len();
    let mut reach = vec![vec![false; n]; n];
    for (s, row) in reach.iter_mut().enumerate() {
        let mut stack = vec![s];
        row[s] = true;
        while let Some(v) = stack.pop() {
            for &d in &adj[v] {
                if !row[d] {
                    row[d] = true;
                    stack.push(d);
                }
            }
        }
    }
    reach
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PathClassification {
    /// `[cpu predecessor, qpu, cpu successor]` node ids.
    pub latency_critical_chains: Vec<Vec<String>>,
    /// Groups of QPU node ids with no path between any two members.
    pub latency_tolerant_batches: Vec<Vec<String>>,
}

/// Splits QPU nodes into latency-critical chains and latency-tolerant
/// batches.
///
/// A QPU node inside a feedback loop with at least one CPU predecessor and
/// one CPU successor forms a chain with its lexicographically smallest CPU
/// neighbours on each side. The remaining QPU nodes are packed, in id order,
/// into the first batch whose members are all unreachable from and unable to
/// reach the node (back-edges included).
pub fn classify_paths(g: &TaskGraph) -> PathClassification {
    let mut out = PathClassification::default();
    let reach = reachability(&g.adjacency(true));
    let mut qpus: Vec<usize> = (0..g.len()).filter(|&v| g.node(v).kind == TaskKind::Qpu).collect();
    qpus.sort_by(|&a, &b| g.node(a).id.cmp(&g.node(b).id));
    let min_cpu = |vs: Vec<usize>| {
        vs.into_iter().filter(|&v| g.node(v).kind == TaskKind::Cpu).map(|v| g.node(v).id.clone()).min()
    };
    let mut rest = Vec::new();
    for q in qpus {
        let chain = match g.loop_of(q) {
            Some(_) => min_cpu(g.predecessors(q)).zip(min_cpu(g.successors(q))),
            None => None,
        };
        match chain {
            Some((pre, post)) => out.latency_critical_chains.push(vec![pre, g.node(q).id.clone(), post]),
            None => rest.push(q),
        }
    }
    let mut batches: Vec<Vec<usize>> = Vec::new();
    for q in rest {
        let slot = batches.iter_mut().find(|b| b.iter().all(|&o| !reach[o][q] && !reach[q][o]));
        match slot {
            Some(b) => b.push(q),
            None => batches.push(vec![q]),
        }
    }
    out.latency_tolerant_batches =
        batches.into_iter().map(|b| b.into_iter().map(|v| g.node(v).id.clone()).collect()).collect();
    out
}

/// Replaces every feedback loop by `max_iterations` sequential copies of its
/// body. Copy `i` of node `v` is named `v#i`. Edges entering the loop from
/// outside attach to copy 0, edges leaving it start from the last copy, and
/// the back-edge links the tail of copy `i` to the head of copy `i + 1`.
pub fn unroll(g: &TaskGraph) -> TaskGraph {
    if g.loops.is_empty() {
        return g.clone();
    }
    let n = g.len();
    // copies[v] = new indices of v's copies (one for non-loop nodes).
    let mut copies: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut nodes = Vec::new();
    for (v, node) in g.nodes.iter().enumerate() {
        match g.loop_of(v) {
            None => {
                copies[v].push(nodes.len());
                nodes.push(node.clone());
            }
            Some(li) => {
                for i in 0..g.loops[li].max_iterations {
                    copies[v].push(nodes.len());
                    nodes.push(TaskNode { id: format!("{}#{i}", node.id), ..node.clone() });
                }
            }
        }
    }
    let mut edges = Vec::new();
    for e in &g.edges {
        let (ls, ld) = (g.loop_of(e.src), g.loop_of(e.dst));
        if g.is_back_edge(e) {
            let c = &copies[e.src];
            for i in 0..c.len() - 1 {
                edges.push(Edge { src: c[i], dst: copies[e.dst][i + 1], bytes: e.bytes });
            }
        } else if ls.is_some() && ls == ld {
            for (&s, &d) in copies[e.src].iter().zip(&copies[e.dst]) {
                edges.push(Edge { src: s, dst: d, bytes: e.bytes });
            }
        } else {
            let s = *copies[e.src].last().expect("every node has a copy");
            let d = copies[e.dst][0];
            edges.push(Edge { src: s, dst: d, bytes: e.bytes });
        }
    }
    TaskGraph::from_indexed(nodes, edges, Vec::new()).expect("unrolling a valid graph yields a valid DAG")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Template {
    VqeLoop,
    BatchedCircuits,
    ClassicalOnly,
}

impl Template {
    pub fn as_str(self) -> &'static str {
        match self {
            Template::VqeLoop => "vqe_loop",
            Template::BatchedCircuits => "batched_circuits",
            Template::ClassicalOnly => "classical_only",
        }
    }
}

impl core::str::FromStr for Template {
    type Err = ();
    fn from_str(s: &str) -> Result<Self, ()> {
        match s {
            "vqe_loop" => Ok(Template::VqeLoop),
            "batched_circuits" => Ok(Template::BatchedCircuits),
            "classical_only" => Ok(Template::ClassicalOnly),
            _ => Err(()),
        }
    }
}

/// Service times (seconds) and sizes used by the graph templates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TemplateConfig {
    pub vqe_iterations: u32,
    pub batch_size: u32,
    pub init_s: f64,
    pub optimize_s: f64,
    pub measure_s: f64,
    pub finalize_s: f64,
    pub prep_s: f64,
    pub reduce_s: f64,
}

impl Default for TemplateConfig {
    fn default() -> Self {
        Self {
            vqe_iterations: 10,
            batch_size: 8,
            init_s: 1.0,
            optimize_s: 0.5,
            measure_s: 0.2,
            finalize_s: 1.0,
            prep_s: 1.0,
            reduce_s: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TemplateError {
    #[error("template `{0}` needs a quantum section")]
    QuantumRequired(&'static str),
    #[error("template parameter `{0}` out of range")]
    BadConfig(&'static str),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

pub fn build_graph(
    d: &HybridWorkloadDescriptor,
    template: Template,
    cfg: &TemplateConfig,
) -> Result<TaskGraph, TemplateError> {
    let cores = d.classical.cpu_cores;
    let cpu = |id: &str, s: f64| TaskNode {
        id: id.to_string(),
        kind: TaskKind::Cpu,
        duration: DurationModel::Fixed(s),
        demand: Demand { cores, gpus: 0, qubits: 0 },
    };
    for (name, v) in [
        ("init_s", cfg.init_s),
        ("optimize_s", cfg.optimize_s),
        ("measure_s", cfg.measure_s),
        ("finalize_s", cfg.finalize_s),
        ("prep_s", cfg.prep_s),
        ("reduce_s", cfg.reduce_s),
    ] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(TemplateError::BadConfig(name));
        }
    }
    let e = |s: &str, t: &str, b: u64| (s.to_string(), t.to_string(), b);
    let graph = match template {
        Template::ClassicalOnly => {
            let wall = d.classical.walltime_s;
            if d.classical.gpu_count == 0 {
                TaskGraph::new(vec![cpu("main", wall)], Vec::new(), Vec::new())?
            } else {
                let gpu = TaskNode {
                    id: "gpu".into(),
                    kind: TaskKind::Gpu,
                    duration: DurationModel::Fixed(0.9 * wall),
                    demand: Demand { cores, gpus: d.classical.gpu_count, qubits: 0 },
                };
                TaskGraph::new(vec![cpu("pre", 0.1 * wall), gpu], vec![e("pre", "gpu", 0)], Vec::new())?
            }
        }
        Template::VqeLoop | Template::BatchedCircuits => {
            let q = d.quantum.as_ref().ok_or(TemplateError::QuantumRequired(template.as_str()))?;
            let shots = q.effective_shots();
            let payload = shots.saturating_mul(q.qubit_count.div_ceil(8) as u64);
            let qpu = |id: String| TaskNode {
                id,
                kind: TaskKind::Qpu,
                duration: DurationModel::Circuit { shots, depth: q.circuit_depth },
                demand: Demand { cores: 0, gpus: 0, qubits: q.qubit_count },
            };
            if template == Template::VqeLoop {
                if cfg.vqe_iterations == 0 {
                    return Err(TemplateError::BadConfig("vqe_iterations"));
                }
                let nodes = vec![
                    cpu("init", cfg.init_s),
                    cpu("opt", cfg.optimize_s),
                    qpu("eval".into()),
                    cpu("measure", cfg.measure_s),
                    cpu("finalize", cfg.finalize_s),
                ];
                let edges = vec![
                    e("init", "opt", 0),
                    e("opt", "eval", 0),
                    e("eval", "measure", payload),
                    e("measure", "opt", 0),
                    e("measure", "finalize", 0),
                ];
                let loops = vec![(vec!["opt".into(), "eval".into(), "measure".into()], cfg.vqe_iterations)];
                TaskGraph::new(nodes, edges, loops)?
            } else {
                let n = cfg.batch_size;
                if n == 0 {
                    return Err(TemplateError::BadConfig("batch_size"));
                }
                let width = (n - 1).max(1).ilog10() as usize + 1;
                let mut nodes = vec![cpu("prep", cfg.prep_s)];
                let mut edges = Vec::new();
                for i in 0..n {
                    let id = format!("circuit-{i:0width$}");
                    edges.push(e("prep", &id, 0));
                    edges.push(e(&id, "reduce", payload));
                    nodes.push(qpu(id));
                }
                nodes.push(cpu("reduce", cfg.reduce_s));
                TaskGraph::new(nodes, edges, Vec::new())?
            }
        }
    };
    Ok(graph)
}

/// Reads the text written by [`TaskGraph::to_text`]. Blank lines and lines
/// starting with `#` are skipped. Node attributes default to zero demand.
pub fn parse_graph_text(text: &str) -> Result<TaskGraph, GraphError> {
    let mut nodes = Vec::new();
    let mut edges = Vec::new();
    let mut loops = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let syntax = |reason: String| GraphError::Syntax { line, reason };
        let t = raw.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let mut words = t.split_whitespace();
        match words.next() {
            Some("node") => {
                let id = words.next().ok_or_else(|| syntax("node needs an id".into()))?;
                let kind_text = words.next().ok_or_else(|| syntax("node needs a kind".into()))?;
                let kind: TaskKind =
                    kind_text.parse().map_err(|_| syntax(format!("unknown node kind `{kind_text}`")))?;
                let mut duration = None;
                let (mut shots, mut depth) = (None, None);
                let mut demand = Demand::default();
                for w in words {
                    let (k, v) = w.split_once('=').ok_or_else(|| syntax(format!("expected key=value, found `{w}`")))?;
                    let int = |v: &str| v.parse::<u64>().map_err(|_| syntax(format!("`{k}` needs an integer")));
                    let small = |v: &str| v.parse::<u32>().map_err(|_| syntax(format!("`{k}` needs an integer")));
                    match k {
                        "duration" => {
                            duration = Some(v.parse::<f64>().map_err(|_| syntax("`duration` needs a number".into()))?)
                        }
                        "shots" => shots = Some(int(v)?),
                        "depth" => depth = Some(small(v)?),
                        "cores" => demand.cores = small(v)?,
                        "gpus" => demand.gpus = small(v)?,
                        "qubits" => demand.qubits = small(v)?,
                        _ => return Err(syntax(format!("unknown node attribute `{k}`"))),
                    }
                }
                let duration = match (duration, shots, depth) {
                    (Some(s), None, None) => DurationModel::Fixed(s),
                    (None, Some(shots), Some(depth)) => DurationModel::Circuit { shots, depth },
                    _ => return Err(syntax("give either duration= or both shots= and depth=".into())),
                };
                nodes.push(TaskNode { id: id.to_string(), kind, duration, demand });
            }
            Some("edge") => {
                let parts: Vec<&str> = words.collect();
                let [s, d, b] = parts[..] else {
                    return Err(syntax("expected `edge <src> <dst> <bytes>`".into()));
                };
                let bytes = b.parse().map_err(|_| syntax(format!("`{b}` is not a byte count")))?;
                edges.push((s.to_string(), d.to_string(), bytes));
            }
            Some("loop") => {
                let mut parts: Vec<&str> = words.collect();
                let iters = parts.pop().ok_or_else(|| syntax("expected `loop <ids...> <iterations>`".into()))?;
                let iters = iters.parse().map_err(|_| syntax(format!("`{iters}` is not an iteration count")))?;
                loops.push((parts.into_iter().map(String::from).collect(), iters));
            }
            Some(other) => return Err(syntax(format!("unknown record `{other}`"))),
            None => unreachable!("blank lines are skipped"),
        }
    }
    TaskGraph::new(nodes, edges, loops)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hwd::parse_hwd;

    fn quantum_hwd() -> HybridWorkloadDescriptor {
        parse_hwd(
            "job_id: v\nclassical:\n  cpu_cores: 8\n  memory_gb: 16\n  walltime_s: 600\n  mpi_ranks: 4\n\
             quantum:\n  qubits: 12\n  connectivity: linear\n  shots: 1000\n  modalities: [best_available]\n  depth: 40\n  fallback: queue_for_qpu\n",
        )
        .unwrap()
    }

    fn cpu(id: &str) -> TaskNode {
        TaskNode { id: id.into(), kind: TaskKind::Cpu, duration: DurationModel::Fixed(1.0), demand: Demand::default() }
    }

    fn qpu(id: &str) -> TaskNode {
        TaskNode {
            id: id.into(),
            kind: TaskKind::Qpu,
            duration: DurationModel::Circuit { shots: 10, depth: 5 },
            demand: Demand { qubits: 2, ..Demand::default() },
        }
    }

    fn e(s: &str, d: &str) -> (String, String, u64) {
        (s.into(), d.into(), 0)
    }

    #[test]
    fn classical_only_is_single_node() {
        let mut d = quantum_hwd();
        d.quantum = None;
        let g = build_graph(&d, Template::ClassicalOnly, &TemplateConfig::default()).unwrap();
        assert_eq!(g.len(), 1);
        assert!(g.feedback_loops().is_empty());
        assert!(g.nodes().iter().all(|n| n.kind != TaskKind::Qpu));
        assert!(matches!(
            build_graph(&d, Template::VqeLoop, &TemplateConfig::default()),
            Err(TemplateError::QuantumRequired("vqe_loop"))
        ));
    }

    #[test]
    fn vqe_loop_shape() {
        let g = build_graph(&quantum_hwd(), Template::VqeLoop, &TemplateConfig::default()).unwrap();
        assert!(!g.is_acyclic());
        assert_eq!(g.feedback_loops().len(), 1);
        assert_eq!(g.feedback_loops()[0].max_iterations, 10);
        assert_eq!(g.topo_order().len(), 5);
        let payload = g.edges().iter().find(|e| g.node(e.src).id == "eval").unwrap().bytes;
        assert_eq!(payload, 1000 * 2);
        let c = classify_paths(&g);
        assert_eq!(c.latency_critical_chains, vec![vec!["opt".to_string(), "eval".into(), "measure".into()]]);
        assert!(c.latency_tolerant_batches.is_empty());
        let u = unroll(&g);
        assert_eq!(u.len(), 32);
        assert!(u.is_acyclic());
    }

    #[test]
    fn batched_circuits_form_one_batch() {
        let g = build_graph(&quantum_hwd(), Template::BatchedCircuits, &TemplateConfig::default()).unwrap();
        assert_eq!(g.len(), 10);
        let c = classify_paths(&g);
        assert!(c.latency_critical_chains.is_empty());
        assert_eq!(c.latency_tolerant_batches.len(), 1);
        assert_eq!(c.latency_tolerant_batches[0].len(), 8);
        assert_eq!(unroll(&g), g);
    }

    #[test]
    fn rejects_undeclared_cycles() {
        let err = TaskGraph::new(vec![cpu("a"), cpu("b")], vec![e("a", "b"), e("b", "a")], Vec::new()).unwrap_err();
        assert_eq!(err, GraphError::UncoveredCycle);
    }

    #[test]
    fn rejects_overlapping_loops() {
        let nodes = vec![cpu("a"), cpu("b"), cpu("c")];
        let edges = vec![e("a", "b"), e("b", "a"), e("b", "c"), e("c", "b")];
        let loops = vec![(vec!["a".into(), "b".into()], 2), (vec!["b".into(), "c".into()], 2)];
        assert_eq!(TaskGraph::new(nodes, edges, loops).unwrap_err(), GraphError::OverlappingLoops("b".into()));
    }

    #[test]
    fn rejects_loop_body_mismatch() {
        // Loop a -> b -> c -> a declared with only a and c.
        let nodes = vec![cpu("a"), cpu("b"), cpu("c")];
        let edges = vec![e("a", "b"), e("b", "c"), e("c", "a")];
        let loops = vec![(vec!["a".into(), "c".into()], 2)];
        assert_eq!(TaskGraph::new(nodes, edges, loops).unwrap_err(), GraphError::LoopBodyMismatch(0));
    }

    #[test]
    fn rejects_interacting_loops() {
        // Two disjoint loops joined into one big cycle by cross edges.
        let nodes = vec![cpu("a1"), cpu("a2"), cpu("b1"), cpu("b2")];
        let edges = vec![e("a1", "a2"), e("a2", "a1"), e("b1", "b2"), e("b2", "b1"), e("a1", "b2"), e("b1", "a2")];
        let loops = vec![(vec!["a1".into(), "a2".into()], 2), (vec!["b1".into(), "b2".into()], 2)];
        assert!(matches!(TaskGraph::new(nodes, edges, loops), Err(GraphError::InteractingLoops(_, _))));
    }

    #[test]
    fn two_parallel_vqe_loops() {
        let mut nodes = Vec::new();
        let mut edges = Vec::new();
        let mut loops = Vec::new();
        for p in ["x", "y"] {
            let (o, q, m) = (format!("{p}-opt"), format!("{p}-eval"), format!("{p}-meas"));
            nodes.extend([cpu(&o), qpu(&q), cpu(&m)]);
            edges.extend([e(&o, &q), e(&q, &m), e(&m, &o)]);
            loops.push((vec![o, q, m], 3));
        }
        let g = TaskGraph::new(nodes, edges, loops).unwrap();
        let c = classify_paths(&g);
        assert_eq!(c.latency_critical_chains.len(), 2);
        assert!(c.latency_tolerant_batches.is_empty());
        assert_eq!(unroll(&g).len(), 18);
    }

    #[test]
    fn text_round_trip() {
        let g = build_graph(&quantum_hwd(), Template::VqeLoop, &TemplateConfig::default()).unwrap();
        let text = g.to_text();
        assert!(text.contains("node eval QPU shots=1000 depth=40 cores=0 gpus=0 qubits=12\n"));
        assert!(text.contains("loop opt eval measure 10\n"));
        assert_eq!(parse_graph_text(&text).unwrap(), g);
        assert!(matches!(parse_graph_text("node a TPU duration=1"), Err(GraphError::Syntax { line: 1, .. })));
    }
}
