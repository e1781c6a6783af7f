//! Communication and execution-time cost model.
//!
//! Transfers follow a linear latency + bandwidth law with no contention.
//! QPU service time is `shots * depth * gate_time + shots * per_shot_overhead`.

use crate::device::Modality;
use crate::registry::Tier;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LinkKind {
    IntraNode,
    InterNode,
    Wan,
}

impl LinkKind {
    pub const ALL: [LinkKind; 3] = [LinkKind::IntraNode, LinkKind::InterNode, LinkKind::Wan];

    pub fn as_str(self) -> &'static str {
        match self {
            LinkKind::IntraNode => "intra_node",
            LinkKind::InterNode => "inter_node",
            LinkKind::Wan => "wan",
        }
    }
}

impl core::str::FromStr for LinkKind {
    type Err = ();
    fn from_str(s: &str) -> Result<Self, ()> {
        LinkKind::ALL.into_iter().find(|k| k.as_str() == s).ok_or(())
    }
}

impl core::fmt::Display for LinkKind {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkClass {
    pub rtt_s: f64,
    pub bandwidth_bytes_per_s: f64,
}

impl LinkClass {
    pub const fn new(rtt_s: f64, bandwidth_bytes_per_s: f64) -> Self {
        Self { rtt_s, bandwidth_bytes_per_s }
    }
}

/// WAN presets spanning the 10-100 ms band; the default sits at 50 ms.
pub const WAN_LOW: LinkClass = LinkClass::new(0.01, 1.25e8);
pub const WAN_HIGH: LinkClass = LinkClass::new(0.1, 1.25e8);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GateTimes {
    pub superconducting: f64,
    pub trapped_ion: f64,
    pub neutral_atom: f64,
    pub photonic: f64,
}

impl GateTimes {
    pub fn get(&self, m: Modality) -> f64 {
        match m {
            Modality::Superconducting => self.superconducting,
            Modality::TrappedIon => self.trapped_ion,
            Modality::NeutralAtom => self.neutral_atom,
            Modality::Photonic => self.photonic,
        }
    }

    pub fn set(&mut self, m: Modality, v: f64) {
        match m {
            Modality::Superconducting => self.superconducting = v,
            Modality::TrappedIon => self.trapped_ion = v,
            Modality::NeutralAtom => self.neutral_atom = v,
            Modality::Photonic => self.photonic = v,
        }
    }
}

/// All fabric constants. Defaults come from published interconnect and gate
/// speed figures; the inter-node bandwidth and per-shot overhead are
/// placeholders meant to be overridden per scenario.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FabricParams {
    pub intra_node: LinkClass,
    pub inter_node: LinkClass,
    pub wan: LinkClass,
    pub gate_time_s: GateTimes,
    pub per_shot_overhead_s: GateTimes,
}

impl Default for FabricParams {
    fn default() -> Self {
        Self {
            intra_node: LinkClass::new(4e-6, 8e9),
            inter_node: LinkClass::new(1e-5, 2.5e10),
            wan: LinkClass::new(0.05, 1.25e8),
            gate_time_s: GateTimes { superconducting: 50e-9, trapped_ion: 10e-6, neutral_atom: 10e-6, photonic: 1e-9 },
            per_shot_overhead_s: GateTimes {
                superconducting: 1e-3,
                trapped_ion: 1e-3,
                neutral_atom: 1e-3,
                photonic: 1e-3,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FabricError {
    #[error("{0} link: rtt and bandwidth must be positive and finite")]
    NonPositive(LinkKind),
    #[error("link round-trip times must increase from intra_node to inter_node to wan")]
    Ordering,
    #[error("gate time and per-shot overhead for {0} must be finite, gate time positive")]
    Gate(Modality),
}

impl FabricParams {
    pub fn link(&self, kind: LinkKind) -> LinkClass {
        match kind {
            LinkKind::IntraNode => self.intra_node,
            LinkKind::InterNode => self.inter_node,
            LinkKind::Wan => self.wan,
        }
    }

    pub fn link_mut(&mut self, kind: LinkKind) -> &mut LinkClass {
        match kind {
            LinkKind::IntraNode => &mut self.intra_node,
            LinkKind::InterNode => &mut self.inter_node,
            LinkKind::Wan => &mut self.wan,
        }
    }

    pub fn validate(&self) -> Result<(), FabricError> {
        for kind in LinkKind::ALL {
            let l = self.link(kind);
            let ok = |x: f64| x > 0.0 && x.is_finite();
            if !ok(l.rtt_s) || !ok(l.bandwidth_bytes_per_s) {
                return Err(FabricError::NonPositive(kind));
            }
        }
        if !(self.intra_node.rtt_s < self.inter_node.rtt_s && self.inter_node.rtt_s < self.wan.rtt_s) {
            return Err(FabricError::Ordering);
        }
        for m in Modality::ALL {
            let g = self.gate_time_s.get(m);
            let o = self.per_shot_overhead_s.get(m);
            if !(g > 0.0 && g.is_finite()) || !(o >= 0.0 && o.is_finite()) {
                return Err(FabricError::Gate(m));
            }
        }
        Ok(())
    }

    /// Service time of `shots` repetitions of a depth-`depth` circuit.
    pub fn qpu_exec_time(&self, shots: u64, depth: u32, modality: Modality) -> f64 {
        qpu_exec_time(shots, depth, self.gate_time_s.get(modality), self.per_shot_overhead_s.get(modality))
    }

    /// Round trip of one QPU result exchange: co-located (R3) devices use the
    /// intra-node link, remote (R4) devices the WAN. Classical tiers have no
    /// QPU and get `None`.
    pub fn feedback_rtt(&self, tier: Tier, payload: QrtpPayload) -> Option<f64> {
        let link = match tier {
            Tier::R3 => self.intra_node,
            Tier::R4 => self.wan,
            Tier::R1 | Tier::R2 => return None,
        };
        Some(transfer_time(payload.bytes(), link))
    }
}

/// Shot results as shipped back to the classical side: one packed bitstring
/// per shot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QrtpPayload {
    pub shots: u64,
    pub qubit_count: u32,
}

impl QrtpPayload {
    pub fn bytes(&self) -> u64 {
        self.shots.saturating_mul(self.qubit_count.div_ceil(8) as u64)
    }
}

pub fn transfer_time(payload_bytes: u64, link: LinkClass) -> f64 {
    link.rtt_s + payload_bytes as f64 / link.bandwidth_bytes_per_s
}

pub fn qpu_exec_time(shots: u64, depth: u32, gate_time_s: f64, per_shot_overhead_s: f64) -> f64 {
    let shots = shots as f64;
    shots * depth as f64 * gate_time_s + per_shot_overhead_s * shots
}
