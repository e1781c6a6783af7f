//! Compilation-pipeline and GPU-emulation cost models.
//!
//! Compilation produces numbers, not circuits. Logical optimization scales
//! depth by `opt_factor`, routing multiplies it by `routing_overhead` unless
//! the hardware is all-to-all, and a fidelity threshold rule picks an error
//! mitigation scheme whose shot multiplier the scheduler applies.

use crate::device::{satisfiable, Connectivity};
use crate::hwd::QuantumDescriptor;
use crate::registry::QpuProfile;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mitigation {
    None,
    Zne,
    Pec,
    Cdr,
}

impl Mitigation {
    pub fn as_str(self) -> &'static str {
        match self {
            Mitigation::None => "none",
            Mitigation::Zne => "zne",
            Mitigation::Pec => "pec",
            Mitigation::Cdr => "cdr",
        }
    }
}

impl core::str::FromStr for Mitigation {
    type Err = ();
    fn from_str(s: &str) -> Result<Self, ()> {
        match s {
            "none" => Ok(Mitigation::None),
            "zne" => Ok(Mitigation::Zne),
            "pec" => Ok(Mitigation::Pec),
            "cdr" => Ok(Mitigation::Cdr),
            _ => Err(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MidwareParams {
    pub opt_factor: f64,
    pub routing_overhead: f64,
    pub compile_base_s: f64,
    pub compile_per_layer_s: f64,
    /// Fidelity at or above which no mitigation is applied.
    pub no_mitigation_fidelity: f64,
    /// Fidelity at or above which ZNE suffices; below it `low_fidelity_scheme`.
    pub zne_fidelity: f64,
    pub low_fidelity_scheme: Mitigation,
    pub zne_multiplier: f64,
    pub pec_multiplier: f64,
    pub cdr_multiplier: f64,
    pub flops_per_amplitude_layer: f64,
    pub gpu_flops: f64,
    pub emulation_shot_s: f64,
    pub emulation_qubit_cap: u32,
}

impl Default for MidwareParams {
    fn default() -> Self {
        Self {
            opt_factor: 0.8,
            routing_overhead: 1.25,
            compile_base_s: 0.1,
            compile_per_layer_s: 1e-4,
            no_mitigation_fidelity: 0.999,
            zne_fidelity: 0.99,
            low_fidelity_scheme: Mitigation::Pec,
            zne_multiplier: 3.0,
            pec_multiplier: 10.0,
            cdr_multiplier: 5.0,
            flops_per_amplitude_layer: 16.0,
            gpu_flops: 1e13,
            emulation_shot_s: 1e-6,
            emulation_qubit_cap: 34,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MidwareError {
    #[error("target QPU cannot host the circuit ({0})")]
    InfeasibleTarget(&'static str),
    #[error("{qubits} qubits exceeds the emulation cap of {cap}")]
    CapExceeded { qubits: u32, cap: u32 },
    #[error("invalid midware parameter `{0}`")]
    BadParam(&'static str),
}

impl MidwareParams {
    pub fn validate(&self) -> Result<(), MidwareError> {
        let pos = |x: f64| x > 0.0 && x.is_finite();
        if !(pos(self.opt_factor) && self.opt_factor <= 1.0) {
            return Err(MidwareError::BadParam("opt_factor"));
        }
        if !(self.routing_overhead >= 1.0 && self.routing_overhead.is_finite()) {
            return Err(MidwareError::BadParam("routing_overhead"));
        }
        if !(self.compile_base_s >= 0.0 && self.compile_base_s.is_finite()) {
            return Err(MidwareError::BadParam("compile_base_s"));
        }
        if !(self.compile_per_layer_s >= 0.0 && self.compile_per_layer_s.is_finite()) {
            return Err(MidwareError::BadParam("compile_per_layer_s"));
        }
        if !(self.zne_fidelity <= self.no_mitigation_fidelity) {
            return Err(MidwareError::BadParam("zne_fidelity"));
        }
        if !matches!(self.low_fidelity_scheme, Mitigation::Pec | Mitigation::Cdr) {
            return Err(MidwareError::BadParam("low_fidelity_scheme"));
        }
        for (name, m) in [
            ("zne_multiplier", self.zne_multiplier),
            ("pec_multiplier", self.pec_multiplier),
            ("cdr_multiplier", self.cdr_multiplier),
        ] {
            if !(m >= 1.0 && m.is_finite()) {
                return Err(MidwareError::BadParam(name));
            }
        }
        if !pos(self.flops_per_amplitude_layer) {
            return Err(MidwareError::BadParam("flops_per_amplitude_layer"));
        }
        if !pos(self.gpu_flops) {
            return Err(MidwareError::BadParam("gpu_flops"));
        }
        if !pos(self.emulation_shot_s) {
            return Err(MidwareError::BadParam("emulation_shot_s"));
        }
        if self.emulation_qubit_cap > 62 {
            return Err(MidwareError::BadParam("emulation_qubit_cap"));
        }
        Ok(())
    }

    pub fn multiplier(&self, m: Mitigation) -> f64 {
        match m {
            Mitigation::None => 1.0,
            Mitigation::Zne => self.zne_multiplier,
            Mitigation::Pec => self.pec_multiplier,
            Mitigation::Cdr => self.cdr_multiplier,
        }
    }

    pub fn select_mitigation(&self, fidelity: f64) -> Mitigation {
        if fidelity >= self.no_mitigation_fidelity {
            Mitigation::None
        } else if fidelity >= self.zne_fidelity {
            Mitigation::Zne
        } else {
            self.low_fidelity_scheme
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompilationEstimate {
    pub input_depth: u32,
    pub optimized_depth: u32,
    pub compile_time_s: f64,
    pub mitigation: Mitigation,
    pub mitigation_shot_multiplier: f64,
}

impl CompilationEstimate {
    /// Shots actually executed once mitigation overhead is applied.
    pub fn effective_shots(&self, base_shots: u64) -> u64 {
        let s = libm::ceil(base_shots as f64 * self.mitigation_shot_multiplier - 1e-9);
        if s >= u64::MAX as f64 {
            u64::MAX
        } else {
            s as u64
        }
    }
}

// Products like 100 * 0.8 can land a hair above an integer; without the
// slack the ceiling would add a spurious layer.
fn ceil_slack(x: f64) -> f64 {
    libm::ceil(x - 1e-9)
}

pub fn compile_estimate(
    demand: &QuantumDescriptor,
    target: &QpuProfile,
    params: &MidwareParams,
) -> Result<CompilationEstimate, MidwareError> {
    if demand.qubit_count > target.qubit_count {
        return Err(MidwareError::InfeasibleTarget("not enough qubits"));
    }
    if !satisfiable(demand.connectivity, target.connectivity) {
        return Err(MidwareError::InfeasibleTarget("connectivity not satisfiable"));
    }
    let input = demand.circuit_depth;
    let logical = ceil_slack(input as f64 * params.opt_factor);
    let routing = if target.connectivity == Connectivity::AllToAll { 1.0 } else { params.routing_overhead };
    let routed = ceil_slack(logical * routing).max(1.0);
    // Routing can only add SWAPs to what optimization removed; a compiler
    // would keep the original circuit rather than emit a deeper one.
    let optimized_depth = if routed >= input as f64 { input } else { routed as u32 };
    let mitigation = params.select_mitigation(target.calibration.two_qubit_fidelity);
    Ok(CompilationEstimate {
        input_depth: input,
        optimized_depth,
        compile_time_s: params.compile_base_s + params.compile_per_layer_s * input as f64,
        mitigation,
        mitigation_shot_multiplier: params.multiplier(mitigation),
    })
}

/// State-vector emulation time on one GPU:
/// `k * depth * 2^qubits / flops + shots * shot_cost`.
pub fn emulation_cost(qubits: u32, depth: u32, shots: u64, params: &MidwareParams) -> Result<f64, MidwareError> {
    if qubits > params.emulation_qubit_cap {
        return Err(MidwareError::CapExceeded { qubits, cap: params.emulation_qubit_cap });
    }
    let amplitudes = (1u64 << qubits) as f64;
    Ok(params.flops_per_amplitude_layer * depth as f64 * amplitudes / params.gpu_flops
        + shots as f64 * params.emulation_shot_s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hwd::{FallbackPolicy, ModalityPreference, ShotSpec};
    use crate::registry::CalibrationProfile;
    use crate::{Modality, SimTime};
    use alloc::string::String;
    use alloc::vec;

    fn demand(depth: u32, conn: Connectivity) -> QuantumDescriptor {
        QuantumDescriptor {
            qubit_count: 10,
            connectivity: conn,
            shots: ShotSpec::Budget(100),
            modality_preference: vec![ModalityPreference::BestAvailable],
            circuit_depth: depth,
            circuit: String::new(),
            fallback_policy: FallbackPolicy::QueueForQpu,
        }
    }

    fn target(conn: Connectivity, fidelity: f64) -> QpuProfile {
        QpuProfile {
            modality: Modality::Superconducting,
            qubit_count: 127,
            connectivity: conn,
            calibration: CalibrationProfile {
                two_qubit_fidelity: fidelity,
                coherence_time_us: 100.0,
                timestamp: SimTime::ZERO,
                nominal_fidelity: fidelity,
            },
        }
    }

    #[test]
    fn all_to_all_high_fidelity() {
        let p = MidwareParams::default();
        let e =
            compile_estimate(&demand(100, Connectivity::Grid), &target(Connectivity::AllToAll, 0.9995), &p).unwrap();
        assert_eq!(e.optimized_depth, 80);
        assert_eq!(e.mitigation, Mitigation::None);
        assert_eq!(e.mitigation_shot_multiplier, 1.0);
    }

    #[test]
    fn heavy_hex_low_fidelity() {
        let p = MidwareParams::default();
        let e =
            compile_estimate(&demand(100, Connectivity::Linear), &target(Connectivity::HeavyHex, 0.98), &p).unwrap();
        assert_eq!(e.optimized_depth, 100);
        assert_eq!(e.mitigation, Mitigation::Pec);
        assert_eq!(e.effective_shots(100), 1000);
    }

    #[test]
    fn zne_band_and_cdr_variant() {
        let mut p = MidwareParams::default();
        assert_eq!(p.select_mitigation(0.995), Mitigation::Zne);
        assert_eq!(p.select_mitigation(0.99), Mitigation::Zne);
        assert_eq!(p.select_mitigation(0.999), Mitigation::None);
        p.low_fidelity_scheme = Mitigation::Cdr;
        assert_eq!(p.select_mitigation(0.9), Mitigation::Cdr);
        assert_eq!(p.multiplier(Mitigation::Cdr), 5.0);
    }

    #[test]
    fn minimum_depth_compile_time_and_clamp() {
        let p = MidwareParams::default();
        let e = compile_estimate(&demand(1, Connectivity::Linear), &target(Connectivity::Ring, 0.999), &p).unwrap();
        assert!((e.compile_time_s - 0.1001).abs() < 1e-15);
        assert_eq!(e.optimized_depth, 1);
    }

    #[test]
    fn infeasible_target() {
        let p = MidwareParams::default();
        let err = compile_estimate(&demand(10, Connectivity::AllToAll), &target(Connectivity::HeavyHex, 0.99), &p);
        assert!(matches!(err, Err(MidwareError::InfeasibleTarget(_))));
    }

    #[test]
    fn emulation_examples() {
        let p = MidwareParams::default();
        assert_eq!(emulation_cost(1, 1, 0, &p).unwrap(), 16.0 * 2.0 / 1e13);
        let c30 = emulation_cost(30, 100, 0, &p).unwrap();
        assert!((c30 - 16.0 * 100.0 * 1073741824.0 / 1e13).abs() < 1e-15);
        assert!((c30 - 0.1718).abs() < 1e-4);
        assert_eq!(emulation_cost(21, 7, 0, &p).unwrap(), 2.0 * emulation_cost(20, 7, 0, &p).unwrap());
        assert_eq!(emulation_cost(35, 1, 0, &p), Err(MidwareError::CapExceeded { qubits: 35, cap: 34 }));
        assert!(emulation_cost(34, 1, 0, &p).is_ok());
    }
}
