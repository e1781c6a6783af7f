//! Vocabulary shared by descriptors and the resource registry: QPU
//! modalities and coupling-map classes.

use core::fmt;
use core::str::FromStr;

/// Physical qubit technology of a QPU.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Modality {
    Superconducting,
    TrappedIon,
    NeutralAtom,
    Photonic,
}

impl Modality {
    pub const ALL: [Modality; 4] =
        [Modality::Superconducting, Modality::TrappedIon, Modality::NeutralAtom, Modality::Photonic];

    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Superconducting => "superconducting",
            Modality::TrappedIon => "trapped_ion",
            Modality::NeutralAtom => "neutral_atom",
            Modality::Photonic => "photonic",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Modality {
    type Err = ();
    fn from_str(s: &str) -> Result<Self, ()> {
        Modality::ALL.into_iter().find(|m| m.as_str() == s).ok_or(())
    }
}

/// Coupling-map class, either required by a circuit or offered by hardware.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Connectivity {
    Linear,
    Ring,
    Grid,
    HeavyHex,
    AllToAll,
}

impl Connectivity {
    pub const ALL: [Connectivity; 5] =
        [Connectivity::Linear, Connectivity::Ring, Connectivity::Grid, Connectivity::HeavyHex, Connectivity::AllToAll];

    pub fn as_str(self) -> &'static str {
        match self {
            Connectivity::Linear => "linear",
            Connectivity::Ring => "ring",
            Connectivity::Grid => "grid",
            Connectivity::HeavyHex => "heavy_hex",
            Connectivity::AllToAll => "all_to_all",
        }
    }
}

impl fmt::Display for Connectivity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Connectivity {
    type Err = ();
    fn from_str(s: &str) -> Result<Self, ()> {
        Connectivity::ALL.into_iter().find(|c| c.as_str() == s).ok_or(())
    }
}

/// Whether a circuit that needs `request` can be laid out on hardware of
/// class `hardware` without a general graph-embedding search.
///
/// | request \ hardware | linear | ring | grid | heavy_hex | all_to_all |
/// |--------------------|:------:|:----:|:----:|:---------:|:----------:|
/// | linear             |   ✓    |  ✓   |  ✓   |     ✓     |     ✓      |
/// | ring               |        |  ✓   |  ✓   |           |     ✓      |
/// | grid               |        |      |  ✓   |           |     ✓      |
/// | heavy_hex          |        |      |  ✓   |     ✓     |     ✓      |
/// | all_to_all         |        |      |      |           |     ✓      |
///
/// The relation is a partial order (reflexive and transitive).
#[allow(clippy::match_like_matches_macro)]
pub fn satisfiable(request: Connectivity, hardware: Connectivity) -> bool {
    use Connectivity::*;
    match (request, hardware) {
        (_, AllToAll) => true,
        (Linear, _) => true,
        (Ring, Ring | Grid) => true,
        (Grid, Grid) => true,
        (HeavyHex, HeavyHex | Grid) => true,
        _ => false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_is_a_partial_order() {
        for a in Connectivity::ALL {
            assert!(satisfiable(a, a));
            for b in Connectivity::ALL {
                if a != b && satisfiable(a, b) {
                    assert!(!satisfiable(b, a), "{a} and {b} both embed each other");
                }
                for c in Connectivity::ALL {
                    if satisfiable(a, b) && satisfiable(b, c) {
                        assert!(satisfiable(a, c), "{a} <= {b} <= {c} breaks transitivity");
                    }
                }
            }
        }
    }

    #[test]
    fn extremes() {
        for h in Connectivity::ALL {
            assert!(satisfiable(Connectivity::Linear, h));
            assert_eq!(satisfiable(Connectivity::AllToAll, h), h == Connectivity::AllToAll);
        }
        assert!(!satisfiable(Connectivity::AllToAll, Connectivity::HeavyHex));
        assert!(satisfiable(Connectivity::HeavyHex, Connectivity::HeavyHex));
        assert!(!satisfiable(Connectivity::Ring, Connectivity::HeavyHex));
    }

    #[test]
    fn names_round_trip() {
        for m in Modality::ALL {
            assert_eq!(m.as_str().parse::<Modality>(), Ok(m));
        }
        for c in Connectivity::ALL {
            assert_eq!(c.as_str().parse::<Connectivity>(), Ok(c));
        }
    }
}
