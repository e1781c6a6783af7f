//! Simulation clock.
//!
//! Simulated time is an unsigned count of nanoseconds. Cost models work in
//! `f64` seconds; conversion happens once, at the boundary, by rounding to the
//! nearest nanosecond.

use core::fmt;
use core::ops::{Add, Sub};

/// A point in (or span of) simulated time, in nanoseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct SimTime(pub u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);
    pub const MAX: SimTime = SimTime(u64::MAX);

    pub const fn from_nanos(ns: u64) -> Self {
        SimTime(ns)
    }

    pub const fn from_secs(s: u64) -> Self {
        SimTime(s * 1_000_000_000)
    }

    /// Converts seconds to the nearest nanosecond. Negative and NaN inputs
    /// map to zero; values beyond the representable range saturate.
    pub fn from_secs_f64(s: f64) -> Self {
        if !(s > 0.0) {
            return SimTime(0);
        }
        let ns = libm::round(s * 1e9);
        if ns >= u64::MAX as f64 {
            SimTime(u64::MAX)
        } else {
            SimTime(ns as u64)
        }
    }

    /// Like [`SimTime::from_secs_f64`] but never returns zero; used for
    /// service times, which must advance the clock.
    pub fn duration_from_secs_f64(s: f64) -> Self {
        let t = Self::from_secs_f64(s);
        if t.0 == 0 {
            SimTime(1)
        } else {
            t
        }
    }

    pub const fn as_nanos(self) -> u64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / 1e9
    }

    pub fn saturating_add(self, rhs: SimTime) -> SimTime {
        SimTime(self.0.saturating_add(rhs.0))
    }

    pub fn saturating_sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0.saturating_sub(rhs.0))
    }
}

impl Add for SimTime {
    type Output = SimTime;
    fn add(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 + rhs.0)
    }
}

impl Sub for SimTime {
    type Output = SimTime;
    fn sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 - rhs.0)
    }
}

/// Prints exact seconds with nine fractional digits, e.g. `900.000000000`.
impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{:09}", self.0 / 1_000_000_000, self.0 % 1_000_000_000)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::format;

    #[test]
    fn display_is_exact() {
        assert_eq!(format!("{}", SimTime::from_secs(900)), "900.000000000");
        assert_eq!(format!("{}", SimTime::from_nanos(4_000)), "0.000004000");
    }

    #[test]
    fn rounding_avoids_float_noise() {
        assert_eq!(SimTime::from_secs_f64(4e-6).as_nanos(), 4_000);
        assert_eq!(SimTime::from_secs_f64(60.0).as_nanos(), 60_000_000_000);
        assert_eq!(SimTime::from_secs_f64(-1.0), SimTime::ZERO);
        assert_eq!(SimTime::duration_from_secs_f64(1e-13).as_nanos(), 1);
    }
}
