//! Scheduling library and deterministic discrete-event simulator for hybrid
//! quantum-classical HPC clusters.
//!
//! The crate is `no_std` (it needs `alloc`). File IO, scenario loading and
//! the command-line front-end live in the `qhpc` crate.

#![cfg_attr(not(test), no_std)]
// `!(x > 0.0)` is how NaN gets rejected along with the out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod dctg;
pub mod device;
pub mod doc;
pub mod fabric;
pub mod hwd;
pub mod midware;
pub mod registry;
pub mod scheduler;
pub mod simcore;
pub mod time;

pub use device::{satisfiable, Connectivity, Modality};
pub use time::SimTime;
