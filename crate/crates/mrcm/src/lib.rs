//! Simulation and verification laboratory for marked random connection
//! models (MRCMs): Poisson point processes on `R^d` carrying i.i.d. marks,
//! with independent edges drawn according to a displacement- and
//! mark-dependent adjacency function.
//!
//! The crate is organised around the pipeline
//!
//! * [`model`] — mark spaces, mark distributions and the adjacency families,
//!   plus the sampling primitives everything else rests on;
//! * [`kernels`] — deterministic mark-space quantities: degree kernels,
//!   k-step kernels, mixed and operator norms, connectivity seeds and the
//!   derived constants used by the bound checks;
//! * [`simulate`] — exact lazy cluster exploration, branching envelopes,
//!   boxed graphs and two-rooted connection trials;
//! * [`estimate`] — Monte Carlo observables with uncertainty: susceptibility,
//!   percolation fraction, magnetization, cluster tails, two-point tables,
//!   the triangle diagram and the exact small-cluster oracle;
//! * [`analyze`] — critical-intensity search, exponent fits, magnetization
//!   limit checks and the inequality verification suite.

pub mod analyze;
pub mod error;
pub mod estimate;
pub mod kernels;
pub mod model;
pub mod quad;
pub mod rng;
pub mod simulate;

#[cfg(test)]
pub(crate) mod testutil;

pub use error::{Error, Result};
