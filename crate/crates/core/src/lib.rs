//! Quenched limit laws for random dynamical systems, computed.
//!
//! The crate simulates i.i.d. compositions of interval maps (the intermittent
//! LSV family and the doubling map as an exactly solvable baseline) and
//! measures the objects that control their quenched statistics:
//!
//! * [`omega`]: the two-sided i.i.d. driving sequence and its shift.
//! * [`maps`]: fiber maps, observables and orbit tracking.
//! * [`tower`]: first returns to the base `[1/2, 1]`, return partitions,
//!   return-time tails, separation times and distortion diagnostics.
//! * [`transfer`]: Ulam transfer matrices, equivariant densities, the dual
//!   operator and decay of correlations.
//! * [`decomp`]: martingale/coboundary decomposition and the limiting variance.
//! * [`coupling`]: the alternating matching times of pairs of orbits.
//! * [`stats`]: Birkhoff ensembles, CLT / LIL / functional CLT checks and the
//!   almost-sure invariance principle rate calculator.
//! * [`cli`]: the experiment runner behind the `quenched-limits` binary.

pub mod cli;
pub mod coupling;
pub mod decomp;
mod error;
pub mod fit;
pub mod maps;
pub mod omega;
pub mod report;
pub mod rng;
pub mod stats;
pub mod tower;
pub mod transfer;

pub use error::{Error, Result};
pub use maps::{FiberMap, Observable};
pub use omega::{Family, FiberSequence, ParamBounds, ParamSequence};
