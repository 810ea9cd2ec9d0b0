//! Numerical laboratory for overdamped Langevin dynamics.
//!
//! The crate simulates `dw = -∇L(w) dt + sqrt(2σ) dB` over particle
//! ensembles, evolves the ratio density `φ = ρ/π` of the associated
//! Fokker-Planck equation on truncated grids, and evaluates the closed-form
//! concentration and decay bounds that the simulations are compared against.
//!
//! Modules:
//!
//! * [`objective`] objective functions, PL certificates and sampling checks.
//! * [`sde_sim`] Euler-Maruyama ensembles and discrete SGD recursions.
//! * [`estimators`] Monte Carlo observables (gaps, set masses, conditioning).
//! * [`bounds`] closed-form bound curves.
//! * [`fokker_planck`] finite-volume generator, time stepping, weighted norms.
//! * [`nn`] the toy fully-connected network, square loss and local PL probes.
//!
//! Inner loops over paths, samples and grid rows run on rayon when the
//! `parallel` feature is enabled (the default). Every result is independent
//! of the degree of parallelism: random streams are keyed by path or shard
//! index and reductions are performed in a fixed order.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod bounds;
pub mod estimators;
pub mod exec;
pub mod fokker_planck;
pub mod nn;
pub mod objective;
pub mod rng;
pub mod sde_sim;
pub mod snapshot_io;
pub mod stats;
pub mod table;

pub use exec::Execution;
pub use objective::{Objective, PLCertificate, QuadraticLoss};
pub use sde_sim::{EnsembleSnapshot, InitialLaw, SimConfig};
