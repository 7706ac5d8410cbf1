//! Numerical toolkit for finite-horizon mixed optimal-stopping /
//! singular-control problems on one-dimensional SDEs driven by marked Hawkes
//! processes.
//!
//! The continuous problem is approximated by a discrete-time controlled
//! Markov chain whose one-step moments are locally consistent with the
//! dynamics (a Kushner–Dupuis construction extended with Hawkes jump
//! branches), solved by backward dynamic programming, and validated against
//! exact simulation, closed-form oracles and brute-force enumeration.
//!
//! Crate layout:
//! - [`hawkes`]: the marked Hawkes process (exact thinning simulation,
//!   moment oracles).
//! - [`dynamics`]: the constrained controlled jump-diffusion simulator and
//!   pathwise payoffs.
//! - [`lattice`]: grids, mark quantization and the one-step transition model.
//! - [`solver`]: the backward dynamic program, value table and policy.
//! - [`validate`]: independent oracles, consistency audits and convergence
//!   sweeps.
//! - [`config`] / [`cli`]: run configuration, presets and the command-line
//!   surface.

pub mod cli;
pub mod config;
pub mod dynamics;
pub mod error;
pub mod func;
pub mod hawkes;
pub mod lattice;
pub mod report;
pub mod rng;
pub mod solver;
pub mod validate;

pub use error::{Error, Result};
