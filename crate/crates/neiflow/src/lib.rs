//! Finite-volume reservoir simulation with envelope-based ensemble
//! inference for history matching under distribution uncertainty.
//!
//! The crate has three layers:
//!
//! - Forward physics: structured grids ([`grid`]), a sparse SPD solver
//!   ([`linsolve`]), a slightly compressible single-phase simulator
//!   ([`single_phase`]), and a two-phase water/oil IMPES simulator
//!   ([`two_phase`]).
//! - Priors: geostatistical log-permeability realizations ([`priors`]).
//! - Inference: subset-expectation envelopes with threshold selection
//!   ([`nei`]), an ensemble-smoother baseline ([`esmda`]), and a
//!   config-driven harness tying everything together ([`harness`]).
//!
//! See the `examples/` directory for end-to-end usage of each capability.

pub mod error;
pub mod esmda;
pub mod grid;
pub mod harness;
pub mod linsolve;
pub mod nei;
pub mod priors;
pub mod single_phase;
pub mod two_phase;
pub mod units;

pub use error::{Error, Result};
