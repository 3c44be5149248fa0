//! Phasor-domain transient stability simulation of power systems supplied
//! entirely by grid-forming converters, with supplementary active-power
//! controllers and a critical clearing time harness.

// NaN-rejecting `!(a < b)` checks and index-parallel loops are deliberate.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod config;
pub mod engine;
pub mod error;
pub mod experiments;
pub mod manifest;
pub mod netmodel;
pub mod parallel;
pub mod powerflow;
pub mod tsp;
pub mod vsm;

pub use error::{Error, Result};
