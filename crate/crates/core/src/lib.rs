//! Simulation and stability certificates for two-bus and multimachine grids
//! with synchronous generators and grid-forming converters whose dc side is
//! current limited.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod equilibrium;
pub mod error;
pub mod model;
pub mod scenario;
pub mod sim;
pub mod stab_a;
pub mod stab_b;

pub use error::{Error, Result};
