//! Numerical solution of the quadratic BSDEs behind constrained
//! consumption-investment problems with exponential, log and power utility,
//! plus Monte Carlo verification of the resulting strategies.

// `!(x > 0.0)` style checks are deliberate: they reject NaN too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod error;

pub mod bsde;
pub mod constraints;
pub mod drivers;
pub mod market;
pub mod strategy;
pub mod verify;

pub use error::{Error, Result};
