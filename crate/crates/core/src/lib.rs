//! Age-of-Information violation probabilities for periodic sources feeding a
//! tandem of FCFS queues.
//!
//! * [`dist`]: service-time laws, their MGFs and tails of finite sums.
//! * [`bounds`]: Chernoff and union/Chernoff (alpha-relaxed) upper bounds on
//!   `P{Δ(t) > d}`.
//! * [`optimize`]: sampling rates minimizing those bounds.
//! * [`sim`]: discrete-event simulation of the tandem, used to check the bounds.
//! * [`cli`]: the `aoi` command-line front end.

// NaN has to fail the `!(x > 0.0)` style guards
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod cli;
pub mod dist;
pub mod error;
pub mod numeric;
pub mod optimize;
pub mod par;
pub mod sim;
pub mod specfun;

pub use bounds::{BoundKind, BoundResult, StabilityWindow, SystemConfig};
pub use dist::ServiceDistribution;
pub use error::{Error, Result};
