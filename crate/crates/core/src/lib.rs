//! Stochastic economic dispatch with demand response under decision-dependent
//! consumer responsiveness.
//!
//! The dispatch model prices generation, RES-driven recourse and delivered
//! DR; the CLEO loop learns how delivered DR depends on accepted commitments
//! with a local linear regression and moves the commitments inside a trust
//! region.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baseline;
pub mod cleo;
pub mod config;
pub mod dispatch;
pub mod error;
pub mod netmodel;
pub mod oracle;
pub mod qpsolve;
pub mod rng;
pub mod scenario;

pub use error::{Error, Result};
