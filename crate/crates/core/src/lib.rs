//! Sampled-data funnel control combined with data-driven predictive control.
//!
//! The controller keeps the tracking error of an unknown LTI plant inside a
//! prescribed funnel. A zero-order-hold funnel feedback acts only near the
//! funnel boundary; elsewhere an MPC built purely from recorded input/output
//! data (Hankel matrices) optimizes tracking, after an initial phase of random
//! excitation.

// `!(x > 0.0)` is used deliberately so that NaN parameters are rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod datadrive;
pub mod error;
pub mod funnel;
pub mod lti;
pub mod mpc;
pub mod scenarios;
pub mod supervisor;
pub mod trace;

pub use error::{Error, Result};
