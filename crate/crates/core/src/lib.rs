//! Event-triggered stabilization over a bounded-delay digital channel.
//!
//! The crate provides plant models, a single-slot delayed channel, two
//! transmission schemes (a threshold scheme for linear plants that carries
//! timing in the payload, and a periodic scheme for scalar nonlinear
//! plants), a fixed-step closed-loop simulator and rate/envelope metrics.

// `!(a > b)` is used on purpose so NaN inputs fail validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel;
pub mod cli;
pub mod engine;
pub mod error;
pub mod linear_etc;
pub mod metrics;
pub mod nonlinear_etc;
pub mod output;
pub mod plants;
pub mod scenario;
pub mod sweep;
pub mod validate;

pub use error::{Error, Result};
