//! Online phase estimation for 3D oscillatory trajectories.
//!
//! The crate covers the whole pipeline: calibration of raw trajectories,
//! offline ground-truth phase labels from the analytic signal, a windowed
//! LSTM estimator trained from scratch, and a Kuramoto network whose
//! controlled node is driven by a DQN agent that can observe either the true
//! or the estimated phases.

// `!(x > 0.0)` is used on purpose to reject NaN along with non-positive values
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calibration;
pub mod control;
pub mod data;
pub mod estimator;
pub mod error;
pub mod io;
pub mod kuramoto;
pub mod nn;
pub mod oracle;
pub mod par;
pub mod pipeline;
pub mod seed;
pub mod synth;

pub use error::{Error, Result};
