//! Temporal-coded spiking neural networks for event sensors.
//!
//! Modules, in pipeline order:
//!
//! - [`events`]: LiDAR / DVS event streams, the text event-file format and
//!   synthetic generators.
//! - [`preprocess`]: voxelization with first-arrival values, DVS frame
//!   accumulation and the LiDAR front-view projection.
//! - [`coding`]: mapping event values and arrival times to input spike times.
//! - [`network`]: the closed-form non-leaky integrate-and-fire layer algebra
//!   in the `z = e^t` domain, plus an ODE reference simulator.
//! - [`training`]: loss, analytic backpropagation, gradient checking, the
//!   training loop and the binary model format.
//! - [`runtime`]: the asynchronous streaming engine with first-spike early
//!   decisions and the event-ratio metrics.

pub mod checks;
pub mod coding;
pub mod config;
pub mod dataset;
pub mod digits;
pub mod error;
pub mod events;
pub mod network;
pub mod preprocess;
pub mod runtime;
pub mod training;

pub use error::{Error, Result};

/// Value substituted for a missing spike wherever arithmetic needs a number
/// (loss, classification, average pooling).
pub const Z_MAX: f64 = 1e30;

/// Guard on `sum(w) - 1` below which a causal-set candidate is rejected.
pub const EPSILON_DENOM: f64 = 1e-10;
