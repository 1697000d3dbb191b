//! Estimation, identification and control chain for a pneumatic soft-robot
//! head positioner.
//!
//! The crate is organised along the signal path:
//!
//! - [`estimation`]: per-sensor constant-velocity Kalman filters on depth samples.
//! - [`fusion`]: information-weighted track-to-track fusion and the framed
//!   byte format used to ship local tracks to the fusion site.
//! - [`plantsim`]: the identified actuator model, head trajectories and
//!   synthetic depth sensors used as ground truth.
//! - [`sysid`]: excitation design, ARMAX prediction-error estimation,
//!   subspace state-space realization and order selection.
//! - [`lqg`]: Riccati solvers, regulator/observer gains and closed-loop
//!   simulation.
//!
//! Batch workloads (order sweeps, Monte-Carlo runs) take an [`Exec`] which
//! dispatches to rayon when the `parallel` feature is enabled and runs
//! sequentially otherwise.

// `!(x > 0.0)` is used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod estimation;
pub mod exec;
pub mod fusion;
pub mod linalg;
pub mod lqg;
pub mod plantsim;
pub mod seed;
pub mod sysid;

pub use exec::Exec;
