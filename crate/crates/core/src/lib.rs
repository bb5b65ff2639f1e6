//! Safety-aware, data-driven receding-horizon braking for an automated
//! vehicle following human-driven traffic toward a red signal.
//!
//! The crate is `no_std` (it needs `alloc`) and contains no IO. Pieces, in
//! dependency order:
//!
//! - [`vehicle`]: kinematics, bounds, gap states and the speed-dependent
//!   safe headway.
//! - [`hdv`]: the optimal velocity model used to simulate human drivers and
//!   the linear constant-time-headway / relative-velocity model the
//!   controller identifies online.
//! - [`estimator`]: per-vehicle recursive least squares.
//! - [`predictor`]: horizon roll-out of the identified models.
//! - [`qp`]: dense strictly convex QP solver (dual active set).
//! - [`mpc`]: condensed MPC problem, receding-horizon controller and its
//!   fallbacks.
//! - [`sim`]: closed-loop scenario engine, trace and metrics.

#![no_std]
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod error;
pub mod estimator;
pub mod hdv;
mod linalg;
pub mod mpc;
pub mod predictor;
pub mod qp;
pub mod sim;
pub mod vehicle;

pub use error::{Error, Result};
