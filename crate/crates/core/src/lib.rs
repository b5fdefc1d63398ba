//! Constrained adaptive tracking control for uncertain Euler-Lagrange systems.
//!
//! The crate is organised bottom-up:
//!
//! * [`dynamics`] - two-link manipulator model, structural properties and the
//!   linear-in-parameters regressor.
//! * [`controller`] - barrier-Lyapunov saturated adaptive law, projection-based
//!   parameter update and the unsaturated robust-adaptive baseline.
//! * [`feasibility`] - constraint transformation, gain condition, the
//!   input-bound feasibility inequality and region sweeps.
//! * [`simulation`] - reference/disturbance signals, fixed-step RK4 closed loop,
//!   assumption gating, logs and metrics.
//! * [`config`] and [`output`] - JSON configuration and CSV/manifest emission
//!   used by the `elctl` binary.

// Negated comparisons are used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod controller;
pub mod dynamics;
pub mod error;
pub mod feasibility;
pub mod output;
pub mod simulation;

pub use error::{Error, Result};

use nalgebra::{Matrix2, SMatrix, SVector, Vector2};

/// Number of generalized coordinates of the reference model.
pub const DOF: usize = 2;
/// Number of uncertain parameters `[p1, p2, p3, fd1, fd2]`.
pub const N_PARAMS: usize = 5;

pub type Vec2 = Vector2<f64>;
pub type Mat2 = Matrix2<f64>;
pub type ParamVector = SVector<f64, N_PARAMS>;
pub type ParamMatrix = SMatrix<f64, N_PARAMS, N_PARAMS>;
pub type RegressorMatrix = SMatrix<f64, DOF, N_PARAMS>;
