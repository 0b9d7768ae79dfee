//! Minimum-collision-severity trajectory planning for a kinematic vehicle.
//!
//! The planner scores paths by the integrated square of a collision severity
//! field around static and moving obstacles, then, among the least severe
//! paths, picks the one with the least steering effort. Both stages are
//! transcribed by direct single shooting over piecewise-constant controls and
//! solved with an augmented-Lagrangian / projected quasi-Newton NLP solver.
//!
//! The numerical core is generic over [`Scalar`] (`f32` or `f64`). The
//! aliases below fix it to `f64`, which is what the scenario runner and the
//! `plan` CLI use.

// `!(x > 0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod nlp_solver;
pub mod ocp;
pub mod runner;
pub mod scalar;
pub mod scenario;
pub mod severity_field;
pub mod vehicle_model;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use severity_field::{RectRegion, ShapeKind};
pub use nlp_solver::SolverStatus;

pub type ShapeParams = severity_field::ShapeParams<f64>;
pub type ObstacleMotion = severity_field::ObstacleMotion<f64>;
pub type Obstacle = severity_field::Obstacle<f64>;
pub type VehicleParams = vehicle_model::VehicleParams<f64>;
pub type VehicleState = vehicle_model::VehicleState<f64>;
pub type ControlSample = vehicle_model::ControlSample<f64>;
pub type Trajectory = vehicle_model::Trajectory<f64>;
pub type SolverConfig = nlp_solver::SolverConfig<f64>;
pub type SolverResult = nlp_solver::SolverResult<f64>;
pub type OcpSpec = ocp::OcpSpec<f64>;
pub type DecisionVector = ocp::DecisionVector<f64>;
pub type SolveReport = ocp::SolveReport<f64>;
