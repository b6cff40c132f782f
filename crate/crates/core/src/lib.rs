//! Numerical laboratory for anisotropic regularity of degenerate
//! Hamilton-Jacobi equations tied to Kalman-controllable linear systems.
//!
//! The crate implements, at desk scale:
//!
//! - the Kalman decomposition of the state space and rescaled drifts
//!   ([`kalman`]),
//! - the anisotropic scaling calculus: dilations, a Lie group of
//!   flow-adapted translations, cylinders, gauge and modulus ([`scaling`]),
//! - minimum-energy steering costs with a Gramian oracle and a dual Newton
//!   solver for general exponents ([`control`]),
//! - curved trajectory families and cone sets ([`curved`]),
//! - a semi-Lagrangian value-function solver on space-time grids
//!   ([`solver`]),
//! - an oscillation / Holder-exponent measurement harness ([`regularity`]),
//! - reproducible experiment orchestration ([`experiment`]).
//!
//! Core math is generic over the scalar type ([`scalar::Real`]); the type
//! aliases below fix the working `f64` instantiations.

pub mod control;
pub mod curved;
pub mod error;
pub mod experiment;
pub mod io;
pub mod kalman;
pub mod linalg;
pub mod regularity;
pub mod sampling;
pub mod scalar;
pub mod scaling;
pub mod solver;

pub use error::{Error, Result};
pub use scalar::Real;

/// Working-precision aliases.
pub type Frame = kalman::KalmanFrame<f64>;
pub type Drift = kalman::DriftBundle<f64>;
pub type Point = scaling::SpaceTimePoint<f64>;
pub type Params = scaling::ScaleParams<f64>;
pub type Cyl = scaling::Cylinder<f64>;
pub type Steering = control::ControlProblemSpec<f64>;
pub type Path = control::Trajectory<f64>;
pub type Cost = control::CostValue<f64>;
pub type Family = curved::CurvedFamily<f64>;
pub type Cone = curved::ConeSet<f64>;
pub type Field = solver::GridFunction<f64>;
pub type Grid = solver::GridSpec<f64>;
pub type Problem = solver::HJProblem<f64>;

/// Single-precision aliases for the frame-level machinery; the solvers and
/// the acceptance tolerances assume f64.
pub type Frame32 = kalman::KalmanFrame<f32>;
pub type Point32 = scaling::SpaceTimePoint<f32>;
