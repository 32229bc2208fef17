//! Recursive Gaussian filtering for nonlinear dynamical systems whose
//! observations arrive over several independent sensor streams, each
//! weighted per time step by a point on the probability simplex.
//!
//! The crate provides:
//!
//! - [`model`]: the transition/observation-stream abstraction with
//!   analytic Jacobians, plus the reference constant-velocity azimuth
//!   tracker with unit-circle observations;
//! - [`filter`]: the weighted multi-stream filter (prediction, joint gain
//!   solution, update), an exact generalization of the extended Kalman
//!   filter;
//! - [`odsw`]: oracle weight estimation for fully observed systems via a
//!   Dirichlet prior (any number of streams) or a two-stream Gaussian
//!   prior;
//! - [`learn`]: logistic weight predictors trained on reliability features
//!   against oracle targets;
//! - [`sim`]: seeded synthetic scenario generation with per-stream
//!   disturbance schedules;
//! - [`eval`]: circular-RMSE evaluation, leave-one-group-out
//!   cross-validation, and the runtime benchmark against a standard EKF;
//! - [`io`]: the JSON Lines formats shared with the command-line tools.

pub mod error;
pub mod eval;
pub mod filter;
pub mod io;
pub mod learn;
pub mod linalg;
pub mod model;
pub mod odsw;
pub mod sim;

pub use error::{Error, Result};
pub use filter::{GaussianBelief, ObservationFrame, StreamWeights};
pub use model::{ModelConfig, SystemModel};
pub use sim::{ScenarioSpec, SequenceRecord};
