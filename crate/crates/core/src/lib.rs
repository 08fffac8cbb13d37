//! Finite-time boundary stabilization of 1-D quasilinear hyperbolic systems
//! with a nonlinear boundary condition at `x = 0` and a time-independent
//! feedback at `x = 1`.

pub mod auxdyn;
pub mod bmaps;
pub mod controller;
pub mod error;
pub mod exprs;
pub mod flows;
pub mod model;
pub mod picard;
pub mod predictor;
pub mod quad;
pub mod scenario;
pub mod sim;
pub mod state;

pub use error::{Error, Result};
