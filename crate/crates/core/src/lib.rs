//! Scenario + stochastic model predictive control for collision avoidance
//! among vehicles with discrete maneuver uncertainty and Gaussian execution
//! noise, together with the closed-loop highway simulator used to evaluate
//! it.

pub mod chance;
pub mod erf;
pub mod error;
pub mod model;
pub mod ocp;
pub mod qp;
pub mod sim;
pub mod task;

pub use error::{Error, Result};
