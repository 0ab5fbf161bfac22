//! Calibration toolkit for identifying simulator physics parameters from
//! paired sim/real trajectory observations.
//!
//! The pipeline runs a fixed-budget loop: simulate with the current
//! parameters, compare against an observed trajectory (alignment + MAE),
//! ask a recommender for the next candidate, clamp it to bounds, repeat.
//! Recommenders range from black-box optimizers (random search, Nelder-Mead,
//! golden-section coordinate descent, Bayesian optimization, CMA-ES) to an
//! external VLM queried over HTTP.
//!
//! Reduced-order surrogate simulators for an articulated finger and a soft
//! tentacle make every experiment reproducible without hardware.

pub mod align;
pub mod calib;
pub mod cli;
pub mod control;
pub mod error;
pub mod eval;
pub mod param_space;
pub mod perception;
pub mod recommend;
pub mod sim;

pub use error::SysidError;
pub use param_space::{ParamKind, ParameterBounds, ParameterVector};
