//! Quadrotor modeling, black-box identification and LQR/PID control.

pub mod config;
pub mod control;
pub mod error;
pub mod linalg;
pub mod matfile;
pub mod model;
pub mod sim;
pub mod sysid;

pub use error::{Error, Result};
