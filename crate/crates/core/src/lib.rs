//! Tightly coupled GNSS/IMU fusion on a factor graph with adaptive robust
//! kernels, plus WLS/EKF baselines, a synthetic scenario generator and
//! evaluation tooling.

pub mod baselines;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod geo;
pub mod graph;
pub mod nav;
pub mod preint;
pub mod robust;
pub mod sim;

pub use error::{Error, Result};
pub use nav::{ClockState, NavState};
