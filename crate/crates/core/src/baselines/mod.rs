//! Comparison estimators: single-epoch weighted least squares and a tightly
//! coupled error-state EKF.

mod ekf;
mod wls;

pub use ekf::{ekf_propagate, ekf_update_pseudorange, EkfConfig, EkfState, Matrix16, Vector16};
pub use wls::{wls_solve_epoch, WlsSolution};
