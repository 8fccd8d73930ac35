use nalgebra::Vector3;

use crate::preint::so3::Rotation;

/// Position, velocity and body-to-world orientation at one epoch.
///
/// The world frame is ECEF for the estimators in this crate; tests also use
/// plain local frames.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NavState {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub orientation: Rotation,
}

impl NavState {
    pub fn new(position: Vector3<f64>, velocity: Vector3<f64>, orientation: Rotation) -> Self {
        Self {
            position,
            velocity,
            orientation,
        }
    }

    pub fn at_rest(position: Vector3<f64>) -> Self {
        Self::new(position, Vector3::zeros(), Rotation::identity())
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().all(|v| v.is_finite())
            && self.velocity.iter().all(|v| v.is_finite())
            && self.orientation.matrix().iter().all(|v| v.is_finite())
    }
}

/// Receiver clock bias expressed in metres (speed of light times seconds).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ClockState {
    pub bias: f64,
}

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

impl ClockState {
    pub fn from_seconds(s: f64) -> Self {
        Self {
            bias: s * SPEED_OF_LIGHT,
        }
    }

    pub fn seconds(&self) -> f64 {
        self.bias / SPEED_OF_LIGHT
    }
}
