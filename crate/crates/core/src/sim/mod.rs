//! Synthetic GNSS/IMU scenarios and the CSV formats shared by every tool.

mod config;
pub mod io;
mod scenario;
mod spline;

use crate::error::{Error, Result};
use crate::geo::EcefCoord;
use crate::nav::NavState;

pub use config::{ScenarioConfig, Waypoint};
pub use scenario::{generate_scenario, inject_outliers, OutlierMask, Scenario, SAT_ORBIT_RADIUS};
pub use spline::CubicSpline;

/// One corrected pseudorange: satellite clock, ionosphere and troposphere
/// are assumed removed, leaving range + receiver clock + noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SatObservation {
    pub sat_id: u32,
    pub t: f64,
    pub sat_position: EcefCoord,
    pub pseudorange: f64,
    pub sigma: f64,
}

/// All observations sharing one receive time.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochObservations {
    pub t: f64,
    pub observations: Vec<SatObservation>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryPoint {
    pub t: f64,
    pub state: NavState,
}

/// Time-ordered ECEF states.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    points: Vec<TrajectoryPoint>,
}

impl Trajectory {
    pub fn new(points: Vec<TrajectoryPoint>) -> Result<Self> {
        if points.windows(2).any(|w| !(w[1].t > w[0].t)) {
            return Err(Error::InvalidParameter(
                "trajectory timestamps must be strictly increasing".into(),
            ));
        }
        Ok(Self { points })
    }

    /// Appends a point; `t` must exceed the last timestamp.
    pub fn push(&mut self, t: f64, state: NavState) -> Result<()> {
        if let Some(last) = self.points.last() {
            if !(t > last.t) {
                return Err(Error::InvalidParameter(format!(
                    "timestamp {t} does not follow {}",
                    last.t
                )));
            }
        }
        self.points.push(TrajectoryPoint { t, state });
        Ok(())
    }

    pub fn points(&self) -> &[TrajectoryPoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn first(&self) -> Option<&TrajectoryPoint> {
        self.points.first()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, TrajectoryPoint> {
        self.points.iter()
    }

    /// Point whose timestamp is closest to `t`, if within `tol`.
    pub fn nearest(&self, t: f64, tol: f64) -> Option<&TrajectoryPoint> {
        let i = self.points.partition_point(|p| p.t < t);
        let cands = [i.checked_sub(1), Some(i)];
        cands
            .iter()
            .flatten()
            .filter_map(|&k| self.points.get(k))
            .filter(|p| (p.t - t).abs() <= tol)
            .min_by(|a, b| (a.t - t).abs().total_cmp(&(b.t - t).abs()))
    }
}
