use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preint::ImuNoiseParams;

/// Waypoint `[east, north, up, speed]` in metres and m/s.
pub type Waypoint = [f64; 4];

/// Scenario parameters. Stored on disk as flat `key = value` text (TOML
/// syntax) whose keys are exactly these field names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Seconds of data to generate.
    pub duration: f64,
    pub imu_rate: f64,
    pub gnss_rate: f64,
    /// Route through the local ENU frame; speeds set the timing between
    /// waypoints. A single waypoint means a stationary receiver.
    pub route: Vec<Waypoint>,
    pub gyro_noise_density: f64,
    pub accel_noise_density: f64,
    pub gyro_bias_walk: f64,
    pub accel_bias_walk: f64,
    pub initial_gyro_bias: [f64; 3],
    pub initial_accel_bias: [f64; 3],
    pub sat_count_min: usize,
    pub sat_count_max: usize,
    /// Pseudorange noise standard deviation (m).
    pub pseudorange_sigma: f64,
    pub outlier_fraction: f64,
    pub outlier_bias_min: f64,
    pub outlier_bias_max: f64,
    /// Inclusive epoch-index intervals in which outliers are injected.
    pub outlier_bursts: Vec<[usize; 2]>,
    /// Draw the outlier sign at random instead of always adding delay.
    pub outlier_symmetric: bool,
    /// Scale each pseudorange sigma by `1 / sin(elevation)`.
    pub elevation_weighting: bool,
    /// Receiver clock random-walk step per GNSS epoch (m).
    pub clock_walk: f64,
    pub ref_lat_deg: f64,
    pub ref_lon_deg: f64,
    pub ref_height: f64,
    pub seed: u64,
}

/// Rounded-rectangle loop of roughly 1 km driven at 3 m/s.
fn default_route() -> Vec<Waypoint> {
    let (w, h, c) = (320.0, 180.0, 20.0);
    let v = 3.0;
    let corners = [
        [0.0, 0.0],
        [w / 2.0 - c, 0.0],
        [w / 2.0, c],
        [w / 2.0, h - c],
        [w / 2.0 - c, h],
        [-w / 2.0 + c, h],
        [-w / 2.0, h - c],
        [-w / 2.0, c],
        [-w / 2.0 + c, 0.0],
        [0.0, 0.0],
    ];
    corners.iter().map(|[e, n]| [*e, *n, 0.0, v]).collect()
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        let imu = ImuNoiseParams::default();
        Self {
            duration: 300.0,
            imu_rate: 100.0,
            gnss_rate: 1.0,
            route: default_route(),
            gyro_noise_density: imu.gyro_noise_density,
            accel_noise_density: imu.accel_noise_density,
            gyro_bias_walk: imu.gyro_bias_walk,
            accel_bias_walk: imu.accel_bias_walk,
            initial_gyro_bias: [1e-3, -2e-3, 5e-4],
            initial_accel_bias: [0.05, -0.03, 0.02],
            sat_count_min: 13,
            sat_count_max: 28,
            pseudorange_sigma: 3.0,
            outlier_fraction: 0.3,
            outlier_bias_min: 10.0,
            outlier_bias_max: 50.0,
            outlier_bursts: vec![[117, 156], [195, 234]],
            outlier_symmetric: false,
            elevation_weighting: false,
            clock_walk: 1.0,
            ref_lat_deg: 22.3193,
            ref_lon_deg: 114.1694,
            ref_height: 10.0,
            seed: 1,
        }
    }
}

impl ScenarioConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    pub fn imu_noise(&self) -> Result<ImuNoiseParams> {
        ImuNoiseParams::new(
            self.gyro_noise_density,
            self.accel_noise_density,
            self.gyro_bias_walk,
            self.accel_bias_walk,
        )
    }

    /// IMU samples per GNSS epoch.
    pub fn imu_per_epoch(&self) -> usize {
        (self.imu_rate / self.gnss_rate).round() as usize
    }

    pub fn epoch_count(&self) -> usize {
        (self.duration * self.gnss_rate).floor() as usize + 1
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return bad(format!("duration must be > 0, got {}", self.duration));
        }
        if !(self.imu_rate > 0.0 && self.gnss_rate > 0.0) {
            return bad("rates must be > 0".into());
        }
        let ratio = self.imu_rate / self.gnss_rate;
        if (ratio - ratio.round()).abs() > 1e-9 || ratio < 1.0 {
            return bad(format!(
                "imu_rate must be an integer multiple of gnss_rate, got ratio {ratio}"
            ));
        }
        if self.route.is_empty() {
            return bad("route needs at least one waypoint".into());
        }
        if self.route.iter().flatten().any(|v| !v.is_finite()) {
            return bad("route contains non-finite values".into());
        }
        if self.route.len() > 1 && self.route.iter().any(|w| !(w[3] > 0.0)) {
            return bad("waypoint speeds must be > 0".into());
        }
        let walks = [
            self.gyro_noise_density,
            self.accel_noise_density,
            self.gyro_bias_walk,
            self.accel_bias_walk,
            self.pseudorange_sigma,
            self.clock_walk,
        ];
        if walks.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return bad("noise parameters must be finite and >= 0".into());
        }
        if self.sat_count_min < 4 || self.sat_count_min > self.sat_count_max {
            return bad(format!(
                "satellite count range [{}, {}] invalid (min >= 4, min <= max)",
                self.sat_count_min, self.sat_count_max
            ));
        }
        if !(0.0..=1.0).contains(&self.outlier_fraction) {
            return bad(format!("outlier_fraction {} outside [0, 1]", self.outlier_fraction));
        }
        if !(self.outlier_bias_min > 0.0 && self.outlier_bias_max >= self.outlier_bias_min) {
            return bad("outlier bias range must be positive with min <= max".into());
        }
        if self.outlier_bursts.iter().any(|[a, b]| a > b) {
            return bad("outlier burst windows must have start <= end".into());
        }
        if !(-90.0..=90.0).contains(&self.ref_lat_deg) || !self.ref_lon_deg.is_finite() {
            return bad("reference latitude/longitude out of range".into());
        }
        Ok(())
    }
}
