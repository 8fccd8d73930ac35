use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::config::ScenarioConfig;
use super::spline::CubicSpline;
use super::{EpochObservations, SatObservation, Trajectory, TrajectoryPoint};
use crate::error::{Error, Result};
use crate::geo::{EcefCoord, FrameRef, GeodeticCoord};
use crate::nav::NavState;
use crate::preint::so3::renormalize;
use crate::preint::{so3_exp, so3_log, GravityVector, ImuBias, ImuSample, Rotation};

/// Radius of the shell the simulated satellites are placed on (m).
pub const SAT_ORBIT_RADIUS: f64 = 26_560_000.0;

const MIN_ELEVATION: f64 = 10.0 * PI / 180.0;
const MAX_SPEED: f64 = 60.0;
const MAX_ACCEL: f64 = 15.0;
const MAX_YAW_RATE: f64 = 2.0;
/// Below this speed the heading is held instead of following the velocity.
const HEADING_SPEED_FLOOR: f64 = 0.1;
/// Reported sigma when the configured pseudorange noise is zero.
const NOMINAL_SIGMA: f64 = 1.0;
const INITIAL_CLOCK_RANGE: f64 = 1e4;

// Independent random streams so that, e.g., outlier injection never shifts
// the clean measurement noise.
const STREAM_IMU: u64 = 1;
const STREAM_BIAS: u64 = 2;
const STREAM_CLOCK: u64 = 3;
const STREAM_SKY: u64 = 4;
const STREAM_RANGE: u64 = 5;
const STREAM_OUTLIER: u64 = 6;

fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Injected pseudorange bias per observation, `None` for clean ones. Only the
/// simulator and evaluation code see this; estimators never do.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct OutlierMask {
    pub biases: Vec<Vec<Option<f64>>>,
}

impl OutlierMask {
    pub fn clean(obs: &[EpochObservations]) -> Self {
        Self {
            biases: obs.iter().map(|e| vec![None; e.observations.len()]).collect(),
        }
    }

    pub fn is_outlier(&self, epoch: usize, index: usize) -> bool {
        self.biases
            .get(epoch)
            .and_then(|e| e.get(index))
            .is_some_and(|b| b.is_some())
    }

    pub fn count(&self) -> usize {
        self.biases.iter().flatten().filter(|b| b.is_some()).count()
    }

    pub fn count_in_epoch(&self, epoch: usize) -> usize {
        self.biases
            .get(epoch)
            .map_or(0, |e| e.iter().filter(|b| b.is_some()).count())
    }
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub frame: FrameRef,
    pub gravity: GravityVector,
    /// True state at every IMU sample time.
    pub truth: Trajectory,
    pub imu: Vec<ImuSample>,
    pub observations: Vec<EpochObservations>,
    /// Receiver clock bias per GNSS epoch (m).
    pub clock: Vec<f64>,
    /// True IMU bias, constant over each GNSS interval.
    pub biases: Vec<ImuBias>,
    pub outliers: OutlierMask,
}

impl Scenario {
    /// Truth sampled at the GNSS epochs.
    pub fn truth_at_epochs(&self) -> Trajectory {
        let step = self.config.imu_per_epoch();
        let points: Vec<TrajectoryPoint> = self.truth.points().iter().step_by(step).copied().collect();
        Trajectory::new(points).expect("subsequence of an increasing series")
    }

    /// Applies [`inject_outliers`] with the scenario's own configuration.
    pub fn with_outliers(mut self) -> Self {
        let (obs, mask) = inject_outliers(&self.observations, &self.config);
        self.observations = obs;
        self.outliers = mask;
        self
    }
}

/// Piecewise-cubic route through ENU waypoints, or a fixed point.
enum Route {
    Moving { axes: [CubicSpline; 3] },
    Fixed(Vector3<f64>),
}

struct RouteSample {
    position: Vector3<f64>,
    velocity: Vector3<f64>,
    accel: Vector3<f64>,
}

impl Route {
    fn new(waypoints: &[[f64; 4]]) -> Result<Self> {
        if let [w] = waypoints {
            return Ok(Route::Fixed(Vector3::new(w[0], w[1], w[2])));
        }
        let mut times = vec![0.0];
        for pair in waypoints.windows(2) {
            let d = Vector3::new(pair[1][0] - pair[0][0], pair[1][1] - pair[0][1], pair[1][2] - pair[0][2])
                .norm();
            if d <= 0.0 {
                return Err(Error::InfeasibleRoute("consecutive waypoints coincide".into()));
            }
            let v = 0.5 * (pair[0][3] + pair[1][3]);
            times.push(times.last().unwrap() + d / v);
        }
        let axis = |i: usize| {
            let y: Vec<f64> = waypoints.iter().map(|w| w[i]).collect();
            CubicSpline::natural(&times, &y)
        };
        Ok(Route::Moving {
            axes: [axis(0)?, axis(1)?, axis(2)?],
        })
    }

    fn end_time(&self) -> f64 {
        match self {
            Route::Moving { axes } => axes[0].end_time(),
            Route::Fixed(_) => f64::INFINITY,
        }
    }

    fn sample(&self, t: f64) -> RouteSample {
        match self {
            Route::Fixed(p) => RouteSample {
                position: *p,
                velocity: Vector3::zeros(),
                accel: Vector3::zeros(),
            },
            Route::Moving { axes } => {
                let e: Vec<(f64, f64)> = axes.iter().map(|s| s.eval(t)).collect();
                RouteSample {
                    position: Vector3::new(e[0].0, e[1].0, e[2].0),
                    velocity: Vector3::new(e[0].1, e[1].1, e[2].1),
                    accel: Vector3::new(
                        axes[0].second_derivative(t),
                        axes[1].second_derivative(t),
                        axes[2].second_derivative(t),
                    ),
                }
            }
        }
    }

    fn check_feasible(&self, duration: f64) -> Result<()> {
        let n = (duration * 10.0).ceil() as usize;
        for k in 0..=n {
            let t = (k as f64 * 0.1).min(duration);
            let s = self.sample(t);
            let speed = s.velocity.norm();
            if speed > MAX_SPEED {
                return Err(Error::InfeasibleRoute(format!(
                    "speed {speed:.1} m/s at t = {t:.1} s exceeds {MAX_SPEED}"
                )));
            }
            if s.accel.norm() > MAX_ACCEL {
                return Err(Error::InfeasibleRoute(format!(
                    "acceleration {:.1} m/s^2 at t = {t:.1} s exceeds {MAX_ACCEL}",
                    s.accel.norm()
                )));
            }
            let horiz = s.velocity.xy().norm_squared();
            if horiz.sqrt() > HEADING_SPEED_FLOOR {
                let yaw_rate = (s.velocity.x * s.accel.y - s.velocity.y * s.accel.x).abs() / horiz;
                if yaw_rate > MAX_YAW_RATE {
                    return Err(Error::InfeasibleRoute(format!(
                        "turn rate {yaw_rate:.2} rad/s at t = {t:.1} s exceeds {MAX_YAW_RATE}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Body (forward-right-down) to ENU rotation for a level vehicle heading
/// along `forward`.
fn body_to_enu(forward: &Vector3<f64>) -> Matrix3<f64> {
    let x = *forward;
    let z = Vector3::new(0.0, 0.0, -1.0);
    let y = z.cross(&x);
    Matrix3::from_columns(&[x, y, z])
}

struct Satellite {
    id: u32,
    azimuth: f64,
    elevation: f64,
    azimuth_rate: f64,
    elevation_amplitude: f64,
    elevation_rate: f64,
    phase: f64,
}

impl Satellite {
    fn direction(&self, t: f64) -> (Vector3<f64>, f64) {
        let el = (self.elevation + self.elevation_amplitude * (self.elevation_rate * t + self.phase).sin())
            .max(MIN_ELEVATION);
        let az = self.azimuth + self.azimuth_rate * t;
        (
            Vector3::new(el.cos() * az.sin(), el.cos() * az.cos(), el.sin()),
            el,
        )
    }
}

fn constellation(count: usize, rng: &mut ChaCha8Rng) -> Vec<Satellite> {
    let golden = PI * (3.0 - 5f64.sqrt());
    (0..count)
        .map(|s| {
            let frac = (s as f64 * 0.618_033_988_75 + 0.5).fract();
            Satellite {
                id: s as u32 + 1,
                azimuth: s as f64 * golden + rng.random_range(-0.05..0.05),
                elevation: (15.0 + 65.0 * frac).to_radians(),
                azimuth_rate: rng.random_range(-1.5e-4..1.5e-4),
                elevation_amplitude: 3f64.to_radians(),
                elevation_rate: rng.random_range(2e-4..6e-4),
                phase: rng.random_range(0.0..2.0 * PI),
            }
        })
        .collect()
}

/// Position on the orbit shell along unit direction `u` from `origin`.
fn shell_point(origin: &Vector3<f64>, u: &Vector3<f64>) -> Vector3<f64> {
    let b = origin.dot(u);
    let d = -b + (b * b - origin.norm_squared() + SAT_ORBIT_RADIUS * SAT_ORBIT_RADIUS).sqrt();
    origin + u * d
}

/// Generates a clean scenario: truth, IMU stream and pseudoranges without
/// outliers. The truth follows the Euler recursion the estimators assume, so
/// noise-free data is consistent with their models to rounding error.
pub fn generate_scenario(cfg: &ScenarioConfig) -> Result<Scenario> {
    cfg.validate()?;
    let frame = FrameRef::new(GeodeticCoord::from_degrees(
        cfg.ref_lat_deg,
        cfg.ref_lon_deg,
        cfg.ref_height,
    )?);
    let gravity = GravityVector::at_frame(&frame);
    let g = *gravity.vector();
    let route = Route::new(&cfg.route)?;
    if route.end_time() < cfg.duration {
        return Err(Error::InfeasibleRoute(format!(
            "route takes {:.1} s, shorter than duration {:.1} s",
            route.end_time(),
            cfg.duration
        )));
    }
    route.check_feasible(cfg.duration)?;

    let per_epoch = cfg.imu_per_epoch();
    let n_epochs = cfg.epoch_count();
    let n_steps = (n_epochs - 1) * per_epoch;
    let dt = 1.0 / cfg.imu_rate;
    let time = |k: usize| k as f64 / cfg.imu_rate;
    let enu_to_ecef = frame.rotation().transpose();

    let mut bias_rng = rng(cfg.seed, STREAM_BIAS);
    let t_epoch = 1.0 / cfg.gnss_rate;
    let mut biases = vec![ImuBias::new(
        Vector3::from(cfg.initial_gyro_bias),
        Vector3::from(cfg.initial_accel_bias),
    )];
    for _ in 1..n_epochs {
        let last = *biases.last().unwrap();
        let sg = cfg.gyro_bias_walk * t_epoch.sqrt();
        let sa = cfg.accel_bias_walk * t_epoch.sqrt();
        let mut jump = || Vector3::new(gaussian(&mut bias_rng), gaussian(&mut bias_rng), gaussian(&mut bias_rng));
        let dg = jump() * sg;
        let da = jump() * sa;
        biases.push(ImuBias::new(last.gyro + dg, last.accel + da));
    }

    // Heading follows the horizontal velocity and is held when nearly stopped.
    let mut heading = Vector3::new(0.0, 1.0, 0.0);
    let mut attitude_at = |s: &RouteSample| {
        let h = Vector3::new(s.velocity.x, s.velocity.y, 0.0);
        if h.norm() > HEADING_SPEED_FLOOR {
            heading = h.normalize();
        }
        Rotation::from_matrix_unchecked(enu_to_ecef * body_to_enu(&heading))
    };

    let s0 = route.sample(0.0);
    let origin = frame.origin_ecef();
    let mut state = NavState {
        position: origin + enu_to_ecef * s0.position,
        velocity: enu_to_ecef * s0.velocity,
        orientation: renormalize(&attitude_at(&s0)),
    };
    let mut imu_rng = rng(cfg.seed, STREAM_IMU);
    let gyro_sd = cfg.gyro_noise_density * cfg.imu_rate.sqrt();
    let accel_sd = cfg.accel_noise_density * cfg.imu_rate.sqrt();
    let mut truth = Trajectory::default();
    let mut imu = Vec::with_capacity(n_steps);
    for k in 0..n_steps {
        let t = time(k);
        truth.push(t, state)?;
        let target = route.sample(time(k + 1));
        let r_next = attitude_at(&target);
        let v_next = enu_to_ecef * target.velocity;
        let omega = so3_log(&(state.orientation.inverse() * r_next)) / dt;
        let accel = (v_next - state.velocity) / dt;
        let specific_force = state.orientation.inverse() * (accel - g);
        let b = biases[k / per_epoch];
        let mut noise3 = |sd: f64| {
            Vector3::new(gaussian(&mut imu_rng), gaussian(&mut imu_rng), gaussian(&mut imu_rng)) * sd
        };
        let gyro_noise = noise3(gyro_sd);
        let accel_noise = noise3(accel_sd);
        imu.push(ImuSample {
            t,
            gyro: omega + b.gyro + gyro_noise,
            accel: specific_force + b.accel + accel_noise,
        });
        state = NavState {
            position: state.position + state.velocity * dt + 0.5 * accel * dt * dt,
            velocity: state.velocity + accel * dt,
            orientation: renormalize(&(state.orientation * so3_exp(&(omega * dt)))),
        };
    }
    truth.push(time(n_steps), state)?;

    let mut clock_rng = rng(cfg.seed, STREAM_CLOCK);
    let mut clock = vec![clock_rng.random_range(-INITIAL_CLOCK_RANGE..INITIAL_CLOCK_RANGE)];
    for _ in 1..n_epochs {
        let c = *clock.last().unwrap() + cfg.clock_walk * gaussian(&mut clock_rng);
        clock.push(c);
    }

    let mut sky_rng = rng(cfg.seed, STREAM_SKY);
    let sats = constellation(cfg.sat_count_max, &mut sky_rng);
    let mut visible = sky_rng.random_range(cfg.sat_count_min..=cfg.sat_count_max);
    let mut range_rng = rng(cfg.seed, STREAM_RANGE);
    let mut observations = Vec::with_capacity(n_epochs);
    for e in 0..n_epochs {
        if e > 0 {
            let step: i64 = sky_rng.random_range(-2..=2);
            visible = (visible as i64 + step).clamp(cfg.sat_count_min as i64, cfg.sat_count_max as i64) as usize;
        }
        let t = time(e * per_epoch);
        let p = truth.points()[e * per_epoch].state.position;
        let obs = sats[..visible]
            .iter()
            .map(|sat| {
                let (u_enu, el) = sat.direction(t);
                let sat_pos = shell_point(&origin, &(enu_to_ecef * u_enu));
                let scale = if cfg.elevation_weighting { 1.0 / el.sin() } else { 1.0 };
                let sd = cfg.pseudorange_sigma * scale;
                let noise = sd * gaussian(&mut range_rng);
                SatObservation {
                    sat_id: sat.id,
                    t,
                    sat_position: EcefCoord::from_vector(&sat_pos),
                    pseudorange: (sat_pos - p).norm() + clock[e] + noise,
                    sigma: if sd > 0.0 { sd } else { NOMINAL_SIGMA * scale },
                }
            })
            .collect();
        observations.push(EpochObservations { t, observations: obs });
    }

    let outliers = OutlierMask::clean(&observations);
    Ok(Scenario {
        config: cfg.clone(),
        frame,
        gravity,
        truth,
        imu,
        observations,
        clock,
        biases,
        outliers,
    })
}

/// Adds positive (or, with `outlier_symmetric`, random-sign) biases to
/// `⌈fraction · n⌉` pseudoranges of every epoch inside a burst window.
pub fn inject_outliers(
    obs: &[EpochObservations],
    cfg: &ScenarioConfig,
) -> (Vec<EpochObservations>, OutlierMask) {
    let mut out = obs.to_vec();
    let mut mask = OutlierMask::clean(obs);
    let mut r = rng(cfg.seed, STREAM_OUTLIER);
    for (e, epoch) in out.iter_mut().enumerate() {
        if !cfg.outlier_bursts.iter().any(|[a, b]| (*a..=*b).contains(&e)) {
            continue;
        }
        let n = epoch.observations.len();
        // Guard against 0.3 * 10 = 3.0000000000000004 style rounding.
        let m = ((cfg.outlier_fraction * n as f64) - 1e-9).ceil().max(0.0) as usize;
        let mut picked = index::sample(&mut r, n, m.min(n)).into_vec();
        picked.sort_unstable();
        for i in picked {
            let mut bias = r.random_range(cfg.outlier_bias_min..=cfg.outlier_bias_max);
            if cfg.outlier_symmetric && r.random_bool(0.5) {
                bias = -bias;
            }
            epoch.observations[i].pseudorange += bias;
            mask.biases[e][i] = Some(bias);
        }
    }
    (out, mask)
}
