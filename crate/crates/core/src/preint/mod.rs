//! On-manifold IMU preintegration between keyframes.
//!
//! Samples are integrated with forward Euler: a sample stamped `t_k` drives
//! the interval `[t_k, t_k + dt)`. Covariance is propagated over the 9-dim
//! error state `(δθ, δv, δp)`; bias uncertainty lives in separate random-walk
//! factors of the graph.

pub mod so3;

use log::warn;
use nalgebra::{Matrix3, SMatrix, SVector, Vector3};

use crate::error::{Error, Result};
use crate::geo::FrameRef;
use crate::nav::NavState;
pub use so3::{right_jacobian, right_jacobian_inv, skew, so3_exp, so3_log, Rotation};

pub type Matrix9 = SMatrix<f64, 9, 9>;
pub type Vector9 = SVector<f64, 9>;
pub type Matrix9x6 = SMatrix<f64, 9, 6>;
pub type Matrix9x3 = SMatrix<f64, 9, 3>;

pub const STANDARD_GRAVITY: f64 = 9.81;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImuSample {
    pub t: f64,
    /// Angular rate in the body frame (rad/s).
    pub gyro: Vector3<f64>,
    /// Specific force in the body frame (m/s^2).
    pub accel: Vector3<f64>,
}

/// Bias pair; as a 6-vector the accelerometer part comes first.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ImuBias {
    pub gyro: Vector3<f64>,
    pub accel: Vector3<f64>,
}

impl ImuBias {
    pub fn new(gyro: Vector3<f64>, accel: Vector3<f64>) -> Self {
        Self { gyro, accel }
    }

    pub fn to_vector(&self) -> SVector<f64, 6> {
        SVector::<f64, 6>::new(
            self.accel.x,
            self.accel.y,
            self.accel.z,
            self.gyro.x,
            self.gyro.y,
            self.gyro.z,
        )
    }

    pub fn from_vector(v: &SVector<f64, 6>) -> Self {
        Self {
            accel: Vector3::new(v[0], v[1], v[2]),
            gyro: Vector3::new(v[3], v[4], v[5]),
        }
    }
}

/// Continuous-time noise densities and bias random-walk strengths.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImuNoiseParams {
    /// rad/s/sqrt(Hz)
    pub gyro_noise_density: f64,
    /// m/s^2/sqrt(Hz)
    pub accel_noise_density: f64,
    /// rad/s^2/sqrt(Hz)
    pub gyro_bias_walk: f64,
    /// m/s^3/sqrt(Hz)
    pub accel_bias_walk: f64,
}

impl ImuNoiseParams {
    pub fn new(
        gyro_noise_density: f64,
        accel_noise_density: f64,
        gyro_bias_walk: f64,
        accel_bias_walk: f64,
    ) -> Result<Self> {
        let p = Self {
            gyro_noise_density,
            accel_noise_density,
            gyro_bias_walk,
            accel_bias_walk,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("gyro_noise_density", self.gyro_noise_density),
            ("accel_noise_density", self.accel_noise_density),
            ("gyro_bias_walk", self.gyro_bias_walk),
            ("accel_bias_walk", self.accel_bias_walk),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParameter(format!("{name} must be > 0, got {v}")));
            }
        }
        Ok(())
    }
}

impl Default for ImuNoiseParams {
    fn default() -> Self {
        Self {
            gyro_noise_density: 1e-3,
            accel_noise_density: 1e-2,
            gyro_bias_walk: 1e-4,
            accel_bias_walk: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GravityVector {
    g: Vector3<f64>,
}

impl GravityVector {
    /// Magnitude must lie in [9.7, 9.9] m/s^2.
    pub fn new(g: Vector3<f64>) -> Result<Self> {
        let n = g.norm();
        if !(9.7..=9.9).contains(&n) {
            return Err(Error::InvalidParameter(format!(
                "gravity magnitude {n} outside [9.7, 9.9]"
            )));
        }
        Ok(Self { g })
    }

    /// Any finite vector, including zero. Intended for tests.
    pub fn unchecked(g: Vector3<f64>) -> Self {
        Self { g }
    }

    /// Standard gravity pointing down the local vertical of `frame`, in ECEF.
    pub fn at_frame(frame: &FrameRef) -> Self {
        Self {
            g: frame.enu_vector_to_ecef(&Vector3::new(0.0, 0.0, -STANDARD_GRAVITY)),
        }
    }

    pub fn vector(&self) -> &Vector3<f64> {
        &self.g
    }
}

impl Default for GravityVector {
    fn default() -> Self {
        Self {
            g: Vector3::new(0.0, 0.0, -STANDARD_GRAVITY),
        }
    }
}

/// First-order sensitivities of the preintegrated deltas to the biases.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BiasJacobians {
    pub rot_gyro: Matrix3<f64>,
    pub vel_gyro: Matrix3<f64>,
    pub vel_accel: Matrix3<f64>,
    pub pos_gyro: Matrix3<f64>,
    pub pos_accel: Matrix3<f64>,
}

impl BiasJacobians {
    fn zeros() -> Self {
        Self {
            rot_gyro: Matrix3::zeros(),
            vel_gyro: Matrix3::zeros(),
            vel_accel: Matrix3::zeros(),
            pos_gyro: Matrix3::zeros(),
            pos_accel: Matrix3::zeros(),
        }
    }

    /// 9x6 block: rows (δθ, δv, δp), columns (b_a, b_g).
    pub fn matrix(&self) -> Matrix9x6 {
        let mut m = Matrix9x6::zeros();
        m.fixed_view_mut::<3, 3>(0, 3).copy_from(&self.rot_gyro);
        m.fixed_view_mut::<3, 3>(3, 0).copy_from(&self.vel_accel);
        m.fixed_view_mut::<3, 3>(3, 3).copy_from(&self.vel_gyro);
        m.fixed_view_mut::<3, 3>(6, 0).copy_from(&self.pos_accel);
        m.fixed_view_mut::<3, 3>(6, 3).copy_from(&self.pos_gyro);
        m
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreintegratedImu {
    pub delta_r: Rotation,
    pub delta_v: Vector3<f64>,
    pub delta_p: Vector3<f64>,
    pub dt_total: f64,
    pub bias_lin: ImuBias,
    /// Covariance over (δθ, δv, δp).
    pub cov: Matrix9,
    pub bias_jacobians: BiasJacobians,
}

/// Bias-corrected deltas.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrectedDeltas {
    pub delta_r: Rotation,
    pub delta_v: Vector3<f64>,
    pub delta_p: Vector3<f64>,
}

const MAX_STEP: f64 = 1.0;
const BIAS_WARN_GYRO: f64 = 0.05;
const BIAS_WARN_ACCEL: f64 = 0.5;

impl PreintegratedImu {
    pub fn new(bias_lin: ImuBias) -> Self {
        Self {
            delta_r: Rotation::identity(),
            delta_v: Vector3::zeros(),
            delta_p: Vector3::zeros(),
            dt_total: 0.0,
            bias_lin,
            cov: Matrix9::zeros(),
            bias_jacobians: BiasJacobians::zeros(),
        }
    }

    /// Applies one Euler step of the preintegration sums. Position uses the
    /// pre-update velocity and rotation.
    pub fn integrate_sample(&mut self, s: &ImuSample, dt: f64, noise: &ImuNoiseParams) -> Result<()> {
        if !(dt > 0.0 && dt <= MAX_STEP) {
            return Err(Error::InvalidTimeStep { dt });
        }
        let omega = s.gyro - self.bias_lin.gyro;
        let acc = s.accel - self.bias_lin.accel;
        let phi = omega * dt;
        let step = so3_exp(&phi);
        let jr = right_jacobian(&phi);
        let dr = *self.delta_r.matrix();
        let acc_skew = skew(&acc);
        let dt2 = dt * dt;

        let mut a = Matrix9::identity();
        a.fixed_view_mut::<3, 3>(0, 0).copy_from(&step.matrix().transpose());
        a.fixed_view_mut::<3, 3>(3, 0).copy_from(&(-dr * acc_skew * dt));
        a.fixed_view_mut::<3, 3>(6, 0).copy_from(&(-0.5 * dr * acc_skew * dt2));
        a.fixed_view_mut::<3, 3>(6, 3).copy_from(&(Matrix3::identity() * dt));

        let gyro_var = noise.gyro_noise_density.powi(2) / dt;
        let accel_var = noise.accel_noise_density.powi(2) / dt;
        let mut bg = SMatrix::<f64, 9, 3>::zeros();
        bg.fixed_view_mut::<3, 3>(0, 0).copy_from(&(jr * dt));
        let mut ba = SMatrix::<f64, 9, 3>::zeros();
        ba.fixed_view_mut::<3, 3>(3, 0).copy_from(&(dr * dt));
        ba.fixed_view_mut::<3, 3>(6, 0).copy_from(&(0.5 * dr * dt2));

        let cov = a * self.cov * a.transpose()
            + bg * bg.transpose() * gyro_var
            + ba * ba.transpose() * accel_var;
        self.cov = 0.5 * (cov + cov.transpose());

        let j = &mut self.bias_jacobians;
        j.pos_accel += j.vel_accel * dt - 0.5 * dr * dt2;
        j.pos_gyro += j.vel_gyro * dt - 0.5 * dr * acc_skew * j.rot_gyro * dt2;
        j.vel_accel -= dr * dt;
        j.vel_gyro -= dr * acc_skew * j.rot_gyro * dt;
        j.rot_gyro = step.matrix().transpose() * j.rot_gyro - jr * dt;

        let rotated = dr * acc;
        self.delta_p += self.delta_v * dt + 0.5 * rotated * dt2;
        self.delta_v += rotated * dt;
        self.delta_r = so3::renormalize(&(self.delta_r * step));
        self.dt_total += dt;
        Ok(())
    }

    /// First-order correction of the deltas to a new bias estimate.
    pub fn bias_correct(&self, new_bias: &ImuBias) -> CorrectedDeltas {
        let dbg = new_bias.gyro - self.bias_lin.gyro;
        let dba = new_bias.accel - self.bias_lin.accel;
        if dbg.norm() > BIAS_WARN_GYRO || dba.norm() > BIAS_WARN_ACCEL {
            warn!(
                "bias moved far from preintegration point (gyro {:.3e}, accel {:.3e}); first-order correction may be inaccurate",
                dbg.norm(),
                dba.norm()
            );
        }
        let j = &self.bias_jacobians;
        CorrectedDeltas {
            delta_r: self.delta_r * so3_exp(&(j.rot_gyro * dbg)),
            delta_v: self.delta_v + j.vel_gyro * dbg + j.vel_accel * dba,
            delta_p: self.delta_p + j.pos_gyro * dbg + j.pos_accel * dba,
        }
    }

    /// Integrates every sample of `samples` that falls in `[t_start, t_end)`.
    pub fn from_samples(
        samples: &[ImuSample],
        t_start: f64,
        t_end: f64,
        bias_lin: ImuBias,
        noise: &ImuNoiseParams,
    ) -> Result<Self> {
        let mut pim = Self::new(bias_lin);
        let eps = 1e-9;
        let first = samples.partition_point(|s| s.t < t_start - eps);
        for (k, s) in samples.iter().enumerate().skip(first) {
            if s.t >= t_end - eps {
                break;
            }
            let next = samples.get(k + 1).map_or(t_end, |n| n.t.min(t_end));
            pim.integrate_sample(s, next - s.t, noise)?;
        }
        Ok(pim)
    }
}

/// Free-function form of [`PreintegratedImu::bias_correct`].
pub fn bias_correct(pim: &PreintegratedImu, new_bias: &ImuBias) -> CorrectedDeltas {
    pim.bias_correct(new_bias)
}

/// Predicts keyframe `j` from keyframe `i` and the bias-corrected deltas.
pub fn predict_state(
    state_i: &NavState,
    bias_i: &ImuBias,
    pim: &PreintegratedImu,
    g: &GravityVector,
) -> NavState {
    let d = pim.bias_correct(bias_i);
    let dt = pim.dt_total;
    let g = g.vector();
    let ri = state_i.orientation;
    NavState {
        orientation: so3::renormalize(&(ri * d.delta_r)),
        velocity: state_i.velocity + g * dt + ri * d.delta_v,
        position: state_i.position + state_i.velocity * dt + 0.5 * g * dt * dt + ri * d.delta_p,
    }
}

/// Jacobians of the 9-dim IMU residual. Pose blocks are ordered (δθ, δp),
/// bias blocks (b_a, b_g).
#[derive(Debug, Clone, PartialEq)]
pub struct ImuJacobians {
    pub pose_i: Matrix9x6,
    pub vel_i: Matrix9x3,
    pub bias_i: Matrix9x6,
    pub pose_j: Matrix9x6,
    pub vel_j: Matrix9x3,
}

pub fn imu_residual(
    state_i: &NavState,
    state_j: &NavState,
    bias_i: &ImuBias,
    pim: &PreintegratedImu,
    g: &GravityVector,
) -> Vector9 {
    imu_residual_parts(state_i, state_j, bias_i, pim, g).0
}

struct ResidualParts {
    vel_term: Vector3<f64>,
    pos_term: Vector3<f64>,
}

fn imu_residual_parts(
    state_i: &NavState,
    state_j: &NavState,
    bias_i: &ImuBias,
    pim: &PreintegratedImu,
    g: &GravityVector,
) -> (Vector9, ResidualParts) {
    let d = pim.bias_correct(bias_i);
    let dt = pim.dt_total;
    let g = g.vector();
    let rit = state_i.orientation.inverse();
    let r_err = d.delta_r.inverse() * rit * state_j.orientation;
    let vel_term = rit * (state_j.velocity - state_i.velocity - g * dt);
    let pos_term =
        rit * (state_j.position - state_i.position - state_i.velocity * dt - 0.5 * g * dt * dt);
    let mut r = Vector9::zeros();
    r.fixed_rows_mut::<3>(0).copy_from(&so3_log(&r_err));
    r.fixed_rows_mut::<3>(3).copy_from(&(vel_term - d.delta_v));
    r.fixed_rows_mut::<3>(6).copy_from(&(pos_term - d.delta_p));
    (
        r,
        ResidualParts {
            vel_term,
            pos_term,
        },
    )
}

/// Residual together with its analytic Jacobians. Orientation perturbations
/// are right-multiplicative, everything else additive.
pub fn imu_residual_with_jacobians(
    state_i: &NavState,
    state_j: &NavState,
    bias_i: &ImuBias,
    pim: &PreintegratedImu,
    g: &GravityVector,
) -> (Vector9, ImuJacobians) {
    let (r, parts) = imu_residual_parts(state_i, state_j, bias_i, pim, g);
    let dt = pim.dt_total;
    let ri = *state_i.orientation.matrix();
    let rit = ri.transpose();
    let rj = *state_j.orientation.matrix();
    let r_rot: Vector3<f64> = r.fixed_rows::<3>(0).into();
    let jr_inv = right_jacobian_inv(&r_rot);

    let mut pose_i = Matrix9x6::zeros();
    pose_i.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-jr_inv * rj.transpose() * ri));
    pose_i.fixed_view_mut::<3, 3>(3, 0).copy_from(&skew(&parts.vel_term));
    pose_i.fixed_view_mut::<3, 3>(6, 0).copy_from(&skew(&parts.pos_term));
    pose_i.fixed_view_mut::<3, 3>(6, 3).copy_from(&(-rit));

    let mut pose_j = Matrix9x6::zeros();
    pose_j.fixed_view_mut::<3, 3>(0, 0).copy_from(&jr_inv);
    pose_j.fixed_view_mut::<3, 3>(6, 3).copy_from(&rit);

    let mut vel_i = Matrix9x3::zeros();
    vel_i.fixed_view_mut::<3, 3>(3, 0).copy_from(&(-rit));
    vel_i.fixed_view_mut::<3, 3>(6, 0).copy_from(&(-rit * dt));

    let mut vel_j = Matrix9x3::zeros();
    vel_j.fixed_view_mut::<3, 3>(3, 0).copy_from(&rit);

    let j = &pim.bias_jacobians;
    let dbg = bias_i.gyro - pim.bias_lin.gyro;
    let exp_r = so3_exp(&r_rot);
    let mut bias = Matrix9x6::zeros();
    bias.fixed_view_mut::<3, 3>(0, 3).copy_from(
        &(-jr_inv * exp_r.matrix().transpose() * right_jacobian(&(j.rot_gyro * dbg)) * j.rot_gyro),
    );
    bias.fixed_view_mut::<3, 3>(3, 0).copy_from(&(-j.vel_accel));
    bias.fixed_view_mut::<3, 3>(3, 3).copy_from(&(-j.vel_gyro));
    bias.fixed_view_mut::<3, 3>(6, 0).copy_from(&(-j.pos_accel));
    bias.fixed_view_mut::<3, 3>(6, 3).copy_from(&(-j.pos_gyro));

    (
        r,
        ImuJacobians {
            pose_i,
            vel_i,
            bias_i: bias,
            pose_j,
            vel_j,
        },
    )
}
