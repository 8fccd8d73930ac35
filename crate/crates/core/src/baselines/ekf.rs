use nalgebra::{Matrix3, SMatrix, SVector, Vector3};

use crate::error::{Error, Result};
use crate::nav::{ClockState, NavState};
use crate::preint::so3::renormalize;
use crate::preint::{right_jacobian, skew, so3_exp, GravityVector, ImuBias, ImuNoiseParams, ImuSample};
use crate::sim::SatObservation;

pub type Matrix16 = SMatrix<f64, 16, 16>;
pub type Vector16 = SVector<f64, 16>;

// Error-state layout.
const TH: usize = 0;
const V: usize = 3;
const P: usize = 6;
const BA: usize = 9;
const BG: usize = 12;
const CLK: usize = 15;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EkfConfig {
    pub imu_noise: ImuNoiseParams,
    /// Receiver clock random walk (m/√s).
    pub clock_walk: f64,
    /// Innovations beyond this many standard deviations are rejected.
    pub gate_sigma: f64,
    pub gravity: GravityVector,
}

impl Default for EkfConfig {
    fn default() -> Self {
        Self {
            imu_noise: ImuNoiseParams::default(),
            clock_walk: 1.0,
            gate_sigma: 5.0,
            gravity: GravityVector::default(),
        }
    }
}

/// Error-state EKF over `(δθ, δv, δp, δb_a, δb_g, δclock)` with the
/// orientation error applied on the right, as in the graph's retraction.
#[derive(Debug, Clone, PartialEq)]
pub struct EkfState {
    pub nav: NavState,
    pub bias: ImuBias,
    pub clock: ClockState,
    pub covariance: Matrix16,
    pub config: EkfConfig,
    pub rejected: usize,
}

impl EkfState {
    pub fn new(nav: NavState, bias: ImuBias, clock: ClockState, covariance: Matrix16, config: EkfConfig) -> Self {
        Self {
            nav,
            bias,
            clock,
            covariance,
            config,
            rejected: 0,
        }
    }

    /// One IMU step with the same Euler kinematics as the preintegration.
    pub fn propagate(&mut self, sample: &ImuSample, dt: f64) -> Result<()> {
        if !(dt > 0.0 && dt <= 1.0) {
            return Err(Error::InvalidTimeStep { dt });
        }
        let omega = sample.gyro - self.bias.gyro;
        let acc = sample.accel - self.bias.accel;
        let r = *self.nav.orientation.matrix();
        let g = *self.config.gravity.vector();
        let phi = omega * dt;
        let step = so3_exp(&phi);
        let jr = right_jacobian(&phi);
        let ra = r * acc;

        let mut f = Matrix16::identity();
        let acc_skew = skew(&acc);
        f.fixed_view_mut::<3, 3>(TH, TH).copy_from(&step.matrix().transpose());
        f.fixed_view_mut::<3, 3>(TH, BG).copy_from(&(-jr * dt));
        f.fixed_view_mut::<3, 3>(V, TH).copy_from(&(-r * acc_skew * dt));
        f.fixed_view_mut::<3, 3>(V, BA).copy_from(&(-r * dt));
        f.fixed_view_mut::<3, 3>(P, TH).copy_from(&(-0.5 * r * acc_skew * dt * dt));
        f.fixed_view_mut::<3, 3>(P, V).copy_from(&(Matrix3::identity() * dt));
        f.fixed_view_mut::<3, 3>(P, BA).copy_from(&(-0.5 * r * dt * dt));

        let n = &self.config.imu_noise;
        let mut q = Matrix16::zeros();
        let gyro_var = n.gyro_noise_density.powi(2) * dt;
        let accel_var = n.accel_noise_density.powi(2) * dt;
        q.fixed_view_mut::<3, 3>(TH, TH).copy_from(&(jr * jr.transpose() * gyro_var));
        let racc = r * r.transpose() * accel_var;
        q.fixed_view_mut::<3, 3>(V, V).copy_from(&racc);
        q.fixed_view_mut::<3, 3>(P, P).copy_from(&(racc * 0.25 * dt * dt));
        q.fixed_view_mut::<3, 3>(V, P).copy_from(&(racc * 0.5 * dt));
        q.fixed_view_mut::<3, 3>(P, V).copy_from(&(racc * 0.5 * dt));
        q.fixed_view_mut::<3, 3>(BA, BA)
            .copy_from(&(Matrix3::identity() * n.accel_bias_walk.powi(2) * dt));
        q.fixed_view_mut::<3, 3>(BG, BG)
            .copy_from(&(Matrix3::identity() * n.gyro_bias_walk.powi(2) * dt));
        q[(CLK, CLK)] = self.config.clock_walk.powi(2) * dt;

        let p = f * self.covariance * f.transpose() + q;
        self.covariance = 0.5 * (p + p.transpose());

        self.nav.position += self.nav.velocity * dt + 0.5 * (g + ra) * dt * dt;
        self.nav.velocity += (g + ra) * dt;
        self.nav.orientation = renormalize(&(self.nav.orientation * step));
        Ok(())
    }

    /// Scalar pseudorange update in Joseph form. Returns `false` when the
    /// innovation fails the gate, in which case the state is untouched.
    pub fn update_pseudorange(&mut self, obs: &SatObservation) -> bool {
        let d = obs.sat_position.to_vector() - self.nav.position;
        let range = d.norm();
        let u = d / range;
        let innovation = obs.pseudorange - (range + self.clock.bias);
        let mut h = Vector16::zeros();
        h.fixed_rows_mut::<3>(P).copy_from(&(-u));
        h[CLK] = 1.0;
        let ph = self.covariance * h;
        let r = obs.sigma * obs.sigma;
        let s = h.dot(&ph) + r;
        if !(s > 0.0) || innovation.abs() > self.config.gate_sigma * s.sqrt() {
            self.rejected += 1;
            return false;
        }
        let k = ph / s;
        let a = Matrix16::identity() - k * h.transpose();
        let p = a * self.covariance * a.transpose() + k * k.transpose() * r;
        self.covariance = 0.5 * (p + p.transpose());
        self.inject(&(k * innovation));
        true
    }

    fn inject(&mut self, dx: &Vector16) {
        let th: Vector3<f64> = dx.fixed_rows::<3>(TH).into();
        self.nav.orientation = renormalize(&(self.nav.orientation * so3_exp(&th)));
        self.nav.velocity += dx.fixed_rows::<3>(V);
        self.nav.position += dx.fixed_rows::<3>(P);
        self.bias.accel += dx.fixed_rows::<3>(BA);
        self.bias.gyro += dx.fixed_rows::<3>(BG);
        self.clock.bias += dx[CLK];
    }
}

pub fn ekf_propagate(s: &EkfState, sample: &ImuSample, dt: f64) -> Result<EkfState> {
    let mut out = s.clone();
    out.propagate(sample, dt)?;
    Ok(out)
}

pub fn ekf_update_pseudorange(s: &EkfState, obs: &SatObservation) -> EkfState {
    let mut out = s.clone();
    out.update_pseudorange(obs);
    out
}
