//! End-to-end estimators over a recorded or simulated data set: the factor
//! graph in loose or tight coupling, and the WLS / EKF baselines.

use std::time::Instant;

use nalgebra::{DMatrix, Matrix3, Vector3};

use crate::baselines::{wls_solve_epoch, EkfConfig, EkfState, Matrix16, WlsSolution};
use crate::error::{Error, Result};
use crate::geo::{EcefCoord, FrameRef};
use crate::graph::{optimize, slide_window, FactorGraph, NoiseModel, SolveReport, SolverConfig, Value, VariableKey};
use crate::nav::{ClockState, NavState};
use crate::preint::{predict_state, GravityVector, ImuBias, ImuNoiseParams, ImuSample, PreintegratedImu, Rotation};
use crate::robust::RobustKernel;
use crate::sim::{EpochObservations, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CouplingMode {
    /// One 3-D position factor per epoch from a WLS fix.
    Loose,
    /// One factor per pseudorange.
    Tight,
}

/// Standard deviations of the first-epoch priors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PriorSigmas {
    pub attitude: f64,
    pub position: f64,
    pub velocity: f64,
    pub accel_bias: f64,
    pub gyro_bias: f64,
    pub clock: f64,
}

impl Default for PriorSigmas {
    fn default() -> Self {
        Self {
            attitude: 0.02,
            position: 100.0,
            velocity: 0.2,
            accel_bias: 0.1,
            gyro_bias: 0.01,
            clock: 100.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionConfig {
    pub mode: CouplingMode,
    /// Applied to GNSS factors only; `None` is plain least squares.
    pub kernel: Option<RobustKernel>,
    /// Solver settings, including the window lag (0 = full batch).
    pub solver: SolverConfig,
    pub imu_noise: ImuNoiseParams,
    /// Receiver clock random-walk step per epoch (m).
    pub clock_walk: f64,
    pub priors: PriorSigmas,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            mode: CouplingMode::Tight,
            kernel: None,
            solver: SolverConfig::default(),
            imu_noise: ImuNoiseParams::default(),
            clock_walk: 1.0,
            priors: PriorSigmas::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitialState {
    pub nav: NavState,
    pub bias: ImuBias,
    pub clock: f64,
}

/// How the first epoch is initialized.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Initialization {
    /// Position and clock from a WLS fix; velocity and attitude given.
    Wls {
        velocity: Vector3<f64>,
        orientation: Rotation,
    },
    /// Complete state, used as initial guess and as prior mean.
    State(InitialState),
}

impl Default for Initialization {
    fn default() -> Self {
        Initialization::Wls {
            velocity: Vector3::zeros(),
            orientation: Rotation::identity(),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FusionInput<'a> {
    pub imu: &'a [ImuSample],
    pub observations: &'a [EpochObservations],
    pub init: Initialization,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EstimatorOutput {
    pub trajectory: Trajectory,
    /// Receiver clock per output epoch (m).
    pub clocks: Vec<f64>,
    pub biases: Vec<ImuBias>,
    /// Wall-clock processing time per epoch (s).
    pub epoch_seconds: Vec<f64>,
    /// Solver report per epoch (graph estimators only).
    pub reports: Vec<SolveReport>,
    /// Total cost and residual degrees of freedom of the last solve.
    pub final_cost: f64,
    pub residual_dof: usize,
}

impl EstimatorOutput {
    pub fn mean_epoch_seconds(&self) -> f64 {
        if self.epoch_seconds.is_empty() {
            return 0.0;
        }
        self.epoch_seconds.iter().sum::<f64>() / self.epoch_seconds.len() as f64
    }

    pub fn median_epoch_seconds(&self) -> f64 {
        median(&self.epoch_seconds)
    }
}

pub fn median(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

struct Start {
    nav: NavState,
    bias: ImuBias,
    clock: f64,
    /// Position covariance for the prior / EKF.
    position_cov: Matrix3<f64>,
    clock_var: f64,
    gravity: GravityVector,
}

fn start(input: &FusionInput, priors: &PriorSigmas) -> Result<Start> {
    let first = input.observations.first().ok_or(Error::Empty("observations"))?;
    let (nav, bias, clock) = match input.init {
        Initialization::State(s) => (s.nav, s.bias, s.clock),
        Initialization::Wls {
            velocity,
            orientation,
        } => {
            let fix = wls_solve_epoch(&first.observations, (EcefCoord::new(0.0, 0.0, 0.0), 0.0))?;
            (
                NavState::new(fix.position.to_vector(), velocity, orientation),
                ImuBias::default(),
                fix.clock,
            )
        }
    };
    let frame = FrameRef::at_ecef(EcefCoord::from_vector(&nav.position))?;
    Ok(Start {
        nav,
        bias,
        clock,
        position_cov: Matrix3::identity() * priors.position.powi(2),
        clock_var: priors.clock.powi(2),
        gravity: GravityVector::at_frame(&frame),
    })
}

fn wls_fix(epoch: &EpochObservations, guess: (EcefCoord, f64)) -> Option<WlsSolution> {
    wls_solve_epoch(&epoch.observations, guess).ok()
}

fn add_gnss_factors(
    graph: &mut FactorGraph,
    k: usize,
    epoch: &EpochObservations,
    cfg: &FusionConfig,
) -> Result<()> {
    match cfg.mode {
        CouplingMode::Tight => {
            for obs in &epoch.observations {
                graph.add_pseudorange_factor(k, obs, cfg.kernel)?;
            }
        }
        CouplingMode::Loose => {
            let (_, p) = graph.values().pose(k)?;
            let clock = graph.values().clock(k)?;
            if let Some(fix) = wls_fix(epoch, (EcefCoord::from_vector(&p), clock)) {
                let cov = fix.covariance.fixed_view::<3, 3>(0, 0).into_owned();
                graph.add_gnss_position_factor(k, &fix.position, &cov, cfg.kernel)?;
            }
        }
    }
    Ok(())
}

/// Incremental factor-graph fusion. Every epoch adds its variables and
/// factors, slides the window when `cfg.solver.lag > 0`, and re-solves. The
/// reported state of an epoch is its estimate when it leaves the window, or
/// after the final solve.
pub fn run_fusion(input: &FusionInput, cfg: &FusionConfig) -> Result<EstimatorOutput> {
    cfg.solver.validate()?;
    cfg.imu_noise.validate()?;
    let s = start(input, &cfg.priors)?;
    let p = &cfg.priors;
    let mut graph = FactorGraph::new();
    graph.values_mut().insert_nav(0, &s.nav);
    graph.values_mut().insert_bias(0, &s.bias);
    graph.values_mut().insert_clock(0, s.clock);

    let mut pose_cov = DMatrix::zeros(6, 6);
    pose_cov
        .view_mut((0, 0), (3, 3))
        .copy_from(&(Matrix3::identity() * p.attitude.powi(2)));
    pose_cov.view_mut((3, 3), (3, 3)).copy_from(&s.position_cov);
    graph.add_prior(
        VariableKey::pose(0),
        Value::Pose {
            orientation: s.nav.orientation,
            position: s.nav.position,
        },
        NoiseModel::from_covariance(&pose_cov)?,
    )?;
    graph.add_prior(
        VariableKey::velocity(0),
        Value::Velocity(s.nav.velocity),
        NoiseModel::isotropic(3, p.velocity)?,
    )?;
    graph.add_prior(
        VariableKey::bias(0),
        Value::Bias(s.bias),
        NoiseModel::diagonal(&[p.accel_bias, p.accel_bias, p.accel_bias, p.gyro_bias, p.gyro_bias, p.gyro_bias])?,
    )?;
    graph.add_prior(
        VariableKey::clock(0),
        Value::Clock(s.clock),
        NoiseModel::isotropic(1, s.clock_var.sqrt())?,
    )?;

    let n = input.observations.len();
    let mut out_states: Vec<Option<(NavState, ImuBias, f64)>> = vec![None; n];
    let mut epoch_seconds = Vec::with_capacity(n);
    let mut reports = Vec::with_capacity(n);

    for (k, epoch) in input.observations.iter().enumerate() {
        let started = Instant::now();
        if k > 0 {
            let prev = &input.observations[k - 1];
            let bias = graph.values().bias(k - 1)?;
            let pim = PreintegratedImu::from_samples(input.imu, prev.t, epoch.t, bias, &cfg.imu_noise)?;
            let nav_prev = graph.values().nav_state(k - 1)?;
            let clock_prev = graph.values().clock(k - 1)?;
            let predicted = predict_state(&nav_prev, &bias, &pim, &s.gravity);
            graph.values_mut().insert_nav(k, &predicted);
            graph.values_mut().insert_bias(k, &bias);
            graph.values_mut().insert_clock(k, clock_prev);
            graph.add_imu_factor(k - 1, k, pim, s.gravity)?;
            graph.add_random_walk_factors(k - 1, k, &cfg.imu_noise, epoch.t - prev.t, cfg.clock_walk)?;
        }
        add_gnss_factors(&mut graph, k, epoch, cfg)?;
        let removed = slide_window(&mut graph, k, cfg.solver.lag)?;
        let mut epochs: Vec<usize> = removed.iter().map(|(key, _)| key.epoch).collect();
        epochs.dedup();
        for e in epochs {
            out_states[e] = Some((removed.nav_state(e)?, removed.bias(e)?, removed.clock(e)?));
        }
        reports.push(optimize(&mut graph, &cfg.solver)?);
        epoch_seconds.push(started.elapsed().as_secs_f64());
    }

    let values = graph.values();
    let epochs_in_graph: Vec<usize> = {
        let mut v: Vec<usize> = values.iter().map(|(k, _)| k.epoch).collect();
        v.dedup();
        v
    };
    for e in epochs_in_graph {
        out_states[e] = Some((values.nav_state(e)?, values.bias(e)?, values.clock(e)?));
    }

    let mut trajectory = Trajectory::default();
    let mut clocks = Vec::with_capacity(n);
    let mut biases = Vec::with_capacity(n);
    for (epoch, st) in input.observations.iter().zip(out_states) {
        let (nav, bias, clock) = st.expect("every epoch is estimated");
        trajectory.push(epoch.t, nav)?;
        clocks.push(clock);
        biases.push(bias);
    }
    let state_dim: usize = values.iter().map(|(_, v)| v.dim()).sum();
    Ok(EstimatorOutput {
        trajectory,
        clocks,
        biases,
        epoch_seconds,
        final_cost: reports.last().map_or(0.0, |r| r.final_cost),
        residual_dof: graph.residual_dim().saturating_sub(state_dim),
        reports,
    })
}

/// Epoch-wise WLS. Epochs without a valid fix are skipped.
pub fn run_wls(observations: &[EpochObservations]) -> Result<EstimatorOutput> {
    let mut out = EstimatorOutput::default();
    let mut guess = (EcefCoord::new(0.0, 0.0, 0.0), 0.0);
    for epoch in observations {
        let started = Instant::now();
        if let Some(fix) = wls_fix(epoch, guess) {
            guess = (fix.position, fix.clock);
            out.trajectory
                .push(epoch.t, NavState::at_rest(fix.position.to_vector()))?;
            out.clocks.push(fix.clock);
        }
        out.epoch_seconds.push(started.elapsed().as_secs_f64());
    }
    if out.trajectory.is_empty() {
        return Err(Error::Empty("WLS fixes"));
    }
    Ok(out)
}

/// Tightly coupled EKF: IMU propagation between epochs, then one gated
/// scalar update per pseudorange.
pub fn run_ekf(input: &FusionInput, cfg: &FusionConfig, gate_sigma: f64) -> Result<EstimatorOutput> {
    cfg.imu_noise.validate()?;
    let s = start(input, &cfg.priors)?;
    let p = &cfg.priors;
    let period = match input.observations {
        [a, b, ..] => b.t - a.t,
        _ => 1.0,
    };
    let ekf_cfg = EkfConfig {
        imu_noise: cfg.imu_noise,
        clock_walk: cfg.clock_walk / period.sqrt(),
        gate_sigma,
        gravity: s.gravity,
    };
    let mut cov = Matrix16::zeros();
    cov.fixed_view_mut::<3, 3>(0, 0)
        .copy_from(&(Matrix3::identity() * p.attitude.powi(2)));
    cov.fixed_view_mut::<3, 3>(3, 3)
        .copy_from(&(Matrix3::identity() * p.velocity.powi(2)));
    cov.fixed_view_mut::<3, 3>(6, 6).copy_from(&s.position_cov);
    cov.fixed_view_mut::<3, 3>(9, 9)
        .copy_from(&(Matrix3::identity() * p.accel_bias.powi(2)));
    cov.fixed_view_mut::<3, 3>(12, 12)
        .copy_from(&(Matrix3::identity() * p.gyro_bias.powi(2)));
    cov[(15, 15)] = s.clock_var;
    let mut ekf = EkfState::new(s.nav, s.bias, ClockState { bias: s.clock }, cov, ekf_cfg);

    let mut out = EstimatorOutput::default();
    let mut next_sample = 0;
    for (k, epoch) in input.observations.iter().enumerate() {
        let started = Instant::now();
        if k > 0 {
            let t0 = input.observations[k - 1].t;
            let eps = 1e-9;
            next_sample += input.imu[next_sample..].partition_point(|x| x.t < t0 - eps);
            while let Some(sample) = input.imu.get(next_sample) {
                if sample.t >= epoch.t - eps {
                    break;
                }
                let t_next = input
                    .imu
                    .get(next_sample + 1)
                    .map_or(epoch.t, |n| n.t.min(epoch.t));
                ekf.propagate(sample, t_next - sample.t)?;
                next_sample += 1;
            }
        }
        for obs in &epoch.observations {
            ekf.update_pseudorange(obs);
        }
        out.trajectory.push(epoch.t, ekf.nav)?;
        out.clocks.push(ekf.clock.bias);
        out.biases.push(ekf.bias);
        out.epoch_seconds.push(started.elapsed().as_secs_f64());
    }
    Ok(out)
}

/// Mean squared whitened GNSS residual of an estimate: per pseudorange in
/// tight coupling, per WLS position component in loose coupling.
pub fn gnss_residual_mse(
    out: &EstimatorOutput,
    observations: &[EpochObservations],
    mode: CouplingMode,
) -> Result<f64> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for (k, point) in out.trajectory.iter().enumerate() {
        let Some(epoch) = observations.iter().find(|e| e.t == point.t) else {
            continue;
        };
        let p = point.state.position;
        match mode {
            CouplingMode::Tight => {
                let clock = out.clocks.get(k).copied().ok_or(Error::Empty("clock estimates"))?;
                for o in &epoch.observations {
                    let r = (o.pseudorange - (o.sat_position.to_vector() - p).norm() - clock) / o.sigma;
                    sum += r * r;
                    count += 1;
                }
            }
            CouplingMode::Loose => {
                let guess = (EcefCoord::from_vector(&p), out.clocks.get(k).copied().unwrap_or(0.0));
                if let Some(fix) = wls_fix(epoch, guess) {
                    let cov = DMatrix::from_fn(3, 3, |i, j| fix.covariance[(i, j)]);
                    let w = NoiseModel::from_covariance(&cov)?;
                    let e = w.whitener() * nalgebra::DVector::from_column_slice((fix.position.to_vector() - p).as_slice());
                    sum += e.norm_squared();
                    count += 3;
                }
            }
        }
    }
    if count == 0 {
        return Err(Error::EmptyOverlap);
    }
    Ok(sum / count as f64)
}
