//! Factor graph over navigation states, IMU biases and receiver clock, with a
//! Gauss-Newton / Levenberg-Marquardt solver and fixed-lag marginalization.

mod banded;
mod factor;
mod solver;
mod values;
mod window;

use std::collections::BTreeMap;
use std::ops::AddAssign;

use nalgebra::{DMatrix, DVector, Matrix3};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geo::EcefCoord;
use crate::preint::{GravityVector, ImuNoiseParams, PreintegratedImu};
use crate::robust::RobustKernel;
use crate::sim::SatObservation;

pub use banded::{BandedCholesky, BandedMatrix};
pub use factor::{Factor, FactorKind, LinearPrior, Linearized, NoiseModel};
pub use solver::{optimize, IterationLog, SolveReport, SolverAlgorithm, SolverConfig};
pub use values::{Value, Values, VarKind, VariableKey};
pub use window::slide_window;

#[derive(Debug, Clone, Default)]
pub struct FactorGraph {
    values: Values,
    factors: Vec<Factor>,
}

impl FactorGraph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Current linearization point.
    pub fn values(&self) -> &Values {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut Values {
        &mut self.values
    }

    pub fn set_values(&mut self, values: Values) {
        self.values = values;
    }

    pub fn factors(&self) -> &[Factor] {
        &self.factors
    }

    pub fn num_factors(&self) -> usize {
        self.factors.len()
    }

    /// Adds a factor after checking that every key exists with the right
    /// dimension and the noise model matches the residual.
    pub fn add_factor(&mut self, factor: Factor) -> Result<()> {
        for key in &factor.keys {
            self.values.get(key)?;
        }
        let (e, jacs) = factor.evaluate(&self.values)?;
        if e.len() != factor.noise.dim() || jacs.len() != factor.keys.len() {
            return Err(Error::InvalidParameter(format!(
                "factor residual dim {} does not match noise dim {}",
                e.len(),
                factor.noise.dim()
            )));
        }
        self.factors.push(factor);
        Ok(())
    }

    pub fn add_prior(&mut self, key: VariableKey, mean: Value, noise: NoiseModel) -> Result<()> {
        if mean.kind() != key.kind || noise.dim() != key.dim() {
            return Err(Error::InvalidParameter(format!("prior does not match {key:?}")));
        }
        self.add_factor(Factor {
            kind: FactorKind::Prior { mean },
            keys: vec![key],
            noise,
            kernel: None,
        })
    }

    pub fn add_pseudorange_factor(
        &mut self,
        epoch: usize,
        obs: &SatObservation,
        kernel: Option<RobustKernel>,
    ) -> Result<()> {
        self.add_factor(Factor {
            kind: FactorKind::Pseudorange {
                sat_position: obs.sat_position.to_vector(),
                pseudorange: obs.pseudorange,
            },
            keys: vec![VariableKey::pose(epoch), VariableKey::clock(epoch)],
            noise: NoiseModel::isotropic(1, obs.sigma)?,
            kernel,
        })
    }

    pub fn add_gnss_position_factor(
        &mut self,
        epoch: usize,
        position: &EcefCoord,
        cov: &Matrix3<f64>,
        kernel: Option<RobustKernel>,
    ) -> Result<()> {
        let cov = DMatrix::from_column_slice(3, 3, cov.as_slice());
        self.add_factor(Factor {
            kind: FactorKind::GnssPosition {
                position: position.to_vector(),
            },
            keys: vec![VariableKey::pose(epoch)],
            noise: NoiseModel::from_covariance(&cov)?,
            kernel,
        })
    }

    /// IMU factor between consecutive epochs, whitened by the preintegration
    /// covariance.
    pub fn add_imu_factor(
        &mut self,
        epoch_i: usize,
        epoch_j: usize,
        pim: PreintegratedImu,
        gravity: GravityVector,
    ) -> Result<()> {
        if epoch_j != epoch_i + 1 {
            return Err(Error::NonConsecutiveEpochs {
                from: epoch_i,
                to: epoch_j,
            });
        }
        let cov = DMatrix::from_column_slice(9, 9, pim.cov.as_slice());
        let noise = NoiseModel::from_covariance(&cov)?;
        self.add_factor(Factor {
            kind: FactorKind::ImuPreint {
                pim: Box::new(pim),
                gravity,
            },
            keys: vec![
                VariableKey::pose(epoch_i),
                VariableKey::velocity(epoch_i),
                VariableKey::bias(epoch_i),
                VariableKey::pose(epoch_j),
                VariableKey::velocity(epoch_j),
            ],
            noise,
            kernel: None,
        })
    }

    /// Bias random walk over `dt` seconds and clock random walk with
    /// `clock_sigma` metres per epoch step.
    pub fn add_random_walk_factors(
        &mut self,
        epoch_i: usize,
        epoch_j: usize,
        noise: &ImuNoiseParams,
        dt: f64,
        clock_sigma: f64,
    ) -> Result<()> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidTimeStep { dt });
        }
        let sa = noise.accel_bias_walk * dt.sqrt();
        let sg = noise.gyro_bias_walk * dt.sqrt();
        self.add_factor(Factor {
            kind: FactorKind::BiasWalk,
            keys: vec![VariableKey::bias(epoch_i), VariableKey::bias(epoch_j)],
            noise: NoiseModel::diagonal(&[sa, sa, sa, sg, sg, sg])?,
            kernel: None,
        })?;
        let steps = epoch_j.abs_diff(epoch_i).max(1) as f64;
        self.add_factor(Factor {
            kind: FactorKind::ClockWalk,
            keys: vec![VariableKey::clock(epoch_i), VariableKey::clock(epoch_j)],
            noise: NoiseModel::isotropic(1, clock_sigma * steps.sqrt())?,
            kernel: None,
        })
    }

    /// Σ ζ(r) over robust factors plus Σ ½r² over the rest, at the current
    /// values.
    pub fn total_cost(&self) -> Result<f64> {
        self.cost_at(&self.values)
    }

    /// Total cost evaluated at an arbitrary estimate.
    pub fn cost_at(&self, values: &Values) -> Result<f64> {
        let costs = self
            .factors
            .par_iter()
            .map(|f| f.cost(values))
            .collect::<Result<Vec<f64>>>()?;
        Ok(costs.iter().sum())
    }

    /// Sum of squared whitened residual norms of the factors matching `pred`.
    pub fn squared_norm_where(&self, pred: impl Fn(&Factor) -> bool) -> Result<f64> {
        let mut s = 0.0;
        for f in self.factors.iter().filter(|f| pred(f)) {
            s += f.whitened_norm(&self.values)?.powi(2);
        }
        Ok(s)
    }

    /// Total residual dimension of all factors.
    pub fn residual_dim(&self) -> usize {
        self.factors.iter().map(|f| f.residual_dim()).sum()
    }

    /// Column offset of every variable in key order, plus the total dimension.
    pub fn ordering(&self) -> (BTreeMap<VariableKey, usize>, usize) {
        let mut offsets = BTreeMap::new();
        let mut n = 0;
        for (k, v) in self.values.iter() {
            offsets.insert(*k, n);
            n += v.dim();
        }
        (offsets, n)
    }

    /// Dense Gauss-Newton information matrix `Jᵀ W J` (IRLS weights
    /// included) and gradient `Jᵀ W e` at the current values.
    pub fn information_matrix(&self) -> Result<(DMatrix<f64>, DVector<f64>)> {
        let (offsets, n) = self.ordering();
        let mut h = DMatrix::zeros(n, n);
        let mut g = DVector::zeros(n);
        for f in &self.factors {
            let lin = f.linearize(&self.values)?;
            for (a, ja) in f.keys.iter().zip(&lin.jacobians) {
                let oa = offsets[a];
                let ga = ja.transpose() * &lin.residual * lin.weight;
                g.rows_mut(oa, ga.len()).add_assign(&ga);
                for (b, jb) in f.keys.iter().zip(&lin.jacobians) {
                    let ob = offsets[b];
                    let hab = ja.transpose() * jb * lin.weight;
                    h.view_mut((oa, ob), hab.shape()).add_assign(&hab);
                }
            }
        }
        Ok((h, g))
    }

    /// Removes and returns the factors matching `pred`.
    fn take_factors(&mut self, mut pred: impl FnMut(&Factor) -> bool) -> Vec<Factor> {
        let (taken, kept): (Vec<_>, Vec<_>) = std::mem::take(&mut self.factors)
            .into_iter()
            .partition(|f| pred(f));
        self.factors = kept;
        taken
    }
}
