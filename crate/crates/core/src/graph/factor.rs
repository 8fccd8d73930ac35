use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

use super::values::{Value, Values, VariableKey};
use crate::error::{Error, Result};
use crate::preint::{
    imu_residual_with_jacobians, right_jacobian_inv, so3_log, GravityVector, PreintegratedImu,
};
use crate::robust::RobustKernel;

/// Gaussian noise stored as the whitening matrix `W = L^{-1}`, `Σ = L Lᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModel {
    whitener: DMatrix<f64>,
}

impl NoiseModel {
    pub fn from_covariance(cov: &DMatrix<f64>) -> Result<Self> {
        if !cov.is_square() || cov.iter().any(|v| !v.is_finite()) {
            return Err(Error::NotPositiveDefinite);
        }
        let asym = (cov - cov.transpose()).abs().max();
        if asym > 1e-9 * cov.abs().max().max(1e-300) {
            return Err(Error::NotPositiveDefinite);
        }
        let chol = cov.clone().cholesky().ok_or(Error::NotPositiveDefinite)?;
        let n = cov.nrows();
        let whitener = chol
            .l()
            .solve_lower_triangular(&DMatrix::identity(n, n))
            .ok_or(Error::NotPositiveDefinite)?;
        Ok(Self { whitener })
    }

    pub fn isotropic(dim: usize, sigma: f64) -> Result<Self> {
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(Error::NotPositiveDefinite);
        }
        Ok(Self {
            whitener: DMatrix::identity(dim, dim) / sigma,
        })
    }

    pub fn diagonal(sigmas: &[f64]) -> Result<Self> {
        if sigmas.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::NotPositiveDefinite);
        }
        let d = DVector::from_iterator(sigmas.len(), sigmas.iter().map(|s| 1.0 / s));
        Ok(Self {
            whitener: DMatrix::from_diagonal(&d),
        })
    }

    /// Residual already whitened.
    pub fn unit(dim: usize) -> Self {
        Self {
            whitener: DMatrix::identity(dim, dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.whitener.nrows()
    }

    pub fn whitener(&self) -> &DMatrix<f64> {
        &self.whitener
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        let info = self.whitener.transpose() * &self.whitener;
        info.try_inverse().unwrap_or_else(|| DMatrix::zeros(self.dim(), self.dim()))
    }
}

/// Dense linear factor `e = A (x ⊖ x₀) + b`, produced by marginalization.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearPrior {
    pub linearization: Vec<Value>,
    pub matrix: DMatrix<f64>,
    pub offset: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum FactorKind {
    /// Single-variable prior `x ⊖ mean`.
    Prior { mean: Value },
    /// Keys: Pose(i), Velocity(i), Bias(i), Pose(j), Velocity(j).
    ImuPreint {
        pim: Box<PreintegratedImu>,
        gravity: GravityVector,
    },
    /// Keys: Pose(k), Clock(k). Residual `ρ - (|p_sat - p| + clock)`.
    Pseudorange {
        sat_position: Vector3<f64>,
        pseudorange: f64,
    },
    /// Keys: Pose(k). Residual `z - p`.
    GnssPosition { position: Vector3<f64> },
    /// Keys: Bias(i), Bias(j). Residual `b_j - b_i`.
    BiasWalk,
    /// Keys: Clock(i), Clock(j). Residual `c_j - c_i`.
    ClockWalk,
    /// Keys: the boundary variables kept after marginalization.
    Marginal(Box<LinearPrior>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Factor {
    pub kind: FactorKind,
    pub keys: Vec<VariableKey>,
    pub noise: NoiseModel,
    pub kernel: Option<RobustKernel>,
}

/// Whitened residual and Jacobians, with the robust weight folded in lazily.
#[derive(Debug, Clone)]
pub struct Linearized {
    pub residual: DVector<f64>,
    pub jacobians: Vec<DMatrix<f64>>,
    pub weight: f64,
    pub cost: f64,
}

fn to_dynamic<const R: usize, const C: usize>(m: &nalgebra::SMatrix<f64, R, C>) -> DMatrix<f64> {
    DMatrix::from_column_slice(R, C, m.as_slice())
}

impl Factor {
    pub fn residual_dim(&self) -> usize {
        self.noise.dim()
    }

    pub fn is_gnss(&self) -> bool {
        matches!(
            self.kind,
            FactorKind::Pseudorange { .. } | FactorKind::GnssPosition { .. }
        )
    }

    /// Unwhitened residual and Jacobians (one block per key).
    pub fn evaluate(&self, values: &Values) -> Result<(DVector<f64>, Vec<DMatrix<f64>>)> {
        match &self.kind {
            FactorKind::Prior { mean } => {
                let x = values.get(&self.keys[0])?;
                let e = x.local(mean)?;
                let j = match (x, mean) {
                    (Value::Pose { orientation, .. }, Value::Pose { orientation: o0, .. }) => {
                        let th = so3_log(&(o0.inverse() * orientation));
                        let mut j = DMatrix::identity(6, 6);
                        j.view_mut((0, 0), (3, 3)).copy_from(&right_jacobian_inv(&th));
                        j
                    }
                    _ => DMatrix::identity(e.len(), e.len()),
                };
                Ok((e, vec![j]))
            }
            FactorKind::ImuPreint { pim, gravity } => {
                let si = values.nav_state(self.keys[0].epoch)?;
                let bi = values.bias(self.keys[2].epoch)?;
                let sj = values.nav_state(self.keys[3].epoch)?;
                let (r, j) = imu_residual_with_jacobians(&si, &sj, &bi, pim, gravity);
                Ok((
                    DVector::from_column_slice(r.as_slice()),
                    vec![
                        to_dynamic(&j.pose_i),
                        to_dynamic(&j.vel_i),
                        to_dynamic(&j.bias_i),
                        to_dynamic(&j.pose_j),
                        to_dynamic(&j.vel_j),
                    ],
                ))
            }
            FactorKind::Pseudorange {
                sat_position,
                pseudorange,
            } => {
                let (_, p) = values.pose(self.keys[0].epoch)?;
                let clk = values.clock(self.keys[1].epoch)?;
                let d = sat_position - p;
                let range = d.norm();
                let los = d / range;
                let e = pseudorange - (range + clk);
                let mut jp = DMatrix::zeros(1, 6);
                jp[(0, 3)] = los.x;
                jp[(0, 4)] = los.y;
                jp[(0, 5)] = los.z;
                Ok((DVector::from_element(1, e), vec![jp, DMatrix::from_element(1, 1, -1.0)]))
            }
            FactorKind::GnssPosition { position } => {
                let (_, p) = values.pose(self.keys[0].epoch)?;
                let e = position - p;
                let mut j = DMatrix::zeros(3, 6);
                j.view_mut((0, 3), (3, 3)).copy_from(&(-Matrix3::identity()));
                Ok((DVector::from_column_slice(e.as_slice()), vec![j]))
            }
            FactorKind::BiasWalk => {
                let bi = values.bias(self.keys[0].epoch)?;
                let bj = values.bias(self.keys[1].epoch)?;
                let e = bj.to_vector() - bi.to_vector();
                let id = DMatrix::<f64>::identity(6, 6);
                Ok((DVector::from_column_slice(e.as_slice()), vec![-id.clone(), id]))
            }
            FactorKind::ClockWalk => {
                let ci = values.clock(self.keys[0].epoch)?;
                let cj = values.clock(self.keys[1].epoch)?;
                Ok((
                    DVector::from_element(1, cj - ci),
                    vec![DMatrix::from_element(1, 1, -1.0), DMatrix::from_element(1, 1, 1.0)],
                ))
            }
            FactorKind::Marginal(lp) => {
                let mut delta = Vec::with_capacity(lp.matrix.ncols());
                let mut local_jacs = Vec::with_capacity(self.keys.len());
                for (key, lin) in self.keys.iter().zip(&lp.linearization) {
                    let x = values.get(key)?;
                    let d = x.local(lin)?;
                    let mut jl = DMatrix::identity(d.len(), d.len());
                    if let (Value::Pose { orientation, .. }, Value::Pose { orientation: o0, .. }) = (x, lin) {
                        let th = so3_log(&(o0.inverse() * orientation));
                        jl.view_mut((0, 0), (3, 3)).copy_from(&right_jacobian_inv(&th));
                    }
                    delta.extend(d.iter());
                    local_jacs.push(jl);
                }
                let delta = DVector::from_vec(delta);
                let e = &lp.matrix * delta + &lp.offset;
                let mut jacs = Vec::with_capacity(self.keys.len());
                let mut col = 0;
                for jl in local_jacs {
                    let d = jl.nrows();
                    jacs.push(lp.matrix.columns(col, d) * jl);
                    col += d;
                }
                Ok((e, jacs))
            }
        }
    }

    /// Whitened linearization with robust cost and IRLS weight.
    pub fn linearize(&self, values: &Values) -> Result<Linearized> {
        let (e, jacs) = self.evaluate(values)?;
        let w = self.noise.whitener();
        let residual = w * e;
        let jacobians = jacs.iter().map(|j| w * j).collect();
        let (cost, weight) = self.robust_cost(residual.norm());
        Ok(Linearized {
            residual,
            jacobians,
            weight,
            cost,
        })
    }

    /// Cost contribution; quadratic `½r²` unless a kernel is attached.
    pub fn cost(&self, values: &Values) -> Result<f64> {
        let (e, _) = self.evaluate(values)?;
        let r = (self.noise.whitener() * e).norm();
        Ok(self.robust_cost(r).0)
    }

    /// Whitened residual norm at `values`.
    pub fn whitened_norm(&self, values: &Values) -> Result<f64> {
        let (e, _) = self.evaluate(values)?;
        Ok((self.noise.whitener() * e).norm())
    }

    fn robust_cost(&self, r: f64) -> (f64, f64) {
        match &self.kernel {
            Some(k) if r.is_finite() => {
                let l = k.eval_finite(r);
                (l.value, l.irls_weight)
            }
            _ => (0.5 * r * r, 1.0),
        }
    }
}
