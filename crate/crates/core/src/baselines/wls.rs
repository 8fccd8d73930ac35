use nalgebra::{DMatrix, DVector, Matrix4, Vector3};

use crate::error::{Error, Result};
use crate::geo::EcefCoord;
use crate::sim::SatObservation;

const MAX_ITERATIONS: usize = 20;
const STEP_TOLERANCE: f64 = 1e-8;
const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, PartialEq)]
pub struct WlsSolution {
    pub position: EcefCoord,
    /// Receiver clock bias (m).
    pub clock: f64,
    /// Covariance of (x, y, z, clock).
    pub covariance: Matrix4<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Single-epoch Gauss-Newton position and clock fix from corrected
/// pseudoranges, each weighted by `1 / σ²`.
pub fn wls_solve_epoch(observations: &[SatObservation], init: (EcefCoord, f64)) -> Result<WlsSolution> {
    let n = observations.len();
    if n < 4 {
        return Err(Error::InsufficientObservations { got: n });
    }
    let mut p = init.0.to_vector();
    let mut clock = init.1;
    if !(p.iter().all(|v| v.is_finite()) && clock.is_finite()) {
        return Err(Error::NonFinite("WLS initial guess"));
    }
    let mut iterations = 0;
    let mut converged = false;
    let mut info = Matrix4::zeros();
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let (g, e) = linearize(observations, &p, clock);
        let sv = g.singular_values();
        let condition = sv.max() / sv.min();
        if !(condition <= MAX_CONDITION) {
            return Err(Error::DegenerateGeometry { condition });
        }
        // Least squares through SVD keeps precision on long ranges.
        let step = g
            .clone()
            .svd(true, true)
            .solve(&e, 0.0)
            .map_err(|_| Error::DegenerateGeometry { condition })?;
        info = fixed4(&(g.transpose() * &g));
        p += Vector3::new(step[0], step[1], step[2]);
        clock += step[3];
        if Vector3::new(step[0], step[1], step[2]).norm() < STEP_TOLERANCE {
            converged = true;
            break;
        }
    }
    let covariance = info.try_inverse().ok_or(Error::DegenerateGeometry {
        condition: f64::INFINITY,
    })?;
    Ok(WlsSolution {
        position: EcefCoord::from_vector(&p),
        clock,
        covariance: 0.5 * (covariance + covariance.transpose()),
        iterations,
        converged,
    })
}

/// Whitened design matrix (rows `[-uᵀ, 1] / σ`) and residuals `(ρ - h) / σ`.
fn linearize(obs: &[SatObservation], p: &Vector3<f64>, clock: f64) -> (DMatrix<f64>, DVector<f64>) {
    let mut g = DMatrix::zeros(obs.len(), 4);
    let mut e = DVector::zeros(obs.len());
    for (i, o) in obs.iter().enumerate() {
        let d = o.sat_position.to_vector() - p;
        let range = d.norm();
        let u = d / range;
        let w = 1.0 / o.sigma;
        g[(i, 0)] = -u.x * w;
        g[(i, 1)] = -u.y * w;
        g[(i, 2)] = -u.z * w;
        g[(i, 3)] = w;
        e[i] = (o.pseudorange - range - clock) * w;
    }
    (g, e)
}

fn fixed4(m: &DMatrix<f64>) -> Matrix4<f64> {
    Matrix4::from_fn(|i, j| m[(i, j)])
}
