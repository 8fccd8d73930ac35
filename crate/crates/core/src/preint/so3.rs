//! SO(3) exponential/logarithm and right Jacobians.

use nalgebra::{Matrix3, Rotation3, Vector3};

pub type Rotation = Rotation3<f64>;

const SMALL_ANGLE: f64 = 1e-8;

#[inline]
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Rodrigues formula, second-order Taylor expansion below 1e-8 rad.
pub fn so3_exp(v: &Vector3<f64>) -> Rotation {
    let theta2 = v.norm_squared();
    let k = skew(v);
    let m = if theta2 < SMALL_ANGLE * SMALL_ANGLE {
        Matrix3::identity() + k + 0.5 * k * k
    } else {
        let theta = theta2.sqrt();
        let (s, c) = theta.sin_cos();
        Matrix3::identity() + (s / theta) * k + ((1.0 - c) / theta2) * k * k
    };
    Rotation::from_matrix_unchecked(m)
}

/// Inverse of [`so3_exp`]. The angle is recovered with `atan2`, and near
/// `theta = pi` the axis comes from the symmetric part of `R`.
pub fn so3_log(r: &Rotation) -> Vector3<f64> {
    let m = r.matrix();
    let s = 0.5 * Vector3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)]);
    let cos_theta = (0.5 * (m.trace() - 1.0)).clamp(-1.0, 1.0);
    let sin_theta = s.norm();
    let theta = sin_theta.atan2(cos_theta);

    if theta < SMALL_ANGLE {
        // first order: R - R^T = 2 [v]x
        return s;
    }
    if sin_theta > 1e-7 {
        return s * (theta / sin_theta);
    }
    // theta close to pi: (R + R^T)/2 - cos(theta) I = (1 - cos(theta)) k k^T
    let sym = 0.5 * (m + m.transpose()) - Matrix3::identity() * cos_theta;
    let i = (0..3)
        .max_by(|&a, &b| sym[(a, a)].total_cmp(&sym[(b, b)]))
        .unwrap_or(0);
    let mut axis: Vector3<f64> = sym.column(i).into();
    axis /= axis.norm();
    if axis.dot(&s) < 0.0 {
        axis = -axis;
    }
    axis * theta
}

/// Right Jacobian of SO(3).
pub fn right_jacobian(v: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = v.norm_squared();
    let k = skew(v);
    if theta2 < 1e-10 {
        return Matrix3::identity() - 0.5 * k + (1.0 / 6.0) * k * k;
    }
    let theta = theta2.sqrt();
    Matrix3::identity() - ((1.0 - theta.cos()) / theta2) * k
        + ((theta - theta.sin()) / (theta2 * theta)) * k * k
}

pub fn right_jacobian_inv(v: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = v.norm_squared();
    let k = skew(v);
    if theta2 < 1e-10 {
        return Matrix3::identity() + 0.5 * k + (1.0 / 12.0) * k * k;
    }
    let theta = theta2.sqrt();
    let coef = 1.0 / theta2 - (1.0 + theta.cos()) / (2.0 * theta * theta.sin());
    Matrix3::identity() + 0.5 * k + coef * k * k
}

/// Projects a near-rotation back onto SO(3) with one Newton polar step.
pub fn renormalize(r: &Rotation) -> Rotation {
    let m = r.matrix();
    let fixed = 0.5 * m * (Matrix3::identity() * 3.0 - m.transpose() * m);
    Rotation::from_matrix_unchecked(fixed)
}
