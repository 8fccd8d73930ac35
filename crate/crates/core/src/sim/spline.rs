use crate::error::{Error, Result};

/// Natural cubic spline `y(t)` through strictly increasing knots.
#[derive(Debug, Clone)]
pub struct CubicSpline {
    t: Vec<f64>,
    y: Vec<f64>,
    /// Second derivatives at the knots.
    m: Vec<f64>,
}

impl CubicSpline {
    pub fn natural(t: &[f64], y: &[f64]) -> Result<Self> {
        let n = t.len();
        if n != y.len() || n < 2 {
            return Err(Error::InvalidParameter("spline needs >= 2 matching knots".into()));
        }
        if t.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidParameter("spline knots must increase".into()));
        }
        let mut m = vec![0.0; n];
        if n > 2 {
            // Thomas algorithm on the interior second-derivative system.
            let k = n - 2;
            let mut diag = vec![0.0; k];
            let mut upper = vec![0.0; k];
            let mut rhs = vec![0.0; k];
            for i in 0..k {
                let h0 = t[i + 1] - t[i];
                let h1 = t[i + 2] - t[i + 1];
                diag[i] = 2.0 * (h0 + h1);
                upper[i] = h1;
                rhs[i] = 6.0 * ((y[i + 2] - y[i + 1]) / h1 - (y[i + 1] - y[i]) / h0);
            }
            for i in 1..k {
                let lower = t[i + 1] - t[i];
                let f = lower / diag[i - 1];
                diag[i] -= f * upper[i - 1];
                rhs[i] -= f * rhs[i - 1];
            }
            m[k] = rhs[k - 1] / diag[k - 1];
            for i in (0..k - 1).rev() {
                m[i + 1] = (rhs[i] - upper[i] * m[i + 2]) / diag[i];
            }
        }
        Ok(Self {
            t: t.to_vec(),
            y: y.to_vec(),
            m,
        })
    }

    pub fn end_time(&self) -> f64 {
        *self.t.last().expect("non-empty")
    }

    fn segment(&self, t: f64) -> usize {
        let i = self.t.partition_point(|&k| k <= t);
        i.clamp(1, self.t.len() - 1) - 1
    }

    /// Value and first derivative at `t`, extrapolating linearly outside.
    pub fn eval(&self, t: f64) -> (f64, f64) {
        let i = self.segment(t);
        let (t0, t1) = (self.t[i], self.t[i + 1]);
        let h = t1 - t0;
        let (m0, m1) = (self.m[i], self.m[i + 1]);
        let (y0, y1) = (self.y[i], self.y[i + 1]);
        let a = (t1 - t) / h;
        let b = (t - t0) / h;
        let value = a * y0 + b * y1 + ((a * a * a - a) * m0 + (b * b * b - b) * m1) * h * h / 6.0;
        let slope = (y1 - y0) / h + (-(3.0 * a * a - 1.0) * m0 + (3.0 * b * b - 1.0) * m1) * h / 6.0;
        (value, slope)
    }

    /// Second derivative at `t`.
    pub fn second_derivative(&self, t: f64) -> f64 {
        let i = self.segment(t);
        let h = self.t[i + 1] - self.t[i];
        let b = ((t - self.t[i]) / h).clamp(0.0, 1.0);
        (1.0 - b) * self.m[i] + b * self.m[i + 1]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interpolates_knots() {
        let t = [0.0, 1.0, 2.5, 4.0];
        let y = [1.0, -2.0, 0.5, 3.0];
        let s = CubicSpline::natural(&t, &y).unwrap();
        for (ti, yi) in t.iter().zip(&y) {
            assert!((s.eval(*ti).0 - yi).abs() < 1e-12);
        }
    }

    #[test]
    fn reproduces_lines_exactly() {
        let t = [0.0, 0.7, 2.0, 3.1, 5.0];
        let y: Vec<f64> = t.iter().map(|t| 2.0 * t - 1.0).collect();
        let s = CubicSpline::natural(&t, &y).unwrap();
        for k in 0..50 {
            let x = k as f64 * 0.1;
            let (v, d) = s.eval(x);
            assert!((v - (2.0 * x - 1.0)).abs() < 1e-12);
            assert!((d - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn derivatives_are_continuous_at_knots() {
        let t = [0.0, 1.0, 2.0, 3.5, 4.0];
        let y = [0.0, 1.0, 0.0, 2.0, 1.0];
        let s = CubicSpline::natural(&t, &y).unwrap();
        for &k in &t[1..4] {
            let e = 1e-7;
            assert!((s.eval(k - e).1 - s.eval(k + e).1).abs() < 1e-5);
            assert!((s.second_derivative(k - e) - s.second_derivative(k + e)).abs() < 1e-5);
        }
        assert_eq!(s.second_derivative(0.0), 0.0);
        assert_eq!(s.second_derivative(4.0), 0.0);
    }

    #[test]
    fn derivative_matches_finite_difference() {
        let t = [0.0, 1.0, 2.0, 3.5, 4.0];
        let y = [0.0, 1.0, 0.0, 2.0, 1.0];
        let s = CubicSpline::natural(&t, &y).unwrap();
        for k in 1..39 {
            let x = k as f64 * 0.1 + 0.013;
            let h = 1e-6;
            let fd = (s.eval(x + h).0 - s.eval(x - h).0) / (2.0 * h);
            assert!((fd - s.eval(x).1).abs() < 1e-7);
        }
    }

    #[test]
    fn rejects_unsorted_knots() {
        assert!(CubicSpline::natural(&[0.0, 0.0], &[1.0, 2.0]).is_err());
        assert!(CubicSpline::natural(&[0.0], &[1.0]).is_err());
    }
}
