//! Robust loss kernels: L2, Huber, Tukey, Cauchy and the adaptive Barron family.
//!
//! Every kernel takes the *whitened* residual norm `r = ||Σ^{-1/2} e||`, so all
//! thresholds and scales are dimensionless. For a kernel `ζ` the optimizer
//! minimizes `ζ(r)` and realizes it through the IRLS weight `w(r) = ζ'(r) / r`,
//! whose `r -> 0` limit is taken analytically.
//!
//! Barron dispatch: `α = 2` is the quadratic branch, `|α| < 1e-9` the Cauchy
//! (log) branch, `α = -∞` or `α < -1e6` the Welsch branch, and any other
//! finite `α` the general power form. The general form is evaluated through
//! `expm1`/`ln_1p`, which keeps it continuous into the limits.

use std::fmt;

use crate::error::{Error, Result};

/// Shape values with `|α|` below this use the logarithmic branch.
pub const BARRON_ALPHA_EPS: f64 = 1e-9;
/// Largest finite `|α|` evaluated with the general formula.
pub const BARRON_ALPHA_MAX: f64 = 1e6;

pub const DEFAULT_HUBER_THRESHOLD: f64 = 1.345;
pub const DEFAULT_TUKEY_THRESHOLD: f64 = 4.6851;
pub const DEFAULT_CAUCHY_SCALE: f64 = 2.3849;
pub const DEFAULT_BARRON_ALPHA: f64 = -0.75;
pub const DEFAULT_BARRON_SCALE: f64 = 1.2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelKind {
    L2,
    Huber { threshold: f64 },
    Tukey { threshold: f64 },
    Cauchy { scale: f64 },
    /// `alpha` may be `f64::NEG_INFINITY` (Welsch).
    Barron { alpha: f64, c: f64 },
}

/// A validated kernel. Construct through the named constructors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobustKernel {
    kind: KernelKind,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossEval {
    pub value: f64,
    pub derivative: f64,
    pub irls_weight: f64,
}

fn positive(name: &str, v: f64) -> Result<f64> {
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(Error::InvalidParameter(format!("{name} must be finite and > 0, got {v}")))
    }
}

impl RobustKernel {
    pub fn l2() -> Self {
        Self { kind: KernelKind::L2 }
    }

    pub fn huber(threshold: f64) -> Result<Self> {
        Ok(Self {
            kind: KernelKind::Huber {
                threshold: positive("huber threshold", threshold)?,
            },
        })
    }

    pub fn tukey(threshold: f64) -> Result<Self> {
        Ok(Self {
            kind: KernelKind::Tukey {
                threshold: positive("tukey threshold", threshold)?,
            },
        })
    }

    pub fn cauchy(scale: f64) -> Result<Self> {
        Ok(Self {
            kind: KernelKind::Cauchy {
                scale: positive("cauchy scale", scale)?,
            },
        })
    }

    /// `alpha` accepts any value in `[-1e6, 1e6]` plus `f64::NEG_INFINITY`;
    /// finite values below `-1e6` are accepted and evaluated as Welsch.
    pub fn barron(alpha: f64, c: f64) -> Result<Self> {
        let c = positive("barron scale c", c)?;
        if alpha.is_nan() || alpha > BARRON_ALPHA_MAX {
            return Err(Error::InvalidParameter(format!(
                "barron shape alpha must be <= {BARRON_ALPHA_MAX} or -inf, got {alpha}"
            )));
        }
        Ok(Self {
            kind: KernelKind::Barron { alpha, c },
        })
    }

    pub fn kind(&self) -> KernelKind {
        self.kind
    }

    /// Loss, derivative and IRLS weight at whitened residual `r`.
    pub fn eval(&self, r: f64) -> Result<LossEval> {
        if !r.is_finite() {
            return Err(Error::NonFinite("robust kernel residual"));
        }
        Ok(self.eval_finite(r))
    }

    pub(crate) fn eval_finite(&self, r: f64) -> LossEval {
        match self.kind {
            KernelKind::L2 => quadratic(r, 1.0),
            KernelKind::Huber { threshold: k } => {
                let a = r.abs();
                if a <= k {
                    LossEval {
                        value: 0.5 * r * r,
                        derivative: r,
                        irls_weight: 1.0,
                    }
                } else {
                    LossEval {
                        value: k * a - 0.5 * k * k,
                        derivative: k * r.signum(),
                        irls_weight: k / a,
                    }
                }
            }
            KernelKind::Tukey { threshold: k } => {
                let k2 = k * k;
                if r.abs() <= k {
                    let t = 1.0 - r * r / k2;
                    LossEval {
                        value: k2 / 6.0 * (1.0 - t * t * t),
                        derivative: r * t * t,
                        irls_weight: t * t,
                    }
                } else {
                    LossEval {
                        value: k2 / 6.0,
                        derivative: 0.0,
                        irls_weight: 0.0,
                    }
                }
            }
            KernelKind::Cauchy { scale: k } => {
                let k2 = k * k;
                let q = r * r / k2;
                let w = 1.0 / (1.0 + q);
                LossEval {
                    value: 0.5 * k2 * q.ln_1p(),
                    derivative: r * w,
                    irls_weight: w,
                }
            }
            KernelKind::Barron { alpha, c } => barron_dispatch(r, alpha, c),
        }
    }
}

impl fmt::Display for RobustKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            KernelKind::L2 => write!(f, "l2"),
            KernelKind::Huber { threshold } => write!(f, "huber(k={threshold})"),
            KernelKind::Tukey { threshold } => write!(f, "tukey(k={threshold})"),
            KernelKind::Cauchy { scale } => write!(f, "cauchy(k={scale})"),
            KernelKind::Barron { alpha, c } => write!(f, "barron(alpha={alpha},c={c})"),
        }
    }
}

/// Free-function form of [`RobustKernel::eval`].
pub fn kernel_eval(k: &RobustKernel, r: f64) -> Result<LossEval> {
    k.eval(r)
}

fn quadratic(r: f64, c: f64) -> LossEval {
    let inv_c2 = 1.0 / (c * c);
    LossEval {
        value: 0.5 * r * r * inv_c2,
        derivative: r * inv_c2,
        irls_weight: inv_c2,
    }
}

fn cauchy_branch(r: f64, c: f64) -> LossEval {
    let x = (r / c) * (r / c);
    let w = 2.0 / (r * r + 2.0 * c * c);
    LossEval {
        value: (0.5 * x).ln_1p(),
        derivative: r * w,
        irls_weight: w,
    }
}

fn welsch_branch(r: f64, c: f64) -> LossEval {
    let x = (r / c) * (r / c);
    let e = (-0.5 * x).exp();
    let w = e / (c * c);
    LossEval {
        value: -(-0.5 * x).exp_m1(),
        derivative: r * w,
        irls_weight: w,
    }
}

fn barron_general(r: f64, alpha: f64, c: f64) -> LossEval {
    let x = (r / c) * (r / c);
    let b = (alpha - 2.0).abs();
    let l = (x / b).ln_1p();
    let w = (l * (0.5 * alpha - 1.0)).exp() / (c * c);
    LossEval {
        value: b / alpha * (0.5 * alpha * l).exp_m1(),
        derivative: r * w,
        irls_weight: w,
    }
}

fn barron_dispatch(r: f64, alpha: f64, c: f64) -> LossEval {
    if alpha == 2.0 {
        quadratic(r, c)
    } else if alpha.abs() < BARRON_ALPHA_EPS {
        cauchy_branch(r, c)
    } else if alpha < -BARRON_ALPHA_MAX {
        welsch_branch(r, c)
    } else {
        barron_general(r, alpha, c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BarronLimit {
    Quadratic,
    Cauchy,
    Welsch,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LimitReport {
    pub limit: BarronLimit,
    pub general_value: f64,
    pub limit_value: f64,
    pub abs_diff: f64,
}

/// Compares the general Barron formula against the closed-form limit branch
/// it approaches. Returns `None` unless `alpha` is within `1e-4` of 2 or 0, or
/// `alpha <= -1e4` (the Welsch neighbourhood).
pub fn barron_limit_check(alpha: f64, c: f64, r: f64) -> Option<LimitReport> {
    let (limit, special) = if (alpha - 2.0).abs() <= 1e-4 {
        (BarronLimit::Quadratic, quadratic(r, c))
    } else if alpha.abs() <= 1e-4 {
        (BarronLimit::Cauchy, cauchy_branch(r, c))
    } else if alpha <= -1e4 {
        (BarronLimit::Welsch, welsch_branch(r, c))
    } else {
        return None;
    };
    if alpha == 2.0 || alpha == 0.0 || !alpha.is_finite() {
        return None;
    }
    let general = barron_general(r, alpha, c);
    Some(LimitReport {
        limit,
        general_value: general.value,
        limit_value: special.value,
        abs_diff: (general.value - special.value).abs(),
    })
}
