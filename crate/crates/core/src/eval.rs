//! Error metrics, empirical distributions and the kernel-parameter grid search.

use std::fmt;

use nalgebra::Vector3;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fusion::{gnss_residual_mse, run_fusion, FusionConfig, FusionInput};
use crate::geo::{EcefCoord, FrameRef};
use crate::robust::RobustKernel;
use crate::sim::Trajectory;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ErrorMode {
    /// East and North only.
    #[default]
    Horizontal,
    Full3D,
}

/// Per-epoch position errors of an estimate against truth, in the ENU frame
/// anchored at truth's first epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct PositionErrors {
    pub times: Vec<f64>,
    pub enu: Vec<Vector3<f64>>,
    pub norms: Vec<f64>,
    pub unmatched: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorMetrics {
    pub rmse: f64,
    pub mean_error: f64,
    pub max_error: f64,
    pub std_dev: f64,
    pub rmse_east: f64,
    pub rmse_north: f64,
    pub rmse_up: f64,
    pub count: usize,
    pub unmatched: usize,
}

impl ErrorMetrics {
    /// `(name, value)` pairs in a stable order, for CSV output.
    pub fn fields(&self) -> Vec<(&'static str, f64)> {
        vec![
            ("rmse", self.rmse),
            ("mean_error", self.mean_error),
            ("max_error", self.max_error),
            ("std_dev", self.std_dev),
            ("rmse_east", self.rmse_east),
            ("rmse_north", self.rmse_north),
            ("rmse_up", self.rmse_up),
            ("count", self.count as f64),
            ("unmatched", self.unmatched as f64),
        ]
    }
}

impl fmt::Display for ErrorMetrics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "RMSE: {:.6} m", self.rmse)?;
        writeln!(f, "ME: {:.6} m", self.mean_error)?;
        writeln!(f, "MaxE: {:.6} m", self.max_error)?;
        writeln!(f, "SD: {:.6} m", self.std_dev)?;
        writeln!(
            f,
            "RMSE ENU: {:.6} {:.6} {:.6} m",
            self.rmse_east, self.rmse_north, self.rmse_up
        )?;
        writeln!(f, "epochs: {}", self.count)?;
        write!(f, "unmatched: {}", self.unmatched)
    }
}

/// Half the median spacing of the truth timestamps.
fn match_tolerance(truth: &Trajectory) -> f64 {
    let gaps: Vec<f64> = truth.points().windows(2).map(|w| w[1].t - w[0].t).collect();
    if gaps.is_empty() {
        return f64::INFINITY;
    }
    0.5 * crate::fusion::median(&gaps)
}

pub fn position_errors(est: &Trajectory, truth: &Trajectory, mode: ErrorMode) -> Result<PositionErrors> {
    let first = truth.first().ok_or(Error::EmptyOverlap)?;
    let frame = FrameRef::at_ecef(EcefCoord::from_vector(&first.state.position))?;
    let tol = match_tolerance(truth);
    let mut out = PositionErrors {
        times: Vec::new(),
        enu: Vec::new(),
        norms: Vec::new(),
        unmatched: 0,
    };
    for p in est.iter() {
        let Some(t) = truth.nearest(p.t, tol) else {
            out.unmatched += 1;
            continue;
        };
        let e = frame.ecef_vector_to_enu(&(p.state.position - t.state.position));
        let norm = match mode {
            ErrorMode::Horizontal => e.xy().norm(),
            ErrorMode::Full3D => e.norm(),
        };
        out.times.push(p.t);
        out.enu.push(e);
        out.norms.push(norm);
    }
    if out.norms.is_empty() {
        return Err(Error::EmptyOverlap);
    }
    Ok(out)
}

pub fn compute_metrics(est: &Trajectory, truth: &Trajectory, mode: ErrorMode) -> Result<ErrorMetrics> {
    let errs = position_errors(est, truth, mode)?;
    let mut m = metrics_from_norms(&errs.norms)?;
    let n = errs.enu.len() as f64;
    let axis = |i: usize| (errs.enu.iter().map(|e| e[i] * e[i]).sum::<f64>() / n).sqrt();
    m.rmse_east = axis(0);
    m.rmse_north = axis(1);
    m.rmse_up = axis(2);
    m.unmatched = errs.unmatched;
    Ok(m)
}

/// Summary statistics of a series of error norms. Per-axis fields are zero.
pub fn metrics_from_norms(norms: &[f64]) -> Result<ErrorMetrics> {
    if norms.is_empty() {
        return Err(Error::EmptyOverlap);
    }
    let n = norms.len() as f64;
    let mean = norms.iter().sum::<f64>() / n;
    let ms = norms.iter().map(|e| e * e).sum::<f64>() / n;
    let var = norms.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / n;
    Ok(ErrorMetrics {
        rmse: ms.sqrt(),
        mean_error: mean,
        max_error: norms.iter().copied().fold(0.0, f64::max),
        std_dev: var.sqrt(),
        rmse_east: 0.0,
        rmse_north: 0.0,
        rmse_up: 0.0,
        count: norms.len(),
        unmatched: 0,
    })
}

/// Empirical distribution of error norms.
#[derive(Debug, Clone, PartialEq)]
pub struct CdfReport {
    pub sorted: Vec<f64>,
    /// `(threshold, fraction of samples <= threshold)`.
    pub points: Vec<(f64, f64)>,
    /// `(percent, value)` for the standard query levels.
    pub percentiles: Vec<(f64, f64)>,
}

pub const PERCENTILE_LEVELS: [f64; 6] = [50.0, 68.0, 90.0, 95.0, 99.0, 100.0];

impl CdfReport {
    /// Linear-interpolation percentile at position `q/100 · (n-1)`.
    pub fn percentile(&self, q: f64) -> f64 {
        percentile_sorted(&self.sorted, q)
    }
}

fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    let pos = (q / 100.0).clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

pub fn compute_cdf(errors: &[f64]) -> Result<CdfReport> {
    if errors.is_empty() {
        return Err(Error::Empty("error samples"));
    }
    if errors.iter().any(|e| !e.is_finite()) {
        return Err(Error::NonFinite("error samples"));
    }
    let mut sorted = errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut points: Vec<(f64, f64)> = Vec::with_capacity(sorted.len());
    for (i, &e) in sorted.iter().enumerate() {
        let frac = (i + 1) as f64 / n;
        match points.last_mut() {
            Some(last) if last.0 == e => last.1 = frac,
            _ => points.push((e, frac)),
        }
    }
    let percentiles = PERCENTILE_LEVELS
        .iter()
        .map(|&q| (q, percentile_sorted(&sorted, q)))
        .collect();
    Ok(CdfReport {
        sorted,
        points,
        percentiles,
    })
}

/// Histogram density over `[0, max]`: `(bin start, bin end, density)` with
/// the densities integrating to one.
pub fn pdf_histogram(errors: &[f64], bins: usize) -> Result<Vec<(f64, f64, f64)>> {
    if errors.is_empty() || bins == 0 {
        return Err(Error::Empty("error samples"));
    }
    let max = errors.iter().copied().fold(0.0, f64::max);
    let width = if max > 0.0 { max / bins as f64 } else { 1.0 / bins as f64 };
    let mut counts = vec![0usize; bins];
    for &e in errors {
        let i = ((e / width).floor() as usize).min(bins - 1);
        counts[i] += 1;
    }
    let n = errors.len() as f64;
    Ok(counts
        .iter()
        .enumerate()
        .map(|(i, &c)| (i as f64 * width, (i + 1) as f64 * width, c as f64 / (n * width)))
        .collect())
}

pub const DEFAULT_HISTOGRAM_BINS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Objective<'a> {
    /// Mean squared whitened GNSS residual at convergence.
    ResidualMse,
    /// Horizontal RMSE against a reference trajectory.
    GroundTruthRmse(&'a Trajectory),
}

impl Objective<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            Objective::ResidualMse => "residual-mse",
            Objective::GroundTruthRmse(_) => "gt-rmse",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuneCell {
    pub alpha: f64,
    pub c: f64,
    /// Objective value, or the failure message.
    pub outcome: std::result::Result<f64, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuneResult {
    pub objective: &'static str,
    /// Row-major over (alpha, c) in the order the grids were given.
    pub cells: Vec<TuneCell>,
    pub best_alpha: f64,
    pub best_c: f64,
    pub best_value: f64,
}

impl TuneResult {
    pub fn failed(&self) -> impl Iterator<Item = &TuneCell> {
        self.cells.iter().filter(|c| c.outcome.is_err())
    }
}

/// `-4, -3.5, ..., 4`.
pub fn default_alpha_grid() -> Vec<f64> {
    (0..=16).map(|i| i as f64 * 0.5 - 4.0).collect()
}

/// `0.1, 0.2, ..., 2.0`.
pub fn default_c_grid() -> Vec<f64> {
    (1..=20).map(|i| i as f64 / 10.0).collect()
}

/// Picks the smallest objective; exact ties go to the larger α, then the
/// larger c (the less aggressive kernel).
fn select_best(cells: &[TuneCell]) -> Option<(f64, f64, f64)> {
    cells
        .iter()
        .filter_map(|cell| cell.outcome.as_ref().ok().map(|v| (cell.alpha, cell.c, *v)))
        .filter(|(_, _, v)| v.is_finite())
        .min_by(|a, b| {
            a.2.total_cmp(&b.2)
                .then(b.0.total_cmp(&a.0))
                .then(b.1.total_cmp(&a.1))
        })
}

/// Evaluates every `(α, c)` cell with an independent Barron-kernel fusion
/// run. Cells run in parallel; the result keeps grid order.
pub fn grid_search(
    input: &FusionInput,
    base: &FusionConfig,
    alphas: &[f64],
    cs: &[f64],
    objective: Objective,
) -> Result<TuneResult> {
    grid_search_with(alphas, cs, objective, |alpha, c| {
        let mut cfg = base.clone();
        cfg.kernel = Some(RobustKernel::barron(alpha, c)?);
        let out = run_fusion(input, &cfg)?;
        match objective {
            Objective::ResidualMse => gnss_residual_mse(&out, input.observations, cfg.mode),
            Objective::GroundTruthRmse(truth) => {
                Ok(compute_metrics(&out.trajectory, truth, ErrorMode::Horizontal)?.rmse)
            }
        }
    })
}

/// Grid search over an arbitrary per-cell evaluation.
pub fn grid_search_with<F>(alphas: &[f64], cs: &[f64], objective: Objective, eval: F) -> Result<TuneResult>
where
    F: Fn(f64, f64) -> Result<f64> + Sync,
{
    if alphas.is_empty() || cs.is_empty() {
        return Err(Error::InvalidParameter("grids must be non-empty".into()));
    }
    if let Some(a) = alphas.iter().find(|a| !(-4.0..=4.0).contains(*a)) {
        return Err(Error::InvalidParameter(format!("alpha {a} outside [-4, 4]")));
    }
    if let Some(c) = cs.iter().find(|c| !(**c > 0.0 && **c <= 2.0)) {
        return Err(Error::InvalidParameter(format!("c {c} outside (0, 2]")));
    }
    let grid: Vec<(f64, f64)> = alphas
        .iter()
        .flat_map(|&a| cs.iter().map(move |&c| (a, c)))
        .collect();
    let cells: Vec<TuneCell> = grid
        .par_iter()
        .map(|&(alpha, c)| TuneCell {
            alpha,
            c,
            outcome: eval(alpha, c).map_err(|e| e.to_string()),
        })
        .collect();
    let (best_alpha, best_c, best_value) =
        select_best(&cells).ok_or_else(|| Error::InvalidParameter("every grid cell failed".into()))?;
    Ok(TuneResult {
        objective: objective.name(),
        cells,
        best_alpha,
        best_c,
        best_value,
    })
}
