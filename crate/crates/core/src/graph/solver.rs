use std::collections::BTreeMap;
use std::fmt;

use nalgebra::DVector;
use rayon::prelude::*;

use super::banded::BandedMatrix;
use super::factor::Linearized;
use super::values::{Values, VariableKey};
use super::FactorGraph;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SolverAlgorithm {
    GaussNewton,
    #[default]
    LevenbergMarquardt,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub algorithm: SolverAlgorithm,
    pub max_iterations: usize,
    pub abs_tolerance: f64,
    pub rel_tolerance: f64,
    pub initial_damping: f64,
    pub damping_factor: f64,
    /// Sliding-window length in epochs; 0 keeps the full history.
    pub lag: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            algorithm: SolverAlgorithm::LevenbergMarquardt,
            max_iterations: 50,
            abs_tolerance: 1e-9,
            rel_tolerance: 1e-7,
            initial_damping: 1e-4,
            damping_factor: 10.0,
            lag: 0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.abs_tolerance > 0.0 && self.rel_tolerance > 0.0) {
            return Err(Error::InvalidParameter("solver tolerances must be > 0".into()));
        }
        if !(self.initial_damping > 0.0 && self.damping_factor > 1.0) {
            return Err(Error::InvalidParameter(
                "damping must be > 0 with factor > 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationLog {
    pub iteration: usize,
    pub cost: f64,
    pub damping: f64,
}

impl fmt::Display for IterationLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "iteration={} cost={:.17e} damping={:.3e}",
            self.iteration, self.cost, self.damping
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub iterations: usize,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub converged: bool,
    pub log: Vec<IterationLog>,
}

impl fmt::Display for SolveReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for l in &self.log {
            writeln!(f, "{l}")?;
        }
        write!(
            f,
            "iterations={} initial_cost={:.17e} final_cost={:.17e} converged={}",
            self.iterations, self.initial_cost, self.final_cost, self.converged
        )
    }
}

const MAX_DAMPING: f64 = 1e16;
const MIN_DAMPING: f64 = 1e-12;
const GRADIENT_FLOOR: f64 = 1e-12;

struct Layout {
    offsets: BTreeMap<VariableKey, usize>,
    dim: usize,
    bandwidth: usize,
}

fn layout(graph: &FactorGraph) -> Layout {
    let (offsets, dim) = graph.ordering();
    let mut bandwidth = 0;
    for f in graph.factors() {
        let lo = f.keys.iter().map(|k| offsets[k]).min().unwrap_or(0);
        let hi = f
            .keys
            .iter()
            .map(|k| offsets[k] + k.dim())
            .max()
            .unwrap_or(1);
        bandwidth = bandwidth.max(hi - lo - 1);
    }
    Layout {
        offsets,
        dim,
        bandwidth: bandwidth.min(dim.saturating_sub(1)),
    }
}

fn linearize_all(graph: &FactorGraph) -> Result<Vec<Linearized>> {
    let values = graph.values();
    graph
        .factors()
        .par_iter()
        .map(|f| f.linearize(values))
        .collect()
}

/// Weighted normal equations `H = Σ w JᵀJ`, `g = Σ w Jᵀe` in band storage.
fn normal_equations(graph: &FactorGraph, lay: &Layout) -> Result<(BandedMatrix, DVector<f64>)> {
    let lins = linearize_all(graph)?;
    let mut h = BandedMatrix::zeros(lay.dim, lay.bandwidth);
    let mut g = DVector::zeros(lay.dim);
    for (f, lin) in graph.factors().iter().zip(&lins) {
        let w = lin.weight;
        for (a, ja) in f.keys.iter().zip(&lin.jacobians) {
            let oa = lay.offsets[a];
            let ga = ja.tr_mul(&lin.residual);
            for r in 0..ga.len() {
                g[oa + r] += w * ga[r];
            }
            for (b, jb) in f.keys.iter().zip(&lin.jacobians) {
                let ob = lay.offsets[b];
                if ob > oa {
                    continue;
                }
                let hab = ja.tr_mul(jb);
                for r in 0..hab.nrows() {
                    for c in 0..hab.ncols() {
                        let (i, j) = (oa + r, ob + c);
                        // Diagonal blocks contribute each off-diagonal pair twice.
                        if ob == oa && j > i {
                            continue;
                        }
                        h.add(i, j, w * hab[(r, c)]);
                    }
                }
            }
        }
    }
    Ok((h, g))
}

fn retract_all(values: &Values, lay: &Layout, delta: &DVector<f64>) -> Result<Values> {
    let mut out = Values::new();
    for (k, v) in values.iter() {
        let o = lay.offsets[k];
        out.insert(*k, v.retract(&delta.as_slice()[o..o + v.dim()]))?;
    }
    Ok(out)
}

/// Minimizes the graph's total cost starting from its current values, which
/// are replaced by the estimate. Robust kernels enter as IRLS weights that are
/// recomputed at every outer iteration.
///
/// Levenberg-Marquardt damps with `λ I` on the whitened normal equations.
/// Scaling by `diag(H)` instead would let the stiff IMU rotation terms hold
/// back weakly observed directions such as yaw for many iterations.
pub fn optimize(graph: &mut FactorGraph, cfg: &SolverConfig) -> Result<SolveReport> {
    cfg.validate()?;
    let lay = layout(graph);
    let mut cost = graph.total_cost()?;
    if !cost.is_finite() {
        return Err(Error::NonFinite("initial cost"));
    }
    let initial_cost = cost;
    let mut damping = cfg.initial_damping;
    let mut log = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    while iterations < cfg.max_iterations {
        let (h, g) = normal_equations(graph, &lay)?;
        if cost == 0.0 || g.amax() < GRADIENT_FLOOR {
            converged = true;
            break;
        }
        iterations += 1;
        let rhs = -&g;
        let new_cost = match cfg.algorithm {
            SolverAlgorithm::GaussNewton => {
                let delta = h.cholesky()?.solve(&rhs);
                let candidate = retract_all(graph.values(), &lay, &delta)?;
                let c = graph.cost_at(&candidate)?;
                graph.set_values(candidate);
                c
            }
            SolverAlgorithm::LevenbergMarquardt => {
                let mut accepted = None;
                while damping <= MAX_DAMPING {
                    let mut damped = h.clone();
                    damped.add_diagonal(&DVector::from_element(lay.dim, damping));
                    if let Ok(chol) = damped.cholesky() {
                        let delta = chol.solve(&rhs);
                        let candidate = retract_all(graph.values(), &lay, &delta)?;
                        let c = graph.cost_at(&candidate)?;
                        if c.is_finite() && c < cost {
                            graph.set_values(candidate);
                            accepted = Some(c);
                            damping = (damping / cfg.damping_factor).max(MIN_DAMPING);
                            break;
                        }
                    }
                    damping *= cfg.damping_factor;
                }
                match accepted {
                    Some(c) => c,
                    None => {
                        // No damping level decreases the cost: a numerical minimum.
                        damping = MAX_DAMPING;
                        log.push(IterationLog {
                            iteration: iterations,
                            cost,
                            damping,
                        });
                        converged = true;
                        break;
                    }
                }
            }
        };
        log.push(IterationLog {
            iteration: iterations,
            cost: new_cost,
            damping,
        });
        let change = (cost - new_cost).abs();
        cost = new_cost;
        if change < cfg.abs_tolerance || change < cfg.rel_tolerance * cost.abs() {
            converged = true;
            break;
        }
    }

    Ok(SolveReport {
        iterations,
        initial_cost,
        final_cost: cost,
        converged,
        log,
    })
}
