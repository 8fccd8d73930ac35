use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::factor::{Factor, FactorKind, LinearPrior, NoiseModel};
use super::values::{Value, Values, VariableKey};
use super::FactorGraph;
use crate::error::Result;

/// Relative eigenvalue floor below which marginal directions are treated as
/// unobserved and dropped from the linear prior.
const EIGEN_FLOOR: f64 = 1e-12;

/// Drops every variable with epoch `< new_epoch - lag` and replaces the
/// factors that touched them with one linear prior on the remaining
/// neighbours (Schur complement at the current linearization point).
///
/// Returns the removed variables with their last estimates. `lag == 0`
/// disables sliding.
pub fn slide_window(graph: &mut FactorGraph, new_epoch: usize, lag: usize) -> Result<Values> {
    let mut removed = Values::new();
    if lag == 0 || new_epoch < lag {
        return Ok(removed);
    }
    let cutoff = new_epoch - lag;
    let dropped: BTreeSet<VariableKey> = graph
        .values()
        .iter()
        .map(|(k, _)| *k)
        .filter(|k| k.epoch < cutoff)
        .collect();
    if dropped.is_empty() {
        return Ok(removed);
    }

    let touching = graph.take_factors(|f| f.keys.iter().any(|k| dropped.contains(k)));
    let boundary: BTreeSet<VariableKey> = touching
        .iter()
        .flat_map(|f| f.keys.iter().copied())
        .filter(|k| !dropped.contains(k))
        .collect();

    if !boundary.is_empty() {
        if let Some(prior) = marginalize(graph.values(), &touching, &dropped, &boundary)? {
            graph.factors.push(prior);
        }
    }

    for k in &dropped {
        if let Some(v) = graph.values_mut().remove(k) {
            removed.insert(*k, v)?;
        }
    }
    Ok(removed)
}

fn marginalize(
    values: &Values,
    factors: &[Factor],
    dropped: &BTreeSet<VariableKey>,
    boundary: &BTreeSet<VariableKey>,
) -> Result<Option<Factor>> {
    // Dropped variables first, then the boundary block.
    let mut offsets = BTreeMap::new();
    let mut n = 0;
    for k in dropped.iter().chain(boundary) {
        offsets.insert(*k, n);
        n += k.dim();
    }
    let nd: usize = dropped.iter().map(|k| k.dim()).sum();
    let nb = n - nd;

    let mut h = DMatrix::zeros(n, n);
    let mut g = DVector::zeros(n);
    for f in factors {
        let lin = f.linearize(values)?;
        for (a, ja) in f.keys.iter().zip(&lin.jacobians) {
            let oa = offsets[a];
            let ga = ja.tr_mul(&lin.residual) * lin.weight;
            let mut gv = g.rows_mut(oa, ga.len());
            gv += &ga;
            for (b, jb) in f.keys.iter().zip(&lin.jacobians) {
                let ob = offsets[b];
                let hab = ja.tr_mul(jb) * lin.weight;
                let mut hv = h.view_mut((oa, ob), hab.shape());
                hv += &hab;
            }
        }
    }

    let hdd = h.view((0, 0), (nd, nd)).into_owned();
    let hbd = h.view((nd, 0), (nb, nd)).into_owned();
    let hbb = h.view((nd, nd), (nb, nb)).into_owned();
    let gd = g.rows(0, nd).into_owned();
    let gb = g.rows(nd, nb).into_owned();

    let hdd_inv = pseudo_inverse(&hdd);
    let schur = &hbb - &hbd * &hdd_inv * hbd.transpose();
    let schur = (&schur + schur.transpose()) * 0.5;
    let grad = &gb - &hbd * &hdd_inv * &gd;

    // H = V Λ Vᵀ  =>  ½δᵀHδ + gᵀδ = ½‖Λ^{1/2}Vᵀδ + Λ^{-1/2}Vᵀg‖² + const.
    let eig = SymmetricEigen::new(schur);
    let lmax = eig.eigenvalues.amax();
    if lmax <= 0.0 {
        return Ok(None);
    }
    let keep: Vec<usize> = (0..nb)
        .filter(|&i| eig.eigenvalues[i] > EIGEN_FLOOR * lmax)
        .collect();
    let mut a = DMatrix::zeros(keep.len(), nb);
    let mut d = DVector::zeros(keep.len());
    for (row, &i) in keep.iter().enumerate() {
        let lambda = eig.eigenvalues[i];
        let v = eig.eigenvectors.column(i);
        a.row_mut(row).copy_from(&(v.transpose() * lambda.sqrt()));
        d[row] = v.dot(&grad) / lambda.sqrt();
    }

    let keys: Vec<VariableKey> = boundary.iter().copied().collect();
    let linearization: Vec<Value> = keys
        .iter()
        .map(|k| values.get(k).copied())
        .collect::<Result<_>>()?;
    Ok(Some(Factor {
        kind: FactorKind::Marginal(Box::new(LinearPrior {
            linearization,
            matrix: a,
            offset: d,
        })),
        keys,
        noise: NoiseModel::unit(keep.len()),
        kernel: None,
    }))
}

fn pseudo_inverse(m: &DMatrix<f64>) -> DMatrix<f64> {
    if let Some(ch) = m.clone().cholesky() {
        return ch.inverse();
    }
    let eig = SymmetricEigen::new(m.clone());
    let lmax = eig.eigenvalues.amax();
    let inv = eig.eigenvalues.map(|l| if l > EIGEN_FLOOR * lmax { 1.0 / l } else { 0.0 });
    &eig.eigenvectors * DMatrix::from_diagonal(&inv) * eig.eigenvectors.transpose()
}
