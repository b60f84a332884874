use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::grid::Grid;
use super::solver::{PolicyGrid, ValueGrid};
use super::stencils::derivative_stencils;
use crate::error::{dim_err, Result};
use crate::funds::{BasisTag, FundSet};

/// Outcome of checking the solved policy against the fund representation.
#[derive(Debug, Clone, Serialize)]
pub struct FundPolicyReport {
    pub mu: usize,
    pub basis: BasisTag,
    pub checked_nodes: usize,
    pub degenerate_nodes: usize,
    /// Largest relative distance of `u` from the span of the fund basis.
    pub max_span_residual: f64,
    /// Same, restricted to non-degenerate nodes.
    pub max_span_residual_nondegenerate: f64,
    /// Largest `|u - sum_k H_k psi_k| / |u|` at non-degenerate nodes.
    pub max_reconstruction_residual: f64,
    /// Largest gap between stored coefficients and `kappa` times freshly
    /// computed derivatives, relative to `max(1, |expected|)`.
    pub max_coefficient_mismatch: f64,
}

struct NodeFunds {
    /// Factor directions as columns.
    factor: DMatrix<f64>,
    /// Orthogonal projector onto the fund basis span.
    projector: DMatrix<f64>,
}

fn projector(cols: &DMatrix<f64>) -> DMatrix<f64> {
    let svd = cols.clone().svd(true, false);
    let u = svd.u.expect("left singular vectors");
    let smax = svd.singular_values.max();
    let mut p = DMatrix::zeros(cols.nrows(), cols.nrows());
    for (i, s) in svd.singular_values.iter().enumerate() {
        if *s > smax * 1e-13 {
            let c = u.column(i);
            p += &c * c.transpose();
        }
    }
    p
}

/// Checks the fund representation of a solved policy on every node and
/// slice. The stored coefficients are the fund fields `H_k(x, y, z, t)`.
pub fn extract_fund_policy(
    value: &ValueGrid,
    policy: &PolicyGrid,
    funds: &FundSet,
    grid: &Grid,
) -> Result<FundPolicyReport> {
    if value.grid != *grid || policy.grid != *grid {
        return Err(dim_err("grid", grid.descriptor(), policy.grid.descriptor()));
    }
    let m = grid.m;
    let nodes = grid.node_count();
    let mut basis = BasisTag::FactorFunds;
    let cache = (0..nodes)
        .map(|node| {
            let c = grid.coords(node);
            let (y, z) = c[1..].split_at(m);
            let p = funds.at(y, z, 0.0)?;
            basis = p.basis;
            let factor = DMatrix::from_fn(policy.n, m + 1, |i, j| p.factor_directions[j][i]);
            Ok(NodeFunds {
                factor,
                projector: projector(&p.matrix()),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut report = FundPolicyReport {
        mu: funds.mu(),
        basis,
        checked_nodes: 0,
        degenerate_nodes: 0,
        max_span_residual: 0.0,
        max_span_residual_nondegenerate: 0.0,
        max_reconstruction_residual: 0.0,
        max_coefficient_mismatch: 0.0,
    };
    for k in 0..grid.slices() {
        let d = derivative_stencils(value.slice(k), grid);
        for (node, nf) in cache.iter().enumerate() {
            let u = DVector::from_column_slice(policy.u_at(node, k));
            let unorm = u.norm();
            let span = if unorm > 0.0 {
                (&u - &nf.projector * &u).norm() / unorm
            } else {
                0.0
            };
            report.checked_nodes += 1;
            report.max_span_residual = report.max_span_residual.max(span);
            let kappa = policy.kappa_at(node, k);
            if !kappa.is_finite() {
                report.degenerate_nodes += 1;
                continue;
            }
            report.max_span_residual_nondegenerate = report.max_span_residual_nondegenerate.max(span);
            let h = DVector::from_column_slice(policy.fund_at(node, k));
            if unorm > 0.0 {
                let rec = (&u - &nf.factor * &h).norm() / unorm;
                report.max_reconstruction_residual = report.max_reconstruction_residual.max(rec);
            }
            let mut expected: Vec<f64> = d.j_xy(node).iter().map(|v| kappa * v).collect();
            expected.push(kappa * d.j_x(node));
            for (e, got) in expected.iter().zip(h.iter()) {
                let gap = (e - got).abs() / e.abs().max(1.0);
                report.max_coefficient_mismatch = report.max_coefficient_mismatch.max(gap);
            }
        }
    }
    Ok(report)
}
