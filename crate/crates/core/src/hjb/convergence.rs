use serde::Serialize;

use super::build_grid;
use super::grid::GridConfig;
use super::solver::solve_bellman;
use super::utility::Utility;
use crate::error::{Error, Result};
use crate::market::{Domain, MarketSpec};
use crate::policy_eval::merton_oracle;

/// Errors below this (relative to the value scale) count as exact.
pub const EXACT_THRESHOLD: f64 = 1e-10;

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceRow {
    pub nx: usize,
    pub t_steps: usize,
    pub h: f64,
    pub dt: f64,
    /// Max absolute error of `J(., 0)` over the reporting band.
    pub value_error: f64,
    /// Relative error of `J` at the initial state.
    pub center_relative_error: f64,
    /// Max relative policy error at `t = 0` over the reporting band.
    pub policy_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceReport {
    pub rows: Vec<ConvergenceRow>,
    /// Least-squares slope of `ln(value_error)` against `ln(h)`.
    pub value_order: Option<f64>,
    pub policy_order: Option<f64>,
    /// Every row is exact to round-off, so no order can be fitted.
    pub exact: bool,
    /// `max value_error / (h + dt)`.
    pub c_disc: f64,
}

impl ConvergenceReport {
    /// True when the scheme is exact or the fitted value order reaches `min`.
    pub fn order_at_least(&self, min: f64) -> bool {
        self.exact || self.value_order.is_some_and(|o| o >= min)
    }
}

fn fitted_order(hs: &[f64], errs: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = hs
        .iter()
        .zip(errs)
        .filter(|(_, e)| **e > 0.0)
        .map(|(h, e)| (h.ln(), e.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Solves an oracle case on each grid and tabulates errors against the
/// closed form.
pub fn convergence_study(spec: &MarketSpec, utility: &Utility, grids: &[GridConfig]) -> Result<ConvergenceReport> {
    if grids.len() < 2 {
        return Err(Error::Input("convergence study needs at least two grids".into()));
    }
    let oracle = merton_oracle(spec, utility)?;
    let mut rows = Vec::with_capacity(grids.len());
    let mut scale: f64 = 0.0;
    for cfg in grids {
        let grid = build_grid(spec, utility, cfg)?;
        let (value, policy) = solve_bellman(spec, utility, &grid)?;
        let wealth = |c: f64| match spec.domain() {
            Domain::Positive => c.exp(),
            Domain::Reals => c,
        };
        let frac = oracle.fraction_at(0.0);
        let fnorm = frac.norm();
        let (mut verr, mut perr) = (0.0_f64, 0.0_f64);
        for node in 0..grid.node_count() {
            if !grid.in_reporting_band(node) {
                continue;
            }
            let x = wealth(grid.coords(node)[0]);
            let exact = oracle.value(x, 0.0);
            scale = scale.max(exact.abs());
            verr = verr.max((value.at(node, 0) - exact).abs());
            let expected = oracle.control(x, 0.0);
            let u = policy.u_at(node, 0);
            let gap = u.iter().zip(expected.iter()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            if fnorm > 0.0 {
                perr = perr.max(gap / expected.norm().max(f64::MIN_POSITIVE));
            } else {
                perr = perr.max(gap);
            }
        }
        let mut coords = vec![spec.coord0()];
        coords.extend_from_slice(spec.eta0());
        coords.extend_from_slice(spec.zeta0());
        let center = value.interpolate(&coords, 0);
        let exact0 = oracle.value(spec.x0(), 0.0);
        rows.push(ConvergenceRow {
            nx: cfg.nx,
            t_steps: grid.t_steps,
            h: grid.axes[0].h(),
            dt: grid.dt(),
            value_error: verr,
            center_relative_error: (center - exact0).abs() / exact0.abs().max(f64::MIN_POSITIVE),
            policy_error: perr,
        });
    }
    let hs: Vec<f64> = rows.iter().map(|r| r.h).collect();
    let verrs: Vec<f64> = rows.iter().map(|r| r.value_error).collect();
    let perrs: Vec<f64> = rows.iter().map(|r| r.policy_error).collect();
    let exact = verrs.iter().all(|e| *e <= EXACT_THRESHOLD * scale.max(1.0));
    let c_disc = rows.iter().map(|r| r.value_error / (r.h + r.dt)).fold(0.0, f64::max);
    Ok(ConvergenceReport {
        value_order: if exact { None } else { fitted_order(&hs, &verrs) },
        policy_order: fitted_order(&hs, &perrs),
        exact,
        c_disc,
        rows,
    })
}
