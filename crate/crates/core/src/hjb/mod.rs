//! Explicit finite-difference solver for the Bellman equation on the state
//! `(wealth coordinate, y, z)` and checks of the resulting policy against
//! the fund representation.

mod argmax;
mod convergence;
pub mod export;
mod fund_policy;
mod grid;
mod solver;
mod stencils;
mod utility;

pub use argmax::{unrestricted_argmax_check, ArgmaxReport, ArgmaxSample, SampleStatus, SEARCH_TOLERANCE};
pub use convergence::{convergence_study, ConvergenceReport, ConvergenceRow, EXACT_THRESHOLD};
pub use fund_policy::{extract_fund_policy, FundPolicyReport};
pub use grid::{auto_axes, Axis, Grid, GridConfig, MAX_STATE_DIM};
pub use solver::{
    interpolate_into, solve_bellman, solve_with, BellmanSolver, PolicyGrid, PolicySlice, ValueGrid,
    STABILITY_SAFETY,
};
pub use stencils::{derivative_stencils, diff1, diff2, Derivatives};
pub use utility::Utility;

use crate::error::Result;
use crate::market::MarketSpec;

/// Sizes a grid for `spec`; `t_steps = 0` picks the smallest stable count.
pub fn build_grid(spec: &MarketSpec, utility: &Utility, cfg: &GridConfig) -> Result<Grid> {
    let axes = auto_axes(spec, cfg)?;
    let probe = Grid::new(axes, spec.m(), spec.big_m(), cfg.t_steps.max(1), spec.horizon())?;
    if cfg.t_steps > 0 {
        return Ok(probe);
    }
    let solver = BellmanSolver::prepare(spec, utility, &probe)?;
    probe.with_t_steps(solver.required_steps().max(1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::Domain;

    #[test]
    fn constant_utility_stays_constant() {
        let mut cfg = crate::market::tests::constant_config(2);
        cfg.domain = Domain::Reals;
        let spec = MarketSpec::new(cfg).unwrap();
        let u = Utility::Constant { value: 1.5 };
        let grid = build_grid(&spec, &u, &GridConfig::new(11)).unwrap();
        let (value, policy) = solve_bellman(&spec, &u, &grid).unwrap();
        assert!(value.values.iter().all(|v| *v == 1.5));
        assert!(policy.u.iter().all(|v| *v == 0.0));
    }
}
