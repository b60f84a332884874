use nalgebra::DVector;
use rayon::prelude::*;

use super::grid::Grid;
use super::stencils::{derivative_stencils, Derivatives};
use super::utility::Utility;
use crate::error::{dim_err, Error, Result};
use crate::funds::{decompose, fund_directions};
use crate::market::{validate_spec, Domain, MarketSpec};
use crate::quad_opt::{BallCase, G0Context, G0Solution};

/// Safety factor applied to the explicit-scheme time-step bound.
pub const STABILITY_SAFETY: f64 = 0.9;

/// Value function on every node and time slice.
#[derive(Debug, Clone)]
pub struct ValueGrid {
    pub grid: Grid,
    pub domain: Domain,
    /// `slice * nodes + node`
    pub values: Vec<f64>,
}

impl ValueGrid {
    pub fn slice(&self, k: usize) -> &[f64] {
        let n = self.grid.node_count();
        &self.values[k * n..(k + 1) * n]
    }

    pub fn at(&self, node: usize, k: usize) -> f64 {
        self.values[k * self.grid.node_count() + node]
    }

    /// Multilinear interpolation in space on slice `k`.
    pub fn interpolate(&self, coords: &[f64], k: usize) -> f64 {
        let mut out = [0.0];
        interpolate_into(&self.grid, self.slice(k), 1, coords, &mut out);
        out[0]
    }
}

/// Maximizer of the control Hamiltonian on every node and slice.
#[derive(Debug, Clone)]
pub struct PolicyGrid {
    pub grid: Grid,
    pub domain: Domain,
    pub n: usize,
    /// `(slice * nodes + node) * n + i`; fractions on the positive domain.
    pub u: Vec<f64>,
    /// Coefficients on `psi_1..psi_m, psi_{m+1}`; `m + 1` per node.
    pub fund: Vec<f64>,
    /// `u = kappa (v')^{-1} b`; NaN at degenerate nodes.
    pub kappa: Vec<f64>,
    pub case: Vec<BallCase>,
    /// Supremum of the control part of the Hamiltonian.
    pub g0: Vec<f64>,
}

impl PolicyGrid {
    pub fn fund_len(&self) -> usize {
        self.grid.m + 1
    }

    fn flat(&self, node: usize, k: usize) -> usize {
        k * self.grid.node_count() + node
    }

    pub fn u_at(&self, node: usize, k: usize) -> &[f64] {
        let i = self.flat(node, k);
        &self.u[i * self.n..(i + 1) * self.n]
    }

    pub fn fund_at(&self, node: usize, k: usize) -> &[f64] {
        let i = self.flat(node, k);
        let f = self.fund_len();
        &self.fund[i * f..(i + 1) * f]
    }

    pub fn kappa_at(&self, node: usize, k: usize) -> f64 {
        self.kappa[self.flat(node, k)]
    }

    pub fn case_at(&self, node: usize, k: usize) -> BallCase {
        self.case[self.flat(node, k)]
    }

    /// Nearest time slice to `t`.
    pub fn slice_for(&self, t: f64) -> usize {
        let k = (t / self.grid.dt()).round();
        (k.max(0.0) as usize).min(self.grid.t_steps)
    }

    /// Multilinear interpolation of the control at `coords` on the slice
    /// nearest to `t`.
    pub fn interpolate_u(&self, coords: &[f64], t: f64, out: &mut [f64]) {
        let k = self.slice_for(t);
        let n = self.grid.node_count();
        interpolate_into(&self.grid, &self.u[k * n * self.n..(k + 1) * n * self.n], self.n, coords, out);
    }

    /// Multilinear interpolation of the fund coefficients.
    pub fn interpolate_fund(&self, coords: &[f64], t: f64, out: &mut [f64]) {
        let k = self.slice_for(t);
        let n = self.grid.node_count();
        let f = self.fund_len();
        interpolate_into(&self.grid, &self.fund[k * n * f..(k + 1) * n * f], f, coords, out);
    }
}

/// Multilinear interpolation of a `components`-wide field, clamped to the box.
pub fn interpolate_into(grid: &Grid, field: &[f64], components: usize, coords: &[f64], out: &mut [f64]) {
    let d = grid.dim();
    let mut base = 0;
    let mut cell = [(0usize, 0.0f64); 8];
    for a in 0..d {
        let (i, w) = grid.axes[a].locate(coords[a]);
        base += i * grid.stride(a);
        cell[a] = (grid.stride(a), w);
    }
    out[..components].fill(0.0);
    for corner in 0..(1usize << d) {
        let mut weight = 1.0;
        let mut node = base;
        for (a, &(stride, w)) in cell.iter().enumerate().take(d) {
            if corner >> a & 1 == 1 {
                weight *= w;
                node += stride;
            } else {
                weight *= 1.0 - w;
            }
        }
        if weight == 0.0 {
            continue;
        }
        for c in 0..components {
            out[c] += weight * field[node * components + c];
        }
    }
}

struct NodeModel {
    g0: G0Context,
    /// Factor drifts `(f_eta, f_zeta)`.
    drift: Vec<f64>,
    /// Factor covariance, `(m + M)^2` row-major.
    cov: Vec<f64>,
    factor_directions: Vec<DVector<f64>>,
    /// `|beta_eta row k|` for the wealth/factor cross bound.
    loading_norms: Vec<f64>,
    /// Bound on the wealth drift over admissible controls.
    x_drift_bound: f64,
}

/// Policy and Hamiltonian data for one slice.
#[derive(Debug, Clone)]
pub struct PolicySlice {
    pub u: Vec<f64>,
    pub fund: Vec<f64>,
    pub kappa: Vec<f64>,
    pub case: Vec<BallCase>,
    pub g0: Vec<f64>,
}

/// Explicit backward stepper for the Bellman equation on a fixed grid.
///
/// The coefficient catalogue is time-homogeneous, so per-node coefficient
/// data is computed once.
pub struct BellmanSolver {
    grid: Grid,
    domain: Domain,
    k: f64,
    n: usize,
    m: usize,
    utility: Utility,
    nodes: Vec<NodeModel>,
    max_dt: f64,
}

impl BellmanSolver {
    /// Prepares node data without checking the time step.
    pub fn prepare(spec: &MarketSpec, utility: &Utility, grid: &Grid) -> Result<Self> {
        utility.validate(spec.domain())?;
        if grid.m != spec.m() || grid.big_m != spec.big_m() {
            return Err(dim_err(
                "grid factor axes",
                format!("m={}, M={}", spec.m(), spec.big_m()),
                format!("m={}, M={}", grid.m, grid.big_m),
            ));
        }
        let report = validate_spec(spec, 64, 1)?;
        if !report.is_valid() {
            return Err(Error::Input(format!("market fails validation: {report}")));
        }
        let (m, big_m, n) = (spec.m(), spec.big_m(), spec.n());
        let f = m + big_m;
        let k = spec.k();
        let nodes = (0..grid.node_count())
            .into_par_iter()
            .map(|node| {
                let c = grid.coords(node);
                let (y, z) = c[1..].split_at(m);
                let co = spec.eval_coefficients(y, z, 0.0)?;
                let funds = fund_directions(&co)?;
                let mut w = funds.factor_directions[m].clone();
                if w.norm() == 0.0 && m > 0 {
                    w = funds.factor_directions[0].clone();
                }
                let g0 = G0Context::new(&co, &w)?;
                let mut drift = Vec::with_capacity(f);
                drift.extend(co.f_eta.iter());
                drift.extend(co.f_zeta.iter());
                let mut cov = vec![0.0; f * f];
                let bb = &co.beta_eta * co.beta_eta.transpose() + &co.beta_eta_tilde * co.beta_eta_tilde.transpose();
                let bz = &co.beta_eta_tilde * co.beta_zeta_tilde.transpose();
                let zz = &co.beta_zeta_tilde * co.beta_zeta_tilde.transpose();
                for i in 0..f {
                    for j in 0..f {
                        cov[i * f + j] = match (i < m, j < m) {
                            (true, true) => bb[(i, j)],
                            (true, false) => bz[(i, j - m)],
                            (false, true) => bz[(j, i - m)],
                            (false, false) => zz[(i - m, j - m)],
                        };
                    }
                }
                let loading_norms = (0..m).map(|r| co.beta_eta.row(r).norm()).collect();
                let theta_norm = g0.theta.norm();
                let x_drift_bound = match spec.domain() {
                    Domain::Reals => k.sqrt() * theta_norm,
                    Domain::Positive => k.sqrt() * theta_norm + 0.5 * k,
                };
                Ok(NodeModel {
                    g0,
                    drift,
                    cov,
                    factor_directions: funds.factor_directions,
                    loading_norms,
                    x_drift_bound,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let max_dt = stability_bound(grid, &nodes, k);
        Ok(Self {
            grid: grid.clone(),
            domain: spec.domain(),
            k,
            n,
            m,
            utility: *utility,
            nodes,
            max_dt,
        })
    }

    /// Prepares and enforces the explicit-scheme bound.
    pub fn new(spec: &MarketSpec, utility: &Utility, grid: &Grid) -> Result<Self> {
        let s = Self::prepare(spec, utility, grid)?;
        let dt = grid.dt();
        if dt > s.max_dt {
            return Err(Error::Unstable {
                dt,
                max_dt: s.max_dt,
                required_steps: s.required_steps(),
            });
        }
        Ok(s)
    }

    /// Largest stable time step.
    pub fn max_dt(&self) -> f64 {
        self.max_dt
    }

    /// Smallest stable number of time steps.
    pub fn required_steps(&self) -> usize {
        (self.grid.horizon / self.max_dt).ceil() as usize
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn terminal_slice(&self) -> Vec<f64> {
        (0..self.grid.node_count())
            .map(|node| {
                let x = self.grid.axes[0].coord(self.grid.index_along(node, 0));
                self.utility.terminal(x, self.domain)
            })
            .collect()
    }

    fn node_g0(&self, d: &Derivatives, node: usize) -> Result<G0Solution> {
        self.nodes[node]
            .g0
            .solve(d.j_x(node), d.j_xx(node), d.j_xy(node), self.domain, self.k)
    }

    /// Drift and diffusion part of the generator at one node.
    fn node_g1(&self, d: &Derivatives, node: usize) -> f64 {
        let model = &self.nodes[node];
        let f = model.drift.len();
        let dim = d.dim();
        let grad = d.grad_at(node);
        let hess = d.hess_at(node);
        let mut s = 0.0;
        for i in 0..f {
            s += model.drift[i] * grad[1 + i];
            for j in 0..f {
                s += 0.5 * model.cov[i * f + j] * hess[(1 + i) * dim + 1 + j];
            }
        }
        s
    }

    /// Policy implied by one value slice.
    pub fn policy(&self, slice: &[f64]) -> Result<PolicySlice> {
        let d = derivative_stencils(slice, &self.grid);
        self.policy_from(&d)
    }

    fn policy_from(&self, d: &Derivatives) -> Result<PolicySlice> {
        let nodes = self.grid.node_count();
        let sols = (0..nodes)
            .into_par_iter()
            .map(|node| self.node_g0(d, node))
            .collect::<Result<Vec<_>>>()?;
        let (n, fl) = (self.n, self.m + 1);
        let mut out = PolicySlice {
            u: Vec::with_capacity(nodes * n),
            fund: Vec::with_capacity(nodes * fl),
            kappa: Vec::with_capacity(nodes),
            case: Vec::with_capacity(nodes),
            g0: Vec::with_capacity(nodes),
        };
        for (node, s) in sols.iter().enumerate() {
            out.u.extend(s.u.iter());
            match s.kappa {
                Some(kappa) => {
                    out.fund.extend(d.j_xy(node).iter().map(|v| kappa * v));
                    out.fund.push(kappa * d.j_x(node));
                    out.kappa.push(kappa);
                }
                None => {
                    let dec = decompose(&s.u, &self.nodes[node].factor_directions)?;
                    out.fund.extend(dec.coefficients.iter());
                    out.kappa.push(f64::NAN);
                }
            }
            out.case.push(s.case);
            out.g0.push(s.value);
        }
        Ok(out)
    }

    /// One explicit step from the slice at `t + dt` to the slice at `t`.
    /// Returns the new slice and the policy of the input slice.
    pub fn backward_step(&self, next: &[f64]) -> Result<(Vec<f64>, PolicySlice)> {
        let grid = &self.grid;
        if next.len() != grid.node_count() {
            return Err(dim_err("value slice", grid.node_count(), next.len()));
        }
        let d = derivative_stencils(next, grid);
        let pol = self.policy_from(&d)?;
        let dt = grid.dt();
        let mut prev: Vec<f64> = (0..grid.node_count())
            .into_par_iter()
            .map(|node| {
                if grid.is_interior(node) {
                    next[node] + dt * (self.node_g1(&d, node) + pol.g0[node])
                } else {
                    f64::NAN
                }
            })
            .collect();
        fill_faces(grid, next, &mut prev);
        Ok((prev, pol))
    }
}

/// Explicit-scheme bound `0.9 / S`, with `S` the largest nodewise sum of
/// diffusion over `h^2`, cross terms over `h_i h_j` and drifts over `h`.
fn stability_bound(grid: &Grid, nodes: &[NodeModel], k: f64) -> f64 {
    let h: Vec<f64> = grid.axes.iter().map(|a| a.h()).collect();
    let s = nodes
        .iter()
        .map(|model| {
            let f = model.drift.len();
            let mut s = k / (h[0] * h[0]) + model.x_drift_bound / h[0];
            for i in 0..f {
                s += model.cov[i * f + i] / (h[1 + i] * h[1 + i]) + model.drift[i].abs() / h[1 + i];
                for j in i + 1..f {
                    s += model.cov[i * f + j].abs() / (h[1 + i] * h[1 + j]);
                }
            }
            for (i, l) in model.loading_norms.iter().enumerate() {
                s += k.sqrt() * l / (h[0] * h[1 + i]);
            }
            s
        })
        .fold(0.0, f64::max);
    if s > 0.0 {
        STABILITY_SAFETY / s
    } else {
        f64::INFINITY
    }
}

/// Far-field condition: zero second normal derivative. Faces of axis `a`
/// are filled for nodes interior along every later axis, so each pass
/// only reads values that are already set. Three-node axes keep the
/// previous slice's slope.
fn fill_faces(grid: &Grid, next: &[f64], out: &mut [f64]) {
    let d = grid.dim();
    for a in 0..d {
        let n = grid.axes[a].nodes;
        let s = grid.stride(a);
        for node in 0..grid.node_count() {
            let i = grid.index_along(node, a);
            if i != 0 && i + 1 != n {
                continue;
            }
            let later_interior = (a + 1..d).all(|b| {
                let j = grid.index_along(node, b);
                j > 0 && j + 1 < grid.axes[b].nodes
            });
            if !later_interior {
                continue;
            }
            let (s1, s2) = if i == 0 { (node + s, node + 2 * s) } else { (node - s, node - 2 * s) };
            out[node] = if n >= 4 {
                2.0 * out[s1] - out[s2]
            } else {
                next[node] + (out[s1] - next[s1])
            };
        }
    }
}

/// Solves the Bellman equation backward from the terminal utility.
pub fn solve_bellman(spec: &MarketSpec, utility: &Utility, grid: &Grid) -> Result<(ValueGrid, PolicyGrid)> {
    let solver = BellmanSolver::new(spec, utility, grid)?;
    solve_with(&solver)
}

/// Backward sweep with a prepared solver.
pub fn solve_with(solver: &BellmanSolver) -> Result<(ValueGrid, PolicyGrid)> {
    let grid = &solver.grid;
    let nodes = grid.node_count();
    let slices = grid.slices();
    let mut values = vec![0.0; slices * nodes];
    let mut policy = PolicyGrid {
        grid: grid.clone(),
        domain: solver.domain,
        n: solver.n,
        u: vec![0.0; slices * nodes * solver.n],
        fund: vec![0.0; slices * nodes * (solver.m + 1)],
        kappa: vec![0.0; slices * nodes],
        case: vec![BallCase::Zero; slices * nodes],
        g0: vec![0.0; slices * nodes],
    };
    let store = |policy: &mut PolicyGrid, k: usize, p: PolicySlice| {
        let (n, f) = (solver.n, solver.m + 1);
        policy.u[k * nodes * n..(k + 1) * nodes * n].copy_from_slice(&p.u);
        policy.fund[k * nodes * f..(k + 1) * nodes * f].copy_from_slice(&p.fund);
        policy.kappa[k * nodes..(k + 1) * nodes].copy_from_slice(&p.kappa);
        policy.case[k * nodes..(k + 1) * nodes].copy_from_slice(&p.case);
        policy.g0[k * nodes..(k + 1) * nodes].copy_from_slice(&p.g0);
    };
    let last = grid.t_steps;
    values[last * nodes..].copy_from_slice(&solver.terminal_slice());
    for k in (0..last).rev() {
        let (head, tail) = values.split_at_mut((k + 1) * nodes);
        let next = &tail[..nodes];
        let (prev, pol) = solver.backward_step(next).map_err(|e| match e {
            Error::NonFinite(_) => Error::NanSlice { slice: k + 1 },
            e => e,
        })?;
        if prev.iter().any(|v| !v.is_finite()) {
            return Err(Error::NanSlice { slice: k });
        }
        head[k * nodes..].copy_from_slice(&prev);
        store(&mut policy, k + 1, pol);
    }
    let p0 = solver
        .policy(&values[..nodes])
        .map_err(|_| Error::NanSlice { slice: 0 })?;
    store(&mut policy, 0, p0);
    Ok((
        ValueGrid {
            grid: grid.clone(),
            domain: solver.domain,
            values,
        },
        policy,
    ))
}
