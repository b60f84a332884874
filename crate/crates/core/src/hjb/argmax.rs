use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use super::grid::Grid;
use super::solver::ValueGrid;
use super::stencils::derivative_stencils;
use crate::error::{Error, Result};
use crate::funds::fund_directions;
use crate::market::{Domain, MarketSpec};

/// Relative residual accepted as "in the span" for a numerical maximizer.
pub const SEARCH_TOLERANCE: f64 = 1e-4;

const DIRECTIONS: usize = 2000;
const RADII: usize = 64;
const ASCENT_ITERS: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleStatus {
    Informative,
    /// All relevant derivatives vanish.
    ZeroDerivatives,
    /// Maximizer set is a whole sphere (objective flat on the boundary).
    FlatBoundary,
    /// Numerical maximizer is the origin.
    ZeroMaximizer,
}

#[derive(Debug, Clone, Serialize)]
pub struct ArgmaxSample {
    pub node: usize,
    pub slice: usize,
    pub status: SampleStatus,
    pub residual: f64,
    pub objective: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ArgmaxReport {
    pub samples: usize,
    pub informative: usize,
    pub within_tolerance: usize,
    pub max_residual: f64,
    pub entries: Vec<ArgmaxSample>,
}

impl ArgmaxReport {
    /// Share of informative samples whose residual is within tolerance.
    pub fn pass_fraction(&self) -> f64 {
        if self.informative == 0 {
            return 0.0;
        }
        self.within_tolerance as f64 / self.informative as f64
    }
}

/// Control part of the generator written directly in the control `u`.
struct Integrand {
    domain: Domain,
    j_x: f64,
    j_xx: f64,
    a_tilde: DVector<f64>,
    v: DMatrix<f64>,
    /// `beta_eta' J_xy`
    cross: DVector<f64>,
}

impl Integrand {
    fn eval(&self, u: &DVector<f64>) -> f64 {
        let p = self.v.transpose() * u;
        let q = p.norm_squared();
        let drift = match self.domain {
            Domain::Reals => u.dot(&self.a_tilde),
            Domain::Positive => u.dot(&self.a_tilde) - 0.5 * q,
        };
        self.j_x * drift + 0.5 * self.j_xx * q + p.dot(&self.cross)
    }
}

fn project(p: &mut DVector<f64>, rho: f64) {
    let n = p.norm();
    if n > rho {
        *p *= rho / n;
    }
}

/// Maximizes over `|p| <= rho` with `u = (v')^{-1} p`: dense directional
/// sampling followed by projected gradient ascent with finite differences.
fn search(obj: &impl Fn(&DVector<f64>) -> f64, n: usize, rho: f64, rng: &mut ChaCha8Rng) -> (DVector<f64>, f64, f64) {
    let mut best = DVector::zeros(n);
    let mut best_val = obj(&best);
    let (mut shell_min, mut shell_max) = (f64::INFINITY, f64::NEG_INFINITY);
    for _ in 0..DIRECTIONS {
        let mut d = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let norm = d.norm();
        if norm == 0.0 {
            continue;
        }
        d /= norm;
        for j in 1..=RADII {
            let p = &d * (rho * j as f64 / RADII as f64);
            let v = obj(&p);
            if j == RADII {
                shell_min = shell_min.min(v);
                shell_max = shell_max.max(v);
            }
            if v > best_val {
                best_val = v;
                best = p;
            }
        }
    }
    let fd = 1e-6 * rho;
    let mut step = 0.1 * rho;
    for _ in 0..ASCENT_ITERS {
        let grad = DVector::from_fn(n, |i, _| {
            let mut a = best.clone();
            let mut b = best.clone();
            a[i] += fd;
            b[i] -= fd;
            (obj(&a) - obj(&b)) / (2.0 * fd)
        });
        let gnorm = grad.norm();
        if gnorm == 0.0 {
            break;
        }
        let mut improved = false;
        while step > 1e-15 * rho {
            let mut cand = &best + &grad * (step / gnorm);
            project(&mut cand, rho);
            let v = obj(&cand);
            if v > best_val {
                best = cand;
                best_val = v;
                improved = true;
                step *= 2.0;
                break;
            }
            step *= 0.5;
        }
        if !improved {
            break;
        }
    }
    (best, best_val, shell_max - shell_min)
}

/// Numerically maximizes the control integrand of the Bellman operator at
/// random nodes without the closed-form solution, and measures how far each
/// maximizer lies from the fund span.
pub fn unrestricted_argmax_check(
    value: &ValueGrid,
    spec: &MarketSpec,
    grid: &Grid,
    samples: usize,
    seed: u64,
) -> Result<ArgmaxReport> {
    let n = spec.n();
    if n > 4 {
        return Err(Error::Unsupported(format!("sampled search needs n <= 4, got {n}")));
    }
    let m = grid.m;
    let rho = spec.k().sqrt();
    let nodes = grid.node_count();
    let entries = (0..samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let node = rng.random_range(0..nodes);
            let slice = rng.random_range(0..grid.slices());
            let d = derivative_stencils(value.slice(slice), grid);
            let c = grid.coords(node);
            let (y, z) = c[1..].split_at(m);
            let co = spec.eval_coefficients(y, z, grid.time(slice))?;
            let funds = fund_directions(&co)?;
            let (j_x, j_xx, j_xy) = (d.j_x(node), d.j_xx(node), d.j_xy(node));
            let scale = j_x.abs() + j_xx.abs() + j_xy.iter().map(|v| v.abs()).sum::<f64>();
            let mut entry = ArgmaxSample {
                node,
                slice,
                status: SampleStatus::ZeroDerivatives,
                residual: 0.0,
                objective: 0.0,
            };
            if scale < 1e-12 {
                return Ok(entry);
            }
            let integrand = Integrand {
                domain: spec.domain(),
                j_x,
                j_xx,
                cross: co.beta_eta.transpose() * DVector::from_column_slice(j_xy),
                a_tilde: co.a_tilde.clone(),
                v: co.v.clone(),
            };
            let vt_inv = co.v_inverse()?.transpose();
            let obj = |p: &DVector<f64>| integrand.eval(&(&vt_inv * p));
            let (p, val, shell_spread) = search(&obj, n, rho, &mut rng);
            entry.objective = val;
            let magnitude = val.abs().max(obj(&DVector::from_element(n, 0.0)).abs()).max(scale * rho);
            if shell_spread <= 1e-9 * magnitude && p.norm() > 0.5 * rho {
                entry.status = SampleStatus::FlatBoundary;
                return Ok(entry);
            }
            if p.norm() < 1e-6 * rho {
                entry.status = SampleStatus::ZeroMaximizer;
                return Ok(entry);
            }
            let u = &vt_inv * &p;
            let f = funds.matrix();
            let svd = f.clone().svd(true, true);
            let smax = svd.singular_values.max();
            let coef = svd.solve(&u, smax * 1e-13).map_err(|e| Error::Input(e.to_string()))?;
            entry.residual = (&u - &f * coef).norm() / u.norm();
            entry.status = SampleStatus::Informative;
            Ok(entry)
        })
        .collect::<Result<Vec<_>>>()?;
    let informative: Vec<&ArgmaxSample> = entries
        .iter()
        .filter(|e| e.status == SampleStatus::Informative)
        .collect();
    Ok(ArgmaxReport {
        samples,
        informative: informative.len(),
        within_tolerance: informative.iter().filter(|e| e.residual <= SEARCH_TOLERANCE).count(),
        max_residual: informative.iter().map(|e| e.residual).fold(0.0, f64::max),
        entries,
    })
}
