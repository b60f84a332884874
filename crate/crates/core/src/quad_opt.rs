//! Maximization of `-alpha |p|^2 + p'b` over the ball `|p| <= rho`, and
//! its lift to the control space through `p = v'u`.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{dim_err, Error, Result};
use crate::market::{CoefficientSet, Domain};

#[derive(Debug, Clone, PartialEq)]
pub struct BallProblem {
    pub alpha: f64,
    pub b: DVector<f64>,
    pub rho: f64,
}

impl BallProblem {
    pub fn new(alpha: f64, b: DVector<f64>, rho: f64) -> Self {
        Self { alpha, b, rho }
    }

    pub fn objective(&self, p: &DVector<f64>) -> f64 {
        -self.alpha * p.norm_squared() + p.dot(&self.b)
    }

    /// Lipschitz bound of the objective on the ball.
    pub fn lipschitz(&self) -> f64 {
        2.0 * self.alpha.abs() * self.rho + self.b.norm()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BallCase {
    Interior,
    BoundaryAlongB,
    DegenerateBoundary,
    Zero,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BallSolution {
    pub p: DVector<f64>,
    /// `p = k b`; meaningless (0) in the degenerate case.
    pub k: f64,
    pub case: BallCase,
    pub objective: f64,
}

/// Closed-form global maximizer. `tiebreak` is the direction used when
/// `alpha < 0` and `b = 0` (every boundary point is optimal); it defaults
/// to `e_1` and is normalized here.
pub fn solve_ball(problem: &BallProblem, tiebreak: Option<&DVector<f64>>) -> Result<BallSolution> {
    let BallProblem { alpha, b, rho } = problem;
    let (alpha, rho) = (*alpha, *rho);
    if !(rho > 0.0) || !rho.is_finite() {
        return Err(Error::Input(format!("ball radius must be > 0, got {rho}")));
    }
    if !alpha.is_finite() || b.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("ball problem".into()));
    }
    let n = b.len();
    let b_norm = b.norm();
    let along = |k: f64, case| {
        let p = b * k;
        BallSolution {
            objective: problem.objective(&p),
            p,
            k,
            case,
        }
    };
    let sol = if b_norm == 0.0 {
        if alpha > 0.0 {
            along(0.5 / alpha, BallCase::Interior)
        } else if alpha == 0.0 {
            along(0.0, BallCase::Zero)
        } else {
            let mut d = match tiebreak {
                Some(d) if d.len() != n => return Err(dim_err("tiebreak", n, d.len())),
                Some(d) if d.norm() > 0.0 && d.norm().is_finite() => d / d.norm(),
                _ => DVector::zeros(n),
            };
            if d.norm() == 0.0 {
                d[0] = 1.0;
            }
            let p = d * rho;
            BallSolution {
                objective: problem.objective(&p),
                p,
                k: 0.0,
                case: BallCase::DegenerateBoundary,
            }
        }
    } else if alpha > 0.0 && b_norm <= 2.0 * alpha * rho {
        along(0.5 / alpha, BallCase::Interior)
    } else {
        along(rho / b_norm, BallCase::BoundaryAlongB)
    };
    Ok(sol)
}

/// Exhaustive search over a cube grid clipped to the ball plus a boundary
/// shell. Independent check for [`solve_ball`] at `n <= 3`.
pub fn brute_force_ball(problem: &BallProblem, grid_per_axis: usize) -> Result<(DVector<f64>, f64)> {
    let n = problem.b.len();
    if n == 0 || n > 3 {
        return Err(Error::Unsupported(format!("brute force only for 1 <= n <= 3, got {n}")));
    }
    if grid_per_axis < 11 {
        return Err(Error::Input("grid_per_axis must be >= 11".into()));
    }
    let rho = problem.rho;
    let h = grid_pitch(rho, grid_per_axis);
    let mut best = DVector::zeros(n);
    let mut best_val = problem.objective(&best);
    let mut consider = |p: DVector<f64>| {
        let v = problem.objective(&p);
        if v > best_val {
            best_val = v;
            best = p;
        }
    };
    let g = grid_per_axis;
    let coord = |i: usize| -rho + i as f64 * h;
    let total = g.pow(n as u32);
    for idx in 0..total {
        let mut rest = idx;
        let p = DVector::from_fn(n, |_, _| {
            let i = rest % g;
            rest /= g;
            coord(i)
        });
        if p.norm() <= rho {
            consider(p);
        }
    }
    use std::f64::consts::PI;
    match n {
        1 => {
            consider(DVector::from_element(1, rho));
            consider(DVector::from_element(1, -rho));
        }
        2 => {
            let count = ((2.0 * PI * rho / h).ceil() as usize).max(8);
            for i in 0..count {
                let a = 2.0 * PI * i as f64 / count as f64;
                consider(DVector::from_vec(vec![rho * a.cos(), rho * a.sin()]));
            }
        }
        _ => {
            let rings = ((PI * rho / h).ceil() as usize).max(4);
            for i in 0..=rings {
                let th = PI * i as f64 / rings as f64;
                let count = ((2.0 * PI * rho * th.sin() / h).ceil() as usize).max(1);
                for j in 0..count {
                    let ph = 2.0 * PI * j as f64 / count as f64;
                    consider(DVector::from_vec(vec![
                        rho * th.sin() * ph.cos(),
                        rho * th.sin() * ph.sin(),
                        rho * th.cos(),
                    ]));
                }
            }
        }
    }
    Ok((best, best_val))
}

pub fn grid_pitch(rho: f64, grid_per_axis: usize) -> f64 {
    2.0 * rho / (grid_per_axis - 1) as f64
}

/// Worst-case objective loss of the brute-force grid: `L h sqrt(n)`.
pub fn grid_tolerance(problem: &BallProblem, grid_per_axis: usize) -> f64 {
    let n = problem.b.len() as f64;
    problem.lipschitz() * grid_pitch(problem.rho, grid_per_axis) * n.sqrt()
}

/// Node-invariant pieces of the control Hamiltonian.
#[derive(Debug, Clone)]
pub struct G0Context {
    /// `(v')^{-1}`; maps `p` back to the control `u`.
    pub vt_inv: DMatrix<f64>,
    /// Market price of risk `v^{-1} a~`.
    pub theta: DVector<f64>,
    pub beta_eta: DMatrix<f64>,
    /// Unit tie-break direction in `p` coordinates.
    pub tie_p: DVector<f64>,
}

impl G0Context {
    /// `tiebreak` is a control-space direction `w`; the ball solver gets
    /// `v'w / |v'w|` so a degenerate maximizer stays parallel to `w`.
    pub fn new(coeffs: &CoefficientSet, tiebreak: &DVector<f64>) -> Result<Self> {
        let n = coeffs.n();
        if tiebreak.len() != n {
            return Err(dim_err("tiebreak", n, tiebreak.len()));
        }
        let v_inv = coeffs.v_inverse()?;
        let theta = &v_inv * &coeffs.a_tilde;
        let mut tie_p = coeffs.v.transpose() * tiebreak;
        let norm = tie_p.norm();
        if norm > 0.0 && norm.is_finite() {
            tie_p /= norm;
        } else {
            tie_p = DVector::zeros(n);
            tie_p[0] = 1.0;
        }
        Ok(Self {
            vt_inv: v_inv.transpose(),
            theta,
            beta_eta: coeffs.beta_eta.clone(),
            tie_p,
        })
    }

    /// `alpha` of the ball problem for the given wealth domain.
    pub fn alpha(j_x: f64, j_xx: f64, domain: Domain) -> f64 {
        match domain {
            Domain::Reals => -0.5 * j_xx,
            // The log-coordinate drift adds -J_x |p|^2 / 2.
            Domain::Positive => 0.5 * (j_x - j_xx),
        }
    }

    /// `b = J_x theta + beta_eta' J_xy`.
    pub fn b(&self, j_x: f64, j_xy: &[f64]) -> DVector<f64> {
        let mut b = &self.theta * j_x;
        for (k, jk) in j_xy.iter().enumerate() {
            for i in 0..b.len() {
                b[i] += self.beta_eta[(k, i)] * jk;
            }
        }
        b
    }

    pub fn solve(&self, j_x: f64, j_xx: f64, j_xy: &[f64], domain: Domain, k: f64) -> Result<G0Solution> {
        if !j_x.is_finite() || !j_xx.is_finite() || j_xy.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("value derivatives".into()));
        }
        if j_xy.len() != self.beta_eta.nrows() {
            return Err(dim_err("J_xy", self.beta_eta.nrows(), j_xy.len()));
        }
        let problem = BallProblem::new(Self::alpha(j_x, j_xx, domain), self.b(j_x, j_xy), k.sqrt());
        let ball = solve_ball(&problem, Some(&self.tie_p))?;
        let u = &self.vt_inv * &ball.p;
        let kappa = (ball.case != BallCase::DegenerateBoundary).then_some(ball.k);
        Ok(G0Solution {
            u,
            value: ball.objective,
            p: ball.p,
            kappa,
            case: ball.case,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct G0Solution {
    pub u: DVector<f64>,
    pub p: DVector<f64>,
    /// `u = kappa (v')^{-1} b` when not degenerate.
    pub kappa: Option<f64>,
    /// Supremum of the control part of the Bellman operator.
    pub value: f64,
    pub case: BallCase,
}

/// Maximizes the control part of the Bellman operator at one node.
#[allow(clippy::too_many_arguments)]
pub fn solve_g0(
    j_x: f64,
    j_xx: f64,
    j_xy: &[f64],
    coeffs: &CoefficientSet,
    k: f64,
    domain: Domain,
    tiebreak: &DVector<f64>,
) -> Result<G0Solution> {
    if !(k > 0.0) {
        return Err(Error::Input("constraint level must be > 0".into()));
    }
    G0Context::new(coeffs, tiebreak)?.solve(j_x, j_xx, j_xy, domain, k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn dv(x: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(x)
    }

    #[test]
    fn interior_half_alpha() {
        let s = solve_ball(&BallProblem::new(0.5, dv(&[0.3, -0.4]), 1.0), None).unwrap();
        assert_eq!(s.case, BallCase::Interior);
        assert_eq!(s.p, dv(&[0.3, -0.4]));
    }

    #[test]
    fn boundary_half_alpha() {
        let s = solve_ball(&BallProblem::new(0.5, dv(&[3.0, 4.0]), 2.0), None).unwrap();
        assert_eq!(s.case, BallCase::BoundaryAlongB);
        assert_abs_diff_eq!(s.p[0], 1.2, epsilon = 1e-15);
        assert_abs_diff_eq!(s.p[1], 1.6, epsilon = 1e-15);
    }

    #[test]
    fn zero_case() {
        let s = solve_ball(&BallProblem::new(0.0, dv(&[0.0, 0.0]), 1.0), None).unwrap();
        assert_eq!(s.case, BallCase::Zero);
        assert_eq!(s.p, dv(&[0.0, 0.0]));
        assert_eq!(s.objective, 0.0);
    }

    #[test]
    fn degenerate_uses_tiebreak() {
        let d = dv(&[1.0, 0.0, 0.0]);
        let s = solve_ball(&BallProblem::new(-1.0, dv(&[0.0, 0.0, 0.0]), 2.0), Some(&d)).unwrap();
        assert_eq!(s.case, BallCase::DegenerateBoundary);
        assert_eq!(s.p, dv(&[2.0, 0.0, 0.0]));
        assert_abs_diff_eq!(s.objective, 4.0, epsilon = 1e-15);
    }

    #[test]
    fn negative_alpha_goes_to_boundary_along_b() {
        let s = solve_ball(&BallProblem::new(-1.0, dv(&[0.0, -0.1]), 1.5), None).unwrap();
        assert_eq!(s.case, BallCase::BoundaryAlongB);
        assert_abs_diff_eq!(s.p[1], -1.5, epsilon = 1e-15);
    }

    #[test]
    fn rejects_bad_radius() {
        assert!(solve_ball(&BallProblem::new(1.0, dv(&[1.0]), 0.0), None).is_err());
        assert!(solve_ball(&BallProblem::new(1.0, dv(&[1.0]), -1.0), None).is_err());
    }

    #[test]
    fn brute_force_small_cases() {
        let (p, v) = brute_force_ball(&BallProblem::new(0.5, dv(&[0.0, 0.0]), 1.0), 21).unwrap();
        assert!(p.norm() < 1e-12 && v.abs() < 1e-12);
        let prob = BallProblem::new(-1.0, dv(&[1.0, 0.0]), 1.0);
        let (p, v) = brute_force_ball(&prob, 41).unwrap();
        assert_abs_diff_eq!(p[0], 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(v, 2.0, epsilon = 1e-9);
        assert!(brute_force_ball(&BallProblem::new(1.0, dv(&[1.0; 4]), 1.0), 11).is_err());
        assert!(brute_force_ball(&prob, 5).is_err());
    }

    fn unit_coeffs(a_tilde: &[f64]) -> CoefficientSet {
        let n = a_tilde.len();
        let mut c = CoefficientSet::zeros(n, 0, 0, 0);
        c.v = DMatrix::identity(n, n);
        c.a_tilde = dv(a_tilde);
        c.a = dv(a_tilde);
        c
    }

    #[test]
    fn g0_reals_interior_is_a_tilde() {
        let c = unit_coeffs(&[0.3, 0.1]);
        let s = solve_g0(1.0, -1.0, &[], &c, 100.0, Domain::Reals, &dv(&[1.0, 0.0])).unwrap();
        assert_abs_diff_eq!(s.u[0], 0.3, epsilon = 1e-15);
        assert_abs_diff_eq!(s.u[1], 0.1, epsilon = 1e-15);
        assert_eq!(s.kappa, Some(1.0));
    }

    #[test]
    fn g0_flat_value_gives_zero_control() {
        let mut c = unit_coeffs(&[0.3, 0.1]);
        c.v = DMatrix::from_row_slice(2, 2, &[0.2, 0.0, 0.1, 0.4]);
        for d in [Domain::Reals, Domain::Positive] {
            let s = solve_g0(0.0, 0.0, &[], &c, 1.0, d, &dv(&[1.0, 0.0])).unwrap();
            assert_eq!(s.u, dv(&[0.0, 0.0]));
            assert_eq!(s.value, 0.0);
        }
    }

    #[test]
    fn g0_log_utility_is_merton_fraction() {
        let mut c = unit_coeffs(&[0.04, 0.05]);
        c.v = DMatrix::from_row_slice(2, 2, &[0.2, 0.0, 0.05, 0.25]);
        let s = solve_g0(1.0, 0.0, &[], &c, 10.0, Domain::Positive, &dv(&[1.0, 0.0])).unwrap();
        let q = (&c.v * c.v.transpose()).try_inverse().unwrap();
        let merton = q * &c.a_tilde;
        assert_abs_diff_eq!(s.u[0], merton[0], epsilon = 1e-12);
        assert_abs_diff_eq!(s.u[1], merton[1], epsilon = 1e-12);
        assert_eq!(s.kappa, Some(1.0));
    }

    #[test]
    fn g0_rejects_non_finite() {
        let c = unit_coeffs(&[0.3]);
        assert!(solve_g0(f64::NAN, 0.0, &[], &c, 1.0, Domain::Reals, &dv(&[1.0])).is_err());
    }

    #[test]
    fn g0_singular_volatility_errors() {
        let mut c = unit_coeffs(&[0.3, 0.1]);
        c.v[(1, 1)] = 0.0;
        assert!(matches!(
            solve_g0(1.0, -1.0, &[], &c, 1.0, Domain::Reals, &dv(&[1.0, 0.0])),
            Err(Error::SingularVolatility { .. })
        ));
    }
}
