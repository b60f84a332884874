//! Factor-diffusion market: coefficient evaluation, the diffusion matrices
//! of the controlled system, validation and path simulation.

mod coefficient;
mod simulate;
mod validate;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use coefficient::{Array, Coefficient, CompiledCoefficient};
pub use simulate::{
    simulate_paths, simulate_terminal, Control, PathBundle, PathRecord, StatePoint, TerminalBundle,
};
pub use validate::{determinant_bound_calibration, validate_spec, DeterminantBoundReport, ValidationReport, Violation};

use crate::error::{dim_err, Error, Result};

/// Condition number above which the volatility matrix is treated as singular.
pub const MAX_CONDITION: f64 = 1e12;

/// State space of discounted wealth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    /// Wealth may become negative; strategies are amounts held.
    Reals,
    /// Wealth stays positive; strategies are fractions of wealth and the
    /// wealth coordinate is `q = ln X`.
    Positive,
}

/// Raw market description, exactly as read from or written to a scenario file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketConfig {
    pub stocks: usize,
    #[serde(default)]
    pub eta_dim: usize,
    #[serde(default)]
    pub zeta_dim: usize,
    #[serde(default)]
    pub aux_dim: usize,
    /// Strategy constraint level `K` in `u' v v' u <= K`.
    pub constraint_level: f64,
    pub horizon: f64,
    pub initial_wealth: f64,
    #[serde(default)]
    pub eta0: Vec<f64>,
    #[serde(default)]
    pub zeta0: Vec<f64>,
    pub domain: Domain,
    /// Appreciation rates `a` (n-vector).
    pub appreciation: Coefficient,
    /// Volatility matrix `v` (n x n).
    pub volatility: Coefficient,
    /// Short rate `r` (scalar).
    pub short_rate: Coefficient,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta_drift: Option<Coefficient>,
    /// Loading of eta on the stock noise `w` (m x n).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta_stock_loading: Option<Coefficient>,
    /// Loading of eta on the auxiliary noise (m x N).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta_aux_loading: Option<Coefficient>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zeta_drift: Option<Coefficient>,
    /// Loading of zeta on the auxiliary noise (M x N).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zeta_aux_loading: Option<Coefficient>,
}

#[derive(Debug, Clone)]
struct Compiled {
    appreciation: CompiledCoefficient,
    volatility: CompiledCoefficient,
    short_rate: CompiledCoefficient,
    eta_drift: CompiledCoefficient,
    eta_stock_loading: CompiledCoefficient,
    eta_aux_loading: CompiledCoefficient,
    zeta_drift: CompiledCoefficient,
    zeta_aux_loading: CompiledCoefficient,
}

/// A validated-shape market ready for evaluation. Immutable and `Sync`.
#[derive(Debug, Clone)]
pub struct MarketSpec {
    config: MarketConfig,
    compiled: Compiled,
}

impl MarketSpec {
    pub fn new(config: MarketConfig) -> Result<Self> {
        let n = config.stocks;
        let m = config.eta_dim;
        let big_m = config.zeta_dim;
        let aux = config.aux_dim;
        if n == 0 {
            return Err(Error::Input("stocks must be >= 1".into()));
        }
        if !(config.constraint_level > 0.0) || !config.constraint_level.is_finite() {
            return Err(Error::Input("constraint_level must be > 0".into()));
        }
        if !(config.horizon > 0.0) || !config.horizon.is_finite() {
            return Err(Error::Input("horizon must be > 0".into()));
        }
        if !config.initial_wealth.is_finite()
            || (config.domain == Domain::Positive && config.initial_wealth <= 0.0)
        {
            return Err(Error::Input(
                "initial_wealth must be finite, and > 0 for the positive domain".into(),
            ));
        }
        if config.eta0.len() != m {
            return Err(dim_err("eta0", m, config.eta0.len()));
        }
        if config.zeta0.len() != big_m {
            return Err(dim_err("zeta0", big_m, config.zeta0.len()));
        }
        let opt = |c: &Option<Coefficient>, rows, cols, drift, what: &str| match c {
            Some(c) => CompiledCoefficient::compile(c, rows, cols, m, big_m, drift, what),
            None => Ok(CompiledCoefficient::zero(rows, cols)),
        };
        let compiled = Compiled {
            appreciation: CompiledCoefficient::compile(&config.appreciation, n, 1, m, big_m, false, "appreciation")?,
            volatility: CompiledCoefficient::compile(&config.volatility, n, n, m, big_m, false, "volatility")?,
            short_rate: CompiledCoefficient::compile(&config.short_rate, 1, 1, m, big_m, false, "short_rate")?,
            eta_drift: opt(&config.eta_drift, m, 1, true, "eta_drift")?,
            eta_stock_loading: opt(&config.eta_stock_loading, m, n, false, "eta_stock_loading")?,
            eta_aux_loading: opt(&config.eta_aux_loading, m, aux, false, "eta_aux_loading")?,
            zeta_drift: opt(&config.zeta_drift, big_m, 1, true, "zeta_drift")?,
            zeta_aux_loading: opt(&config.zeta_aux_loading, big_m, aux, false, "zeta_aux_loading")?,
        };
        Ok(Self { config, compiled })
    }

    pub fn config(&self) -> &MarketConfig {
        &self.config
    }

    /// Number of stocks `n`.
    pub fn n(&self) -> usize {
        self.config.stocks
    }

    /// Dimension `m` of the factor correlated with the stocks.
    pub fn m(&self) -> usize {
        self.config.eta_dim
    }

    /// Dimension `M` of the factor driven only by the auxiliary noise.
    pub fn big_m(&self) -> usize {
        self.config.zeta_dim
    }

    /// Auxiliary noise dimension `N`.
    pub fn aux(&self) -> usize {
        self.config.aux_dim
    }

    pub fn k(&self) -> f64 {
        self.config.constraint_level
    }

    pub fn horizon(&self) -> f64 {
        self.config.horizon
    }

    pub fn domain(&self) -> Domain {
        self.config.domain
    }

    pub fn x0(&self) -> f64 {
        self.config.initial_wealth
    }

    /// Initial value of the wealth coordinate (`ln X0` on the positive domain).
    pub fn coord0(&self) -> f64 {
        match self.domain() {
            Domain::Reals => self.x0(),
            Domain::Positive => self.x0().ln(),
        }
    }

    pub fn eta0(&self) -> &[f64] {
        &self.config.eta0
    }

    pub fn zeta0(&self) -> &[f64] {
        &self.config.zeta0
    }

    /// True when no diffusion or stock coefficient depends on the factor
    /// state; the factor drifts are not considered.
    pub fn is_constant(&self) -> bool {
        let c = &self.compiled;
        [
            &c.appreciation,
            &c.volatility,
            &c.short_rate,
            &c.eta_stock_loading,
            &c.eta_aux_loading,
            &c.zeta_aux_loading,
        ]
        .iter()
        .all(|c| c.is_constant())
    }

    /// True when the factor drifts do not depend on the factor state.
    pub fn drifts_constant(&self) -> bool {
        self.compiled.eta_drift.is_constant() && self.compiled.zeta_drift.is_constant()
    }

    /// True when the stock coefficients `a`, `v`, `r` do not depend on the factors.
    pub fn stock_coefficients_constant(&self) -> bool {
        let c = &self.compiled;
        c.appreciation.is_constant() && c.volatility.is_constant() && c.short_rate.is_constant()
    }

    /// SHA-256 of the canonical JSON form of the configuration.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(&self.config).expect("config serializes");
        let digest = Sha256::digest(&json);
        hex::encode(digest.as_slice())
    }

    pub fn empty_coefficients(&self) -> CoefficientSet {
        CoefficientSet::zeros(self.n(), self.m(), self.big_m(), self.aux())
    }

    /// Evaluates every coefficient at `(y, z, t)`.
    pub fn eval_coefficients(&self, y: &[f64], z: &[f64], t: f64) -> Result<CoefficientSet> {
        if y.len() != self.m() {
            return Err(dim_err("y", self.m(), y.len()));
        }
        if z.len() != self.big_m() {
            return Err(dim_err("z", self.big_m(), z.len()));
        }
        if !(0.0..=self.horizon()).contains(&t) {
            return Err(Error::Input(format!("t = {t} outside [0, {}]", self.horizon())));
        }
        let mut out = self.empty_coefficients();
        self.eval_into(y, z, t, &mut out);
        Ok(out)
    }

    /// Allocation-free evaluation for hot loops; dimensions are trusted.
    pub fn eval_into(&self, y: &[f64], z: &[f64], _t: f64, out: &mut CoefficientSet) {
        let c = &self.compiled;
        c.appreciation.fill(y, z, y, |i, v| out.a[i] = v);
        let mut r = 0.0;
        c.short_rate.fill(y, z, y, |_, v| r = v);
        out.r = r;
        for i in 0..out.a.len() {
            out.a_tilde[i] = out.a[i] - r;
        }
        fill_matrix(&c.volatility, y, z, &mut out.v);
        c.eta_drift.fill(y, z, y, |i, v| out.f_eta[i] = v);
        fill_matrix(&c.eta_stock_loading, y, z, &mut out.beta_eta);
        fill_matrix(&c.eta_aux_loading, y, z, &mut out.beta_eta_tilde);
        c.zeta_drift.fill(y, z, z, |i, v| out.f_zeta[i] = v);
        fill_matrix(&c.zeta_aux_loading, y, z, &mut out.beta_zeta_tilde);
    }
}

fn fill_matrix(c: &CompiledCoefficient, y: &[f64], z: &[f64], out: &mut DMatrix<f64>) {
    let cols = c.cols;
    if cols == 0 {
        return;
    }
    c.fill(y, z, y, |i, v| out[(i / cols, i % cols)] = v);
}

/// Coefficients evaluated at one state point.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientSet {
    /// Appreciation rates.
    pub a: DVector<f64>,
    /// Volatility matrix.
    pub v: DMatrix<f64>,
    pub r: f64,
    /// Excess appreciation `a - r 1`.
    pub a_tilde: DVector<f64>,
    pub f_eta: DVector<f64>,
    pub beta_eta: DMatrix<f64>,
    pub beta_eta_tilde: DMatrix<f64>,
    pub f_zeta: DVector<f64>,
    pub beta_zeta_tilde: DMatrix<f64>,
}

impl CoefficientSet {
    pub fn zeros(n: usize, m: usize, big_m: usize, aux: usize) -> Self {
        Self {
            a: DVector::zeros(n),
            v: DMatrix::zeros(n, n),
            r: 0.0,
            a_tilde: DVector::zeros(n),
            f_eta: DVector::zeros(m),
            beta_eta: DMatrix::zeros(m, n),
            beta_eta_tilde: DMatrix::zeros(m, aux),
            f_zeta: DVector::zeros(big_m),
            beta_zeta_tilde: DMatrix::zeros(big_m, aux),
        }
    }

    pub fn n(&self) -> usize {
        self.a.len()
    }

    pub fn m(&self) -> usize {
        self.f_eta.len()
    }

    pub fn big_m(&self) -> usize {
        self.f_zeta.len()
    }

    pub fn aux(&self) -> usize {
        self.beta_eta_tilde.ncols().max(self.beta_zeta_tilde.ncols())
    }

    /// `v^{-1}`, refusing ill-conditioned volatility.
    pub fn v_inverse(&self) -> Result<DMatrix<f64>> {
        invert_checked(&self.v).map_err(|condition| Error::SingularVolatility {
            y: vec![],
            z: vec![],
            t: f64::NAN,
            condition,
        })
    }
}

/// Inverts a square matrix, returning the condition number on failure.
pub(crate) fn invert_checked(v: &DMatrix<f64>) -> std::result::Result<DMatrix<f64>, f64> {
    let cond = condition_number(v);
    if !cond.is_finite() || cond > MAX_CONDITION {
        return Err(cond);
    }
    v.clone().try_inverse().ok_or(f64::INFINITY)
}

pub(crate) fn condition_number(v: &DMatrix<f64>) -> f64 {
    if v.iter().any(|x| !x.is_finite()) {
        return f64::INFINITY;
    }
    let sv = v.clone().svd(false, false).singular_values;
    let max = sv.max();
    let min = sv.min();
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Smallest eigenvalue of a symmetric matrix; `None` when empty.
pub fn lambda_min_sym(m: &DMatrix<f64>) -> Option<f64> {
    if m.nrows() == 0 {
        return None;
    }
    Some(SymmetricEigen::new(m.clone()).eigenvalues.min())
}

/// The factor diffusion matrix `[beta_eta | beta_eta_tilde ; 0 | beta_zeta_tilde]`.
pub fn build_b(c: &CoefficientSet) -> DMatrix<f64> {
    let (n, m, big_m, aux) = (c.n(), c.m(), c.big_m(), c.aux());
    let mut b = DMatrix::zeros(m + big_m, n + aux);
    b.view_mut((0, 0), (m, n)).copy_from(&c.beta_eta);
    if aux > 0 {
        b.view_mut((0, n), (m, aux)).copy_from(&c.beta_eta_tilde);
        b.view_mut((m, n), (big_m, aux)).copy_from(&c.beta_zeta_tilde);
    }
    b
}

/// Diffusion matrix of the controlled state `(x, y, z)` under control `u`:
/// first row `(u' v, 0)`, remaining rows [`build_b`].
pub fn build_a(c: &CoefficientSet, u: &DVector<f64>) -> DMatrix<f64> {
    let (n, m, big_m, aux) = (c.n(), c.m(), c.big_m(), c.aux());
    let mut a = DMatrix::zeros(1 + m + big_m, n + aux);
    let top = u.transpose() * &c.v;
    a.view_mut((0, 0), (1, n)).copy_from(&top);
    a.view_mut((1, 0), (m + big_m, n + aux)).copy_from(&build_b(c));
    a
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum WitnessMethod {
    /// Boundary control with `beta_eta v' u = 0` (possible when `m < n`).
    Orthogonal,
    /// Best of sampled boundary controls (`m >= n`).
    Sampled,
    /// No sampled control gave a positive smallest eigenvalue.
    Inconclusive,
}

#[derive(Debug, Clone)]
pub struct EllipticityWitness {
    pub lambda_min: f64,
    pub witness_u: DVector<f64>,
    pub method: WitnessMethod,
}

const SAMPLED_WITNESSES: usize = 512;

/// Finds a control on the boundary of `{u : u' v v' u <= K}` that makes
/// `A A'` uniformly elliptic and reports its smallest eigenvalue.
pub fn check_ellipticity(c: &CoefficientSet, k: f64) -> Result<EllipticityWitness> {
    let n = c.n();
    let m = c.m();
    let vt_inv = c.v_inverse()?.transpose();
    let rho = k.sqrt();
    let lam = |u: &DVector<f64>| {
        let a = build_a(c, u);
        lambda_min_sym(&(&a * a.transpose())).unwrap_or(f64::INFINITY)
    };
    if m < n {
        // p = v'u must be orthogonal to the rows of beta_eta.
        let dir = null_direction(&c.beta_eta, n);
        let u = &vt_inv * (dir * rho);
        return Ok(EllipticityWitness {
            lambda_min: lam(&u),
            witness_u: u,
            method: WitnessMethod::Orthogonal,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_e11f);
    let mut best: Option<(f64, DVector<f64>)> = None;
    for _ in 0..SAMPLED_WITNESSES {
        let mut p = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let norm = p.norm();
        if norm == 0.0 {
            continue;
        }
        p *= rho / norm;
        let u = &vt_inv * p;
        let l = lam(&u);
        if best.as_ref().map_or(true, |(b, _)| l > *b) {
            best = Some((l, u));
        }
    }
    let (lambda_min, witness_u) = best.expect("at least one sample");
    let method = if lambda_min > 1e-12 {
        WitnessMethod::Sampled
    } else {
        WitnessMethod::Inconclusive
    };
    Ok(EllipticityWitness {
        lambda_min,
        witness_u,
        method,
    })
}

/// Unit vector orthogonal to every row of `rows` (requires `rows.nrows() < n`).
/// Picks the standard basis vector with the largest residual after
/// projecting out the row space, so the result is deterministic.
fn null_direction(rows: &DMatrix<f64>, n: usize) -> DVector<f64> {
    let basis: Vec<DVector<f64>> = if rows.nrows() == 0 {
        vec![]
    } else {
        let svd = rows.clone().svd(false, true);
        let vt = svd.v_t.expect("requested");
        let tol = svd.singular_values.max() * 1e-12;
        svd.singular_values
            .iter()
            .enumerate()
            .filter(|(_, s)| **s > tol)
            .map(|(i, _)| vt.row(i).transpose())
            .collect()
    };
    let mut best = DVector::zeros(n);
    let mut best_norm = -1.0;
    for i in 0..n {
        let mut e = DVector::zeros(n);
        e[i] = 1.0;
        for b in &basis {
            let proj = b.dot(&e);
            e -= b * proj;
        }
        let norm = e.norm();
        if norm > best_norm + 1e-12 {
            best_norm = norm;
            best = e;
        }
    }
    best / best_norm
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    pub(crate) fn constant_config(n: usize) -> MarketConfig {
        MarketConfig {
            stocks: n,
            eta_dim: 0,
            zeta_dim: 0,
            aux_dim: 0,
            constraint_level: 1.0,
            horizon: 1.0,
            initial_wealth: 1.0,
            eta0: vec![],
            zeta0: vec![],
            domain: Domain::Positive,
            appreciation: Coefficient::vector(&vec![0.05; n]),
            volatility: Coefficient::Constant {
                value: Array::Matrix(
                    (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect(),
                ),
            },
            short_rate: Coefficient::scalar(0.0),
            eta_drift: None,
            eta_stock_loading: None,
            eta_aux_loading: None,
            zeta_drift: None,
            zeta_aux_loading: None,
        }
    }

    #[test]
    fn a_tilde_subtracts_rate() {
        let mut cfg = constant_config(2);
        cfg.appreciation = Coefficient::vector(&[0.08, 0.05]);
        cfg.short_rate = Coefficient::scalar(0.02);
        let spec = MarketSpec::new(cfg).unwrap();
        let c = spec.eval_coefficients(&[], &[], 0.5).unwrap();
        assert_abs_diff_eq!(c.a_tilde[0], 0.06, epsilon = 1e-15);
        assert_abs_diff_eq!(c.a_tilde[1], 0.03, epsilon = 1e-15);
        assert_eq!(c.a_tilde.clone() + DVector::from_element(2, c.r), c.a);
    }

    #[test]
    fn identity_volatility_everywhere() {
        let spec = MarketSpec::new(constant_config(3)).unwrap();
        for t in [0.0, 0.3, 1.0] {
            let c = spec.eval_coefficients(&[], &[], t).unwrap();
            assert_eq!(c.v, DMatrix::identity(3, 3));
        }
    }

    #[test]
    fn affine_family_evaluates_directly() {
        let mut cfg = constant_config(1);
        cfg.eta_dim = 1;
        cfg.eta0 = vec![0.0];
        cfg.appreciation = Coefficient::Affine {
            base: Array::Vector(vec![0.1]),
            dy: vec![Array::Vector(vec![0.5])],
            dz: vec![],
        };
        cfg.eta_stock_loading = Some(Coefficient::matrix(&[&[1.0]]));
        let spec = MarketSpec::new(cfg).unwrap();
        let c = spec.eval_coefficients(&[0.2], &[], 0.0).unwrap();
        // 0.1 + 0.5 * 0.2 - 0
        let expected = 0.1_f64 + 0.5_f64 * 0.2_f64;
        assert_abs_diff_eq!(c.a_tilde[0], expected, epsilon = 1e-15);
        assert_abs_diff_eq!(c.a_tilde[0], 0.2, epsilon = 1e-15);
    }

    #[test]
    fn eval_rejects_wrong_dimensions() {
        let spec = MarketSpec::new(constant_config(2)).unwrap();
        assert!(matches!(
            spec.eval_coefficients(&[1.0], &[], 0.0),
            Err(Error::Dimension { .. })
        ));
        assert!(spec.eval_coefficients(&[], &[], 2.0).is_err());
    }

    fn coeffs_1111() -> CoefficientSet {
        let mut c = CoefficientSet::zeros(1, 1, 1, 1);
        c.v[(0, 0)] = 1.0;
        c.beta_eta[(0, 0)] = 2.0;
        c.beta_eta_tilde[(0, 0)] = 3.0;
        c.beta_zeta_tilde[(0, 0)] = 4.0;
        c
    }

    #[test]
    fn b_block_layout() {
        let b = build_b(&coeffs_1111());
        assert_eq!(b, DMatrix::from_row_slice(2, 2, &[2.0, 3.0, 0.0, 4.0]));
        let zero = CoefficientSet::zeros(2, 1, 1, 2);
        assert_eq!(build_b(&zero), DMatrix::zeros(2, 4));
        let mut no_zeta = CoefficientSet::zeros(2, 1, 0, 1);
        no_zeta.beta_eta[(0, 1)] = 5.0;
        no_zeta.beta_eta_tilde[(0, 0)] = 6.0;
        assert_eq!(build_b(&no_zeta), DMatrix::from_row_slice(1, 3, &[0.0, 5.0, 6.0]));
    }

    #[test]
    fn a_matrix_rows() {
        let c = coeffs_1111();
        let a0 = build_a(&c, &DVector::zeros(1));
        assert_eq!(a0.row(0).iter().copied().collect::<Vec<_>>(), vec![0.0, 0.0]);
        assert_eq!(a0.rows(1, 2).into_owned(), build_b(&c));

        let mut single = CoefficientSet::zeros(1, 0, 0, 0);
        single.v[(0, 0)] = 0.3;
        let a = build_a(&single, &DVector::from_element(1, 2.0));
        let aat = &a * a.transpose();
        assert_abs_diff_eq!(aat[(0, 0)], 0.36, epsilon = 1e-15);
    }

    #[test]
    fn witness_hand_solve() {
        // n = 2, m = 1, v = I, beta_eta = (1, 0), K = 4 -> u = (0, 2).
        let mut c = CoefficientSet::zeros(2, 1, 0, 1);
        c.v = DMatrix::identity(2, 2);
        c.beta_eta[(0, 0)] = 1.0;
        c.beta_eta_tilde[(0, 0)] = 0.5;
        let w = check_ellipticity(&c, 4.0).unwrap();
        assert_eq!(w.method, WitnessMethod::Orthogonal);
        assert_abs_diff_eq!(w.witness_u[0], 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(w.witness_u[1], 2.0, epsilon = 1e-14);
        let a = build_a(&c, &w.witness_u);
        let aat = &a * a.transpose();
        assert_abs_diff_eq!(aat[(0, 0)], 4.0, epsilon = 1e-13);
        assert_abs_diff_eq!(aat[(0, 1)], 0.0, epsilon = 1e-13);
        // BB' = 1 + 0.25
        assert_abs_diff_eq!(w.lambda_min, 1.25, epsilon = 1e-12);
    }

    #[test]
    fn witness_block_diag_identity() {
        let mut c = CoefficientSet::zeros(3, 1, 1, 2);
        c.v = DMatrix::identity(3, 3);
        c.beta_eta[(0, 0)] = 1.0;
        c.beta_zeta_tilde[(0, 1)] = 1.0;
        let w = check_ellipticity(&c, 1.0).unwrap();
        assert_abs_diff_eq!(w.lambda_min, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn witness_zero_beta_is_min_of_k_and_bbt() {
        let mut c = CoefficientSet::zeros(2, 0, 1, 1);
        c.v = DMatrix::from_row_slice(2, 2, &[0.2, 0.0, 0.1, 0.3]);
        c.beta_zeta_tilde[(0, 0)] = 0.5;
        let w = check_ellipticity(&c, 2.0).unwrap();
        assert_abs_diff_eq!(w.lambda_min, 0.25, epsilon = 1e-12);
        let w = check_ellipticity(&c, 0.1).unwrap();
        assert_abs_diff_eq!(w.lambda_min, 0.1, epsilon = 1e-12);
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = MarketSpec::new(constant_config(2)).unwrap();
        let b = MarketSpec::new(constant_config(2)).unwrap();
        assert_eq!(a.hash(), b.hash());
        let mut cfg = constant_config(2);
        cfg.horizon = 2.0;
        assert_ne!(a.hash(), MarketSpec::new(cfg).unwrap().hash());
    }
}
