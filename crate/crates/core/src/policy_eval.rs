//! Monte Carlo evaluation of `E U(X(T))`, closed-form constant-coefficient
//! oracles and the epsilon-optimality report.

use std::borrow::Cow;
use std::fmt;
use std::io::Write;

use nalgebra::DVector;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::funds::fund_directions;
use crate::hjb::{Grid, PolicyGrid, Utility};
use crate::market::{simulate_terminal, Control, Domain, MarketSpec, StatePoint};

/// Share of excluded paths above which a result is flagged.
pub const EXCLUDED_FLAG_SHARE: f64 = 1e-3;

/// Pairwise (cascade) summation; the result depends only on the order of
/// `xs`, not on how the values were produced.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 32 {
        return xs.iter().sum();
    }
    let (a, b) = xs.split_at(xs.len() / 2);
    pairwise_sum(a) + pairwise_sum(b)
}

/// Mean and standard error `sample_std / sqrt(count)`.
pub fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = pairwise_sum(xs) / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let dev: Vec<f64> = xs.iter().map(|x| (x - mean) * (x - mean)).collect();
    let var = pairwise_sum(&dev) / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Sign of an off-span perturbation as a function of the state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SignPattern {
    Plus,
    Minus,
    /// `+` before half the horizon, `-` after.
    TimeSwitch,
    /// `-` before half the horizon, `+` after.
    TimeSwitchReversed,
    /// `+` above the initial wealth coordinate, `-` below.
    WealthSwitch,
}

impl SignPattern {
    fn sign(self, coord: f64, t: f64, coord0: f64, horizon: f64) -> f64 {
        let early = t < 0.5 * horizon;
        match self {
            SignPattern::Plus => 1.0,
            SignPattern::Minus => -1.0,
            SignPattern::TimeSwitch => {
                if early {
                    1.0
                } else {
                    -1.0
                }
            }
            SignPattern::TimeSwitchReversed => {
                if early {
                    -1.0
                } else {
                    1.0
                }
            }
            SignPattern::WealthSwitch => {
                if coord >= coord0 {
                    1.0
                } else {
                    -1.0
                }
            }
        }
    }
}

/// Component of `raw` orthogonal to the span of `dirs`, normalized; `None`
/// if `raw` lies in the span.
pub fn off_span_direction(raw: &DVector<f64>, dirs: &[DVector<f64>]) -> Option<DVector<f64>> {
    let mut basis: Vec<DVector<f64>> = Vec::new();
    for d in dirs {
        let mut e = d.clone();
        for b in &basis {
            e -= b * b.dot(&e);
        }
        let norm = e.norm();
        if norm > 1e-12 * d.norm().max(1e-300) {
            basis.push(e / norm);
        }
    }
    let mut w = raw.clone();
    for _ in 0..2 {
        for b in &basis {
            w -= b * b.dot(&w);
        }
    }
    let norm = w.norm();
    (norm > 1e-10 * raw.norm()).then(|| w / norm)
}

enum Kind<'a> {
    Zero,
    ConstantFraction(DVector<f64>),
    GridPolicy(&'a PolicyGrid),
    FundRule(&'a PolicyGrid),
    Perturbed {
        base: Box<Strategy<'a>>,
        raw: DVector<f64>,
        pattern: SignPattern,
        relative_size: f64,
    },
}

/// A feedback strategy that can be simulated.
pub struct Strategy<'a> {
    kind: Kind<'a>,
    pub label: String,
    /// Strategies with a level are projected into, and checked against,
    /// `u' v v' u <= K`.
    pub constraint: Option<f64>,
    m: usize,
    coord0: f64,
    horizon: f64,
    /// Factor directions when the market coefficients are constant.
    fixed_funds: Option<Vec<DVector<f64>>>,
}

impl<'a> Strategy<'a> {
    fn base(kind: Kind<'a>, label: impl Into<String>, spec: &MarketSpec, constraint: Option<f64>) -> Self {
        let fixed_funds = spec.is_constant().then(|| {
            let c = spec
                .eval_coefficients(spec.eta0(), spec.zeta0(), 0.0)
                .expect("initial state in range");
            fund_directions(&c).map(|f| f.factor_directions).ok()
        });
        Self {
            kind,
            label: label.into(),
            constraint,
            m: spec.m(),
            coord0: spec.coord0(),
            horizon: spec.horizon(),
            fixed_funds: fixed_funds.flatten(),
        }
    }

    pub fn zero(spec: &MarketSpec) -> Self {
        Self::base(Kind::Zero, "zero", spec, None)
    }

    /// Constant fraction of wealth (positive domain) or amount (reals).
    pub fn constant_fraction(spec: &MarketSpec, u: DVector<f64>, label: impl Into<String>) -> Self {
        Self::base(Kind::ConstantFraction(u), label, spec, None)
    }

    /// Interpolated control from a solved policy grid.
    pub fn grid_policy(spec: &MarketSpec, policy: &'a PolicyGrid) -> Self {
        Self::base(Kind::GridPolicy(policy), "grid_policy", spec, Some(spec.k()))
    }

    /// Interpolated fund coefficients applied to the fund directions at the
    /// current state.
    pub fn fund_rule(spec: &MarketSpec, policy: &'a PolicyGrid) -> Self {
        Self::base(Kind::FundRule(policy), "fund_rule", spec, Some(spec.k()))
    }

    /// `u + s |u| relative_size w` with `w` the normalized component of
    /// `raw` orthogonal to the fund span at the current state.
    pub fn perturbed(
        spec: &MarketSpec,
        base: Strategy<'a>,
        raw: DVector<f64>,
        pattern: SignPattern,
        relative_size: f64,
    ) -> Self {
        let label = format!("{}+offspan({pattern:?})", base.label);
        let constraint = base.constraint;
        Self::base(
            Kind::Perturbed {
                base: Box::new(base),
                raw,
                pattern,
                relative_size,
            },
            label,
            spec,
            constraint,
        )
    }

    fn funds_at(&self, state: &StatePoint<'_>) -> Option<Cow<'_, [DVector<f64>]>> {
        match &self.fixed_funds {
            Some(f) => Some(Cow::Borrowed(f.as_slice())),
            None => fund_directions(state.coeffs).ok().map(|f| Cow::Owned(f.factor_directions)),
        }
    }

    fn raw_control(&self, state: &StatePoint<'_>, out: &mut [f64]) {
        let coords = || {
            let mut c = Vec::with_capacity(1 + state.y.len() + state.z.len());
            c.push(state.coord);
            c.extend_from_slice(state.y);
            c.extend_from_slice(state.z);
            c
        };
        match &self.kind {
            Kind::Zero => out.fill(0.0),
            Kind::ConstantFraction(u) => out.copy_from_slice(u.as_slice()),
            Kind::GridPolicy(p) => p.interpolate_u(&coords(), state.t, out),
            Kind::FundRule(p) => {
                let mut h = vec![0.0; self.m + 1];
                p.interpolate_fund(&coords(), state.t, &mut h);
                out.fill(0.0);
                match self.funds_at(state) {
                    Some(funds) => {
                        for (hk, psi) in h.iter().zip(funds.iter()) {
                            for (o, v) in out.iter_mut().zip(psi.iter()) {
                                *o += hk * v;
                            }
                        }
                    }
                    None => out.fill(f64::NAN),
                }
            }
            Kind::Perturbed {
                base,
                raw,
                pattern,
                relative_size,
            } => {
                base.control(state, out);
                let norm = out.iter().map(|v| v * v).sum::<f64>().sqrt();
                let w = self
                    .funds_at(state)
                    .and_then(|funds| off_span_direction(raw, &funds));
                if let Some(w) = w {
                    let s = pattern.sign(state.coord, state.t, self.coord0, self.horizon);
                    for (o, wi) in out.iter_mut().zip(w.iter()) {
                        *o += s * relative_size * norm * wi;
                    }
                }
            }
        }
    }
}

impl Control for Strategy<'_> {
    fn control(&self, state: &StatePoint<'_>, out: &mut [f64]) {
        self.raw_control(state, out);
        if let Some(k) = self.constraint {
            let v = &state.coeffs.v;
            let n = out.len();
            let mut usage = 0.0;
            for j in 0..n {
                let mut s = 0.0;
                for i in 0..n {
                    s += out[i] * v[(i, j)];
                }
                usage += s * s;
            }
            if usage > k {
                let scale = (k / usage).sqrt() * (1.0 - 1e-12);
                out.iter_mut().for_each(|o| *o *= scale);
            }
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalResult {
    pub mean_utility: f64,
    pub std_error: f64,
    pub path_count: usize,
    pub excluded_paths: usize,
    pub seed: u64,
    /// More than [`EXCLUDED_FLAG_SHARE`] of the paths were excluded.
    pub flagged: bool,
    pub max_quadratic_usage: f64,
    pub max_control_norm: f64,
}

/// Per-path terminal utilities; `None` for excluded paths.
#[derive(Debug, Clone)]
pub struct PathValues {
    pub values: Vec<Option<f64>>,
}

/// Monte Carlo estimate of `E U(X(T))` with per-path values kept for
/// paired comparisons.
pub fn evaluate_paths(
    spec: &MarketSpec,
    strategy: &Strategy<'_>,
    utility: &Utility,
    steps: usize,
    paths: usize,
    seed: u64,
) -> Result<(EvalResult, PathValues)> {
    utility.validate(spec.domain())?;
    let bundle = simulate_terminal(spec, strategy, steps, paths, seed)?;
    if let Some(k) = strategy.constraint {
        if bundle.max_quadratic_usage > k * (1.0 + 1e-8) {
            return Err(Error::Input(format!(
                "strategy {} leaves the constraint set: u'vv'u = {} > K = {k}",
                strategy.label, bundle.max_quadratic_usage
            )));
        }
    }
    if !bundle.max_control_norm.is_finite() && bundle.excluded == 0 {
        return Err(Error::NonFinite(format!("controls of strategy {}", strategy.label)));
    }
    let values: Vec<Option<f64>> = bundle
        .coord
        .iter()
        .zip(&bundle.finite)
        .map(|(c, ok)| {
            if !ok {
                return None;
            }
            let u = utility.terminal(*c, spec.domain());
            u.is_finite().then_some(u)
        })
        .collect();
    let kept: Vec<f64> = values.iter().flatten().copied().collect();
    let excluded = paths - kept.len();
    let (mean, se) = mean_and_se(&kept);
    Ok((
        EvalResult {
            mean_utility: mean,
            std_error: se,
            path_count: paths,
            excluded_paths: excluded,
            seed,
            flagged: excluded as f64 > EXCLUDED_FLAG_SHARE * paths as f64,
            max_quadratic_usage: bundle.max_quadratic_usage,
            max_control_norm: bundle.max_control_norm,
        },
        PathValues { values },
    ))
}

pub fn evaluate(
    spec: &MarketSpec,
    strategy: &Strategy<'_>,
    utility: &Utility,
    steps: usize,
    paths: usize,
    seed: u64,
) -> Result<EvalResult> {
    evaluate_paths(spec, strategy, utility, steps, paths, seed).map(|r| r.0)
}

/// Mean and standard error of `a - b` over paths kept by both runs.
pub fn paired_difference(a: &PathValues, b: &PathValues) -> (f64, f64) {
    let diffs: Vec<f64> = a
        .values
        .iter()
        .zip(&b.values)
        .filter_map(|(x, y)| Some((*x)? - (*y)?))
        .collect();
    mean_and_se(&diffs)
}

/// Closed-form optimum for constant stock coefficients.
#[derive(Debug, Clone)]
pub struct MertonOracle {
    pub fraction: DVector<f64>,
    /// `|theta|^2` with `theta = v^{-1} a~`.
    pub theta_sq: f64,
    pub utility: Utility,
    pub horizon: f64,
}

impl MertonOracle {
    /// Optimal fraction; constant in time and wealth.
    pub fn fraction_at(&self, _t: f64) -> DVector<f64> {
        self.fraction.clone()
    }

    /// Optimal control at wealth `x` (a fraction on the positive domain).
    pub fn control(&self, _x: f64, t: f64) -> DVector<f64> {
        self.fraction_at(t)
    }

    /// Value function at wealth `x` and time `t`.
    pub fn value(&self, x: f64, t: f64) -> f64 {
        let tau = self.horizon - t;
        match self.utility {
            Utility::Log => x.ln() + 0.5 * self.theta_sq * tau,
            Utility::Power { delta } => {
                x.powf(delta) / delta * (delta * self.theta_sq * tau / (2.0 * (1.0 - delta))).exp()
            }
            _ => unreachable!("oracle built only for log and power"),
        }
    }
}

/// Oracle for log or power utility when `a`, `v`, `r` do not depend on the
/// factors.
pub fn merton_oracle(spec: &MarketSpec, utility: &Utility) -> Result<MertonOracle> {
    if !spec.stock_coefficients_constant() {
        return Err(Error::Unsupported("oracle needs constant a, v and r".into()));
    }
    if spec.domain() != Domain::Positive {
        return Err(Error::Unsupported("oracle needs the positive domain".into()));
    }
    utility.validate(spec.domain())?;
    let scale = match utility {
        Utility::Log => 1.0,
        Utility::Power { delta } => 1.0 / (1.0 - delta),
        _ => return Err(Error::Unsupported("oracle covers log and power utility only".into())),
    };
    let c = spec.eval_coefficients(spec.eta0(), spec.zeta0(), 0.0)?;
    let v_inv = c.v_inverse()?;
    let theta = &v_inv * &c.a_tilde;
    let q_a = v_inv.transpose() * &theta;
    Ok(MertonOracle {
        fraction: q_a * scale,
        theta_sq: theta.norm_squared(),
        utility: *utility,
        horizon: spec.horizon(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McParams {
    pub paths: usize,
    pub steps: usize,
    pub seed: u64,
}

/// One strategy row of the report.
#[derive(Debug, Clone, Serialize)]
pub struct ReportRow {
    pub label: String,
    pub mean: f64,
    pub std_error: f64,
    /// Mean of this strategy minus the fund policy, over common paths.
    pub delta_vs_policy: f64,
    pub delta_paired_se: f64,
    /// `SE(this) + SE(policy)`.
    pub combined_se: f64,
    pub excluded_paths: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct EpsilonReport {
    pub spec_hash: String,
    pub seed: u64,
    pub paths: usize,
    pub steps: usize,
    pub grid: String,
    pub h: f64,
    pub dt: f64,
    pub c_disc: f64,
    pub rows: Vec<ReportRow>,
    /// Closed-form value at the initial state, when an oracle exists.
    pub oracle_value: Option<f64>,
    /// `|V(policy) - V(oracle)|` by simulation.
    pub oracle_gap: Option<f64>,
    pub eps_budget: Option<f64>,
    pub eps_pass: Option<bool>,
    pub perturbation_count: usize,
    /// Every perturbation is below the policy by more than 3 combined SE.
    pub perturbations_pass: bool,
    pub zero_floor: f64,
}

impl EpsilonReport {
    pub fn passed(&self) -> bool {
        self.eps_pass.unwrap_or(true) && self.perturbations_pass
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "label",
            "mean",
            "std_error",
            "delta_vs_policy",
            "delta_paired_se",
            "combined_se",
            "excluded_paths",
            "spec_hash",
            "seed",
            "grid",
        ])?;
        for r in &self.rows {
            w.write_record([
                r.label.clone(),
                format!("{:.12e}", r.mean),
                format!("{:.6e}", r.std_error),
                format!("{:.12e}", r.delta_vs_policy),
                format!("{:.6e}", r.delta_paired_se),
                format!("{:.6e}", r.combined_se),
                r.excluded_paths.to_string(),
                self.spec_hash.clone(),
                self.seed.to_string(),
                self.grid.clone(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

impl fmt::Display for EpsilonReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "spec hash : {}", self.spec_hash)?;
        writeln!(f, "seed      : {}", self.seed)?;
        writeln!(f, "grid      : {}", self.grid)?;
        writeln!(f, "paths     : {}  steps: {}", self.paths, self.steps)?;
        writeln!(f)?;
        writeln!(
            f,
            "{:<40} {:>16} {:>12} {:>16} {:>12}",
            "strategy", "mean U", "SE", "delta vs policy", "3*comb SE"
        )?;
        for r in &self.rows {
            writeln!(
                f,
                "{:<40} {:>16.8} {:>12.3e} {:>16.3e} {:>12.3e}",
                r.label,
                r.mean,
                r.std_error,
                r.delta_vs_policy,
                3.0 * r.combined_se
            )?;
        }
        writeln!(f)?;
        writeln!(f, "zero-strategy floor U(X0) = {:.8}", self.zero_floor)?;
        if let (Some(v), Some(gap), Some(eps), Some(pass)) =
            (self.oracle_value, self.oracle_gap, self.eps_budget, self.eps_pass)
        {
            writeln!(f, "closed-form value at X0   = {v:.8}")?;
            writeln!(
                f,
                "|V_policy - V_oracle| <= eps_budget: {} ({gap:.3e} <= {eps:.3e}; C_disc = {:.3e}, h = {:.3e}, dt = {:.3e})",
                if pass { "PASS" } else { "FAIL" },
                self.c_disc,
                self.h,
                self.dt
            )?;
        }
        writeln!(
            f,
            "off-span perturbations below policy by > 3 combined SE: {} ({} tested)",
            if self.perturbations_pass { "PASS" } else { "FAIL" },
            self.perturbation_count
        )
    }
}

/// Off-span perturbation set: sign patterns along the first complement
/// direction, plus further complement directions when available.
pub fn perturbation_set(spec: &MarketSpec) -> Result<Vec<(DVector<f64>, SignPattern)>> {
    let n = spec.n();
    let c = spec.eval_coefficients(spec.eta0(), spec.zeta0(), 0.0)?;
    let funds = fund_directions(&c)?;
    let mut raws: Vec<DVector<f64>> = Vec::new();
    for i in 0..n {
        let e = DVector::from_fn(n, |j, _| if i == j { 1.0 } else { 0.0 });
        let mut taken = funds.factor_directions.clone();
        taken.extend(raws.iter().cloned());
        if off_span_direction(&e, &taken).is_some() {
            raws.push(e);
        }
    }
    let Some(first) = raws.first() else {
        return Ok(Vec::new());
    };
    let mut set: Vec<(DVector<f64>, SignPattern)> = [
        SignPattern::Plus,
        SignPattern::Minus,
        SignPattern::TimeSwitch,
        SignPattern::TimeSwitchReversed,
        SignPattern::WealthSwitch,
    ]
    .into_iter()
    .map(|p| (first.clone(), p))
    .collect();
    set.extend(raws.iter().skip(1).map(|r| (r.clone(), SignPattern::Plus)));
    Ok(set)
}

/// Relative size of off-span perturbations.
pub const PERTURBATION_SIZE: f64 = 0.5;

/// Evaluates the fund policy, the oracle (when available), off-span
/// perturbations and the zero strategy on common random numbers.
pub fn epsilon_optimality_report(
    spec: &MarketSpec,
    utility: &Utility,
    grid: &Grid,
    policy: &PolicyGrid,
    mc: &McParams,
    c_disc: f64,
) -> Result<EpsilonReport> {
    let run = |s: &Strategy<'_>| evaluate_paths(spec, s, utility, mc.steps, mc.paths, mc.seed);
    let fund = Strategy::fund_rule(spec, policy);
    let (fund_res, fund_vals) = run(&fund)?;
    let mut rows = vec![ReportRow {
        label: fund.label.clone(),
        mean: fund_res.mean_utility,
        std_error: fund_res.std_error,
        delta_vs_policy: 0.0,
        delta_paired_se: 0.0,
        combined_se: 2.0 * fund_res.std_error,
        excluded_paths: fund_res.excluded_paths,
    }];
    let row_for = |s: &Strategy<'_>| -> Result<ReportRow> {
        let (res, vals) = run(s)?;
        let (delta, dse) = paired_difference(&vals, &fund_vals);
        Ok(ReportRow {
            label: s.label.clone(),
            mean: res.mean_utility,
            std_error: res.std_error,
            delta_vs_policy: delta,
            delta_paired_se: dse,
            combined_se: res.std_error + fund_res.std_error,
            excluded_paths: res.excluded_paths,
        })
    };
    let h = grid.axes[0].h();
    let dt = grid.dt();
    let mut oracle_value = None;
    let mut oracle_gap = None;
    let mut eps_budget = None;
    let mut eps_pass = None;
    if let Ok(oracle) = merton_oracle(spec, utility) {
        let s = Strategy::constant_fraction(spec, oracle.fraction.clone(), "oracle");
        let row = row_for(&s)?;
        let gap = row.delta_vs_policy.abs();
        let eps = 3.0 * row.combined_se + c_disc * (h + dt);
        oracle_value = Some(oracle.value(spec.x0(), 0.0));
        oracle_gap = Some(gap);
        eps_budget = Some(eps);
        eps_pass = Some(gap <= eps);
        rows.push(row);
    }
    let set = perturbation_set(spec)?;
    let mut perturbations_pass = true;
    for (raw, pattern) in &set {
        let s = Strategy::perturbed(spec, Strategy::fund_rule(spec, policy), raw.clone(), *pattern, PERTURBATION_SIZE);
        let row = row_for(&s)?;
        if !(row.delta_vs_policy < -3.0 * row.combined_se) {
            perturbations_pass = false;
        }
        rows.push(row);
    }
    let zero = row_for(&Strategy::zero(spec))?;
    let zero_floor = zero.mean;
    rows.push(zero);
    Ok(EpsilonReport {
        spec_hash: spec.hash(),
        seed: mc.seed,
        paths: mc.paths,
        steps: mc.steps,
        grid: grid.descriptor(),
        h,
        dt,
        c_disc,
        rows,
        oracle_value,
        oracle_gap,
        eps_budget,
        eps_pass,
        perturbation_count: set.len(),
        perturbations_pass,
        zero_floor,
    })
}
