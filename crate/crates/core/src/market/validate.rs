use std::fmt;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use super::{build_a, build_b, condition_number, lambda_min_sym, CoefficientSet, MarketSpec};
use crate::error::{Error, Result};

/// Half-width of the sampling box around the initial factor state.
pub const VALIDATION_RADIUS: f64 = 3.0;
/// Smallest admissible ellipticity constant.
pub const ELLIPTICITY_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    NegativeRate { y: Vec<f64>, z: Vec<f64>, t: f64, r: f64 },
    SingularVolatility { y: Vec<f64>, z: Vec<f64>, t: f64, condition: f64 },
    Ellipticity { y: Vec<f64>, z: Vec<f64>, t: f64, lambda_min: f64 },
    NonFinite { y: Vec<f64>, z: Vec<f64>, t: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NegativeRate { y, z, t, r } => write!(
                f,
                "short rate r = {r} is negative at y={y:?} z={z:?} t={t}; the model requires r >= 0"
            ),
            Violation::SingularVolatility { y, z, t, condition } => write!(
                f,
                "volatility not invertible at y={y:?} z={z:?} t={t} (condition {condition:e})"
            ),
            Violation::Ellipticity { y, z, t, lambda_min } => write!(
                f,
                "factor diffusion degenerate at y={y:?} z={z:?} t={t}: lambda_min(BB') = {lambda_min:e}"
            ),
            Violation::NonFinite { y, z, t } => {
                write!(f, "non-finite coefficient at y={y:?} z={z:?} t={t}")
            }
        }
    }
}

/// Sampled check of the standing assumptions on a market.
#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub samples: usize,
    /// `min lambda_min(BB')` over samples; `None` without factors.
    pub ellipticity: Option<f64>,
    /// Largest sampled Lipschitz quotient of the stacked coefficient map.
    pub lipschitz: f64,
    /// Largest sampled `|F| / (1 + |y| + |z|)`.
    pub growth: f64,
    /// Single constant covering both bounds.
    pub constant: f64,
    /// Largest spectral norm of `v^{-1}`.
    pub max_v_inverse_norm: f64,
    pub min_rate: f64,
    pub notes: Vec<String>,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "samples              {}", self.samples)?;
        match self.ellipticity {
            Some(c1) => writeln!(f, "ellipticity c1       {c1:.6e}")?,
            None => writeln!(f, "ellipticity c1       n/a")?,
        }
        writeln!(f, "lipschitz/growth C   {:.6e}", self.constant)?;
        writeln!(f, "max |v^-1|           {:.6e}", self.max_v_inverse_norm)?;
        writeln!(f, "min r                {:.6e}", self.min_rate)?;
        for n in &self.notes {
            writeln!(f, "note: {n}")?;
        }
        for v in &self.violations {
            writeln!(f, "VIOLATION: {v}")?;
        }
        write!(f, "status               {}", if self.is_valid() { "valid" } else { "invalid" })
    }
}

fn stacked(c: &CoefficientSet) -> Vec<f64> {
    c.a_tilde
        .iter()
        .chain(c.v.iter())
        .chain(c.f_eta.iter())
        .chain(c.beta_eta.iter())
        .chain(c.beta_eta_tilde.iter())
        .chain(c.f_zeta.iter())
        .chain(c.beta_zeta_tilde.iter())
        .copied()
        .collect()
}

fn sample_point(spec: &MarketSpec, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>, f64) {
    let y = spec
        .eta0()
        .iter()
        .map(|c| c + rng.random_range(-VALIDATION_RADIUS..=VALIDATION_RADIUS))
        .collect();
    let z = spec
        .zeta0()
        .iter()
        .map(|c| c + rng.random_range(-VALIDATION_RADIUS..=VALIDATION_RADIUS))
        .collect();
    let t = rng.random_range(0.0..=spec.horizon());
    (y, z, t)
}

/// Samples the factor box and checks rate positivity, invertibility of
/// `v`, uniform ellipticity of `BB'` and the Lipschitz/growth constant.
pub fn validate_spec(spec: &MarketSpec, sample_count: usize, seed: u64) -> Result<ValidationReport> {
    if sample_count == 0 {
        return Err(Error::Input("sample_count must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let has_factors = spec.m() + spec.big_m() > 0;
    let mut report = ValidationReport {
        samples: sample_count,
        ellipticity: None,
        lipschitz: 0.0,
        growth: 0.0,
        constant: 0.0,
        max_v_inverse_norm: 0.0,
        min_rate: f64::INFINITY,
        notes: vec![],
        violations: vec![],
    };
    if !has_factors {
        report.notes.push("no factors: ellipticity holds vacuously".into());
    }
    let mut prev: Option<(Vec<f64>, Vec<f64>, Vec<f64>)> = None;
    let mut c = spec.empty_coefficients();
    for i in 0..sample_count {
        // The first sample is the initial state itself.
        let (y, z, t) = if i == 0 {
            (spec.eta0().to_vec(), spec.zeta0().to_vec(), 0.0)
        } else {
            sample_point(spec, &mut rng)
        };
        spec.eval_into(&y, &z, t, &mut c);
        let flat = stacked(&c);
        if flat.iter().any(|v| !v.is_finite()) || !c.r.is_finite() {
            report.violations.push(Violation::NonFinite { y, z, t });
            continue;
        }
        report.min_rate = report.min_rate.min(c.r);
        if c.r < 0.0 {
            report.violations.push(Violation::NegativeRate {
                y: y.clone(),
                z: z.clone(),
                t,
                r: c.r,
            });
        }
        let cond = condition_number(&c.v);
        if !cond.is_finite() || cond > super::MAX_CONDITION {
            report.violations.push(Violation::SingularVolatility {
                y: y.clone(),
                z: z.clone(),
                t,
                condition: cond,
            });
        } else {
            let smin = c.v.clone().svd(false, false).singular_values.min();
            report.max_v_inverse_norm = report.max_v_inverse_norm.max(1.0 / smin);
        }
        if has_factors {
            let b = build_b(&c);
            let lam = lambda_min_sym(&(&b * b.transpose())).expect("non-empty");
            report.ellipticity = Some(report.ellipticity.map_or(lam, |e: f64| e.min(lam)));
            if lam < ELLIPTICITY_FLOOR {
                report.violations.push(Violation::Ellipticity {
                    y: y.clone(),
                    z: z.clone(),
                    t,
                    lambda_min: lam,
                });
            }
        }
        let norm = flat.iter().map(|v| v * v).sum::<f64>().sqrt();
        let state_norm = (y.iter().map(|v| v * v).sum::<f64>()).sqrt()
            + (z.iter().map(|v| v * v).sum::<f64>()).sqrt();
        report.growth = report.growth.max(norm / (1.0 + state_norm));
        if let Some((py, pz, pf)) = &prev {
            let dist = dist(py, &y) + dist(pz, &z);
            if dist > 0.0 {
                report.lipschitz = report.lipschitz.max(dist_flat(pf, &flat) / dist);
            }
        }
        prev = Some((y, z, flat));
    }
    if !report.min_rate.is_finite() {
        report.min_rate = f64::NAN;
    }
    report.constant = report.lipschitz.max(report.growth);
    Ok(report)
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

fn dist_flat(a: &[f64], b: &[f64]) -> f64 {
    dist(a, b)
}

/// Calibration of the determinant bound `|u|^2 + |u| <= c det(AA')^{1/(n+1)}`
/// over sampled states and controls `u` inside the constraint set.
#[derive(Debug, Clone, Serialize)]
pub struct DeterminantBoundReport {
    pub samples: usize,
    /// Smallest sampled `det(AA')` (nonzero control only).
    pub min_det: f64,
    /// Calibrated constant `c`.
    pub c: f64,
}

pub fn determinant_bound_calibration(spec: &MarketSpec, samples: usize, seed: u64) -> Result<DeterminantBoundReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = spec.n();
    let rho = spec.k().sqrt();
    let mut min_det = f64::INFINITY;
    let mut c_max: f64 = 0.0;
    for _ in 0..samples {
        let (y, z, t) = sample_point(spec, &mut rng);
        let c = spec.eval_coefficients(&y, &z, t)?;
        let vt_inv = c.v_inverse()?.transpose();
        let mut p = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let radius = rho * rng.random_range(1e-3..=1.0_f64);
        p *= radius / p.norm();
        let u = &vt_inv * p;
        let a = build_a(&c, &u);
        let det = (&a * a.transpose()).determinant();
        min_det = min_det.min(det);
        let lhs = u.norm_squared() + u.norm();
        c_max = c_max.max(lhs / det.max(0.0).powf(1.0 / (n as f64 + 1.0)));
    }
    Ok(DeterminantBoundReport {
        samples,
        min_det,
        c: c_max,
    })
}
