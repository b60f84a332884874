//! Mutual-fund directions and decomposition of controls in their span.
//!
//! For `m + 1 < n` the funds are `psi_k = (v')^{-1} beta_eta[k, :]'` for
//! `k <= m` and `psi_{m+1} = Q a~` with `Q = (v v')^{-1}`. Otherwise the
//! first `n` standard basis vectors are used.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::market::{invert_checked, CoefficientSet, MarketSpec};

/// Floor of the denominator in the relative residual.
pub const RESIDUAL_FLOOR: f64 = 1e-30;

pub fn mu_of(m: usize, n: usize) -> usize {
    (m + 1).min(n)
}

fn checked_inverse(v: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    invert_checked(v).map_err(|condition| Error::SingularVolatility {
        y: vec![],
        z: vec![],
        t: f64::NAN,
        condition,
    })
}

/// `Q = (v v')^{-1}`, formed as `(v^{-1})' v^{-1}`.
pub fn compute_q(v: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let inv = checked_inverse(v)?;
    Ok(inv.transpose() * &inv)
}

/// Columns of `(v')^{-1}`.
pub fn q_columns(v: &DMatrix<f64>) -> Result<Vec<DVector<f64>>> {
    let vt_inv = checked_inverse(v)?.transpose();
    Ok(vt_inv.column_iter().map(|c| c.into_owned()).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisTag {
    FactorFunds,
    StandardBasis,
}

/// Fund directions evaluated at one `(y, z, t)`.
#[derive(Debug, Clone)]
pub struct FundPoint {
    pub mu: usize,
    pub basis: BasisTag,
    /// The `mu` directions used for decomposition.
    pub directions: Vec<DVector<f64>>,
    /// `psi_1..psi_m, psi_{m+1}` regardless of the basis choice; the fund
    /// coefficients of the Bellman maximizer refer to these.
    pub factor_directions: Vec<DVector<f64>>,
}

impl FundPoint {
    /// Matrix with the fund directions as columns.
    pub fn matrix(&self) -> DMatrix<f64> {
        stack(&self.directions)
    }

    /// Smallest singular value of the stacked directions; zero flags a
    /// rank-deficient fund set.
    pub fn independence(&self) -> f64 {
        let m = self.matrix();
        if m.ncols() == 0 {
            return 0.0;
        }
        m.svd(false, false).singular_values.min()
    }
}

fn stack(dirs: &[DVector<f64>]) -> DMatrix<f64> {
    let n = dirs.first().map_or(0, |d| d.len());
    DMatrix::from_fn(n, dirs.len(), |i, j| dirs[j][i])
}

/// Builds the fund directions from coefficients at one point.
pub fn fund_directions(coeffs: &CoefficientSet) -> Result<FundPoint> {
    let n = coeffs.n();
    let m = coeffs.m();
    let v_inv = checked_inverse(&coeffs.v)?;
    let vt_inv = v_inv.transpose();
    let mut factor: Vec<DVector<f64>> = (0..m)
        .map(|k| &vt_inv * coeffs.beta_eta.row(k).transpose())
        .collect();
    // Q a~ = (v')^{-1} (v^{-1} a~)
    factor.push(&vt_inv * (&v_inv * &coeffs.a_tilde));
    let mu = mu_of(m, n);
    let (basis, directions) = if m + 1 >= n {
        let e = (0..n)
            .map(|k| {
                let mut e = DVector::zeros(n);
                e[k] = 1.0;
                e
            })
            .collect();
        (BasisTag::StandardBasis, e)
    } else {
        (BasisTag::FactorFunds, factor.clone())
    };
    Ok(FundPoint {
        mu,
        basis,
        directions,
        factor_directions: factor,
    })
}

/// Least-squares coefficients of `u` in the span of `funds`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpanDecomposition {
    pub coefficients: DVector<f64>,
    pub residual_norm: f64,
    pub relative_residual: f64,
}

/// Minimum-norm least-squares decomposition; rank-deficient fund sets are
/// handled by truncating tiny singular values.
pub fn decompose(u: &DVector<f64>, funds: &[DVector<f64>]) -> Result<SpanDecomposition> {
    if funds.is_empty() {
        return Err(Error::Input("decompose needs at least one fund".into()));
    }
    let f = stack(funds);
    let svd = f.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let coefficients = if smax == 0.0 {
        DVector::zeros(funds.len())
    } else {
        svd.solve(u, smax * 1e-13).map_err(|e| Error::Input(e.to_string()))?
    };
    let residual_norm = (u - &f * &coefficients).norm();
    let unorm = u.norm();
    let relative_residual = if unorm == 0.0 {
        0.0
    } else {
        residual_norm / unorm.max(RESIDUAL_FLOOR)
    };
    Ok(SpanDecomposition {
        coefficients,
        residual_norm,
        relative_residual,
    })
}

/// Fund directions as functions of the factor state.
#[derive(Debug, Clone)]
pub struct FundSet {
    spec: MarketSpec,
}

impl FundSet {
    pub fn new(spec: &MarketSpec) -> Self {
        Self { spec: spec.clone() }
    }

    pub fn mu(&self) -> usize {
        mu_of(self.spec.m(), self.spec.n())
    }

    pub fn at(&self, y: &[f64], z: &[f64], t: f64) -> Result<FundPoint> {
        fund_directions(&self.spec.eval_coefficients(y, z, t)?)
    }

    /// One row per `(point, fund)` with the direction entries.
    pub fn write_csv<W: Write>(&self, points: &[(Vec<f64>, Vec<f64>, f64)], out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let (m, big_m, n) = (self.spec.m(), self.spec.big_m(), self.spec.n());
        let mut header: Vec<String> = (0..m).map(|i| format!("y_{i}")).collect();
        header.extend((0..big_m).map(|i| format!("z_{i}")));
        header.extend(["t".to_string(), "fund".into(), "basis".into()]);
        header.extend((0..n).map(|i| format!("psi_{i}")));
        w.write_record(&header)?;
        for (y, z, t) in points {
            let f = self.at(y, z, *t)?;
            let tag = match f.basis {
                BasisTag::FactorFunds => "factor_funds",
                BasisTag::StandardBasis => "standard_basis",
            };
            for (k, d) in f.directions.iter().enumerate() {
                let mut row: Vec<String> = y.iter().chain(z).map(|v| format!("{v:.17e}")).collect();
                row.extend([format!("{t:.17e}"), (k + 1).to_string(), tag.to_string()]);
                row.extend(d.iter().map(|v| format!("{v:.17e}")));
                w.write_record(&row)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}
