use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::Domain;

/// Terminal utility `U` of discounted wealth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Utility {
    /// `ln x`; positive domain only.
    Log,
    /// `x^delta / delta` with `delta < 1`, `delta != 0`; positive domain only.
    Power { delta: f64 },
    /// `x - lambda x^2 / 2` up to `cap <= 1 / lambda`, flat beyond.
    CappedQuadratic { lambda: f64, cap: f64 },
    Constant { value: f64 },
}

impl Utility {
    pub fn validate(&self, domain: Domain) -> Result<()> {
        match *self {
            Utility::Log if domain != Domain::Positive => {
                Err(Error::Input("log utility requires the positive domain".into()))
            }
            Utility::Power { delta } => {
                if domain != Domain::Positive {
                    return Err(Error::Input("power utility requires the positive domain".into()));
                }
                if !(delta < 1.0) || delta == 0.0 || !delta.is_finite() {
                    return Err(Error::Input(format!("power exponent must be < 1 and != 0, got {delta}")));
                }
                Ok(())
            }
            Utility::CappedQuadratic { lambda, cap } => {
                if !(lambda > 0.0) || !cap.is_finite() || cap > 1.0 / lambda {
                    return Err(Error::Input(format!(
                        "capped quadratic needs lambda > 0 and cap <= 1/lambda, got lambda={lambda}, cap={cap}"
                    )));
                }
                Ok(())
            }
            Utility::Constant { value } if !value.is_finite() => {
                Err(Error::NonFinite("constant utility".into()))
            }
            _ => Ok(()),
        }
    }

    /// `U(x)` in wealth units.
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            Utility::Log => x.ln(),
            Utility::Power { delta } => x.powf(delta) / delta,
            Utility::CappedQuadratic { lambda, cap } => {
                let x = x.min(cap);
                x - 0.5 * lambda * x * x
            }
            Utility::Constant { value } => value,
        }
    }

    /// Terminal value at a grid coordinate (`q = ln x` on the positive domain).
    pub fn terminal(&self, coord: f64, domain: Domain) -> f64 {
        match (domain, self) {
            (Domain::Positive, Utility::Log) => coord,
            (Domain::Positive, Utility::Power { delta }) => (delta * coord).exp() / delta,
            (Domain::Positive, u) => u.eval(coord.exp()),
            (Domain::Reals, u) => u.eval(coord),
        }
    }

    pub fn is_nondecreasing(&self) -> bool {
        true
    }

    /// Sampled membership check for the capped family: concavity, monotonicity
    /// up to the cap and `max(0, U(x)) <= c (1 + |x|)`. Returns the smallest
    /// `c` found.
    pub fn check_membership(&self, lo: f64, hi: f64, samples: usize) -> Result<f64> {
        let xs: Vec<f64> = (0..samples)
            .map(|i| lo + (hi - lo) * i as f64 / (samples - 1) as f64)
            .collect();
        let u: Vec<f64> = xs.iter().map(|x| self.eval(*x)).collect();
        for w in u.windows(2) {
            if w[1] < w[0] - 1e-12 {
                return Err(Error::Input("utility decreases".into()));
            }
        }
        for w in u.windows(3) {
            if w[0] - 2.0 * w[1] + w[2] > 1e-12 {
                return Err(Error::Input("utility is not concave".into()));
            }
        }
        Ok(xs
            .iter()
            .zip(&u)
            .map(|(x, v)| v.max(0.0) / (1.0 + x.abs()))
            .fold(0.0, f64::max))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn domain_rules() {
        assert!(Utility::Log.validate(Domain::Reals).is_err());
        assert!(Utility::Power { delta: 0.5 }.validate(Domain::Positive).is_ok());
        assert!(Utility::Power { delta: 1.0 }.validate(Domain::Positive).is_err());
        assert!(Utility::Power { delta: 0.0 }.validate(Domain::Positive).is_err());
        assert!(Utility::CappedQuadratic { lambda: 0.5, cap: 3.0 }.validate(Domain::Reals).is_err());
        assert!(Utility::CappedQuadratic { lambda: 0.5, cap: 2.0 }.validate(Domain::Reals).is_ok());
    }

    #[test]
    fn terminal_in_log_coordinates() {
        let q = 0.7_f64;
        assert_eq!(Utility::Log.terminal(q, Domain::Positive), q);
        let p = Utility::Power { delta: -1.0 }.terminal(q, Domain::Positive);
        assert!((p - (-(-q).exp())).abs() < 1e-15);
    }

    #[test]
    fn capped_membership() {
        let u = Utility::CappedQuadratic { lambda: 0.25, cap: 3.0 };
        let c = u.check_membership(-10.0, 10.0, 401).unwrap();
        assert!(c > 0.0 && c < 1.0);
        assert_eq!(u.eval(5.0), u.eval(3.0));
    }
}
