//! Euler-Maruyama simulation of the wealth coordinate and the factors.
//!
//! On the positive domain the wealth coordinate is `q = ln X`, with drift
//! `u'a~ - |v'u|^2 / 2`, so positivity of `X = e^q` is structural.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::{CoefficientSet, Domain, MarketSpec};
use crate::error::{Error, Result};

/// State handed to a control at each step.
pub struct StatePoint<'a> {
    /// Wealth coordinate: `x` on the reals, `q = ln x` on the positive domain.
    pub coord: f64,
    /// Discounted wealth.
    pub wealth: f64,
    pub y: &'a [f64],
    pub z: &'a [f64],
    pub t: f64,
    pub coeffs: &'a CoefficientSet,
}

/// A feedback strategy. On the positive domain it returns fractions of
/// wealth, on the reals amounts held.
pub trait Control: Sync {
    fn control(&self, state: &StatePoint<'_>, out: &mut [f64]);
}

/// One simulated path.
#[derive(Debug, Clone)]
pub struct PathRecord {
    /// `(steps + 1) x (1 + m + M)` row-major states `(coord, y, z)`.
    pub states: Vec<f64>,
    /// `steps x n` controls used on each step.
    pub controls: Vec<f64>,
    pub finite: bool,
}

#[derive(Debug, Clone)]
pub struct PathBundle {
    pub times: Vec<f64>,
    pub state_dim: usize,
    pub n: usize,
    pub domain: Domain,
    pub paths: Vec<PathRecord>,
    pub excluded: usize,
    pub seed: u64,
}

impl PathBundle {
    pub fn wealth(&self, path: usize, step: usize) -> f64 {
        let c = self.paths[path].states[step * self.state_dim];
        match self.domain {
            Domain::Reals => c,
            Domain::Positive => c.exp(),
        }
    }

    /// One CSV row per `(path, step)`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let k = self.state_dim - 1;
        let mut header = vec!["path".to_string(), "step".into(), "t".into(), "wealth".into(), "coord".into()];
        header.extend((0..k).map(|i| format!("factor_{i}")));
        header.extend((0..self.n).map(|i| format!("pi_{i}")));
        header.push("finite".into());
        w.write_record(&header)?;
        for (p, rec) in self.paths.iter().enumerate() {
            for (s, t) in self.times.iter().enumerate() {
                let mut row = vec![p.to_string(), s.to_string(), fmt(*t), fmt(self.wealth(p, s))];
                row.extend(rec.states[s * self.state_dim..(s + 1) * self.state_dim].iter().map(|v| fmt(*v)));
                if s < self.times.len() - 1 {
                    row.extend(rec.controls[s * self.n..(s + 1) * self.n].iter().map(|v| fmt(*v)));
                } else {
                    row.extend((0..self.n).map(|_| String::new()));
                }
                row.push(rec.finite.to_string());
                w.write_record(&row)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

fn fmt(v: f64) -> String {
    format!("{v:.17e}")
}

/// Terminal values only; what Monte Carlo evaluation needs.
#[derive(Debug, Clone)]
pub struct TerminalBundle {
    pub coord: Vec<f64>,
    pub wealth: Vec<f64>,
    pub finite: Vec<bool>,
    pub excluded: usize,
    /// Largest `u' v v' u` seen on any path.
    pub max_quadratic_usage: f64,
    /// Largest `|u|` seen on any path.
    pub max_control_norm: f64,
    pub seed: u64,
}

pub(crate) fn path_rng(seed: u64, path: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path as u64);
    rng
}

struct PathSummary {
    coord: f64,
    finite: bool,
    max_usage: f64,
    max_norm: f64,
}

/// Runs one path, calling `record(step, state, control)` after the control
/// for `step` is chosen and once more with the terminal state.
fn run_path(
    spec: &MarketSpec,
    control: &dyn Control,
    steps: usize,
    seed: u64,
    path: usize,
    fixed: Option<&CoefficientSet>,
    mut record: impl FnMut(usize, &[f64], Option<&[f64]>),
) -> PathSummary {
    let n = spec.n();
    let m = spec.m();
    let big_m = spec.big_m();
    let aux = spec.aux();
    let dt = spec.horizon() / steps as f64;
    let sq = dt.sqrt();
    let mut rng = path_rng(seed, path);
    let mut state = Vec::with_capacity(1 + m + big_m);
    state.push(spec.coord0());
    state.extend_from_slice(spec.eta0());
    state.extend_from_slice(spec.zeta0());
    let mut next = state.clone();
    let mut u = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut dw = vec![0.0; n + aux];
    let mut local = spec.empty_coefficients();
    let mut finite = true;
    let mut max_usage: f64 = 0.0;
    let mut max_norm: f64 = 0.0;
    for step in 0..steps {
        let t = step as f64 * dt;
        // Draw before anything can short-circuit so streams stay aligned.
        for d in dw.iter_mut() {
            *d = sq * rng.sample::<f64, _>(StandardNormal);
        }
        if !finite {
            continue;
        }
        let (y, z) = state[1..].split_at(m);
        let c = match fixed {
            Some(c) => c,
            None => {
                spec.eval_into(y, z, t, &mut local);
                &local
            }
        };
        let coord = state[0];
        let wealth = match spec.domain() {
            Domain::Reals => coord,
            Domain::Positive => coord.exp(),
        };
        control.control(
            &StatePoint {
                coord,
                wealth,
                y,
                z,
                t,
                coeffs: c,
            },
            &mut u,
        );
        record(step, &state, Some(&u));
        let mut usage = 0.0;
        let mut drift = 0.0;
        let mut noise = 0.0;
        for j in 0..n {
            let mut s = 0.0;
            for i in 0..n {
                s += u[i] * c.v[(i, j)];
            }
            p[j] = s;
            usage += s * s;
            noise += s * dw[j];
            drift += u[j] * c.a_tilde[j];
        }
        max_usage = max_usage.max(usage);
        max_norm = max_norm.max(u.iter().map(|x| x * x).sum::<f64>().sqrt());
        next[0] = match spec.domain() {
            Domain::Reals => coord + drift * dt + noise,
            Domain::Positive => coord + (drift - 0.5 * usage) * dt + noise,
        };
        for k in 0..m {
            let mut s = state[1 + k] + c.f_eta[k] * dt;
            for j in 0..n {
                s += c.beta_eta[(k, j)] * dw[j];
            }
            for j in 0..aux {
                s += c.beta_eta_tilde[(k, j)] * dw[n + j];
            }
            next[1 + k] = s;
        }
        for k in 0..big_m {
            let mut s = state[1 + m + k] + c.f_zeta[k] * dt;
            for j in 0..aux {
                s += c.beta_zeta_tilde[(k, j)] * dw[n + j];
            }
            next[1 + m + k] = s;
        }
        std::mem::swap(&mut state, &mut next);
        if state.iter().any(|v| !v.is_finite()) || u.iter().any(|v| !v.is_finite()) {
            finite = false;
        }
    }
    record(steps, &state, None);
    PathSummary {
        coord: state[0],
        finite,
        max_usage,
        max_norm,
    }
}

fn check_args(steps: usize, paths: usize) -> Result<()> {
    if steps == 0 || paths == 0 {
        return Err(Error::Input("steps and paths must be >= 1".into()));
    }
    Ok(())
}

fn fixed_coefficients(spec: &MarketSpec) -> Option<CoefficientSet> {
    (spec.is_constant() && spec.drifts_constant())
        .then(|| spec.eval_coefficients(spec.eta0(), spec.zeta0(), 0.0).expect("initial state in range"))
}

/// Simulates full paths. Each path draws from its own stream derived from
/// `(seed, path index)`, so results do not depend on thread scheduling.
pub fn simulate_paths(
    spec: &MarketSpec,
    control: &dyn Control,
    steps: usize,
    paths: usize,
    seed: u64,
) -> Result<PathBundle> {
    check_args(steps, paths)?;
    let dim = 1 + spec.m() + spec.big_m();
    let n = spec.n();
    let fixed = fixed_coefficients(spec);
    let records: Vec<PathRecord> = (0..paths)
        .into_par_iter()
        .map(|path| {
            let mut states = Vec::with_capacity((steps + 1) * dim);
            let mut controls = Vec::with_capacity(steps * n);
            let summary = run_path(spec, control, steps, seed, path, fixed.as_ref(), |_, s, u| {
                states.extend_from_slice(s);
                if let Some(u) = u {
                    controls.extend_from_slice(u);
                }
            });
            // Excluded paths keep their prefix; pad so the layout stays rectangular.
            states.resize((steps + 1) * dim, f64::NAN);
            controls.resize(steps * n, f64::NAN);
            PathRecord {
                states,
                controls,
                finite: summary.finite,
            }
        })
        .collect();
    let excluded = records.iter().filter(|r| !r.finite).count();
    let dt = spec.horizon() / steps as f64;
    let mut times: Vec<f64> = (0..=steps).map(|i| i as f64 * dt).collect();
    times[steps] = spec.horizon();
    Ok(PathBundle {
        times,
        state_dim: dim,
        n,
        domain: spec.domain(),
        paths: records,
        excluded,
        seed,
    })
}

/// Simulates paths keeping only terminal values.
pub fn simulate_terminal(
    spec: &MarketSpec,
    control: &dyn Control,
    steps: usize,
    paths: usize,
    seed: u64,
) -> Result<TerminalBundle> {
    check_args(steps, paths)?;
    let fixed = fixed_coefficients(spec);
    let summaries: Vec<PathSummary> = (0..paths)
        .into_par_iter()
        .map(|path| run_path(spec, control, steps, seed, path, fixed.as_ref(), |_, _, _| {}))
        .collect();
    let coord: Vec<f64> = summaries.iter().map(|s| s.coord).collect();
    let wealth = coord
        .iter()
        .map(|c| match spec.domain() {
            Domain::Reals => *c,
            Domain::Positive => c.exp(),
        })
        .collect();
    let finite: Vec<bool> = summaries.iter().map(|s| s.finite).collect();
    Ok(TerminalBundle {
        excluded: finite.iter().filter(|f| !**f).count(),
        coord,
        wealth,
        finite,
        max_quadratic_usage: summaries.iter().map(|s| s.max_usage).fold(0.0, f64::max),
        max_control_norm: summaries.iter().map(|s| s.max_norm).fold(0.0, f64::max),
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::super::tests::constant_config;
    use super::*;
    use crate::market::{Array, Coefficient};

    struct Constant(Vec<f64>);
    impl Control for Constant {
        fn control(&self, _: &StatePoint<'_>, out: &mut [f64]) {
            out.copy_from_slice(&self.0);
        }
    }

    fn mean_se(v: &[f64]) -> (f64, f64) {
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (mean, (var / n).sqrt())
    }

    #[test]
    fn zero_strategy_keeps_wealth() {
        let mut cfg = constant_config(2);
        cfg.initial_wealth = 3.5;
        cfg.eta_dim = 1;
        cfg.eta0 = vec![0.2];
        cfg.eta_stock_loading = Some(Coefficient::matrix(&[&[0.4, 0.1]]));
        cfg.eta_drift = Some(Coefficient::MeanReverting {
            speed: vec![1.0],
            level: vec![0.0],
        });
        for domain in [Domain::Reals, Domain::Positive] {
            cfg.domain = domain;
            let spec = MarketSpec::new(cfg.clone()).unwrap();
            let b = simulate_paths(&spec, &Constant(vec![0.0, 0.0]), 20, 10, 4).unwrap();
            for p in 0..10 {
                for s in 0..=20 {
                    assert!((b.wealth(p, s) - 3.5).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn arithmetic_mean_matches_drift() {
        let mut cfg = constant_config(2);
        cfg.domain = Domain::Reals;
        cfg.appreciation = Coefficient::vector(&[0.08, 0.06]);
        cfg.short_rate = Coefficient::scalar(0.01);
        cfg.volatility = Coefficient::Constant {
            value: Array::Matrix(vec![vec![0.2, 0.0], vec![0.05, 0.3]]),
        };
        let spec = MarketSpec::new(cfg).unwrap();
        let pi = vec![1.5, -0.5];
        let tb = simulate_terminal(&spec, &Constant(pi.clone()), 50, 20_000, 11).unwrap();
        let (mean, se) = mean_se(&tb.wealth);
        let expected = 1.0 + (1.5 * 0.07 - 0.5 * 0.05) * 1.0;
        assert!((mean - expected).abs() < 3.0 * se, "{mean} vs {expected} (se {se})");
    }

    #[test]
    fn log_coordinate_mean_matches_drift() {
        let mut cfg = constant_config(2);
        cfg.appreciation = Coefficient::vector(&[0.08, 0.06]);
        cfg.volatility = Coefficient::Constant {
            value: Array::Matrix(vec![vec![0.2, 0.0], vec![0.05, 0.3]]),
        };
        let spec = MarketSpec::new(cfg).unwrap();
        let pi = [0.8, 0.4];
        let tb = simulate_terminal(&spec, &Constant(pi.to_vec()), 25, 20_000, 5).unwrap();
        let (mean, se) = mean_se(&tb.coord);
        // p = v' pi
        let p = [0.2 * 0.8 + 0.05 * 0.4, 0.3 * 0.4];
        let expected = 0.08 * 0.8 + 0.06 * 0.4 - 0.5 * (p[0] * p[0] + p[1] * p[1]);
        assert!((mean - expected).abs() < 3.0 * se, "{mean} vs {expected} (se {se})");
        assert!(tb.wealth.iter().all(|w| *w > 0.0));
    }

    #[test]
    fn deterministic_under_seed() {
        let mut cfg = constant_config(2);
        cfg.eta_dim = 1;
        cfg.eta0 = vec![0.0];
        cfg.eta_stock_loading = Some(Coefficient::matrix(&[&[0.4, 0.1]]));
        let spec = MarketSpec::new(cfg).unwrap();
        let a = simulate_paths(&spec, &Constant(vec![0.3, 0.2]), 30, 17, 99).unwrap();
        let b = simulate_paths(&spec, &Constant(vec![0.3, 0.2]), 30, 17, 99).unwrap();
        for (x, y) in a.paths.iter().zip(&b.paths) {
            assert_eq!(
                x.states.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                y.states.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
            );
        }
        let c = simulate_paths(&spec, &Constant(vec![0.3, 0.2]), 30, 17, 100).unwrap();
        assert_ne!(a.paths[0].states, c.paths[0].states);
    }

    #[test]
    fn non_finite_paths_are_excluded() {
        struct Blowup;
        impl Control for Blowup {
            fn control(&self, s: &StatePoint<'_>, out: &mut [f64]) {
                out.fill(if s.t > 0.5 { f64::NAN } else { 0.1 });
            }
        }
        let spec = MarketSpec::new(constant_config(1)).unwrap();
        let tb = simulate_terminal(&spec, &Blowup, 10, 5, 1).unwrap();
        assert_eq!(tb.excluded, 5);
    }

    #[test]
    fn csv_has_row_per_path_step() {
        let spec = MarketSpec::new(constant_config(1)).unwrap();
        let b = simulate_paths(&spec, &Constant(vec![0.5]), 4, 3, 1).unwrap();
        let mut buf = Vec::new();
        b.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + 3 * 5);
    }
}
