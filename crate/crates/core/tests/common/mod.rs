#![allow(dead_code)]

use fundspan::market::{Array, Coefficient, CoefficientSet, Domain, MarketConfig, MarketSpec};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Two-stock constant market with `theta = (0.3, 0.25)`.
pub fn merton_config() -> MarketConfig {
    MarketConfig {
        stocks: 2,
        eta_dim: 0,
        zeta_dim: 0,
        aux_dim: 0,
        constraint_level: 1.0,
        horizon: 1.0,
        initial_wealth: 1.0,
        eta0: vec![],
        zeta0: vec![],
        domain: Domain::Positive,
        appreciation: Coefficient::vector(&[0.08, 0.0975]),
        volatility: Coefficient::matrix(&[&[0.2, 0.0], &[0.05, 0.25]]),
        short_rate: Coefficient::scalar(0.02),
        eta_drift: None,
        eta_stock_loading: None,
        eta_aux_loading: None,
        zeta_drift: None,
        zeta_aux_loading: None,
    }
}

pub fn merton() -> MarketSpec {
    MarketSpec::new(merton_config()).unwrap()
}

/// One OU factor on the reals driving the appreciation of `n` stocks.
pub fn factor_config(n: usize, domain: Domain) -> MarketConfig {
    let mut v = vec![vec![0.0; n]; n];
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = 0.2 + 0.03 * i as f64;
        if i > 0 {
            row[i - 1] = 0.05;
        }
    }
    let loading: Vec<f64> = (0..n).map(|i| if i == 0 { 0.15 } else if i == 1 { 0.05 } else { 0.0 }).collect();
    MarketConfig {
        stocks: n,
        eta_dim: 1,
        zeta_dim: 0,
        aux_dim: 1,
        constraint_level: 1.0,
        horizon: 1.0,
        initial_wealth: 1.0,
        eta0: vec![0.0],
        zeta0: vec![],
        domain,
        appreciation: Coefficient::Affine {
            base: Array::Vector((0..n).map(|i| 0.06 + 0.01 * i as f64).collect()),
            dy: vec![Array::Vector((0..n).map(|i| if i % 2 == 0 { 0.04 } else { 0.01 }).collect())],
            dz: vec![],
        },
        volatility: Coefficient::Constant { value: Array::Matrix(v) },
        short_rate: Coefficient::scalar(0.01),
        eta_drift: Some(Coefficient::MeanReverting {
            speed: vec![2.0],
            level: vec![0.0],
        }),
        eta_stock_loading: Some(Coefficient::Constant {
            value: Array::Matrix(vec![loading]),
        }),
        eta_aux_loading: Some(Coefficient::Constant {
            value: Array::Matrix(vec![vec![0.2]]),
        }),
        zeta_drift: None,
        zeta_aux_loading: None,
    }
}

/// Random matrix with singular values in `[0.5, 2]`.
pub fn well_conditioned(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let q1 = random_orthogonal(n, rng);
    let q2 = random_orthogonal(n, rng);
    let s = DMatrix::from_diagonal(&DVector::from_fn(n, |_, _| rng.random_range(0.5..2.0)));
    q1 * s * q2
}

pub fn random_orthogonal(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let m = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    m.qr().q()
}

pub fn random_vector(n: usize, scale: f64, rng: &mut ChaCha8Rng) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(-scale..scale))
}

/// Random coefficient set with a well-conditioned volatility.
pub fn random_coefficients(n: usize, m: usize, big_m: usize, aux: usize, rng: &mut ChaCha8Rng) -> CoefficientSet {
    let mut c = CoefficientSet::zeros(n, m, big_m, aux);
    c.v = well_conditioned(n, rng);
    c.r = rng.random_range(0.0..0.05);
    c.a_tilde = random_vector(n, 0.2, rng);
    c.a = c.a_tilde.add_scalar(c.r);
    c.f_eta = random_vector(m, 1.0, rng);
    c.beta_eta = DMatrix::from_fn(m, n, |_, _| rng.random_range(-0.5..0.5));
    c.beta_eta_tilde = DMatrix::from_fn(m, aux, |_, _| rng.random_range(-0.5..0.5));
    c.f_zeta = random_vector(big_m, 1.0, rng);
    c.beta_zeta_tilde = DMatrix::from_fn(big_m, aux, |_, _| rng.random_range(-0.5..0.5));
    c
}

/// Slope of `log |E_h - E_{h/2}|` against `log h` for the mean terminal
/// wealth under a constant position, steps 10/20/40/80, on a market whose
/// drift follows a mean-reverting factor.
pub fn weak_convergence_slope(paths: usize, seed: u64) -> (f64, Vec<f64>) {
    use fundspan::market::{simulate_terminal, Control, StatePoint};
    struct Hold(Vec<f64>);
    impl Control for Hold {
        fn control(&self, _: &StatePoint<'_>, out: &mut [f64]) {
            out.copy_from_slice(&self.0);
        }
    }
    let cfg = MarketConfig {
        stocks: 1,
        eta_dim: 1,
        zeta_dim: 0,
        aux_dim: 1,
        constraint_level: 1.0,
        horizon: 1.0,
        initial_wealth: 1.0,
        eta0: vec![1.0],
        zeta0: vec![],
        domain: Domain::Reals,
        appreciation: Coefficient::Affine {
            base: Array::Vector(vec![0.05]),
            dy: vec![Array::Vector(vec![0.5])],
            dz: vec![],
        },
        volatility: Coefficient::matrix(&[&[0.01]]),
        short_rate: Coefficient::scalar(0.0),
        eta_drift: Some(Coefficient::MeanReverting {
            speed: vec![2.0],
            level: vec![0.0],
        }),
        eta_stock_loading: Some(Coefficient::matrix(&[&[0.01]])),
        eta_aux_loading: Some(Coefficient::matrix(&[&[0.01]])),
        zeta_drift: None,
        zeta_aux_loading: None,
    };
    let spec = MarketSpec::new(cfg).unwrap();
    let steps = [10usize, 20, 40, 80];
    let means: Vec<f64> = steps
        .iter()
        .map(|s| {
            let t = simulate_terminal(&spec, &Hold(vec![1.0]), *s, paths, seed).unwrap();
            t.coord.iter().sum::<f64>() / paths as f64
        })
        .collect();
    let diffs: Vec<f64> = means.windows(2).map(|w| (w[0] - w[1]).abs()).collect();
    let xs: Vec<f64> = steps[..3].iter().map(|s| (1.0 / *s as f64).ln()).collect();
    let ys: Vec<f64> = diffs.iter().map(|d| d.ln()).collect();
    let mx = xs.iter().sum::<f64>() / 3.0;
    let my = ys.iter().sum::<f64>() / 3.0;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    (sxy / sxx, diffs)
}
