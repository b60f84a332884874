use fundspan::funds::{compute_q, decompose, fund_directions, mu_of, BasisTag};
use fundspan::market::{build_a, build_b, check_ellipticity, lambda_min_sym, MarketSpec, WitnessMethod};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

mod common;

#[test]
fn q_times_v_is_inverse_transpose() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..100 {
        let n = rng.random_range(1..=5);
        let v = common::well_conditioned(n, &mut rng);
        let q = compute_q(&v).unwrap();
        let target = v.transpose().try_inverse().unwrap();
        assert!((q * &v - target).amax() <= 1e-10);
    }
}

#[test]
fn decompose_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..100 {
        let n = rng.random_range(2..=5);
        let k = rng.random_range(1..=n);
        let basis = common::well_conditioned(n, &mut rng);
        let funds: Vec<DVector<f64>> = (0..k).map(|j| basis.column(j).into_owned()).collect();
        let coef = common::random_vector(k, 2.0, &mut rng);
        let u = funds.iter().zip(coef.iter()).fold(DVector::zeros(n), |acc, (f, c)| acc + f * *c);
        let d = decompose(&u, &funds).unwrap();
        assert!((d.coefficients - &coef).amax() <= 1e-9);
        assert!(d.relative_residual <= 1e-10, "{}", d.relative_residual);
    }
}

#[test]
fn build_a_block_layout() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..100 {
        let (n, m, big_m, aux) = (
            rng.random_range(1..=4),
            rng.random_range(0..=2),
            rng.random_range(0..=2),
            rng.random_range(0..=2),
        );
        let aux = if big_m > 0 { aux.max(1) } else { aux };
        let c = common::random_coefficients(n, m, big_m, aux, &mut rng);
        let u = common::random_vector(n, 1.0, &mut rng);
        let a = build_a(&c, &u);
        assert_eq!(a.shape(), (1 + m + big_m, n + aux));
        let top = u.transpose() * &c.v;
        for j in 0..n {
            assert_eq!(a[(0, j)], top[j]);
        }
        for j in 0..aux {
            assert_eq!(a[(0, n + j)], 0.0);
        }
        for i in 0..m {
            for j in 0..n {
                assert_eq!(a[(1 + i, j)], c.beta_eta[(i, j)]);
            }
            for j in 0..aux {
                assert_eq!(a[(1 + i, n + j)], c.beta_eta_tilde[(i, j)]);
            }
        }
        for i in 0..big_m {
            for j in 0..n {
                assert_eq!(a[(1 + m + i, j)], 0.0);
            }
            for j in 0..aux {
                assert_eq!(a[(1 + m + i, n + j)], c.beta_zeta_tilde[(i, j)]);
            }
        }
        assert_eq!(a.rows(1, m + big_m).into_owned(), build_b(&c));
    }
}

#[test]
fn ellipticity_witness_meets_bound() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..100 {
        let n = rng.random_range(2..=4);
        let m = rng.random_range(1..n);
        let c = common::random_coefficients(n, m, 0, m, &mut rng);
        let k = rng.random_range(0.1..2.0);
        let b = build_b(&c);
        let c1 = lambda_min_sym(&(&b * b.transpose())).unwrap();
        let w = check_ellipticity(&c, k).unwrap();
        assert_eq!(w.method, WitnessMethod::Orthogonal);
        assert!(w.lambda_min >= k.min(c1) * (1.0 - 1e-6), "{} < min({k}, {c1})", w.lambda_min);
        let p = c.v.transpose() * &w.witness_u;
        assert!((p.norm_squared() - k).abs() < 1e-9 * k);
    }
}

#[test]
fn fund_count_and_basis() {
    assert_eq!(mu_of(0, 3), 1);
    assert_eq!(mu_of(1, 4), 2);
    assert_eq!(mu_of(3, 3), 3);
    let spec = MarketSpec::new(common::factor_config(4, fundspan::market::Domain::Positive)).unwrap();
    let c = spec.eval_coefficients(&[0.3], &[], 0.0).unwrap();
    let f = fund_directions(&c).unwrap();
    assert_eq!((f.mu, f.basis), (2, BasisTag::FactorFunds));
    let spec = MarketSpec::new(common::factor_config(2, fundspan::market::Domain::Positive)).unwrap();
    let f = fund_directions(&spec.eval_coefficients(&[0.3], &[], 0.0).unwrap()).unwrap();
    assert_eq!((f.mu, f.basis), (2, BasisTag::StandardBasis));
}
