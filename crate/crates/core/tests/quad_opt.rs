use fundspan::market::Domain;
use fundspan::quad_opt::{brute_force_ball, grid_tolerance, solve_ball, solve_g0, BallCase, BallProblem};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

mod common;

fn problem() -> impl Strategy<Value = BallProblem> {
    (1usize..=3)
        .prop_flat_map(|n| {
            (
                -2.0..2.0f64,
                proptest::collection::vec(-3.0..3.0f64, n),
                0.1..3.0f64,
                prop::bool::weighted(0.1),
                prop::bool::weighted(0.1),
            )
        })
        .prop_map(|(alpha, b, rho, zero_b, zero_alpha)| {
            let b = if zero_b { vec![0.0; b.len()] } else { b };
            let alpha = if zero_alpha { 0.0 } else { alpha };
            BallProblem::new(alpha, DVector::from_vec(b), rho)
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn closed_form_beats_grid(p in problem()) {
        let sol = solve_ball(&p, None).unwrap();
        let g = if p.b.len() == 3 { 31 } else { 81 };
        let (_, brute) = brute_force_ball(&p, g).unwrap();
        prop_assert!(sol.objective >= brute - grid_tolerance(&p, g));
        prop_assert!(sol.p.norm() <= p.rho * (1.0 + 1e-12));
    }

    #[test]
    fn collinear_when_not_degenerate(p in problem()) {
        let sol = solve_ball(&p, None).unwrap();
        if sol.case != BallCase::DegenerateBoundary {
            for i in 0..p.b.len() {
                prop_assert_eq!(sol.p[i], sol.k * p.b[i]);
            }
        } else {
            prop_assert!((sol.p.norm() - p.rho).abs() < 1e-12);
        }
    }

    #[test]
    fn no_sampled_point_is_better(p in problem(), dirs in proptest::collection::vec(proptest::collection::vec(-1.0..1.0f64, 3), 50)) {
        let sol = solve_ball(&p, None).unwrap();
        let n = p.b.len();
        for d in dirs {
            let mut q = DVector::from_vec(d[..n].to_vec());
            if q.norm() > p.rho {
                q *= p.rho / q.norm();
            }
            prop_assert!(p.objective(&q) <= sol.objective + 1e-12 * (1.0 + sol.objective.abs()));
        }
    }
}

#[test]
fn degenerate_follows_tiebreak() {
    let p = BallProblem::new(-1.0, DVector::zeros(2), 2.0);
    let t = DVector::from_vec(vec![3.0, 4.0]);
    let s = solve_ball(&p, Some(&t)).unwrap();
    assert_eq!(s.case, BallCase::DegenerateBoundary);
    assert!((s.p[0] - 1.2).abs() < 1e-15 && (s.p[1] - 1.6).abs() < 1e-15);
}

#[test]
fn g0_log_coordinates_recover_merton_fraction() {
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(3);
    let c = common::random_coefficients(3, 0, 0, 0, &mut rng);
    // J = q + c(T - t): J_x = 1, J_xx = 0.
    let s = solve_g0(1.0, 0.0, &[], &c, 100.0, Domain::Positive, &DVector::from_element(3, 1.0)).unwrap();
    let v_inv = c.v.clone().try_inverse().unwrap();
    let q_a = v_inv.transpose() * (&v_inv * &c.a_tilde);
    assert!((&s.u - &q_a).norm() < 1e-12 * q_a.norm());
    assert_eq!(s.case, BallCase::Interior);
    let theta = &v_inv * &c.a_tilde;
    assert!((s.value - 0.5 * theta.norm_squared()).abs() < 1e-12);
}

#[test]
fn g0_respects_constraint_and_span() {
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(5);
    for _ in 0..200 {
        let c = common::random_coefficients(4, 1, 0, 1, &mut rng);
        let k = 0.3;
        let jxy = [rand::Rng::random_range(&mut rng, -1.0..1.0)];
        let s = solve_g0(0.7, -0.4, &jxy, &c, k, Domain::Reals, &DVector::from_element(4, 1.0)).unwrap();
        let p = c.v.transpose() * &s.u;
        assert!(p.norm_squared() <= k * (1.0 + 1e-12));
        let v_inv = c.v.clone().try_inverse().unwrap();
        let psi1 = v_inv.transpose() * c.beta_eta.row(0).transpose();
        let psi2 = v_inv.transpose() * (&v_inv * &c.a_tilde);
        let f = DMatrix::from_columns(&[psi1, psi2]);
        let coef = f.clone().svd(true, true).solve(&s.u, 1e-14).unwrap();
        assert!((&f * coef - &s.u).norm() <= 1e-10 * s.u.norm());
    }
}
