mod common;

use langevin_homog::linear_diag::{detailed_balance_residual, oscillatory_part, solve_lyapunov, LinearModel};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn frob(m: &DMatrix<f64>) -> f64 {
    m.norm()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn lyapunov_residual_is_small(seed in any::<u64>(), n in 1usize..=6) {
        let mut r = common::Rng::new(seed);
        let g = r.stable(n, 0.2);
        let s = r.spd(n, 0.1);
        let model = LinearModel::new(g.clone(), s.clone()).unwrap();
        let l = solve_lyapunov(&model).unwrap();
        prop_assume!(l.m.clone().try_inverse().is_some_and(|mi| frob(&mi) * frob(&l.m) < 1e6));
        prop_assert!(l.residual < 1e-10 * frob(&s).max(1.0), "{}", l.residual);
    }

    #[test]
    fn detailed_balance_iff_no_oscillatory_part(seed in any::<u64>(), n in 2usize..=4, db in any::<bool>()) {
        let mut r = common::Rng::new(seed);
        let s = r.spd(n, 0.2);
        let q = r.spd(n, 0.2);
        // γ = Σ(Q + J): detailed balance exactly when J = 0
        let mut j = r.matrix(n, -1.0, 1.0);
        j = (&j - j.transpose()) * 0.5;
        if j.norm() < 0.1 {
            j[(0, 1)] += 0.5;
            j[(1, 0)] -= 0.5;
        }
        let g = if db { &s * &q } else { &s * (&q + &j) };
        let model = LinearModel::new(g, s.clone()).unwrap();
        let m = solve_lyapunov(&model).unwrap().m;
        let nn = frob(&oscillatory_part(&model, &m).unwrap());
        let dbr = detailed_balance_residual(&model);
        let tol = 1e-10 * frob(&s).powi(2).max(1.0);
        prop_assert_eq!(dbr < tol, nn < 1e-10 * frob(&s).max(1.0), "db residual {} N {}", dbr, nn);
        prop_assert_eq!(db, dbr < tol);
    }
}

#[test]
fn lyapunov_matches_integral_formula() {
    let mut r = common::Rng::new(11);
    for _ in 0..5 {
        let g = r.stable(3, 0.5);
        let s = r.spd(3, 0.1);
        let l = solve_lyapunov(&LinearModel::new(g.clone(), s.clone()).unwrap()).unwrap();
        let oracle = common::lyapunov_by_quadrature(&g, &s);
        assert!((&l.m - &oracle).abs().max() < 1e-8, "{}", (&l.m - &oracle).abs().max());
    }
}
