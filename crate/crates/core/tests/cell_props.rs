use langevin_homog::cell_problem::{residual_of, solve, uniform_grid, CellProblem, PolyG};
use langevin_homog::gibbs::RadialQuadrature;
use langevin_homog::model_spec::FrozenKinetic;
use proptest::prelude::*;

fn kinetic(n: usize, powers: Vec<u32>, d: &[f64]) -> FrozenKinetic {
    let mut k = FrozenKinetic::new(n, powers);
    for (x, y) in k.d.iter_mut().zip(d) {
        *x = *y;
    }
    k
}

fn poly(n: usize, c: &[f64]) -> PolyG {
    PolyG { exps: vec![1, 2, 3], coeffs: (0..n).map(|i| c[3 * i..3 * i + 3].to_vec()).collect() }
}

fn setup() -> impl Strategy<Value = (usize, Vec<u32>, Vec<f64>, f64)> {
    (
        1usize..=3,
        prop_oneof![Just(vec![1u32]), Just(vec![2]), Just(vec![1, 2])],
        proptest::collection::vec(0.3..2.0f64, 2),
        0.5..2.0f64,
    )
}

fn max_diff(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter().flatten().zip(b.iter().flatten()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn scale(a: &[Vec<f64>]) -> f64 {
    a.iter().flatten().map(|x| x.abs()).fold(1.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn solution_is_linear_in_the_source(
        (n, powers, d, beta) in setup(),
        c1 in proptest::collection::vec(-1.0..1.0f64, 9),
        c2 in proptest::collection::vec(-1.0..1.0f64, 9),
        a in -2.0..2.0f64, b in -2.0..2.0f64,
    ) {
        let kin = kinetic(n, powers, &d);
        let quad = RadialQuadrature::default();
        let grid = uniform_grid(0.0, 6.0, 0.05);
        let p = |g: PolyG| CellProblem { n, beta, b1: 1.3, kinetic: kin.clone(), g };
        let (g1, g2) = (poly(n, &c1), poly(n, &c2));
        let s1 = solve(&p(g1.clone()), &grid, &quad, 0.0, &[]).unwrap();
        let s2 = solve(&p(g2.clone()), &grid, &quad, 0.0, &[]).unwrap();
        let s = solve(&p(g1.combine(a, &g2, b)), &grid, &quad, 0.0, &[]).unwrap();
        let comb: Vec<Vec<f64>> = s1.chi.iter().zip(&s2.chi)
            .map(|(x, y)| x.iter().zip(y).map(|(x, y)| a * x + b * y).collect())
            .collect();
        prop_assert!(max_diff(&s.chi, &comb) <= 1e-10 * scale(&comb), "{}", max_diff(&s.chi, &comb));
        let r = residual_of(&p(g1.combine(a, &g2, b)), &s);
        prop_assert!(r.max_residual < 1e-6 || r.inconclusive, "{r:?}");
    }

    #[test]
    fn constant_shift_of_the_source_is_absorbed(
        (n, powers, d, beta) in setup(),
        c in proptest::collection::vec(-1.0..1.0f64, 9),
        shift in proptest::collection::vec(-3.0..3.0f64, 3),
    ) {
        let kin = kinetic(n, powers, &d);
        let quad = RadialQuadrature::default();
        let grid = uniform_grid(0.0, 6.0, 0.05);
        let g = poly(n, &c);
        let k = PolyG { exps: vec![0], coeffs: (0..n).map(|i| vec![shift[i]]).collect() };
        let p = |g: PolyG| CellProblem { n, beta, b1: 0.8, kinetic: kin.clone(), g };
        let base = solve(&p(g.clone()), &grid, &quad, 0.0, &[]).unwrap();
        let moved = solve(&p(g.combine(1.0, &k, 1.0)), &grid, &quad, 0.0, &[]).unwrap();
        prop_assert!(max_diff(&base.chi, &moved.chi) <= 1e-10 * scale(&base.chi), "{}", max_diff(&base.chi, &moved.chi));
        for (i, s) in shift.iter().take(n).enumerate() {
            prop_assert!((moved.meta.g_tilde[i] - base.meta.g_tilde[i] - s).abs() < 1e-10);
        }
    }
}
