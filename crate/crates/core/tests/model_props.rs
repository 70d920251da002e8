use langevin_homog::model_spec::{AMode, FrictionSource, MatrixSource, ModelSource, ModelSpec, NoiseSource, Order};
use proptest::prelude::*;

fn scaled_2d(c: f64, b1: f64, powers: Vec<u32>, coeffs: Vec<String>) -> ModelSpec {
    let s = ModelSource {
        n: 2,
        kinetic: langevin_homog::model_spec::KineticSource { powers, coeffs },
        a: MatrixSource {
            mode: AMode::Full,
            entries: vec![
                "2+sin(q1)".into(),
                format!("{c}*cos(q2+t)"),
                format!("{c}*cos(q2+t)"),
                "1.5+0.5*cos(q1*q2)".into(),
            ],
        },
        psi: vec!["0".into(), "0".into()],
        v: "0".into(),
        friction: FrictionSource::Scaled { b2: "1+0.5*q1^2".into() },
        noise: NoiseSource::Fd { b1: format!("{b1}+sin(t+q2)") },
        forcing: None,
        lambda_floor: 0.1,
    };
    ModelSpec::from_source(&s).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn scaled_noise_and_friction_commute(
        c in -0.5..0.5f64, b1 in 1.5..4.0f64, t in 0.0..2.0f64, q1 in -3.0..3.0f64, q2 in -3.0..3.0f64,
    ) {
        let spec = scaled_2d(c, b1, vec![1], vec!["1".into()]);
        let b = spec.eval_coeffs(t, &[q1, q2], Order::First).unwrap();
        let comm = &b.sigma_cov * b.gamma.transpose() - &b.gamma * &b.sigma_cov;
        let scale = b.sigma_cov.abs().max() * b.gamma.abs().max();
        prop_assert!(comm.abs().max() <= 1e-14 * scale, "{}", comm.abs().max());
    }

    #[test]
    fn kinetic_zeta_derivatives(
        d1 in 0.2..3.0f64, d3 in 0.01..1.0f64, zeta in 0.01..50.0f64, q1 in -3.0..3.0f64,
    ) {
        let spec = scaled_2d(0.1, 2.0, vec![1, 2, 3], vec![format!("{d1}+0.1*sin(q1)"), "0.5*cos(q2)^2".into(), d3.to_string()]);
        let q = [q1, 0.4];
        let v = spec.kinetic_eval(0.2, &q, zeta).unwrap();
        let h = 1e-5 * zeta.max(1.0);
        let at = |z: f64| spec.kinetic_eval(0.2, &q, z).unwrap();
        let (a, b) = (at(zeta + h), at(zeta - h));
        let fd_k = (a.k - b.k) / (2.0 * h);
        let fd_kp = (a.kp - b.kp) / (2.0 * h);
        prop_assert!((fd_k - v.kp).abs() <= 1e-8 * v.kp.abs(), "{fd_k} vs {}", v.kp);
        prop_assert!((fd_kp - v.kpp).abs() <= 1e-8 * v.kpp.abs().max(v.kp.abs()), "{fd_kp} vs {}", v.kpp);
    }
}
