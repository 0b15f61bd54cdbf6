use jumpflow::levy::{Atom, LevyMeasure};
use jumpflow::model::log_gap;
use jumpflow::{ModelSpec, SmoothProbe};
use proptest::prelude::*;

fn atom_model() -> ModelSpec {
    ModelSpec::builder()
        .gamma0(|_, x| -x)
        .gamma1(|x| x)
        .gamma2(|x| x)
        .mu(LevyMeasure::atomic(vec![Atom {
            location: 1.0,
            mass: 1.0,
        }])
        .unwrap())
        .build()
        .unwrap()
}

fn jump_model(scale: f64) -> ModelSpec {
    ModelSpec::builder()
        .gamma0(|s, x| (1.0 + s) * (1.0 - x))
        .gamma1(|x| x)
        .gamma2(|x| x.sqrt())
        .b1(move |s| scale * (1.0 + s * s))
        .b2(move |s| scale * (2.0 + s.sin()))
        .mu(LevyMeasure::tempered(1.5, 1.0).unwrap())
        .build()
        .unwrap()
}

fn feller() -> ModelSpec {
    ModelSpec::builder().gamma1(|x| x).build().unwrap()
}

#[test]
fn identity_probe_returns_drift() {
    let m = jump_model(1.0);
    for &(s, x) in &[(0.1, 0.5), (2.0, 3.0), (0.0, 1e-3)] {
        let v = m.generator_apply(s, x, &SmoothProbe::identity()).unwrap();
        assert!((v - m.gamma0(s, x)).abs() <= 1e-12 * (1.0 + v.abs()));
    }
}

#[test]
fn square_probe_on_atom_model() {
    let v = atom_model()
        .generator_apply(0.3, 1.0, &SmoothProbe::power(2.0))
        .unwrap();
    assert!((v - 1.0).abs() < 1e-10, "{v}");
}

#[test]
fn constant_probe_is_annihilated() {
    let m = jump_model(1.0);
    assert_eq!(
        m.generator_apply(1.0, 2.0, &SmoothProbe::constant(5.0))
            .unwrap(),
        0.0
    );
}

#[test]
fn negative_state_is_a_domain_error() {
    assert!(atom_model()
        .generator_apply(0.0, -1.0, &SmoothProbe::identity())
        .is_err());
}

#[test]
fn h_kernel_examples() {
    assert!((feller().h_kernel(0.7, 2.0).unwrap() - 0.5).abs() < 1e-15);
    let jumps = ModelSpec::builder()
        .gamma2(|x| x)
        .mu(LevyMeasure::atomic(vec![Atom {
            location: 1.0,
            mass: 1.0,
        }])
        .unwrap())
        .build()
        .unwrap();
    let h = jumps.h_kernel(0.0, 1.0).unwrap();
    assert!((h - (1.0 - 2f64.ln())).abs() < 1e-10, "{h}");
}

#[test]
fn h_rho_examples() {
    let m = feller();
    assert!((m.h_rho_kernel(1.0, 4.0, 0.5).unwrap() - 0.25).abs() < 1e-15);
    let drift = ModelSpec::builder().gamma0(|_, x| 2.0 * x).build().unwrap();
    for &x in &[0.1, 1.0, 7.0] {
        let v = drift.h_rho_kernel(0.5, x, 0.3).unwrap();
        assert!((v + x.powf(-0.7) * 2.0 * x).abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn generator_is_linear(a in -3.0f64..3.0, b in -3.0f64..3.0, s in 0.0f64..3.0, x in 0.05f64..5.0) {
        let m = jump_model(1.0);
        let f = SmoothProbe::new(|x| (-x).exp(), |x| -(-x).exp(), |x| (-x).exp());
        let g = SmoothProbe::power(2.0);
        let lhs = m.generator_apply(s, x, &SmoothProbe::combine(a, &f, b, &g)).unwrap();
        let rhs = a * m.generator_apply(s, x, &f).unwrap() + b * m.generator_apply(s, x, &g).unwrap();
        let tol = 10.0 * m.mu().quadrature_tol() * (1.0 + lhs.abs() + rhs.abs());
        prop_assert!((lhs - rhs).abs() <= tol, "{} {}", lhs, rhs);
    }

    #[test]
    fn h_kernel_nonnegative_and_linear_in_modulation(s in 0.0f64..5.0, x in 1e-3f64..100.0) {
        let h1 = jump_model(1.0).h_kernel(s, x).unwrap();
        let h2 = jump_model(2.0).h_kernel(s, x).unwrap();
        prop_assert!(h1 >= 0.0);
        prop_assert!((h2 - 2.0 * h1).abs() <= 1e-12 * h2.abs());
    }

    #[test]
    fn h_jump_term_matches_closed_form_on_atoms(x in 1e-2f64..50.0, z1 in 0.1f64..5.0, z2 in 0.1f64..5.0) {
        let atoms = vec![Atom { location: z1, mass: 0.7 }, Atom { location: z2, mass: 1.3 }];
        let m = ModelSpec::builder().gamma2(|x| x).mu(LevyMeasure::atomic(atoms).unwrap()).build().unwrap();
        let got = m.h_kernel(0.0, x).unwrap();
        let want = x * (0.7 * log_gap(x, z1) + 1.3 * log_gap(x, z2));
        prop_assert!((got - want).abs() <= 1e-8 * want, "{} {}", got, want);
    }
}
