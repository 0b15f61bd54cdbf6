use jumpflow::coupling::*;
use jumpflow::levy::{Atom, LevyMeasure};
use jumpflow::model::SmoothProbe;
use jumpflow::simulate::{simulate_path, SimConfig};
use jumpflow::stats::{ks_critical_two_sample, ks_two_sample};
use jumpflow::{Error, ModelSpec};
use proptest::prelude::*;

fn logistic() -> ModelSpec {
    ModelSpec::logistic(1.0, 1.0, 0.0, LevyMeasure::none()).unwrap()
}

fn jump_model() -> ModelSpec {
    ModelSpec::cb(0.5, LevyMeasure::exponential(2.0, 1.5).unwrap()).unwrap()
}

fn b1_toy() -> ModelSpec {
    ModelSpec::builder()
        .gamma0(|_, x| -x)
        .gamma1(|x| x)
        .weight(SmoothProbe::identity())
        .build()
        .unwrap()
}

fn b2_model(mu: LevyMeasure) -> ModelSpec {
    ModelSpec::builder()
        .gamma0(|_, x| 1.0 - x)
        .gamma2(|x| x)
        .mu(mu)
        .weight(SmoothProbe::identity())
        .build()
        .unwrap()
}

fn cfg(t_end: f64, seed: u64) -> SimConfig {
    SimConfig {
        dt: 1e-2,
        t_end,
        master_seed: seed,
        ..SimConfig::default()
    }
}

#[test]
fn equal_starts_are_coupled_at_once() {
    for m in [logistic(), jump_model()] {
        let p = simulate_coupled(&m, 0.7, 0.7, 0.5, &cfg(3.0, 1), 4).unwrap();
        assert_eq!(p.coupling_time, Some(0.5));
        assert!(p.merged);
        assert_eq!(p.x_states, p.y_states);
    }
}

#[test]
fn paths_agree_bitwise_after_merge() {
    for m in [logistic(), jump_model()] {
        let mut merged = 0;
        for i in 0..200 {
            let p = simulate_coupled(&m, 0.5, 2.0, 0.0, &cfg(10.0, 2), i).unwrap();
            assert_eq!(p.times.len(), p.x_states.len());
            if let Some(tc) = p.coupling_time {
                merged += 1;
                let k = p.index_at(tc);
                assert!(p.x_states[k..]
                    .iter()
                    .zip(&p.y_states[k..])
                    .all(|(x, y)| x.to_bits() == y.to_bits()));
                assert!(p.x_states[..k]
                    .iter()
                    .zip(&p.y_states[..k])
                    .all(|(x, y)| x != y));
            }
        }
        assert!(merged > 100, "{merged}");
    }
}

#[test]
fn atomic_jump_measure_is_rejected() {
    let mu = LevyMeasure::atomic(vec![Atom {
        location: 1.0,
        mass: 1.0,
    }])
    .unwrap();
    let m = ModelSpec::cb(1.0, mu).unwrap();
    assert!(matches!(
        simulate_coupled(&m, 1.0, 2.0, 0.0, &cfg(1.0, 3), 0),
        Err(Error::UnsupportedMeasure(_))
    ));
}

#[test]
fn coupled_marginal_matches_plain_simulation() {
    let n = 20_000;
    for m in [logistic(), jump_model()] {
        let c = cfg(1.0, 5);
        let coupled: Vec<f64> = (0..n)
            .map(|i| {
                *simulate_coupled(&m, 0.5, 2.0, 0.0, &c, i)
                    .unwrap()
                    .x_states
                    .last()
                    .unwrap()
            })
            .collect();
        let plain: Vec<f64> = (0..n)
            .map(|i| {
                *simulate_path(&m, 0.5, &c, i)
                    .unwrap()
                    .states
                    .last()
                    .unwrap()
            })
            .collect();
        let d = ks_two_sample(&coupled, &plain).unwrap();
        assert!(
            d < ks_critical_two_sample(n as usize, n as usize, 0.01),
            "{}: D = {d}",
            m.name()
        );
    }
}

#[test]
fn logistic_pairs_couple_by_time_ten() {
    let m = logistic();
    let c = SimConfig {
        dt: 1e-3,
        ..cfg(10.0, 7)
    };
    let n = 10_000;
    let hits = (0..n)
        .filter(|&i| {
            simulate_coupled(&m, 0.5, 2.0, 0.0, &c, i)
                .unwrap()
                .coupling_time
                .is_some_and(|t| t <= 10.0)
        })
        .count();
    assert!(hits as f64 / n as f64 >= 0.95, "{hits}");
}

#[test]
fn unweighted_bound_counts_uncoupled_pairs() {
    let m = jump_model();
    let t = [0.5, 1.0, 2.0, 4.0];
    let w = estimate_wv_bound(
        &m,
        0.5,
        2.0,
        0.0,
        &t,
        500,
        &WeightedMetric::zero(),
        &cfg(4.0, 8),
    )
    .unwrap();
    assert_eq!(w.initial, 2.0);
    for (e, u) in w.estimates.iter().zip(&w.uncoupled) {
        assert!((e.mean - 2.0 * u).abs() < 1e-12);
        assert!((0.0..=2.0).contains(&e.mean));
    }
    let same = estimate_wv_bound(
        &m,
        1.0,
        1.0,
        0.0,
        &t,
        100,
        &WeightedMetric::from_model(&m),
        &cfg(4.0, 8),
    )
    .unwrap();
    assert!(same.estimates.iter().all(|e| e.mean == 0.0));
    assert!(estimate_wv_bound(
        &m,
        1.0,
        2.0,
        1.0,
        &t,
        100,
        &WeightedMetric::zero(),
        &cfg(4.0, 8)
    )
    .is_err());
}

#[test]
fn weighted_bound_decays_on_logistic_model() {
    let m = logistic();
    let t = [1.0, 2.0, 4.0, 8.0];
    let w = estimate_wv_bound(
        &m,
        0.5,
        2.0,
        0.0,
        &t,
        2000,
        &WeightedMetric::from_model(&m),
        &cfg(8.0, 9),
    )
    .unwrap();
    let (first, last) = (&w.estimates[0], &w.estimates[3]);
    assert!(last.mean <= first.mean + 3.0 * first.stderr.hypot(last.stderr));
    assert!(w.estimates.iter().all(|e| e.mean >= 0.0));
}

#[test]
fn fit_examples() {
    let t: Vec<f64> = (1..=10).map(|k| 0.3 * k as f64).collect();
    let d: Vec<f64> = t.iter().map(|t| (-0.3 * t * t / 2.0).exp()).collect();
    let fit = fit_contraction_rate(&t, &d, &|s| s, 0.0).unwrap();
    assert!(
        (fit.c1 - 0.3).abs() < 1e-6 && fit.residual < 1e-6,
        "{fit:?}"
    );

    let d: Vec<f64> = t.iter().map(|t| 3.0 * (-0.7 * t).exp()).collect();
    let a = fit_contraction_rate(&t, &d, &|_| 1.0, 0.0).unwrap();
    let b = fit_contraction_rate(&t, &d, &|_| 4.0, 0.0).unwrap();
    assert!((b.c1 - a.c1 / 4.0).abs() < 1e-10);
    assert!((a.normalized_c0(2.0) - 1.5).abs() < 1e-8);
    assert!(matches!(
        fit_contraction_rate(&t[..2], &d[..2], &|_| 1.0, 0.0),
        Err(Error::DegenerateFit(_))
    ));
}

#[test]
fn drift_only_difference_probe() {
    let m = ModelSpec::builder()
        .gamma0(|s, x| (1.0 + s) * x.sin() + 0.5)
        .build()
        .unwrap();
    let probe = Separable {
        f1: SmoothProbe::identity(),
        f2: SmoothProbe::combine(
            0.0,
            &SmoothProbe::identity(),
            -1.0,
            &SmoothProbe::identity(),
        ),
    };
    for &(s, x, y) in &[(0.0, 1.0, 2.0), (1.5, 0.3, 0.1), (3.0, 5.0, 5.5)] {
        let v = coupling_generator_apply(&m, s, x, y, &probe).unwrap();
        assert!((v - (m.gamma0(s, x) - m.gamma0(s, y))).abs() < 1e-12);
    }
}

#[test]
fn concave_distance_has_nonpositive_jump_part() {
    let m = ModelSpec::builder()
        .gamma2(|x| x)
        .mu(LevyMeasure::tempered(0.8, 1.0).unwrap())
        .build()
        .unwrap();
    let f = SmoothProbe::new(
        |r: f64| 1.0 - (-r).exp(),
        |r: f64| (-r).exp(),
        |r: f64| -(-r).exp(),
    );
    let probe = DistanceProbe { f };
    for &(x, y) in &[(1.0, 0.5), (0.2, 3.0), (2.0, 2.5), (0.0, 1.0)] {
        let parts = coupling_generator_parts(&m, 1.0, x, y, &probe).unwrap();
        assert!(parts.jump <= 1e-10, "({x}, {y}): {parts:?}");
    }
}

#[test]
fn b1_certificate_examples() {
    let m = b1_toy();
    let l = 2.0;
    let cert = build_certificate_b1(
        &m,
        l,
        &B1Constants {
            k0: 1.0,
            k1: 1.0,
            sigma: 1.0,
            estimated: false,
        },
    )
    .unwrap();
    assert!((cert.c_l - (1.0 + 5f64.sqrt()) / 2.0).abs() < 1e-9);
    let f = cert.f_l().unwrap();
    assert_eq!(f.f(0.0), 2.0);
    let mut x = 1e-4;
    while x <= l {
        assert!(f.d1(x) > 0.0 && f.d2(x) < 0.0, "{x}");
        x *= 1.1;
    }
    for i in 0..100 {
        for j in 0..100 {
            let (x, y) = (0.07 * i as f64, 0.07 * j as f64 + 1e-3);
            let v = cert.value(x, y);
            assert!((2.0..=3.0).contains(&v), "{x} {y} {v}");
        }
    }
    assert_eq!(cert.value(1.0, 1.0), 0.0);
    let rep = verify_certificate(
        &m,
        &cert,
        LyapunovPair {
            lambda1: 1.0,
            lambda2: 0.0,
        },
        &CertificateGrid::default(),
    )
    .unwrap();
    assert!(
        rep.lambda_l >= (-cert.c_l * l).exp() / 3.0,
        "{}",
        rep.lambda_l
    );
    assert_eq!(rep.verdict, CertifiedVerdict::Certified);
    assert!(rep.lyapunov.lambda2 <= 1e-12);
}

#[test]
fn b2_certificate_examples() {
    let m = b2_model(LevyMeasure::power(1.5, 1.0).unwrap());
    let l = 2.0;
    let grid = CertificateGrid::default();
    let consts = estimate_b2_constants(&m, l, 0.8, &grid).unwrap();
    assert!(consts.estimated && consts.kappa0 > 0.0);
    let x0 = 0.5;
    let cert = build_certificate_b2(&m, l, x0, None, &consts).unwrap();
    let (phi, psi) = (cert.phi().unwrap(), cert.psi().unwrap());
    assert!((phi.f(x0) - cert.theta).abs() < 1e-12);
    assert!((phi.f(0.0) - cert.theta - 1.0).abs() < 1e-12);
    assert_eq!(psi.f(0.0), 1.0);
    for k in 0..200 {
        let r = 0.05 * k as f64;
        assert!((1.0..=2.0).contains(&psi.f(r)));
    }
    assert!(cert.phi_at_c.unwrap() > 1.0);
    assert!(cert.theta >= consts.sigma_upper / consts.sigma_lower);

    let low = build_certificate_b2(&m, l, x0, Some(1e-3), &consts).unwrap();
    assert!(low.theta_raised && low.theta >= cert.theta);

    let finite = b2_model(LevyMeasure::exponential(1.0, 1.0).unwrap());
    let consts = estimate_b2_constants(&finite, l, 0.8, &grid).unwrap();
    assert!(build_certificate_b2(&finite, l, x0, None, &consts).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn marginal_property(s in 0.0f64..3.0, x in 0.05f64..4.0, y in 0.05f64..4.0) {
        let m = jump_model();
        let f1 = SmoothProbe::new(|x: f64| (1.0 + x).ln(), |x: f64| 1.0 / (1.0 + x), |x: f64| -1.0 / (1.0 + x).powi(2));
        let f2 = SmoothProbe::new(|x: f64| x * (-x).exp(), |x: f64| (1.0 - x) * (-x).exp(), |x: f64| (x - 2.0) * (-x).exp());
        let want = m.generator_apply(s, x, &f1).unwrap() + m.generator_apply(s, y, &f2).unwrap();
        let got = coupling_generator_apply(&m, s, x, y, &Separable { f1, f2 }).unwrap();
        prop_assert!((got - want).abs() <= 10.0 * m.mu().quadrature_tol() * (1.0 + want.abs()), "{got} vs {want}");
    }

    #[test]
    fn metric_axioms(x in 0.0f64..10.0, y in 0.0f64..10.0) {
        let d = WeightedMetric::new(SmoothProbe::identity());
        prop_assert_eq!(d.dist(x, x), 0.0);
        prop_assert_eq!(d.dist(x, y), d.dist(y, x));
        if x != y {
            prop_assert!(d.dist(x, y) >= 2.0);
        }
    }
}
