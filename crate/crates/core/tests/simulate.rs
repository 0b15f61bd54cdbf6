use jumpflow::levy::{Atom, LevyMeasure};
use jumpflow::simulate::{
    estimate_event_prob, estimate_mean, simulate_path, strong_refinement_gap, Event, PathStatus,
    SimConfig,
};
use jumpflow::ModelSpec;
use proptest::prelude::*;

fn cfg(dt: f64, t_end: f64, seed: u64) -> SimConfig {
    SimConfig {
        dt,
        t_end,
        master_seed: seed,
        ..SimConfig::default()
    }
}

fn feller() -> ModelSpec {
    ModelSpec::builder().gamma1(|x| x).build().unwrap()
}

fn unit_atom() -> LevyMeasure {
    LevyMeasure::atomic(vec![Atom {
        location: 1.0,
        mass: 1.0,
    }])
    .unwrap()
}

#[test]
fn deterministic_drift_is_exact_on_grid() {
    let m = ModelSpec::builder().gamma0(|_, _| 0.5).build().unwrap();
    let p = simulate_path(&m, 1.0, &cfg(0.01, 2.0, 0), 0).unwrap();
    assert_eq!(p.status, PathStatus::AliveAtHorizon);
    for (t, x) in p.times.iter().zip(&p.states) {
        assert!((x - (1.0 + 0.5 * t)).abs() < 1e-12);
    }
    let e = estimate_event_prob(&m, 1.0, &cfg(0.01, 2.0, 0), Event::ExtinctBy(2.0), 100).unwrap();
    assert_eq!((e.mean, e.stderr), (0.0, 0.0));
}

#[test]
fn linear_drift_diffusion_mean() {
    let m = ModelSpec::builder()
        .gamma0(|_, x| -x)
        .gamma1(|x| x)
        .build()
        .unwrap();
    let e = estimate_mean(&m, 1.0, &cfg(1e-3, 1.0, 5), 1.0, 100_000, |x| x).unwrap();
    let target = (-1f64).exp();
    // Euler bias of the mean is (1 - dt)^n - e^{-1}, about 1.8e-4 here.
    assert!(
        (e.mean - target).abs() < 3.0 * e.stderr + 2e-4,
        "{} ± {}",
        e.mean,
        e.stderr
    );
}

#[test]
fn compensated_atom_jumps_are_a_martingale() {
    let m = ModelSpec::builder()
        .gamma2(|_| 1.0)
        .mu(unit_atom())
        .build()
        .unwrap();
    let c = SimConfig {
        eps_jump: 0.5,
        ..cfg(1e-2, 1.0, 2)
    };
    let e = estimate_mean(&m, 5.0, &c, 1.0, 20_000, |x| x).unwrap();
    assert!(
        (e.mean - 5.0).abs() < 3.0 * e.stderr,
        "{} ± {}",
        e.mean,
        e.stderr
    );
}

#[test]
fn truncation_does_not_bias_the_mean() {
    let m = ModelSpec::builder()
        .gamma2(|_| 1.0)
        .mu(LevyMeasure::tempered(0.5, 1.0).unwrap())
        .build()
        .unwrap();
    for eps in [0.5, 0.1, 0.02] {
        let c = SimConfig {
            eps_jump: eps,
            ..cfg(1e-2, 1.0, 9)
        };
        let e = estimate_mean(&m, 10.0, &c, 1.0, 20_000, |x| x).unwrap();
        assert!(
            (e.mean - 10.0).abs() < 3.0 * e.stderr,
            "eps {eps}: {} ± {}",
            e.mean,
            e.stderr
        );
    }
}

#[test]
fn feller_extinction_is_monotone_in_horizon() {
    let m = feller();
    let c = cfg(1e-3, 4.0, 4);
    let p: Vec<_> = [1.0, 2.0, 4.0]
        .iter()
        .map(|&t| estimate_event_prob(&m, 1.0, &c, Event::ExtinctBy(t), 4000).unwrap())
        .collect();
    // The same paths are reused across horizons, so the frequencies are ordered exactly.
    assert!(p[0].mean <= p[1].mean && p[1].mean <= p[2].mean);
    for (e, t) in p.iter().zip([1.0f64, 2.0, 4.0]) {
        let exact = (-1.0 / t).exp();
        assert!(
            (e.mean - exact).abs() < 4.0 * e.stderr + 0.02,
            "t={t}: {}",
            e.mean
        );
    }
}

#[test]
fn refinement_gaps() {
    let drift = ModelSpec::builder().gamma0(|_, _| 0.3).build().unwrap();
    let g = strong_refinement_gap(&drift, 1.0, &cfg(0.1, 1.0, 0), 3, 50).unwrap();
    assert!(g.iter().all(|&v| v < 1e-12), "{g:?}");

    let g = strong_refinement_gap(&feller(), 1.0, &cfg(0.02, 1.0, 1), 3, 10_000).unwrap();
    assert!(g[0] > g[1] && g[1] > g[2], "{g:?}");

    let jumps = ModelSpec::builder()
        .gamma0(|_, x| -x)
        .gamma2(|x| x)
        .mu(unit_atom())
        .build()
        .unwrap();
    let c = SimConfig {
        eps_jump: 0.5,
        ..cfg(0.05, 1.0, 2)
    };
    let g = strong_refinement_gap(&jumps, 1.0, &c, 3, 4000).unwrap();
    assert!(g[0] > g[1] && g[1] > g[2] && g[2] < g[0] / 2.0, "{g:?}");
}

#[test]
fn path_csv_layout() {
    let m = ModelSpec::builder().gamma0(|_, _| -1.0).build().unwrap();
    let p = simulate_path(&m, 0.25, &cfg(0.1, 1.0, 0), 0).unwrap();
    let csv = p.to_csv();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "t,x,status_code");
    assert_eq!(lines.len(), p.times.len() + 1);
    assert!(lines.last().unwrap().ends_with(",0,1"));
    assert!(!csv.contains('\r'));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn path_invariants(seed in any::<u64>(), stream in 0u64..1000, x0 in 0.01f64..3.0, level in 0.05f64..2.0) {
        let m = ModelSpec::builder()
            .gamma0(|_, x| 0.2 - x)
            .gamma1(|x| x)
            .gamma2(|x| x)
            .mu(LevyMeasure::exponential(2.0, 3.0).unwrap())
            .build()
            .unwrap();
        let c = SimConfig { passage_levels: vec![level], ..cfg(0.01, 2.0, seed) };
        let p = simulate_path(&m, x0, &c, stream).unwrap();
        prop_assert!(p.states.iter().all(|&x| x >= 0.0));
        prop_assert_eq!(p.times.len(), p.states.len());
        if let PathStatus::Extinct { tau0 } = p.status {
            for (t, x) in p.times.iter().zip(&p.states) {
                if *t >= tau0 { prop_assert_eq!(*x, 0.0); }
            }
        }
        let pass = p.passages[0];
        if let Some(tb) = pass.below {
            let k = p.times.iter().position(|t| *t == tb).unwrap();
            prop_assert!(p.states[k] <= level);
            prop_assert!(p.states[..k].iter().all(|&x| x > level));
        }
        let again = simulate_path(&m, x0, &c, stream).unwrap();
        prop_assert_eq!(p, again);
    }
}
