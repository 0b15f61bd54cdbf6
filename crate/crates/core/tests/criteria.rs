use jumpflow::criteria::*;
use jumpflow::levy::LevyMeasure;
use jumpflow::meanfield::{h_closed_form, reduce_to_model, MeanFieldParams};
use jumpflow::simulate::{estimate_event_prob, Event, SimConfig};
use jumpflow::ModelSpec;
use proptest::prelude::*;

fn feller() -> ModelSpec {
    ModelSpec::builder().gamma1(|x| x).build().unwrap()
}

fn drift(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> ModelSpec {
    ModelSpec::builder()
        .gamma0(move |_, x| f(x))
        .build()
        .unwrap()
}

fn grid() -> ScanGrid {
    ScanGrid::default()
}

#[test]
fn nonextinction_examples() {
    let p = MeanFieldParams::default();
    let m = reduce_to_model(&p).unwrap();
    let r = check_nonextinction(&m, 1.0, 0.1, &grid()).unwrap();
    assert_eq!(r.verdict, Verdict::Satisfied);
    let bound = p.a * p.b * h_closed_form(&p, 1.0) / 10f64.ln();
    assert!(
        r.extremal_value.is_finite() && r.extremal_value <= bound,
        "{}",
        r.extremal_value
    );

    let r = check_nonextinction(&feller(), 1.0, 0.1, &grid()).unwrap();
    assert_eq!(r.verdict, Verdict::Inconclusive);
    assert!(r.growth_trend);

    let r = check_nonextinction(&drift(|x| x), 1.0, 0.1, &grid()).unwrap();
    assert_eq!(r.verdict, Verdict::Satisfied);
    assert!(r.extremal_value <= 0.0);
}

#[test]
fn nonexplosion_examples() {
    let logistic = ModelSpec::logistic(1.0, 1.0, 0.0, LevyMeasure::none()).unwrap();
    assert_eq!(
        check_nonexplosion(&logistic, 1.0, 2.0, &grid())
            .unwrap()
            .verdict,
        Verdict::Satisfied
    );
    let r = check_nonexplosion(&drift(|x| x * x), 1.0, 2.0, &grid()).unwrap();
    assert_eq!(r.verdict, Verdict::Inconclusive);
    assert!(r.growth_trend);
    assert_eq!(
        check_nonexplosion(&feller(), 1.0, 2.0, &grid())
            .unwrap()
            .verdict,
        Verdict::Satisfied
    );
}

#[test]
fn extinction_possible_examples() {
    let d = DSpec::constant(1.0);
    // Open x-grid: the inf is approached from above within one node spacing.
    // With u = ln(1/x) the bracket is 0.5 u^(-1.5) e^u, minimised at u = max(1.5, ln(1/c0)).
    let oracle = |c0: f64| {
        let u = 1.5f64.max((1.0 / c0).ln());
        (0.5 * u.powf(-1.5) * u.exp(), (-u).exp())
    };
    for c0 in [0.1, 0.5] {
        let r = check_extinction_possible(&feller(), 1.0, 1.5, 0.5, c0, &d, &grid()).unwrap();
        assert_eq!(r.verdict, Verdict::Satisfied);
        let (v, x) = oracle(c0);
        assert!(
            r.extremal_value >= v * (1.0 - 1e-12) && r.extremal_value < v * 1.03,
            "{} vs {v}",
            r.extremal_value
        );
        assert!(
            (r.extremal_location.1 / x).ln().abs() < 0.1,
            "{:?}",
            r.extremal_location
        );
    }

    let r =
        check_extinction_possible(&drift(|x| 50.0 * x), 1.0, 1.5, 0.5, 0.5, &d, &grid()).unwrap();
    assert_eq!(r.verdict, Verdict::Violated);

    let d2 = DSpec::constant(2.0);
    let r2 = check_extinction_possible(&feller(), 1.0, 1.5, 0.5, 0.5, &d2, &grid()).unwrap();
    assert_eq!(r2.verdict, Verdict::Satisfied);
    let r1 = check_extinction_possible(&feller(), 1.0, 1.5, 0.5, 0.5, &d, &grid()).unwrap();
    assert!((r2.extremal_value - 0.5 * r1.extremal_value).abs() < 1e-12 * r1.extremal_value);
}

#[test]
fn explosion_possible_examples() {
    let m = drift(|x| x * x.ln().powi(2));
    let d = DSpec::constant(1.0);
    let r = check_explosion_possible(&m, 1.0, 1.5, 1.5, std::f64::consts::E, &d, &grid()).unwrap();
    assert_eq!(r.verdict, Verdict::Satisfied);
    assert_eq!(
        check_explosion_possible(&feller(), 1.0, 1.5, 1.5, 2.0, &d, &grid())
            .unwrap()
            .verdict,
        Verdict::Violated
    );
    let logistic = ModelSpec::logistic(1.0, 1.0, 0.0, LevyMeasure::none()).unwrap();
    assert_eq!(
        check_explosion_possible(&logistic, 1.0, 1.5, 1.5, 2.0, &d, &grid())
            .unwrap()
            .verdict,
        Verdict::Violated
    );
}

#[test]
fn as_extinction_examples() {
    let d = DSpec::constant(1.0);
    let r = check_as_extinction(&feller(), 0.5, &d, &[1.0, 10.0, 100.0], &grid()).unwrap();
    assert_eq!(r.verdict, Verdict::Satisfied);
    // The worst cap is b = 100 with inf (1 - ρ) b^(ρ - 1) = 0.05, approached from above on an open grid.
    assert!(
        r.extremal_value >= 0.05 && r.extremal_value < 0.053,
        "{}",
        r.extremal_value
    );
    for (i, b) in [1.0f64, 10.0, 100.0].into_iter().enumerate() {
        let v = r.parameters[&format!("inf_at_cap_{i}")];
        let exact = 0.5 / b.sqrt();
        assert!(v >= exact && v < 1.06 * exact, "b = {b}: {v}");
    }
    let r = check_as_extinction(&drift(|x| x), 0.5, &d, &[1.0], &grid()).unwrap();
    assert_eq!(r.verdict, Verdict::Violated);
    let finite = DSpec::Exponential {
        coef: 1.0,
        rate: -1.0,
    };
    assert!(check_as_extinction(&feller(), 0.5, &finite, &[1.0], &grid()).is_err());
}

#[test]
fn passage_examples() {
    assert_eq!(
        check_passage_conditions(&feller(), 0.5, 2.0, 1.0, &grid())
            .unwrap()
            .verdict,
        Verdict::Satisfied
    );
    let jump = ModelSpec::builder()
        .gamma2(|x| x)
        .mu(LevyMeasure::exponential(1.0, 1.0).unwrap())
        .build()
        .unwrap();
    assert_eq!(
        check_passage_conditions(&jump, 0.5, 2.0, 1.0, &grid())
            .unwrap()
            .verdict,
        Verdict::Satisfied
    );
    let still = drift(|_| 0.0);
    assert_eq!(
        check_passage_conditions(&still, 0.5, 2.0, 1.0, &grid())
            .unwrap()
            .verdict,
        Verdict::Violated
    );

    let r = check_t33_side_conditions(&feller(), 1.0, 0.5, 1.0, 1.0, Branch::Diffusion, &grid())
        .unwrap();
    assert_eq!(r.verdict, Verdict::Satisfied);
    let r = check_t33_side_conditions(&jump, 1.0, 0.5, 1.0, 1.0, Branch::Jump, &grid()).unwrap();
    assert_eq!(r.verdict, Verdict::Satisfied);
    let r =
        check_t33_side_conditions(&still, 1.0, 0.5, 1.0, 1.0, Branch::Diffusion, &grid()).unwrap();
    assert_eq!(r.verdict, Verdict::Violated);
}

#[test]
fn satisfied_verdicts_persist_under_refinement() {
    let p = MeanFieldParams::default();
    let m = reduce_to_model(&p).unwrap();
    let g = ScanGrid::default().with_resolution(64, 64);
    for report in [
        |m: &ModelSpec, g: &ScanGrid| check_nonextinction(m, 1.0, 0.1, g).unwrap(),
        |m: &ModelSpec, g: &ScanGrid| check_nonexplosion(m, 1.0, 10.0, g).unwrap(),
    ] {
        let a = report(&m, &g);
        let b = report(&m, &g.refined());
        assert_eq!(a.verdict, Verdict::Satisfied);
        assert_eq!(b.verdict, Verdict::Satisfied);
        assert!(b.extremal_value >= a.extremal_value);
    }
}

#[test]
fn criteria_agree_with_simulation() {
    let p = MeanFieldParams::default();
    let m = reduce_to_model(&p).unwrap();
    let cfg = SimConfig {
        dt: 1e-3,
        t_end: 1.0,
        master_seed: 21,
        ..SimConfig::default()
    };
    let e = estimate_event_prob(&m, p.z0, &cfg, Event::ExtinctBy(1.0), 2000).unwrap();
    // The squared-Bessel dimension is 4 here; rare hits come from the Euler scheme alone.
    assert!(e.mean < 0.005, "{}", e.mean);

    let f = feller();
    let cfg = SimConfig {
        dt: 2e-3,
        t_end: 16.0,
        master_seed: 22,
        ..SimConfig::default()
    };
    let probs: Vec<f64> = [1.0, 4.0, 16.0]
        .iter()
        .map(|&t| {
            estimate_event_prob(&f, 1.0, &cfg, Event::ExtinctBy(t), 2000)
                .unwrap()
                .mean
        })
        .collect();
    assert!(
        probs[0] < probs[1] && probs[1] < probs[2] && probs[2] > 0.9,
        "{probs:?}"
    );
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn refinement_never_loosens(a in 0.2f64..3.0, k in 0.1f64..2.0, n in 16usize..48) {
        let m = ModelSpec::builder().gamma0(move |s, x| a * (1.0 - k * x) * (1.0 + s)).gamma1(|x| x).build().unwrap();
        let g = ScanGrid::default().with_resolution(n, n);
        let sup0 = check_nonexplosion(&m, 1.0, 2.0, &g).unwrap().extremal_value;
        let sup1 = check_nonexplosion(&m, 1.0, 2.0, &g.refined()).unwrap().extremal_value;
        prop_assert!(sup1 >= sup0);
        let d = DSpec::constant(1.0);
        let inf0 = check_extinction_possible(&m, 1.0, 1.5, 0.5, 0.5, &d, &g).unwrap().extremal_value;
        let inf1 = check_extinction_possible(&m, 1.0, 1.5, 0.5, 0.5, &d, &g.refined()).unwrap().extremal_value;
        prop_assert!(inf1 <= inf0);
    }
}
