use proptest::prelude::*;

use fidelity_falsify::stl::{robustness, satisfied, Comparator, Interval, SafetySpec};
use fidelity_falsify::Trajectory;

const STEPS: usize = 21;
const DT: f64 = 0.1;

fn trajectory(a: Vec<f64>, b: Vec<f64>) -> Trajectory {
    Trajectory::new(0.0, DT, vec!["a".into(), "b".into()], vec![a, b]).unwrap()
}

fn signals() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (prop::collection::vec(-3.0..3.0f64, STEPS), prop::collection::vec(-3.0..3.0f64, STEPS))
}

fn interval() -> impl Strategy<Value = Interval> {
    prop_oneof![
        Just(Interval::FULL),
        (0.0..1.0f64, 0.0..1.0f64).prop_map(|(a, w)| Interval::new(a, a + w)),
    ]
}

fn predicate(channels: &'static [&'static str], cmps: &'static [Comparator]) -> impl Strategy<Value = SafetySpec> {
    (prop::sample::select(channels), prop::sample::select(cmps), -2.0..2.0f64)
        .prop_map(|(c, cmp, t)| SafetySpec::predicate(c, cmp, t))
}

fn formula() -> impl Strategy<Value = SafetySpec> {
    predicate(&["a", "b"], &[Comparator::Greater, Comparator::Less]).prop_recursive(4, 24, 2, |inner| {
        prop_oneof![
            inner.clone().prop_map(SafetySpec::not),
            (inner.clone(), inner.clone()).prop_map(|(x, y)| x.and(y)),
            (inner.clone(), inner.clone()).prop_map(|(x, y)| x.or(y)),
            (interval(), inner.clone()).prop_map(|(i, x)| SafetySpec::globally(i, x)),
            (interval(), inner).prop_map(|(i, x)| SafetySpec::eventually(i, x)),
        ]
    })
}

/// Formulas in which channel `a` occurs only under `a > c` and no negation.
fn positive_in_a() -> impl Strategy<Value = SafetySpec> {
    let leaf = prop_oneof![
        predicate(&["a"], &[Comparator::Greater]),
        predicate(&["b"], &[Comparator::Greater, Comparator::Less]),
    ];
    leaf.prop_recursive(4, 24, 2, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(|(x, y)| x.and(y)),
            (inner.clone(), inner.clone()).prop_map(|(x, y)| x.or(y)),
            (interval(), inner.clone()).prop_map(|(i, x)| SafetySpec::globally(i, x)),
            (interval(), inner).prop_map(|(i, x)| SafetySpec::eventually(i, x)),
        ]
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(400))]

    #[test]
    fn sign_agrees_with_boolean_monitor(phi in formula(), (a, b) in signals()) {
        let t = trajectory(a, b);
        let rho = robustness(&phi, &t).unwrap().value();
        let sat = satisfied(&phi, &t).unwrap();
        if rho > 0.0 {
            prop_assert!(sat, "rho {rho} but violated: {phi}");
        }
        if rho < 0.0 {
            prop_assert!(!sat, "rho {rho} but satisfied: {phi}");
        }
    }

    #[test]
    fn de_morgan_is_exact(x in formula(), y in formula(), (a, b) in signals()) {
        let t = trajectory(a, b);
        let lhs = robustness(&x.clone().and(y.clone()).not(), &t).unwrap().value();
        let rhs = robustness(&x.not().or(y.not()), &t).unwrap().value();
        prop_assert_eq!(lhs.to_bits(), rhs.to_bits());
    }

    #[test]
    fn shifting_a_channel_shifts_its_predicate(t in -2.0..2.0f64, delta in 0.001..1.0f64, (a, b) in signals()) {
        let phi = SafetySpec::predicate("a", Comparator::Greater, t);
        let before = robustness(&phi, &trajectory(a.clone(), b.clone())).unwrap().value();
        let shifted: Vec<f64> = a.iter().map(|v| v + delta).collect();
        let after = robustness(&phi, &trajectory(shifted, b)).unwrap().value();
        prop_assert!((after - before - delta).abs() < 1e-12);
    }

    #[test]
    fn shifting_a_channel_never_lowers_positive_formulas(phi in positive_in_a(), delta in 0.001..1.0f64, (a, b) in signals()) {
        let before = robustness(&phi, &trajectory(a.clone(), b.clone())).unwrap().value();
        let shifted: Vec<f64> = a.iter().map(|v| v + delta).collect();
        let after = robustness(&phi, &trajectory(shifted, b)).unwrap().value();
        prop_assert!(after >= before - 1e-12, "{phi}: {before} -> {after}");
    }

    #[test]
    fn display_round_trips(phi in formula(), (a, b) in signals()) {
        let back = SafetySpec::parse(&phi.to_string()).unwrap();
        let t = trajectory(a, b);
        prop_assert_eq!(robustness(&phi, &t).unwrap(), robustness(&back, &t).unwrap());
    }
}
