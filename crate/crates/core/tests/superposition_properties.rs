use std::collections::BTreeMap;

use proptest::prelude::*;
use quasilie_core::expr::{parse, Expr};
use quasilie_core::families::AbelCoefficients;
use quasilie_core::flows::GeneralisedFlow;
use quasilie_core::schemes::{main_property_check, time_grid, QuasiLieScheme};
use quasilie_core::superposition::{fit_lambda, wrap_with_flow, Superposition, SuperpositionRule};

fn distinct3() -> impl Strategy<Value = [f64; 3]> {
    prop::array::uniform3(-3.0f64..3.0).prop_filter("separated", |u| {
        (u[0] - u[1]).abs() > 0.2 && (u[1] - u[2]).abs() > 0.2 && (u[0] - u[2]).abs() > 0.2
    })
}

proptest! {
    #[test]
    fn riccati_lambda_round_trip(u in distinct3(), lambda in -4.0f64..4.0) {
        let rule = SuperpositionRule::riccati();
        let sols: [&[f64]; 3] = [&[u[0]], &[u[1]], &[u[2]]];
        let Ok(target) = rule.combine(&[], &sols, &[lambda]) else { return Ok(()) };
        prop_assume!(target[0].abs() < 1e3);
        let fit = fit_lambda(&rule, &[], &sols, &target).unwrap();
        prop_assert!((fit.lambda[0] - lambda).abs() <= 1e-9 * (1.0 + lambda.abs()), "{fit:?} vs {lambda}");
        let psi = rule.invert(&[], &target, &sols).unwrap().unwrap();
        prop_assert!((psi[0] - lambda).abs() <= 1e-9 * (1.0 + lambda.abs()));
    }

    #[test]
    fn bernoulli_lambda_round_trip(
        u in prop::array::uniform2(0.2f64..3.0),
        lambda in 0.05f64..0.95,
        nu in prop::sample::select(vec![3.0, 2.0, 0.5, -1.0, 4.5]),
    ) {
        prop_assume!((u[0] - u[1]).abs() > 0.1);
        let rule = SuperpositionRule::bernoulli(nu).unwrap();
        let sols: [&[f64]; 2] = [&[u[0]], &[u[1]]];
        let target = rule.combine(&[], &sols, &[lambda]).unwrap();
        let fit = fit_lambda(&rule, &[], &sols, &target).unwrap();
        prop_assert!((fit.lambda[0] - lambda).abs() <= 1e-9, "{fit:?} vs {lambda}");
    }

    #[test]
    fn wrapped_rule_is_base_rule_at_the_foot(
        u in distinct3(),
        lambda in -2.0f64..2.0,
        t0 in -1.0f64..1.0,
        k in 0.1f64..1.0,
    ) {
        let rule = SuperpositionRule::riccati();
        let flow = GeneralisedFlow::affine(
            &["t"],
            "x",
            parse(&format!("exp({k}*(t - {t0}))")).unwrap(),
            parse(&format!("sin(t - {t0})")).unwrap(),
            BTreeMap::new(),
        )
        .unwrap()
        .with_foot(vec![t0]);
        let wrapped = wrap_with_flow(&rule, &flow).unwrap();
        let sols: [&[f64]; 3] = [&[u[0]], &[u[1]], &[u[2]]];
        if let Ok(base) = rule.combine(&[t0], &sols, &[lambda]) {
            let w = wrapped.combine(&[t0], &sols, &[lambda]).unwrap();
            prop_assert!((w[0] - base[0]).abs() <= 1e-12 * (1.0 + base[0].abs()));
        }
    }

    #[test]
    fn scalings_preserve_the_abel_space(
        coeffs in prop::array::uniform4(-1.5f64..1.5),
        k in -1.0f64..1.0,
        q in 0.0f64..0.5,
    ) {
        let term = |c: f64, f: &str| format!("{c}*{f}");
        let family = AbelCoefficients::new(
            parse(&term(coeffs[0], "sin(t)")).unwrap(),
            parse(&term(coeffs[1], "t")).unwrap(),
            parse(&format!("2 + {}", term(coeffs[2], "cos(t)"))).unwrap(),
            parse(&format!("2 + {}", term(coeffs[3], "t^2"))).unwrap(),
            3.0,
        );
        let scheme = QuasiLieScheme::general_abel(3.0).unwrap();
        let flow = GeneralisedFlow::affine(
            &["t"],
            "x",
            parse(&format!("exp({k}*t) + {q}*t^2")).unwrap(),
            Expr::num(0.0),
            BTreeMap::new(),
        )
        .unwrap();
        let times = time_grid(&[(0.0, 1.0, 5)]);
        let r = main_property_check(&scheme, &flow, &family.field().unwrap(), &times, 1e-8).unwrap();
        prop_assert!(r.pass, "{r:?}");
    }
}
