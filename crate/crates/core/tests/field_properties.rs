use std::collections::BTreeMap;

use proptest::prelude::*;
use quasilie_core::expr::{evaluate, parse, Expr};
use quasilie_core::families::riccati_gradient;
use quasilie_core::fields::{
    integrate_to, lie_bracket, path_independence, zcc_residual, FieldSlice, PolyField, TimePath,
};
use quasilie_core::schemes::bracket_exprs;

fn poly2() -> impl Strategy<Value = String> {
    prop::collection::vec(-2.0f64..2.0, 6).prop_map(|c| {
        format!(
            "{} + {}*x + {}*y + {}*x^2 + {}*x*y + {}*y^2",
            c[0], c[1], c[2], c[3], c[4], c[5]
        )
    })
}

fn field2() -> impl Strategy<Value = Vec<Expr>> {
    (poly2(), poly2()).prop_map(|(a, b)| vec![parse(&a).unwrap(), parse(&b).unwrap()])
}

fn eval_at(v: &[Expr], x: f64, y: f64) -> Vec<f64> {
    let b = [("x", x), ("y", y)];
    v.iter().map(|e| evaluate(e, &b).unwrap()).collect()
}

proptest! {
    #[test]
    fn bracket_is_antisymmetric(a in field2(), b in field2(), x in -1.0f64..1.0, y in -1.0f64..1.0) {
        let f = PolyField::new(&["t1", "t2"], &["x", "y"], vec![a, b], BTreeMap::new()).unwrap();
        let ab = lie_bracket(FieldSlice::new(&f, 0), FieldSlice::new(&f, 1), &[0.0, 0.0], &[x, y]).unwrap();
        let ba = lie_bracket(FieldSlice::new(&f, 1), FieldSlice::new(&f, 0), &[0.0, 0.0], &[x, y]).unwrap();
        for i in 0..2 {
            prop_assert!((ab[i] + ba[i]).abs() <= 1e-12 * (1.0 + ab[i].abs()));
        }
    }

    #[test]
    fn jacobi_identity(a in field2(), b in field2(), c in field2(), x in -1.0f64..1.0, y in -1.0f64..1.0) {
        let v = ["x", "y"];
        let bc = bracket_exprs(&b, &c, &v);
        let ca = bracket_exprs(&c, &a, &v);
        let ab = bracket_exprs(&a, &b, &v);
        let j1 = eval_at(&bracket_exprs(&a, &bc, &v), x, y);
        let j2 = eval_at(&bracket_exprs(&b, &ca, &v), x, y);
        let j3 = eval_at(&bracket_exprs(&c, &ab, &v), x, y);
        for i in 0..2 {
            let scale = 1.0 + j1[i].abs() + j2[i].abs() + j3[i].abs();
            prop_assert!((j1[i] + j2[i] + j3[i]).abs() <= 1e-11 * scale);
        }
    }

    #[test]
    fn symbolic_bracket_matches_pointwise(a in field2(), b in field2(), x in -1.0f64..1.0, y in -1.0f64..1.0) {
        let sym = eval_at(&bracket_exprs(&a, &b, &["x", "y"]), x, y);
        let f = PolyField::new(&["t1", "t2"], &["x", "y"], vec![a, b], BTreeMap::new()).unwrap();
        let num = lie_bracket(FieldSlice::new(&f, 0), FieldSlice::new(&f, 1), &[0.0, 0.0], &[x, y]).unwrap();
        for i in 0..2 {
            prop_assert!((sym[i] - num[i]).abs() <= 1e-12 * (1.0 + sym[i].abs()));
        }
    }

    #[test]
    fn gradient_riccati_fields_are_flat(
        c in prop::array::uniform3(-1.0f64..1.0),
        k in prop::array::uniform3(-1.0f64..1.0),
        t in prop::array::uniform2(-1.0f64..1.0),
        u in -2.0f64..2.0,
    ) {
        let potential = parse(&format!("{}*sin(t1 + {}*t2) + {}*t1*t2^2", k[0], k[1], k[2])).unwrap();
        let f = riccati_gradient(&["t1", "t2"], "u", &potential, c, BTreeMap::new()).unwrap();
        let r = zcc_residual(&f, 0, 1, &t, &[u]).unwrap();
        prop_assert!(r[0].abs() < 1e-12);
    }
}

fn rk4_error(steps: usize) -> f64 {
    let f = PolyField::parse(&["t"], &["x"], &[&["x*cos(t)"]], &[]).unwrap();
    let path = TimePath::new(vec![vec![0.0], vec![2.0]], steps).unwrap();
    let end = integrate_to(&f, &path, &[1.0]).unwrap()[0];
    (end - libm::exp(libm::sin(2.0))).abs()
}

#[test]
fn rk4_is_fourth_order_in_one_time() {
    for n in [20, 40] {
        let ratio = rk4_error(n) / rk4_error(2 * n);
        assert!((12.0..=20.0).contains(&ratio), "n = {n}: ratio {ratio}");
    }
}

#[test]
fn rk4_is_fourth_order_along_a_path() {
    // x = x0·exp(t1·t2) solves ∂₁x = t2·x, ∂₂x = t1·x.
    let f = PolyField::parse(&["t1", "t2"], &["x"], &[&["t2*x"], &["t1*x"]], &[]).unwrap();
    let err = |steps: usize| {
        let path = TimePath::new(vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![1.0, 1.5]], steps).unwrap();
        (integrate_to(&f, &path, &[1.0]).unwrap()[0] - libm::exp(1.5)).abs()
    };
    let ratio = err(10) / err(20);
    assert!((12.0..=20.0).contains(&ratio), "ratio {ratio}");
    let a = TimePath::with_density(vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![1.0, 1.0]], 1000.0).unwrap();
    let b = TimePath::with_density(vec![vec![0.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]], 1000.0).unwrap();
    assert!(path_independence(&f, &[0.5], &a, &b).unwrap() < 1e-10);
}

#[test]
fn non_flat_field_is_path_dependent() {
    let f = PolyField::parse(&["t1", "t2"], &["x"], &[&["x"], &["t1"]], &[]).unwrap();
    assert!(zcc_residual(&f, 0, 1, &[0.3, 0.2], &[1.0]).unwrap()[0].abs() > 0.5);
    let a = TimePath::with_density(vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![1.0, 1.0]], 500.0).unwrap();
    let b = TimePath::with_density(vec![vec![0.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]], 500.0).unwrap();
    assert!(path_independence(&f, &[0.5], &a, &b).unwrap() > 0.1);
}
