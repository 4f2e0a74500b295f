//! Builders for the concrete systems studied throughout the crate: the
//! generalised Abel equation, Riccati, Bernoulli and Abel PDEs, the
//! sine-Gordon, Bäcklund/KdV and Liouville systems and the abelian WZNW
//! reduction.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::expr::{add, call, differentiate, mul, neg, pow, sub, Expr, Func};
use crate::fields::{FieldError, PolyField};

fn var(name: &str) -> Expr {
    Expr::var(name)
}

fn num(v: f64) -> Expr {
    Expr::Num(v)
}

/// Coefficients of dx/dt = a + c·x + f·x^{ε−1} + g·x^ε.
#[derive(Clone, Debug)]
pub struct AbelCoefficients {
    pub a: Expr,
    pub c: Expr,
    pub f: Expr,
    pub g: Expr,
    pub eps: f64,
    pub params: BTreeMap<String, f64>,
}

impl AbelCoefficients {
    pub fn new(a: Expr, c: Expr, f: Expr, g: Expr, eps: f64) -> AbelCoefficients {
        AbelCoefficients {
            a,
            c,
            f,
            g,
            eps,
            params: BTreeMap::new(),
        }
    }

    pub fn with_params(mut self, params: BTreeMap<String, f64>) -> Self {
        self.params = params;
        self
    }

    /// Coefficient expressions with parameters substituted.
    pub fn bound(&self) -> [Expr; 4] {
        [
            self.a.bind(&self.params),
            self.c.bind(&self.params),
            self.f.bind(&self.params),
            self.g.bind(&self.params),
        ]
    }

    /// The equation as a field in time variable `t` and state variable `x`.
    pub fn field(&self) -> Result<PolyField, FieldError> {
        let [a, c, f, g] = self.bound();
        let x = var("x");
        let e = add(
            add(a, mul(c, x.clone())),
            add(
                mul(f, pow(x.clone(), num(self.eps - 1.0))),
                mul(g, pow(x, num(self.eps))),
            ),
        );
        PolyField::new(&["t"], &["x"], vec![vec![e]], BTreeMap::new())
    }
}

/// ∂u/∂t_π = b_π⁽¹⁾(t) + b_π⁽²⁾(t)·u + b_π⁽³⁾(t)·u².
pub fn riccati_pde(
    time_vars: &[&str],
    state_var: &str,
    coefficients: Vec<[Expr; 3]>,
    params: BTreeMap<String, f64>,
) -> Result<PolyField, FieldError> {
    let u = var(state_var);
    let components = coefficients
        .into_iter()
        .map(|[b1, b2, b3]| {
            vec![add(
                add(b1, mul(b2, u.clone())),
                mul(b3, pow(u.clone(), num(2.0))),
            )]
        })
        .collect();
    PolyField::new(time_vars, &[state_var], components, params)
}

/// Riccati PDE with b_π = ∂_π B(t)·(c₁, c₂, c₃): the zero curvature
/// condition holds for every potential B.
pub fn riccati_gradient(
    time_vars: &[&str],
    state_var: &str,
    potential: &Expr,
    sl2: [f64; 3],
    params: BTreeMap<String, f64>,
) -> Result<PolyField, FieldError> {
    let coefficients = time_vars
        .iter()
        .map(|tv| {
            let d = differentiate(&potential.bind(&params), tv);
            [
                mul(d.clone(), num(sl2[0])),
                mul(d.clone(), num(sl2[1])),
                mul(d, num(sl2[2])),
            ]
        })
        .collect();
    riccati_pde(time_vars, state_var, coefficients, params)
}

/// ∂u/∂t₁ = sin(u + g) − ∂f/∂t₁, ∂u/∂t₂ = sin(u + f) − ∂g/∂t₂ over (t1, t2).
pub fn sine_gordon(f: &Expr, g: &Expr, params: BTreeMap<String, f64>) -> Result<PolyField, FieldError> {
    let f = f.bind(&params);
    let g = g.bind(&params);
    let u = var("u");
    let x1 = sub(call(Func::Sin, add(u.clone(), g.clone())), differentiate(&f, "t1"));
    let x2 = sub(call(Func::Sin, add(u, f)), differentiate(&g, "t2"));
    PolyField::new(&["t1", "t2"], &["u"], vec![vec![x1], vec![x2]], params)
}

/// Kink A = 4·arctan(exp(a·t₁ + t₂/a)), a solution of A₁₂ = sin A.
pub fn sine_gordon_kink(a: f64) -> Expr {
    let arg = add(mul(num(a), var("t1")), mul(num(1.0 / a), var("t2")));
    mul(num(4.0), call(Func::Atan, call(Func::Exp, arg)))
}

/// One-soliton w = −2κ²·sech²(κ(t₂ − 4κ²t₁)) of w₁ − 6ww₂ + w₂₂₂ = 0.
pub fn kdv_soliton(kappa: f64) -> Expr {
    let phase = mul(num(kappa), sub(var("t2"), mul(num(4.0 * kappa * kappa), var("t1"))));
    mul(
        num(-2.0 * kappa * kappa),
        pow(call(Func::Sech, phase), num(2.0)),
    )
}

/// KdV residual w₁ − 6ww₂ + w₂₂₂ of an expression in (t1, t2).
pub fn kdv_residual(w: &Expr) -> Expr {
    let w2 = differentiate(w, "t2");
    let w222 = differentiate(&differentiate(&w2, "t2"), "t2");
    add(
        sub(differentiate(w, "t1"), mul(mul(num(6.0), w.clone()), w2)),
        w222,
    )
}

/// Sign of the last term of the first component of the Bäcklund system.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BacklundSign {
    /// 2εw(w − u²): the zero curvature condition reduces to KdV.
    Corrected,
    /// 2εw(u² − w), as usually printed.
    Printed,
}

/// ∂u/∂t₁ = −εw₂₂ + 2uw₂ ± 2εw(w − u²), ∂u/∂t₂ = ε(w − u²).
pub fn backlund_kdv(w: &Expr, eps: f64, sign: BacklundSign) -> Result<PolyField, FieldError> {
    let u = var("u");
    let u2 = pow(u.clone(), num(2.0));
    let w2 = differentiate(w, "t2");
    let w22 = differentiate(&w2, "t2");
    let last = match sign {
        BacklundSign::Corrected => sub(w.clone(), u2.clone()),
        BacklundSign::Printed => sub(u2.clone(), w.clone()),
    };
    let x1 = add(
        add(mul(num(-eps), w22), mul(mul(num(2.0), u), w2)),
        mul(mul(num(2.0 * eps), w.clone()), last),
    );
    let x2 = mul(num(eps), sub(w.clone(), u2));
    PolyField::new(&["t1", "t2"], &["u"], vec![vec![x1], vec![x2]], BTreeMap::new())
}

/// ∂w/∂t₁ = u₁ − (2/λ)·e^{λ(w+u)/2}, ∂w/∂t₂ = −u₂ − a·e^{λ(w−u)/2}, u = u(t1, t2).
pub fn liouville(a: f64, lambda: f64, u: &Expr) -> Result<PolyField, FieldError> {
    let w = var("w");
    let half = num(lambda / 2.0);
    let x1 = sub(
        differentiate(u, "t1"),
        mul(
            num(2.0 / lambda),
            call(Func::Exp, mul(half.clone(), add(w.clone(), u.clone()))),
        ),
    );
    let x2 = sub(
        neg(differentiate(u, "t2")),
        mul(num(a), call(Func::Exp, mul(half, sub(w, u.clone())))),
    );
    PolyField::new(&["t1", "t2"], &["w"], vec![vec![x1], vec![x2]], BTreeMap::new())
}

/// Coefficients A..H of the Abel PDE system
/// ∂u/∂t₁ = Au³ + Bu² + Cu + D, ∂u/∂t₂ = Eu³ + Fu² + Gu + H.
#[derive(Clone, Debug)]
pub struct AbelPdeCoefficients {
    /// [A, B, C, D] for t₁ and [E, F, G, H] for t₂.
    pub rows: [[Expr; 4]; 2],
    pub params: BTreeMap<String, f64>,
}

impl AbelPdeCoefficients {
    pub fn new(rows: [[Expr; 4]; 2]) -> AbelPdeCoefficients {
        AbelPdeCoefficients {
            rows,
            params: BTreeMap::new(),
        }
    }

    pub fn with_params(mut self, params: BTreeMap<String, f64>) -> Self {
        self.params = params;
        self
    }

    pub fn bound(&self) -> [[Expr; 4]; 2] {
        let b = |e: &Expr| e.bind(&self.params);
        [
            [b(&self.rows[0][0]), b(&self.rows[0][1]), b(&self.rows[0][2]), b(&self.rows[0][3])],
            [b(&self.rows[1][0]), b(&self.rows[1][1]), b(&self.rows[1][2]), b(&self.rows[1][3])],
        ]
    }

    /// The system over time variables (t1, t2) and state variable u.
    pub fn field(&self) -> Result<PolyField, FieldError> {
        let u = var("u");
        let components = self
            .bound()
            .into_iter()
            .map(|[c3, c2, c1, c0]| {
                vec![add(
                    add(mul(c3, pow(u.clone(), num(3.0))), mul(c2, pow(u.clone(), num(2.0)))),
                    add(mul(c1, u.clone()), c0),
                )]
            })
            .collect();
        PolyField::new(&["t1", "t2"], &["u"], components, BTreeMap::new())
    }

    /// Reads the coefficients back from an expression-backed polynomial field
    /// in u of degree ≤ 3 by Taylor expansion at u = 0.
    pub fn from_field(field: &PolyField) -> Result<AbelPdeCoefficients, FieldError> {
        if field.state_vars() != ["u"] || field.time_vars() != ["t1", "t2"] {
            return Err(FieldError::Dimension(
                "expected time variables (t1, t2) and state variable u".into(),
            ));
        }
        let at_zero = |e: &Expr| {
            let mut m = BTreeMap::new();
            m.insert(String::from("u"), num(0.0));
            e.substitute(&m)
        };
        let rows = core::array::from_fn(|pi| {
            let e0 = field.bound_component(pi, 0);
            let e1 = differentiate(&e0, "u");
            let e2 = differentiate(&e1, "u");
            let e3 = differentiate(&e2, "u");
            [
                mul(num(1.0 / 6.0), at_zero(&e3)),
                mul(num(0.5), at_zero(&e2)),
                at_zero(&e1),
                at_zero(&e0),
            ]
        });
        Ok(AbelPdeCoefficients::new(rows))
    }
}

/// ∂u/∂t_π = f_π(t)·u^ν + l_π(t)·u.
pub fn bernoulli(
    time_vars: &[&str],
    nu: f64,
    coefficients: Vec<[Expr; 2]>,
    params: BTreeMap<String, f64>,
) -> Result<PolyField, FieldError> {
    let u = var("u");
    let components = coefficients
        .into_iter()
        .map(|[f, l]| vec![add(mul(f, pow(u.clone(), num(nu))), mul(l, u.clone()))])
        .collect();
    PolyField::new(time_vars, &["u"], components, params)
}

/// Bernoulli PDE in V₀ = ⟨u³∂u, u∂u⟩ over (t1, t2) with l_π = ∂_πΛ and
/// f_π = e^{−2Λ}∂_πΘ; the zero curvature condition holds for all Λ, Θ.
/// Solutions satisfy u^{−2} = e^{−2Λ}(C − 2Θ).
pub fn bernoulli_gradient(lambda: &Expr, theta: &Expr) -> Result<PolyField, FieldError> {
    let weight = call(Func::Exp, mul(num(-2.0), lambda.clone()));
    let coefficients = ["t1", "t2"]
        .iter()
        .map(|tv| [mul(weight.clone(), differentiate(theta, tv)), differentiate(lambda, tv)])
        .collect();
    bernoulli(&["t1", "t2"], 3.0, coefficients, BTreeMap::new())
}

/// Time variable names of the abelian WZNW reduction with s times per sector:
/// `tm{s}`, …, `tm1`, `t1`, …, `t{s}`.
pub fn wznw_time_vars(s: usize) -> Vec<String> {
    let mut names: Vec<String> = (1..=s).rev().map(|k| format!("tm{k}")).collect();
    names.extend((1..=s).map(|k| format!("t{k}")));
    names
}

/// Abelian WZNW reduction on ℝ^d: ∂ψ/∂t_{−π} = −λ_{−π}(t), ∂ψ/∂t_π = λ_π(t).
///
/// `minus[π−1]` and `plus[π−1]` are d-vectors. Sector separation is enforced:
/// λ_{−π} may only depend on the `tm*` times and λ_π only on the `t*` times.
pub fn wznw_abelian(
    minus: Vec<Vec<Expr>>,
    plus: Vec<Vec<Expr>>,
    params: BTreeMap<String, f64>,
) -> Result<PolyField, FieldError> {
    let s = plus.len();
    if minus.len() != s || s == 0 {
        return Err(FieldError::Dimension("both sectors need the same number s ≥ 1 of times".into()));
    }
    let d = plus[0].len();
    let times = wznw_time_vars(s);
    let check = |e: &Expr, own: &[String]| -> Result<(), FieldError> {
        for v in e.bind(&params).free_vars() {
            if times.contains(&v) && !own.contains(&v) {
                return Err(FieldError::Other(format!(
                    "sector violation: '{v}' appears in a coefficient of the other sector"
                )));
            }
        }
        Ok(())
    };
    let (minus_times, plus_times) = times.split_at(s);
    let mut components = Vec::with_capacity(2 * s);
    for row in minus.into_iter().rev() {
        if row.len() != d {
            return Err(FieldError::Dimension("λ vectors must share the dimension d".into()));
        }
        for e in &row {
            check(e, minus_times)?;
        }
        components.push(row.into_iter().map(neg).collect());
    }
    for row in plus {
        if row.len() != d {
            return Err(FieldError::Dimension("λ vectors must share the dimension d".into()));
        }
        for e in &row {
            check(e, plus_times)?;
        }
        components.push(row);
    }
    let state: Vec<String> = (1..=d).map(|i| format!("psi{i}")).collect();
    let tv: Vec<&str> = times.iter().map(String::as_str).collect();
    let sv: Vec<&str> = state.iter().map(String::as_str).collect();
    PolyField::new(&tv, &sv, components, params)
}

/// `count` Chebyshev points of the first kind on [lo, hi], ascending.
pub fn chebyshev_nodes(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    let mid = 0.5 * (lo + hi);
    let half = 0.5 * (hi - lo);
    (0..count)
        .rev()
        .map(|k| {
            let theta = core::f64::consts::PI * (2 * k + 1) as f64 / (2 * count) as f64;
            mid + half * libm::cos(theta)
        })
        .collect()
}

/// Tensor grid of Chebyshev points on the box ∏[lo_i, hi_i].
pub fn chebyshev_grid(lo: &[f64], hi: &[f64], per_axis: usize) -> Vec<Vec<f64>> {
    let axes: Vec<Vec<f64>> = lo
        .iter()
        .zip(hi)
        .map(|(a, b)| chebyshev_nodes(*a, *b, per_axis))
        .collect();
    let mut points = vec![Vec::new()];
    for axis in &axes {
        let mut next = Vec::with_capacity(points.len() * axis.len());
        for p in &points {
            for v in axis {
                let mut q = p.clone();
                q.push(*v);
                next.push(q);
            }
        }
        points = next;
    }
    points
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{evaluate, parse};
    use crate::fields::{zcc_residual, VectorSystem};

    fn eval2(e: &Expr, t1: f64, t2: f64) -> f64 {
        evaluate(e, &[("t1", t1), ("t2", t2)]).unwrap()
    }

    #[test]
    fn abel_field_values() {
        let c = AbelCoefficients::new(
            parse("1").unwrap(),
            parse("t").unwrap(),
            parse("2").unwrap(),
            parse("exp(t)").unwrap(),
            3.0,
        );
        let f = c.field().unwrap();
        let v = f.eval(0, &[0.0], &[2.0]).unwrap()[0];
        assert!((v - (1.0 + 0.0 + 2.0 * 4.0 + 8.0)).abs() < 1e-14);
    }

    #[test]
    fn soliton_solves_kdv() {
        let w = kdv_soliton(0.7);
        let r = kdv_residual(&w);
        for k in 0..20 {
            let (t1, t2) = (0.025 * k as f64, -3.0 + 0.3 * k as f64);
            assert!(eval2(&r, t1, t2).abs() < 1e-12);
        }
    }

    #[test]
    fn kink_solves_sine_gordon() {
        let a = sine_gordon_kink(1.3);
        let a12 = differentiate(&differentiate(&a, "t1"), "t2");
        for k in 0..20 {
            let (t1, t2) = (-2.0 + 0.2 * k as f64, 1.5 - 0.15 * k as f64);
            let v = eval2(&a12, t1, t2) - libm::sin(eval2(&a, t1, t2));
            assert!(v.abs() < 1e-12);
        }
    }

    #[test]
    fn corrected_backlund_is_flat_on_soliton() {
        let w = kdv_soliton(0.5);
        let good = backlund_kdv(&w, 1.0, BacklundSign::Corrected).unwrap();
        let bad = backlund_kdv(&w, 1.0, BacklundSign::Printed).unwrap();
        let mut worst_bad = 0.0f64;
        for k in 0..10 {
            let t = [0.05 * k as f64, -1.0 + 0.2 * k as f64];
            let x = [0.3 - 0.05 * k as f64];
            assert!(zcc_residual(&good, 0, 1, &t, &x).unwrap()[0].abs() < 1e-12);
            worst_bad = worst_bad.max(zcc_residual(&bad, 0, 1, &t, &x).unwrap()[0].abs());
        }
        assert!(worst_bad > 1e-2);
    }

    #[test]
    fn liouville_is_flat_for_split_harmonic_u() {
        let u = parse("sin(t1) + t2^2").unwrap();
        let f = liouville(1.0, 2.0, &u).unwrap();
        for k in 0..10 {
            let t = [0.1 * k as f64, 0.2 - 0.05 * k as f64];
            let r = zcc_residual(&f, 0, 1, &t, &[-0.5 + 0.1 * k as f64]).unwrap()[0];
            assert!(r.abs() < 1e-12, "{r}");
        }
    }

    #[test]
    fn abel_pde_coefficients_round_trip() {
        let rows = [
            [parse("1").unwrap(), parse("t1").unwrap(), parse("2").unwrap(), parse("t2").unwrap()],
            [parse("0.5").unwrap(), parse("0").unwrap(), parse("-1").unwrap(), parse("3").unwrap()],
        ];
        let f = AbelPdeCoefficients::new(rows).field().unwrap();
        let back = AbelPdeCoefficients::from_field(&f).unwrap();
        for (pi, row) in back.rows.iter().enumerate() {
            for (k, e) in row.iter().enumerate() {
                let expected = match (pi, k) {
                    (0, 0) => 1.0,
                    (0, 1) => 0.4,
                    (0, 2) => 2.0,
                    (0, 3) => -0.3,
                    (1, 0) => 0.5,
                    (1, 1) => 0.0,
                    (1, 2) => -1.0,
                    _ => 3.0,
                };
                assert!((eval2(e, 0.4, -0.3) - expected).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn gradient_bernoulli_is_flat() {
        let f = bernoulli_gradient(&parse("0.3*t1 - t2^2").unwrap(), &parse("sin(t1 + t2)").unwrap()).unwrap();
        for k in 0..10 {
            let t = [0.1 * k as f64, 0.3 - 0.07 * k as f64];
            let r = zcc_residual(&f, 0, 1, &t, &[0.4 + 0.1 * k as f64]).unwrap()[0];
            assert!(r.abs() < 1e-12, "{r}");
        }
    }

    #[test]
    fn wznw_sectors() {
        let p = |s: &str| parse(s).unwrap();
        let f = wznw_abelian(vec![vec![p("tm1"), p("1")]], vec![vec![p("t1^2"), p("0")]], BTreeMap::new())
            .unwrap();
        assert_eq!(f.time_vars(), ["tm1", "t1"]);
        assert_eq!(f.eval(0, &[2.0, 3.0], &[0.0, 0.0]).unwrap(), vec![-2.0, -1.0]);
        assert!(wznw_abelian(vec![vec![p("t1")]], vec![vec![p("1")]], BTreeMap::new()).is_err());
    }

    #[test]
    fn chebyshev_points() {
        let n = chebyshev_nodes(-1.0, 1.0, 3);
        assert!((n[1]).abs() < 1e-15 && (n[2] - libm::sqrt(3.0) / 2.0).abs() < 1e-15);
        assert!(n.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(chebyshev_grid(&[0.0, 1.0], &[1.0, 2.0], 4).len(), 16);
    }
}
