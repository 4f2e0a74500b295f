//! First-order quasi-Lie invariants of the generalised Abel family
//! dx/dt = a + c·x + f·x^{ε−1} + g·x^ε under t-dependent scalings x̄ = β(t)x.
//!
//! Jets are stored in the slot order (a, c, f, g, ȧ, ċ, ḟ, ġ).

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use nalgebra::Matrix4;

use crate::expr::{add, differentiate, evaluate, mul, EvalError, Expr};
use crate::families::AbelCoefficients;
use crate::fields::PolyField;
use crate::math;

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum InvariantError {
    #[error("coefficient {which} vanishes")]
    ZeroCoefficient { which: &'static str },
    #[error("coefficient {which} vanishes or changes sign near t = {t}")]
    ZeroCrossing { which: &'static str, t: f64 },
    #[error("jet scale β = {0} must be positive")]
    NotPositive(f64),
    #[error("{0}")]
    Domain(String),
    #[error(transparent)]
    Expr(#[from] EvalError),
}

/// A first jet j¹ₜX of a curve in V_GA.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AbelJet1 {
    pub eps: f64,
    pub a: f64,
    pub c: f64,
    pub f: f64,
    pub g: f64,
    pub da: f64,
    pub dc: f64,
    pub df: f64,
    pub dg: f64,
}

impl AbelJet1 {
    pub fn new(eps: f64, values: [f64; 4], derivatives: [f64; 4]) -> Result<AbelJet1, InvariantError> {
        let mut slots = [0.0; 8];
        slots[..4].copy_from_slice(&values);
        slots[4..].copy_from_slice(&derivatives);
        AbelJet1::from_slots(eps, slots)
    }

    /// Jet from (a, c, f, g, ȧ, ċ, ḟ, ġ); f and g must not vanish.
    pub fn from_slots(eps: f64, s: [f64; 8]) -> Result<AbelJet1, InvariantError> {
        if s[2] == 0.0 {
            return Err(InvariantError::ZeroCoefficient { which: "f" });
        }
        if s[3] == 0.0 {
            return Err(InvariantError::ZeroCoefficient { which: "g" });
        }
        Ok(AbelJet1::unchecked(eps, s))
    }

    fn unchecked(eps: f64, s: [f64; 8]) -> AbelJet1 {
        AbelJet1 {
            eps,
            a: s[0],
            c: s[1],
            f: s[2],
            g: s[3],
            da: s[4],
            dc: s[5],
            df: s[6],
            dg: s[7],
        }
    }

    pub fn slots(&self) -> [f64; 8] {
        [self.a, self.c, self.f, self.g, self.da, self.dc, self.df, self.dg]
    }
}

/// A 2-jet (β, β̇, β̈) of a positive scaling, an element of J²₀(ℝ, ℝ₊).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Jet2Scale {
    pub beta: f64,
    pub dbeta: f64,
    pub ddbeta: f64,
}

impl Jet2Scale {
    pub fn new(beta: f64, dbeta: f64, ddbeta: f64) -> Result<Jet2Scale, InvariantError> {
        if !(beta > 0.0) {
            return Err(InvariantError::NotPositive(beta));
        }
        Ok(Jet2Scale { beta, dbeta, ddbeta })
    }

    pub fn identity() -> Jet2Scale {
        Jet2Scale {
            beta: 1.0,
            dbeta: 0.0,
            ddbeta: 0.0,
        }
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.beta, self.dbeta, self.ddbeta]
    }
}

/// Evaluates the coefficients and their exact t-derivatives at `t`.
pub fn jet_of_family(coeffs: &AbelCoefficients, t: f64) -> Result<AbelJet1, InvariantError> {
    let exprs = coeffs.bound();
    let at = [("t", t)];
    let mut slots = [0.0; 8];
    for (k, e) in exprs.iter().enumerate() {
        slots[k] = evaluate(e, &at)?;
        slots[k + 4] = evaluate(&differentiate(e, "t"), &at)?;
    }
    AbelJet1::from_slots(coeffs.eps, slots)
}

/// (λ, λ̇, λ̈) ⋆ (μ, μ̇, μ̈) = (λμ, μλ̇ + λμ̇, λ̈μ + 2λ̇μ̇ + λμ̈).
pub fn jet_mul(p: &Jet2Scale, q: &Jet2Scale) -> Jet2Scale {
    Jet2Scale {
        beta: p.beta * q.beta,
        dbeta: q.beta * p.dbeta + p.beta * q.dbeta,
        ddbeta: p.ddbeta * q.beta + 2.0 * p.dbeta * q.dbeta + p.beta * q.ddbeta,
    }
}

pub fn jet_inv(p: &Jet2Scale) -> Jet2Scale {
    let b = p.beta;
    Jet2Scale {
        beta: 1.0 / b,
        dbeta: -p.dbeta / (b * b),
        ddbeta: (2.0 * p.dbeta * p.dbeta - b * p.ddbeta) / (b * b * b),
    }
}

/// The action φ¹ of J²₀(ℝ, ℝ₊) on first jets, induced by x̄ = β(t)x.
pub fn jet_action(p: &Jet2Scale, j: &AbelJet1) -> AbelJet1 {
    let (b, db, ddb, e) = (p.beta, p.dbeta, p.ddbeta, j.eps);
    AbelJet1 {
        eps: e,
        a: j.a * b,
        c: db / b + j.c,
        f: j.f * math::powf(b, 2.0 - e),
        g: j.g * math::powf(b, 1.0 - e),
        da: j.da * b + j.a * db,
        dc: (ddb * b - db * db) / (b * b) + j.dc,
        df: (j.df * b + (2.0 - e) * j.f * db) / math::powf(b, e - 1.0),
        dg: (j.dg * b + (1.0 - e) * j.g * db) / math::powf(b, e),
    }
}

/// x^p, defined for negative x only when p is an integer.
fn real_pow(x: f64, p: f64) -> Result<f64, InvariantError> {
    if x < 0.0 && math::trunc(p) != p {
        return Err(InvariantError::Domain(format!("{x}^{p} is not real")));
    }
    Ok(math::powf(x, p))
}

fn check_fg(j: &AbelJet1) -> Result<(), InvariantError> {
    if j.f == 0.0 {
        return Err(InvariantError::ZeroCoefficient { which: "f" });
    }
    if j.g == 0.0 {
        return Err(InvariantError::ZeroCoefficient { which: "g" });
    }
    Ok(())
}

/// F₁ = −(g^{ε−3}/f^ε)(g ḟ − (c g + ġ) f).
pub fn f1(j: &AbelJet1) -> Result<f64, InvariantError> {
    check_fg(j)?;
    let e = j.eps;
    let pre = real_pow(j.g, e - 3.0)? / real_pow(j.f, e)?;
    Ok(-pre * (j.g * j.df - (j.c * j.g + j.dg) * j.f))
}

/// F₂ = g^{ε−1} a / f^ε.
pub fn f2(j: &AbelJet1) -> Result<f64, InvariantError> {
    check_fg(j)?;
    let e = j.eps;
    Ok(real_pow(j.g, e - 1.0)? * j.a / real_pow(j.f, e)?)
}

/// F₃ = ((ε−1) g^{ε−2} ġ c + g^{ε−1} ċ − ε ḟ g^{ε−1} c) / f^{ε+1}.
pub fn f3(j: &AbelJet1) -> Result<f64, InvariantError> {
    check_fg(j)?;
    let e = j.eps;
    let g1 = real_pow(j.g, e - 1.0)?;
    let num = (e - 1.0) * real_pow(j.g, e - 2.0)? * j.dg * j.c + g1 * j.dc - e * j.df * g1 * j.c;
    Ok(num / real_pow(j.f, e + 1.0)?)
}

/// Which jet function to differentiate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Invariant {
    F1,
    F2,
    F3,
}

impl Invariant {
    pub fn eval(self, j: &AbelJet1) -> Result<f64, InvariantError> {
        match self {
            Invariant::F1 => f1(j),
            Invariant::F2 => f2(j),
            Invariant::F3 => f3(j),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Invariant::F1 => "F1",
            Invariant::F2 => "F2",
            Invariant::F3 => "F3",
        }
    }
}

/// Form of the first fundamental field of φ¹.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FundamentalForm {
    /// X₁ = a∂_a + (2−ε)f∂_f + (1−ε)g∂_g + ȧ∂_ȧ + ċ∂_ċ + (2−ε)ḟ∂_ḟ + (1−ε)ġ∂_ġ.
    Displayed,
    /// X₁ without the ċ∂_ċ term, as generated by the subgroup (eˢ, 0, 0).
    Derived,
}

/// Components of X_k^{[1]} (k = 1, 2, 3) at `j`, in slot order.
pub fn fundamental_field(k: usize, j: &AbelJet1, form: FundamentalForm) -> Result<[f64; 8], InvariantError> {
    let e = j.eps;
    match k {
        1 => {
            let dc = match form {
                FundamentalForm::Displayed => j.dc,
                FundamentalForm::Derived => 0.0,
            };
            Ok([
                j.a,
                0.0,
                (2.0 - e) * j.f,
                (1.0 - e) * j.g,
                j.da,
                dc,
                (2.0 - e) * j.df,
                (1.0 - e) * j.dg,
            ])
        }
        2 => Ok([0.0, 1.0, 0.0, 0.0, j.a, 0.0, (2.0 - e) * j.f, (1.0 - e) * j.g]),
        3 => Ok([0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0]),
        _ => Err(InvariantError::Domain(format!("fundamental field index {k} is not in 1..=3"))),
    }
}

/// Central-difference derivative of `inv` along the displayed X_k^{[1]}.
pub fn fundamental_derivative(inv: Invariant, k: usize, j: &AbelJet1) -> Result<f64, InvariantError> {
    fundamental_derivative_with(inv, k, j, FundamentalForm::Displayed)
}

pub fn fundamental_derivative_with(
    inv: Invariant,
    k: usize,
    j: &AbelJet1,
    form: FundamentalForm,
) -> Result<f64, InvariantError> {
    let v = fundamental_field(k, j, form)?;
    let vmax = math::max_abs(&v);
    if vmax == 0.0 {
        return Ok(0.0);
    }
    let s = j.slots();
    let h = 1e-6 * (1.0 + math::max_abs(&s)) / vmax;
    let shifted = |sign: f64| {
        let mut out = s;
        for (o, vi) in out.iter_mut().zip(&v) {
            *o += sign * h * vi;
        }
        AbelJet1::from_slots(j.eps, out)
    };
    let plus = inv.eval(&shifted(1.0)?)?;
    let minus = inv.eval(&shifted(-1.0)?)?;
    Ok((plus - minus) / (2.0 * h))
}

/// Rewrites a field in V_GA (one time and one state variable) as Abel
/// coefficients, by solving the 4×4 collocation system at x = ½, 1, 3/2, 2.
pub fn abel_coefficients_of(field: &PolyField, eps: f64) -> Result<AbelCoefficients, InvariantError> {
    let (tv, sv) = (field.time_vars(), field.state_vars());
    if tv.len() != 1 || sv.len() != 1 {
        return Err(InvariantError::Domain("need one time and one state variable".into()));
    }
    let nodes = [0.5, 1.0, 1.5, 2.0];
    let m = Matrix4::from_fn(|r, col| {
        let x: f64 = nodes[r];
        [1.0, x, math::powf(x, eps - 1.0), math::powf(x, eps)][col]
    });
    let inv = m
        .try_inverse()
        .filter(|i| i.iter().all(|v| v.is_finite()))
        .ok_or_else(|| InvariantError::Domain(format!("exponent {eps} makes the Abel basis degenerate")))?;
    let component = field.bound_component(0, 0);
    let rename = BTreeMap::from([(String::from(tv[0]), Expr::var("t"))]);
    let samples: Vec<Expr> = nodes
        .iter()
        .map(|&x| {
            let at = BTreeMap::from([(String::from(sv[0]), Expr::num(x))]);
            component.substitute(&at).substitute(&rename)
        })
        .collect();
    let coeff = |row: usize| {
        (0..4).fold(Expr::num(0.0), |acc, k| add(acc, mul(Expr::num(inv[(row, k)]), samples[k].clone())))
    };
    Ok(AbelCoefficients::new(coeff(0), coeff(1), coeff(2), coeff(3), eps))
}

/// Outcome of [`gcc_check`].
#[derive(Clone, Debug, PartialEq)]
pub struct GccReport {
    pub k1: f64,
    pub k2: f64,
    pub drift_f1: f64,
    pub drift_f2: f64,
    pub max_drift: f64,
    pub tol: f64,
    pub pass: bool,
}

fn sign_watch(which: &'static str, prev: &mut Option<f64>, v: f64, t: f64) -> Result<(), InvariantError> {
    if v == 0.0 || prev.is_some_and(|p| p * v < 0.0) {
        return Err(InvariantError::ZeroCrossing { which, t });
    }
    *prev = Some(v);
    Ok(())
}

fn drift(values: &[f64]) -> f64 {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    hi - lo
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Generalised Chiellini conditions: F₁ and F₂ constant along the family.
pub fn gcc_check(coeffs: &AbelCoefficients, times: &[f64], tol: f64) -> Result<GccReport, InvariantError> {
    if times.is_empty() {
        return Err(InvariantError::Domain("empty time grid".into()));
    }
    let (mut sf, mut sg) = (None, None);
    let mut v1 = Vec::with_capacity(times.len());
    let mut v2 = Vec::with_capacity(times.len());
    for &t in times {
        let j = match jet_of_family(coeffs, t) {
            Err(InvariantError::ZeroCoefficient { which }) => return Err(InvariantError::ZeroCrossing { which, t }),
            other => other?,
        };
        sign_watch("f", &mut sf, j.f, t)?;
        sign_watch("g", &mut sg, j.g, t)?;
        v1.push(f1(&j)?);
        v2.push(f2(&j)?);
    }
    let (d1, d2) = (drift(&v1), drift(&v2));
    let max_drift = d1.max(d2);
    Ok(GccReport {
        k1: mean(&v1),
        k2: mean(&v2),
        drift_f1: d1,
        drift_f2: d2,
        max_drift,
        tol,
        pass: max_drift <= tol,
    })
}

/// Outcome of [`classic_chiellini_check`].
#[derive(Clone, Debug, PartialEq)]
pub struct ChielliniReport {
    pub k: f64,
    pub drift: f64,
    pub tol: f64,
    pub pass: bool,
}

/// Evaluates (d/dt(f₂/f₁))/f₁ along the grid; the condition holds when it
/// is constant.
pub fn classic_chiellini_check(
    f1: &Expr,
    f2: &Expr,
    params: &BTreeMap<String, f64>,
    times: &[f64],
    tol: f64,
) -> Result<ChielliniReport, InvariantError> {
    if times.is_empty() {
        return Err(InvariantError::Domain("empty time grid".into()));
    }
    let (f1, f2) = (f1.bind(params), f2.bind(params));
    let ratio_dot = differentiate(&crate::expr::div(f2, f1.clone()), "t");
    let mut sign = None;
    let mut values = Vec::with_capacity(times.len());
    for &t in times {
        let at = [("t", t)];
        let d = evaluate(&f1, &at)?;
        sign_watch("f1", &mut sign, d, t)?;
        values.push(evaluate(&ratio_dot, &at)? / d);
    }
    let d = drift(&values);
    Ok(ChielliniReport {
        k: mean(&values),
        drift: d,
        tol,
        pass: d <= tol,
    })
}
