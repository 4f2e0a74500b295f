//! Superposition rules x₍₀₎ = Φ(x₍₁₎, …, x₍ₘ₎; λ), their t-dependent
//! versions g_t⁻¹ ∘ Φ ∘ (g_t × … × g_t), fitting of λ and verification
//! against integrated solutions.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::expr::{EvalError, Expr, Program};
use crate::fields::{integrate_path, FieldError, PolyField, TimePath, VectorSystem};
use crate::flows::{FlowError, FlowMap};
use crate::linalg::solve_square;
use crate::math;
use crate::schemes::VectorFieldBasis;

/// Failures of rule evaluation, λ fitting and verification.
#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum SuperpositionError {
    #[error("rule has a pole here (denominator {denominator:e})")]
    Pole { denominator: f64 },
    #[error("rule is undefined here: {0}")]
    Domain(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("rule expression: {0}")]
    Expr(#[from] EvalError),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error("could not fit λ (best residual {residual:e})")]
    FitFailed { residual: f64 },
    #[error("at t = {t:?}: {source}")]
    AtTime {
        t: Vec<f64>,
        source: alloc::boxed::Box<SuperpositionError>,
    },
}

/// A map x₍₀₎ = Φ(t, x₍₁₎, …, x₍ₘ₎; λ) with λ ∈ ℝⁿ.
pub trait Superposition {
    /// Number m of particular solutions.
    fn solutions(&self) -> usize;
    /// Dimension n of state space (and of λ).
    fn state_dim(&self) -> usize;

    fn combine(&self, t: &[f64], sols: &[&[f64]], lambda: &[f64]) -> Result<Vec<f64>, SuperpositionError>;

    /// Closed-form λ = Ψ(t, x₍₀₎, x₍₁₎, …, x₍ₘ₎) when known.
    fn invert(
        &self,
        _t: &[f64],
        _target: &[f64],
        _sols: &[&[f64]],
    ) -> Option<Result<Vec<f64>, SuperpositionError>> {
        None
    }
}

impl<T: Superposition + ?Sized> Superposition for &T {
    fn solutions(&self) -> usize {
        (**self).solutions()
    }
    fn state_dim(&self) -> usize {
        (**self).state_dim()
    }
    fn combine(&self, t: &[f64], sols: &[&[f64]], lambda: &[f64]) -> Result<Vec<f64>, SuperpositionError> {
        (**self).combine(t, sols, lambda)
    }
    fn invert(&self, t: &[f64], target: &[f64], sols: &[&[f64]]) -> Option<Result<Vec<f64>, SuperpositionError>> {
        (**self).invert(t, target, sols)
    }
}

impl<T: Superposition + ?Sized> Superposition for alloc::boxed::Box<T> {
    fn solutions(&self) -> usize {
        (**self).solutions()
    }
    fn state_dim(&self) -> usize {
        (**self).state_dim()
    }
    fn combine(&self, t: &[f64], sols: &[&[f64]], lambda: &[f64]) -> Result<Vec<f64>, SuperpositionError> {
        (**self).combine(t, sols, lambda)
    }
    fn invert(&self, t: &[f64], target: &[f64], sols: &[&[f64]]) -> Option<Result<Vec<f64>, SuperpositionError>> {
        (**self).invert(t, target, sols)
    }
}

#[derive(Clone, Debug)]
enum RuleKind {
    Riccati,
    Bernoulli { nu: f64 },
    BernoulliPrinted,
    Shift { n: usize },
    Custom(CustomRule),
}

#[derive(Clone, Debug)]
struct CustomRule {
    m: usize,
    n: usize,
    time_dim: usize,
    forward: Vec<Program>,
    inverse: Option<Vec<Program>>,
}

/// A built-in or expression-defined superposition rule.
#[derive(Clone, Debug)]
pub struct SuperpositionRule {
    name: String,
    kind: RuleKind,
}

const POLE_TOL: f64 = 1e-12;

impl SuperpositionRule {
    /// Φ(u₁,u₂,u₃;λ) = [u₁(u₃−u₂) − λu₂(u₃−u₁)] / [(u₃−u₂) − λ(u₃−u₁)].
    pub fn riccati() -> SuperpositionRule {
        SuperpositionRule {
            name: "riccati".into(),
            kind: RuleKind::Riccati,
        }
    }

    /// Φ(u₁,u₂;λ) = [λu₁^{1−ν} + (1−λ)u₂^{1−ν}]^{1/(1−ν)} for du/dt = f u^ν + l u.
    pub fn bernoulli(nu: f64) -> Result<SuperpositionRule, SuperpositionError> {
        if nu == 1.0 {
            return Err(SuperpositionError::Domain("Bernoulli exponent must differ from 1".into()));
        }
        Ok(SuperpositionRule {
            name: format!("bernoulli:{nu}"),
            kind: RuleKind::Bernoulli { nu },
        })
    }

    /// Φ(u₁,u₂;λ) = [λu₁^{−1/2} + (1−λ)u₂^{−1/2}]^{−2}, the form usually
    /// printed for the ν = 3 Bernoulli equation, with k read as λ.
    pub fn bernoulli_printed() -> SuperpositionRule {
        SuperpositionRule {
            name: "bernoulli-printed".into(),
            kind: RuleKind::BernoulliPrinted,
        }
    }

    /// Φ(ψ₀; σ) = ψ₀ + σ on ℝⁿ.
    pub fn shift(n: usize) -> SuperpositionRule {
        SuperpositionRule {
            name: "shift".into(),
            kind: RuleKind::Shift { n },
        }
    }

    /// Rule given by expressions. Variable names: for n = 1, solutions `u1..um`,
    /// parameter `lambda` and (for the inverse) target `u0`; for n > 1,
    /// `x{k}_{i}`, `lambda{i}` and `x0_{i}` (1-based i). Time variables, if
    /// any, come first in `time_vars`.
    pub fn custom(
        name: &str,
        m: usize,
        n: usize,
        time_vars: &[&str],
        forward: &[Expr],
        inverse: Option<&[Expr]>,
        params: &BTreeMap<String, f64>,
    ) -> Result<SuperpositionRule, SuperpositionError> {
        if forward.len() != n || inverse.is_some_and(|v| v.len() != n) || m == 0 || n == 0 {
            return Err(SuperpositionError::Dimension("custom rule needs m, n ≥ 1 and n expressions".into()));
        }
        let mut slots: Vec<String> = time_vars.iter().map(|s| String::from(*s)).collect();
        for k in 0..=m {
            for i in 0..n {
                slots.push(sol_var(k, i, n));
            }
        }
        for i in 0..n {
            slots.push(lambda_var(i, n));
        }
        let slot_refs: Vec<&str> = slots.iter().map(String::as_str).collect();
        let compile = |list: &[Expr]| -> Result<Vec<Program>, SuperpositionError> {
            list.iter()
                .map(|e| Program::compile(&e.bind(params), &slot_refs).map_err(SuperpositionError::from))
                .collect()
        };
        Ok(SuperpositionRule {
            name: name.into(),
            kind: RuleKind::Custom(CustomRule {
                m,
                n,
                time_dim: time_vars.len(),
                forward: compile(forward)?,
                inverse: inverse.map(compile).transpose()?,
            }),
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }
}

fn sol_var(k: usize, i: usize, n: usize) -> String {
    if n == 1 {
        format!("u{k}")
    } else {
        format!("x{k}_{}", i + 1)
    }
}

fn lambda_var(i: usize, n: usize) -> String {
    if n == 1 {
        String::from("lambda")
    } else {
        format!("lambda{}", i + 1)
    }
}

fn check_shapes<R: Superposition + ?Sized>(rule: &R, sols: &[&[f64]], point: &[f64]) -> Result<(), SuperpositionError> {
    if sols.len() != rule.solutions() {
        return Err(SuperpositionError::Dimension(format!(
            "rule takes {} solutions, got {}",
            rule.solutions(),
            sols.len()
        )));
    }
    let n = rule.state_dim();
    if point.len() != n || sols.iter().any(|s| s.len() != n) {
        return Err(SuperpositionError::Dimension(format!("points must have {n} coordinates")));
    }
    Ok(())
}

fn positive_power(u: f64, p: f64) -> Result<f64, SuperpositionError> {
    if !(u > 0.0) {
        return Err(SuperpositionError::Domain(format!("solution value {u} must be positive")));
    }
    Ok(math::powf(u, p))
}

fn linear_mix(w0: f64, w1: f64, w2: f64) -> Result<f64, SuperpositionError> {
    let d = w1 - w2;
    if math::abs(d) < POLE_TOL {
        return Err(SuperpositionError::Pole { denominator: d });
    }
    Ok((w0 - w2) / d)
}

impl Superposition for SuperpositionRule {
    fn solutions(&self) -> usize {
        match &self.kind {
            RuleKind::Riccati => 3,
            RuleKind::Bernoulli { .. } | RuleKind::BernoulliPrinted => 2,
            RuleKind::Shift { .. } => 1,
            RuleKind::Custom(c) => c.m,
        }
    }

    fn state_dim(&self) -> usize {
        match &self.kind {
            RuleKind::Shift { n } => *n,
            RuleKind::Custom(c) => c.n,
            _ => 1,
        }
    }

    fn combine(&self, t: &[f64], sols: &[&[f64]], lambda: &[f64]) -> Result<Vec<f64>, SuperpositionError> {
        check_shapes(self, sols, lambda)?;
        match &self.kind {
            RuleKind::Riccati => {
                let (u1, u2, u3, l) = (sols[0][0], sols[1][0], sols[2][0], lambda[0]);
                let den = (u3 - u2) - l * (u3 - u1);
                if math::abs(den) < POLE_TOL {
                    return Err(SuperpositionError::Pole { denominator: den });
                }
                Ok(vec![(u1 * (u3 - u2) - l * u2 * (u3 - u1)) / den])
            }
            RuleKind::Bernoulli { nu } => {
                let p = 1.0 - nu;
                bernoulli_combine(sols, lambda[0], p)
            }
            RuleKind::BernoulliPrinted => bernoulli_combine(sols, lambda[0], -0.5),
            RuleKind::Shift { .. } => Ok(sols[0].iter().zip(lambda).map(|(a, b)| a + b).collect()),
            RuleKind::Custom(c) => {
                let slots = custom_slots(c, t, None, sols, Some(lambda))?;
                c.forward.iter().map(|p| Ok(p.eval(&slots)?)).collect()
            }
        }
    }

    fn invert(&self, t: &[f64], target: &[f64], sols: &[&[f64]]) -> Option<Result<Vec<f64>, SuperpositionError>> {
        if let Err(e) = check_shapes(self, sols, target) {
            return Some(Err(e));
        }
        let u0 = target[0];
        Some(match &self.kind {
            RuleKind::Riccati => {
                let (u1, u2, u3) = (sols[0][0], sols[1][0], sols[2][0]);
                let den = (u0 - u2) * (u3 - u1);
                if math::abs(den) < POLE_TOL {
                    Err(SuperpositionError::Pole { denominator: den })
                } else {
                    Ok(vec![(u0 - u1) * (u3 - u2) / den])
                }
            }
            RuleKind::Bernoulli { nu } => bernoulli_invert(u0, sols, 1.0 - nu),
            RuleKind::BernoulliPrinted => bernoulli_invert(u0, sols, -0.5),
            RuleKind::Shift { .. } => Ok(target.iter().zip(sols[0]).map(|(a, b)| a - b).collect()),
            RuleKind::Custom(c) => {
                let inverse = c.inverse.as_ref()?;
                custom_slots(c, t, Some(target), sols, None)
                    .and_then(|slots| inverse.iter().map(|p| Ok(p.eval(&slots)?)).collect())
            }
        })
    }
}

fn bernoulli_combine(sols: &[&[f64]], lambda: f64, p: f64) -> Result<Vec<f64>, SuperpositionError> {
    let w = lambda * positive_power(sols[0][0], p)? + (1.0 - lambda) * positive_power(sols[1][0], p)?;
    if !(w > 0.0) {
        return Err(SuperpositionError::Domain(format!("bracket {w} must be positive")));
    }
    Ok(vec![math::powf(w, 1.0 / p)])
}

fn bernoulli_invert(u0: f64, sols: &[&[f64]], p: f64) -> Result<Vec<f64>, SuperpositionError> {
    let w0 = positive_power(u0, p)?;
    let w1 = positive_power(sols[0][0], p)?;
    let w2 = positive_power(sols[1][0], p)?;
    Ok(vec![linear_mix(w0, w1, w2)?])
}

fn custom_slots(
    c: &CustomRule,
    t: &[f64],
    target: Option<&[f64]>,
    sols: &[&[f64]],
    lambda: Option<&[f64]>,
) -> Result<Vec<f64>, SuperpositionError> {
    if t.len() != c.time_dim {
        return Err(SuperpositionError::Dimension(format!(
            "rule has {} time variables, got {}",
            c.time_dim,
            t.len()
        )));
    }
    let zeros = vec![0.0; c.n];
    let mut slots = Vec::with_capacity(c.time_dim + (c.m + 2) * c.n);
    slots.extend_from_slice(t);
    slots.extend_from_slice(target.unwrap_or(&zeros));
    for s in sols {
        slots.extend_from_slice(s);
    }
    slots.extend_from_slice(lambda.unwrap_or(&zeros));
    Ok(slots)
}

/// Υ(t, x₍₁₎, …; λ) = g_t⁻¹(Φ(g_t(x₍₁₎), …, g_t(x₍ₘ₎); λ)).
#[derive(Clone, Debug)]
pub struct TDependentRule<R, G> {
    pub rule: R,
    pub flow: G,
}

/// Turns a rule for h⋆X into a t-dependent rule for X, where `flow` is h.
pub fn wrap_with_flow<R: Superposition, G: FlowMap>(rule: R, flow: G) -> Result<TDependentRule<R, G>, SuperpositionError> {
    if rule.state_dim() != flow.state_dim() {
        return Err(SuperpositionError::Dimension("rule and flow state dimensions differ".into()));
    }
    Ok(TDependentRule { rule, flow })
}

impl<R: Superposition, G: FlowMap> TDependentRule<R, G> {
    fn push(&self, t: &[f64], sols: &[&[f64]]) -> Result<Vec<Vec<f64>>, SuperpositionError> {
        sols.iter().map(|s| Ok(self.flow.apply(t, s)?)).collect()
    }
}

impl<R: Superposition, G: FlowMap> Superposition for TDependentRule<R, G> {
    fn solutions(&self) -> usize {
        self.rule.solutions()
    }

    fn state_dim(&self) -> usize {
        self.rule.state_dim()
    }

    fn combine(&self, t: &[f64], sols: &[&[f64]], lambda: &[f64]) -> Result<Vec<f64>, SuperpositionError> {
        let pushed = self.push(t, sols)?;
        let refs: Vec<&[f64]> = pushed.iter().map(Vec::as_slice).collect();
        let y = self.rule.combine(t, &refs, lambda)?;
        Ok(self.flow.inverse_apply(t, &y)?)
    }

    fn invert(&self, t: &[f64], target: &[f64], sols: &[&[f64]]) -> Option<Result<Vec<f64>, SuperpositionError>> {
        let pushed = match self.push(t, sols) {
            Ok(p) => p,
            Err(e) => return Some(Err(e)),
        };
        let y0 = match self.flow.apply(t, target) {
            Ok(y) => y,
            Err(e) => return Some(Err(e.into())),
        };
        let refs: Vec<&[f64]> = pushed.iter().map(Vec::as_slice).collect();
        self.rule.invert(t, &y0, &refs)
    }
}

/// λ solving Φ(t₀, sols; λ) = target, with the final residual.
#[derive(Clone, Debug, PartialEq)]
pub struct LambdaFit {
    pub lambda: Vec<f64>,
    pub residual: f64,
}

/// Convergence tolerance of [`fit_lambda`].
pub const FIT_TOL: f64 = 1e-10;

/// Solves Φ(t₀, sols; λ) = target for λ: safeguarded bisection/secant in
/// one dimension, damped Newton with a finite-difference Jacobian otherwise.
/// A closed-form inverse, when the rule has one, only seeds the search.
pub fn fit_lambda<R: Superposition + ?Sized>(
    rule: &R,
    t0: &[f64],
    sols: &[&[f64]],
    target: &[f64],
) -> Result<LambdaFit, SuperpositionError> {
    check_shapes(rule, sols, target)?;
    let seed = match rule.invert(t0, target, sols) {
        Some(Ok(l)) if l.iter().all(|v| v.is_finite()) => Some(l),
        _ => None,
    };
    if rule.state_dim() == 1 {
        fit_scalar(rule, t0, sols, target[0], seed.map(|l| l[0]))
    } else {
        fit_newton(rule, t0, sols, target, seed)
    }
}

fn fit_scalar<R: Superposition + ?Sized>(
    rule: &R,
    t0: &[f64],
    sols: &[&[f64]],
    target: f64,
    seed: Option<f64>,
) -> Result<LambdaFit, SuperpositionError> {
    let phi = |l: f64| -> Option<f64> {
        match rule.combine(t0, sols, &[l]) {
            Ok(v) if v[0].is_finite() => Some(v[0] - target),
            _ => None,
        }
    };
    let accept = FIT_TOL * (1.0 + math::abs(target));
    let mut grid: Vec<f64> = vec![0.0];
    let mut scale = 1e-3;
    while scale <= 1e6 {
        grid.push(scale);
        grid.push(-scale);
        scale *= 2.0;
    }
    if let Some(s) = seed {
        let h = 1e-6 * (1.0 + math::abs(s));
        grid.extend_from_slice(&[s, s - h, s + h]);
    }
    grid.sort_by(|a, b| a.partial_cmp(b).unwrap_or(core::cmp::Ordering::Equal));
    grid.dedup();
    let values: Vec<(f64, Option<f64>)> = grid.iter().map(|&l| (l, phi(l))).collect();

    let mut best = LambdaFit {
        lambda: vec![f64::NAN],
        residual: f64::INFINITY,
    };
    for &(l, v) in &values {
        if let Some(v) = v {
            if math::abs(v) < best.residual {
                best = LambdaFit {
                    lambda: vec![l],
                    residual: math::abs(v),
                };
            }
        }
    }
    if best.residual == 0.0 {
        return Ok(best);
    }
    let mut brackets: Vec<(f64, f64, f64, f64)> = values
        .windows(2)
        .filter_map(|w| match (w[0].1, w[1].1) {
            (Some(fa), Some(fb)) if fa * fb < 0.0 => Some((w[0].0, fa, w[1].0, fb)),
            _ => None,
        })
        .collect();
    if let Some(s) = seed {
        brackets.sort_by(|x, y| {
            let dx = math::abs(0.5 * (x.0 + x.2) - s);
            let dy = math::abs(0.5 * (y.0 + y.2) - s);
            dx.partial_cmp(&dy).unwrap_or(core::cmp::Ordering::Equal)
        });
    }
    for (mut a, mut fa, mut b, mut fb) in brackets {
        for _ in 0..300 {
            let secant = b - fb * (b - a) / (fb - fa);
            let mid = 0.5 * (a + b);
            let inside = secant > a.min(b) && secant < a.max(b);
            let l = if inside && math::abs(secant - mid) < 0.5 * math::abs(b - a) {
                secant
            } else {
                mid
            };
            let Some(fl) = phi(l) else { break };
            if math::abs(fl) < best.residual {
                best = LambdaFit {
                    lambda: vec![l],
                    residual: math::abs(fl),
                };
            }
            if fl == 0.0 || math::abs(b - a) <= 1e-15 * (1.0 + math::abs(l)) {
                break;
            }
            if fa * fl < 0.0 {
                b = l;
                fb = fl;
            } else {
                a = l;
                fa = fl;
            }
        }
        if best.residual <= accept {
            return Ok(best);
        }
    }
    if best.residual <= accept {
        Ok(best)
    } else {
        Err(SuperpositionError::FitFailed { residual: best.residual })
    }
}

fn fit_newton<R: Superposition + ?Sized>(
    rule: &R,
    t0: &[f64],
    sols: &[&[f64]],
    target: &[f64],
    seed: Option<Vec<f64>>,
) -> Result<LambdaFit, SuperpositionError> {
    let n = target.len();
    let residual = |l: &[f64]| -> Result<Vec<f64>, SuperpositionError> {
        let v = rule.combine(t0, sols, l)?;
        Ok(v.iter().zip(target).map(|(a, b)| a - b).collect())
    };
    let accept = FIT_TOL * (1.0 + math::max_abs(target));
    let mut l = seed.unwrap_or_else(|| vec![0.0; n]);
    let mut r = residual(&l)?;
    let mut norm = math::max_abs(&r);
    for _ in 0..100 {
        if norm <= 1e-3 * accept {
            break;
        }
        let mut jac = DMatrix::zeros(n, n);
        for j in 0..n {
            let h = 1e-7 * (1.0 + math::abs(l[j]));
            let mut lp = l.clone();
            lp[j] += h;
            let mut lm = l.clone();
            lm[j] -= h;
            let rp = residual(&lp)?;
            let rm = residual(&lm)?;
            for i in 0..n {
                jac[(i, j)] = (rp[i] - rm[i]) / (2.0 * h);
            }
        }
        let Some(step) = solve_square(jac, &r) else {
            return Err(SuperpositionError::FitFailed { residual: norm });
        };
        let mut damping = 1.0;
        let mut improved = false;
        while damping > 1e-6 {
            let trial: Vec<f64> = l.iter().zip(&step).map(|(a, d)| a - damping * d).collect();
            if let Ok(rt) = residual(&trial) {
                let nt = math::max_abs(&rt);
                if nt < norm {
                    l = trial;
                    r = rt;
                    norm = nt;
                    improved = true;
                    break;
                }
            }
            damping *= 0.5;
        }
        if !improved {
            break;
        }
    }
    if norm <= accept {
        Ok(LambdaFit {
            lambda: l,
            residual: norm,
        })
    } else {
        Err(SuperpositionError::FitFailed { residual: norm })
    }
}

/// Block copy of a system onto (ℝⁿ)^{copies}.
#[derive(Clone, Debug)]
pub struct Prolongation<S> {
    pub inner: S,
    pub copies: usize,
}

impl<S: VectorSystem> VectorSystem for Prolongation<S> {
    fn state_dim(&self) -> usize {
        self.inner.state_dim() * self.copies
    }

    fn time_dim(&self) -> usize {
        self.inner.time_dim()
    }

    fn eval_into(&self, pi: usize, t: &[f64], x: &[f64], out: &mut [f64]) -> Result<(), FieldError> {
        let n = self.inner.state_dim();
        for a in 0..self.copies {
            self.inner
                .eval_into(pi, t, &x[a * n..(a + 1) * n], &mut out[a * n..(a + 1) * n])?;
        }
        Ok(())
    }

    fn jacobian_x(&self, pi: usize, t: &[f64], x: &[f64]) -> Result<DMatrix<f64>, FieldError> {
        let n = self.inner.state_dim();
        let mut jac = DMatrix::zeros(n * self.copies, n * self.copies);
        for a in 0..self.copies {
            let block = self.inner.jacobian_x(pi, t, &x[a * n..(a + 1) * n])?;
            jac.view_mut((a * n, a * n), (n, n)).copy_from(&block);
        }
        Ok(jac)
    }

    fn time_derivative(&self, pi: usize, wrt: usize, t: &[f64], x: &[f64]) -> Result<Vec<f64>, FieldError> {
        let n = self.inner.state_dim();
        let mut out = Vec::with_capacity(n * self.copies);
        for a in 0..self.copies {
            out.extend(self.inner.time_derivative(pi, wrt, t, &x[a * n..(a + 1) * n])?);
        }
        Ok(out)
    }
}

/// The diagonal prolongation of F to (ℝⁿ)^{m+1}, with state variables
/// renamed `{x}_{a}` for copy a = 0..m. For m = 0 the field is returned as is.
pub fn diagonal_prolongation(field: &PolyField, m: usize) -> Result<PolyField, FieldError> {
    if m == 0 {
        return Ok(field.clone());
    }
    let state = field.state_vars();
    let mut names = Vec::with_capacity(state.len() * (m + 1));
    let mut components: Vec<Vec<Expr>> = vec![Vec::new(); field.time_dim()];
    for a in 0..=m {
        let mut map = BTreeMap::new();
        for v in &state {
            let renamed = format!("{v}_{a}");
            map.insert(String::from(*v), Expr::var(&renamed));
            names.push(renamed);
        }
        for (pi, row) in field.components().iter().enumerate() {
            for e in row {
                components[pi].push(e.substitute(&map));
            }
        }
    }
    let name_refs: Vec<&str> = names.iter().map(String::as_str).collect();
    PolyField::new(&field.time_vars(), &name_refs, components, field.params().clone())
}

/// True iff dim span(basis) ≤ m·n, the bound that a common superposition rule
/// with m solutions needs.
pub fn dimension_bound_check(basis: &VectorFieldBasis, m: usize) -> bool {
    basis.rank() <= m * basis.state_dim()
}

/// Options of [`verify_rule`].
#[derive(Clone, Debug)]
pub struct VerifyOptions {
    pub tol: f64,
    /// Dimension r of a Vessiot–Guldberg algebra of the field, when known;
    /// a warning is emitted if m < ⌈r/n⌉.
    pub algebra_dim: Option<usize>,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            tol: 1e-6,
            algebra_dim: None,
        }
    }
}

/// Max deviation |Φ(t, x₍₁₎(t), …; λ) − x₍₀₎(t)| along the explored paths.
#[derive(Clone, Debug, PartialEq)]
pub struct DeviationReport {
    pub lambda: Vec<f64>,
    pub lambda_residual: f64,
    pub max_deviation: f64,
    pub worst_time: Vec<f64>,
    pub samples: usize,
    pub tol: f64,
    pub pass: bool,
    pub warnings: Vec<String>,
}

/// Integrates x₍₀₎, …, x₍ₘ₎ from `initial` (in that order) along every path,
/// fits λ once at the common start time and measures the rule's deviation
/// at every integration sample.
pub fn verify_rule<R: Superposition + ?Sized, S: VectorSystem>(
    rule: &R,
    field: &S,
    initial: &[Vec<f64>],
    paths: &[TimePath],
    options: &VerifyOptions,
) -> Result<DeviationReport, SuperpositionError> {
    let m = rule.solutions();
    let n = rule.state_dim();
    if initial.len() != m + 1 || initial.iter().any(|x| x.len() != n) {
        return Err(SuperpositionError::Dimension(format!(
            "need {} initial points of dimension {n}",
            m + 1
        )));
    }
    if field.state_dim() != n {
        return Err(SuperpositionError::Dimension("rule and field state dimensions differ".into()));
    }
    let Some(first) = paths.first() else {
        return Err(SuperpositionError::Dimension("at least one path is required".into()));
    };
    let t0 = first.start().to_vec();
    if paths.iter().any(|p| p.start() != t0.as_slice()) {
        return Err(SuperpositionError::Dimension("all paths must start at the same time".into()));
    }
    let mut warnings = Vec::new();
    if let Some(r) = options.algebra_dim {
        if m * n < r {
            warnings.push(format!(
                "m = {m} is below ⌈r/n⌉ = {} for a Vessiot–Guldberg algebra of dimension {r}",
                r.div_ceil(n)
            ));
        }
    }
    let sols0: Vec<&[f64]> = initial[1..].iter().map(Vec::as_slice).collect();
    let fit = fit_lambda(rule, &t0, &sols0, &initial[0])?;

    let prolonged = Prolongation {
        inner: field,
        copies: m + 1,
    };
    let x0: Vec<f64> = initial.iter().flatten().copied().collect();
    let mut max_deviation = 0.0f64;
    let mut worst_time = t0.clone();
    let mut samples = 0;
    for path in paths {
        let traj = integrate_path(&prolonged, path, &x0)?;
        for (t, x) in traj.times.iter().zip(&traj.states) {
            let sols: Vec<&[f64]> = (1..=m).map(|a| &x[a * n..(a + 1) * n]).collect();
            let predicted = rule
                .combine(t, &sols, &fit.lambda)
                .map_err(|e| SuperpositionError::AtTime {
                    t: t.clone(),
                    source: alloc::boxed::Box::new(e),
                })?;
            let dev = math::max_abs_diff(&predicted, &x[..n]);
            if dev > max_deviation || !dev.is_finite() {
                max_deviation = if dev.is_finite() { dev } else { f64::INFINITY };
                worst_time = t.clone();
            }
            samples += 1;
        }
    }
    Ok(DeviationReport {
        lambda: fit.lambda,
        lambda_residual: fit.residual,
        max_deviation,
        worst_time,
        samples,
        tol: options.tol,
        pass: max_deviation <= options.tol,
        warnings,
    })
}

/// Paths from (lo₁, lo₂) covering [lo₁, hi₁] × [lo₂, hi₂]: for each of
/// `lines` levels of t₂, up the t₂ axis and then across in t₁.
pub fn covering_paths(
    lo: [f64; 2],
    hi: [f64; 2],
    lines: usize,
    steps_per_unit: f64,
) -> Result<Vec<TimePath>, FieldError> {
    let mut paths = Vec::with_capacity(lines);
    for k in 1..=lines {
        let level = lo[1] + (hi[1] - lo[1]) * k as f64 / lines as f64;
        paths.push(TimePath::with_density(
            vec![vec![lo[0], lo[1]], vec![lo[0], level], vec![hi[0], level]],
            steps_per_unit,
        )?);
    }
    paths.push(TimePath::with_density(
        vec![vec![lo[0], lo[1]], vec![hi[0], lo[1]]],
        steps_per_unit,
    )?);
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;
    use crate::fields::{integrate_to, zcc_residual};
    use crate::flows::{GeneralisedFlow, InverseFlow};

    fn riccati_data() -> [Vec<f64>; 3] {
        [vec![0.0], vec![1.0], vec![2.0]]
    }

    #[test]
    fn riccati_values() {
        let r = SuperpositionRule::riccati();
        let [a, b, c] = riccati_data();
        let s: [&[f64]; 3] = [&a, &b, &c];
        assert_eq!(r.combine(&[], &s, &[0.0]).unwrap(), vec![0.0]);
        assert!((r.combine(&[], &s, &[1.0]).unwrap()[0] - 2.0).abs() < 1e-15);
        assert!((r.combine(&[], &s, &[-1.0]).unwrap()[0] - 2.0 / 3.0).abs() < 1e-15);
        let fit = fit_lambda(&r, &[], &s, &[2.0 / 3.0]).unwrap();
        assert!((fit.lambda[0] + 1.0).abs() < 1e-10);
        assert!(fit_lambda(&r, &[], &s, &[0.0]).unwrap().lambda[0].abs() < 1e-10);
    }

    #[test]
    fn riccati_rule_is_not_symmetric() {
        let r = SuperpositionRule::riccati();
        let (a, b, c) = ([0.3], [1.1], [-0.4]);
        let x = r.combine(&[], &[&a, &b, &c], &[0.7]).unwrap()[0];
        let y = r.combine(&[], &[&b, &a, &c], &[0.7]).unwrap()[0];
        assert!((x - y).abs() > 1e-3);
    }

    #[test]
    fn bernoulli_values() {
        let r = SuperpositionRule::bernoulli(3.0).unwrap();
        let (a, b) = ([1.0], [2.0]);
        assert!((r.combine(&[], &[&a, &b], &[1.0]).unwrap()[0] - 1.0).abs() < 1e-15);
        assert!((r.combine(&[], &[&a, &b], &[0.0]).unwrap()[0] - 2.0).abs() < 1e-15);
        let half = r.combine(&[], &[&a, &b], &[0.5]).unwrap()[0];
        assert!((half - libm::pow(5.0 / 8.0, -0.5)).abs() < 1e-14);
        assert!(SuperpositionRule::bernoulli(1.0).is_err());
        assert!(r.combine(&[], &[&[-1.0], &b], &[0.5]).is_err());
    }

    #[test]
    fn shift_rule() {
        let r = SuperpositionRule::shift(2);
        assert_eq!(r.combine(&[], &[&[1.0, 2.0]], &[0.0, 0.0]).unwrap(), vec![1.0, 2.0]);
        let fit = fit_lambda(&r, &[], &[&[1.0, 2.0]], &[0.5, -1.0]).unwrap();
        assert!(math::max_abs_diff(&fit.lambda, &[-0.5, -3.0]) < 1e-12);
    }

    #[test]
    fn custom_rule_matches_builtin() {
        let fwd = parse("(u1*(u3 - u2) - lambda*u2*(u3 - u1))/((u3 - u2) - lambda*(u3 - u1))").unwrap();
        let inv = parse("(u0 - u1)*(u3 - u2)/((u0 - u2)*(u3 - u1))").unwrap();
        let c = SuperpositionRule::custom("cross-ratio", 3, 1, &[], &[fwd], Some(&[inv]), &BTreeMap::new())
            .unwrap();
        let r = SuperpositionRule::riccati();
        let s: [&[f64]; 3] = [&[0.2], &[-0.7], &[1.9]];
        assert_eq!(c.combine(&[], &s, &[0.3]).unwrap(), r.combine(&[], &s, &[0.3]).unwrap());
        let l1 = c.invert(&[], &[0.5], &s).unwrap().unwrap();
        let l2 = r.invert(&[], &[0.5], &s).unwrap().unwrap();
        assert!((l1[0] - l2[0]).abs() < 1e-15);
    }

    #[test]
    fn newton_fit_in_two_dimensions() {
        let fwd = [parse("x1_1 + lambda1 + 0.1*lambda2^2").unwrap(), parse("x1_2*exp(lambda2)").unwrap()];
        let c = SuperpositionRule::custom("nl", 1, 2, &[], &fwd, None, &BTreeMap::new()).unwrap();
        let sol: [&[f64]; 1] = [&[0.5, 2.0]];
        let target = c.combine(&[], &sol, &[0.3, -0.4]).unwrap();
        let fit = fit_lambda(&c, &[], &sol, &target).unwrap();
        assert!(math::max_abs_diff(&fit.lambda, &[0.3, -0.4]) < 1e-9);
    }

    #[test]
    fn wrapping_with_a_flow_and_its_inverse() {
        let g = GeneralisedFlow::affine(&["t"], "x", parse("1 + t^2").unwrap(), parse("sin(t)").unwrap(), BTreeMap::new())
            .unwrap();
        let base = SuperpositionRule::riccati();
        let once = wrap_with_flow(&base, &g).unwrap();
        let twice = wrap_with_flow(&once, InverseFlow(&g)).unwrap();
        let s: [&[f64]; 3] = [&[0.2], &[-0.7], &[1.9]];
        for t in [0.0, 0.4, 1.1] {
            let a = base.combine(&[t], &s, &[0.35]).unwrap()[0];
            let b = twice.combine(&[t], &s, &[0.35]).unwrap()[0];
            assert!((a - b).abs() < 1e-9);
        }
        let id = GeneralisedFlow::identity(&["t"], &["x"]);
        let same = wrap_with_flow(&base, &id).unwrap();
        assert_eq!(same.combine(&[0.5], &s, &[0.35]).unwrap(), base.combine(&[0.5], &s, &[0.35]).unwrap());
    }

    #[test]
    fn bernoulli_rule_verifies_and_printed_form_fails() {
        let field = PolyField::parse(&["t"], &["u"], &[&["exp(-t)*u^3 + 0.3*u"]], &[]).unwrap();
        let initial = vec![vec![0.4], vec![0.3], vec![0.55]];
        let paths = vec![TimePath::with_density(vec![vec![0.0], vec![1.0]], 1000.0).unwrap()];
        let opts = VerifyOptions::default();
        let good = verify_rule(&SuperpositionRule::bernoulli(3.0).unwrap(), &field, &initial, &paths, &opts).unwrap();
        assert!(good.pass, "{good:?}");
        let bad = verify_rule(&SuperpositionRule::bernoulli_printed(), &field, &initial, &paths, &opts).unwrap();
        assert!(bad.max_deviation > 1e-2, "{bad:?}");
    }

    #[test]
    fn riccati_gradient_family_verifies() {
        let field = crate::families::riccati_gradient(
            &["t1", "t2"],
            "u",
            &parse("0.5*sin(t1 + 2*t2) + t1*t2").unwrap(),
            [1.0, 0.0, 1.0],
            BTreeMap::new(),
        )
        .unwrap();
        let initial = vec![vec![0.1], vec![-0.3], vec![0.25], vec![0.6]];
        let paths = covering_paths([0.0, 0.0], [0.4, 0.4], 4, 500.0).unwrap();
        let report = verify_rule(&SuperpositionRule::riccati(), &field, &initial, &paths, &VerifyOptions::default())
            .unwrap();
        assert!(report.pass, "{report:?}");
        let wrong = verify_rule(
            &SuperpositionRule::bernoulli(3.0).unwrap(),
            &field,
            &[vec![0.1], vec![0.25], vec![0.6]],
            &paths,
            &VerifyOptions::default(),
        );
        assert!(!matches!(wrong, Ok(ref r) if r.pass));
    }

    #[test]
    fn zero_field_keeps_every_rule_exact() {
        let field = PolyField::parse(&["t"], &["u"], &[&["0"]], &[]).unwrap();
        let paths = vec![TimePath::with_density(vec![vec![0.0], vec![1.0]], 50.0).unwrap()];
        let r = verify_rule(
            &SuperpositionRule::riccati(),
            &field,
            &[vec![0.4], vec![0.0], vec![1.0], vec![2.0]],
            &paths,
            &VerifyOptions::default(),
        )
        .unwrap();
        assert!(r.max_deviation < 1e-15);
    }

    #[test]
    fn prolongation_decouples() {
        let f = PolyField::parse(&["t1", "t2"], &["x"], &[&["t2*x^2"], &["t1*x^2 + 1"]], &[]).unwrap();
        assert_eq!(diagonal_prolongation(&f, 0).unwrap().state_vars(), ["x"]);
        let p = diagonal_prolongation(&f, 2).unwrap();
        assert_eq!(p.state_vars(), ["x_0", "x_1", "x_2"]);
        let path = TimePath::with_density(vec![vec![0.0, 0.0], vec![0.3, 0.2]], 500.0).unwrap();
        let joint = integrate_to(&p, &path, &[0.1, -0.2, 0.3]).unwrap();
        for (a, x0) in [0.1, -0.2, 0.3].iter().enumerate() {
            let single = integrate_to(&f, &path, &[*x0]).unwrap();
            assert!((joint[a] - single[0]).abs() < 1e-14);
        }
        let ev = Prolongation { inner: &f, copies: 3 };
        let t = [0.2, 0.1];
        let x = [0.5, 0.7, -0.1];
        let rp = zcc_residual(&p, 0, 1, &t, &x).unwrap();
        let re = zcc_residual(&ev, 0, 1, &t, &x).unwrap();
        for a in 0..3 {
            let rb = zcc_residual(&f, 0, 1, &t, &x[a..a + 1]).unwrap()[0];
            assert!((rp[a] - rb).abs() < 1e-14 && (re[a] - rb).abs() < 1e-12);
        }
    }

    #[test]
    fn dimension_bounds() {
        let sl2 = crate::schemes::riccati_basis().unwrap();
        assert!(dimension_bound_check(&sl2, 3));
        assert!(!dimension_bound_check(&sl2, 2));
        let vl = crate::schemes::liouville_basis(2.0).unwrap();
        assert!(dimension_bound_check(&vl, 2));
        assert!(!dimension_bound_check(&vl, 1));
        let field = crate::families::liouville(0.0, 2.0, &parse("t1").unwrap()).unwrap();
        let paths = covering_paths([0.0, 0.0], [0.1, 0.1], 1, 100.0).unwrap();
        let shift = SuperpositionRule::shift(1);
        let r = verify_rule(
            &shift,
            &field,
            &[vec![0.1], vec![0.2]],
            &paths,
            &VerifyOptions {
                tol: 1e-6,
                algebra_dim: Some(2),
            },
        )
        .unwrap();
        assert_eq!(r.warnings.len(), 1);
    }
}
