use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use nalgebra::DVector;

use super::{merge_params, FlowError, FlowKind, FlowMap, GeneralisedFlow};
use crate::expr::{add, differentiate, div, mul, sub, Expr};
use crate::fields::{FieldError, PolyField, VectorSystem};
use crate::linalg::solve_square;
use crate::math;

/// Numerical evaluator of h⋆F:
/// (h⋆F)_π(t, y) = ∂_π h_t(x) + Dh_t(x)·X_π(t, x) with x = h_t⁻¹(y).
#[derive(Clone, Debug)]
pub struct StarField<H, F> {
    pub flow: H,
    pub field: F,
}

/// h⋆F as an evaluator.
pub fn star_action<H: FlowMap, F: VectorSystem>(flow: H, field: F) -> Result<StarField<H, F>, FlowError> {
    if flow.state_dim() != field.state_dim() || flow.time_dim() != field.time_dim() {
        return Err(FlowError::Dimension("flow and field dimensions differ".into()));
    }
    Ok(StarField { flow, field })
}

impl<H: FlowMap, F: VectorSystem> VectorSystem for StarField<H, F> {
    fn state_dim(&self) -> usize {
        self.field.state_dim()
    }

    fn time_dim(&self) -> usize {
        self.field.time_dim()
    }

    fn eval_into(&self, pi: usize, t: &[f64], y: &[f64], out: &mut [f64]) -> Result<(), FieldError> {
        let x = self.flow.inverse_apply(t, y)?;
        let d = self.flow.time_derivative(pi, t, &x)?;
        let jac = self.flow.jacobian(t, &x)?;
        let v = DVector::from_vec(self.field.eval(pi, t, &x)?);
        let pushed = jac * v;
        for i in 0..out.len() {
            out[i] = d[i] + pushed[i];
        }
        Ok(())
    }
}

fn same_variables(h: &GeneralisedFlow, f: &PolyField) -> Result<(), FlowError> {
    if h.time_vars() != f.time_vars() || h.state_vars() != f.state_vars() {
        return Err(FlowError::Dimension(
            "flow and field must use the same time and state variable names".into(),
        ));
    }
    Ok(())
}

/// h⋆F as expressions, for identity, affine and explicit flows.
pub fn star_action_closed_form(h: &GeneralisedFlow, f: &PolyField) -> Result<PolyField, FlowError> {
    same_variables(h, f)?;
    let params = merge_params(h.params(), f.params())?;
    let time_vars = f.time_vars();
    let state_vars = f.state_vars();
    let components: Vec<Vec<Expr>> = match h.kind() {
        FlowKind::Identity => f.components().to_vec(),
        FlowKind::Affine { scale, shift } => {
            let x = state_vars[0];
            let inv = div(sub(Expr::var(x), shift.clone()), scale.clone());
            let mut map = BTreeMap::new();
            map.insert(String::from(x), inv.clone());
            time_vars
                .iter()
                .enumerate()
                .map(|(pi, tv)| {
                    let moved = f.components()[pi][0].substitute(&map);
                    let c = add(
                        add(mul(differentiate(scale, tv), inv.clone()), differentiate(shift, tv)),
                        mul(scale.clone(), moved),
                    );
                    alloc::vec![c]
                })
                .collect()
        }
        FlowKind::Explicit { forward, inverse } => {
            let mut map = BTreeMap::new();
            for (v, e) in state_vars.iter().zip(inverse) {
                map.insert(String::from(*v), e.clone());
            }
            time_vars
                .iter()
                .enumerate()
                .map(|(pi, tv)| {
                    forward
                        .iter()
                        .map(|y| {
                            let mut c = differentiate(y, tv);
                            for (j, xj) in state_vars.iter().enumerate() {
                                c = add(c, mul(differentiate(y, xj), f.components()[pi][j].clone()));
                            }
                            c.substitute(&map)
                        })
                        .collect()
                })
                .collect()
        }
        FlowKind::Generated { .. } => {
            return Err(FlowError::NotClosedForm("generated flows are numerical only"))
        }
    };
    Ok(PolyField::new(&time_vars, &state_vars, components, params)?)
}

/// Max deviation between the pushforward of ∂_{t_π} + X_π under
/// ḡ(t, x) = (t, h_t(x)) (by Richardson-extrapolated central differences of
/// `apply` alone) and the autonomisation of h⋆F, over samples (t, y).
pub fn autonomisation_check<H: FlowMap, F: VectorSystem>(
    flow: H,
    field: F,
    samples: &[(Vec<f64>, Vec<f64>)],
) -> Result<f64, FlowError> {
    let s = field.time_dim();
    let star = star_action(&flow, &field)?;
    let mut worst = 0.0f64;
    for (t, y) in samples {
        let x = flow.inverse_apply(t, y)?;
        for pi in 0..s {
            let v = field.eval(pi, t, &x)?;
            let scale = 1.0 + math::max_abs(t).max(math::max_abs(&x));
            let eps = 1e-3 * scale;
            let d1 = directional(&flow, pi, t, &x, &v, eps)?;
            let d2 = directional(&flow, pi, t, &x, &v, eps / 2.0)?;
            let pushed: Vec<f64> = d1.iter().zip(&d2).map(|(a, b)| (4.0 * b - a) / 3.0).collect();
            let transformed = star.eval(pi, t, y)?;
            worst = worst.max(math::max_abs_diff(&pushed, &transformed));
        }
    }
    Ok(worst)
}

fn directional<H: FlowMap>(
    flow: &H,
    pi: usize,
    t: &[f64],
    x: &[f64],
    v: &[f64],
    eps: f64,
) -> Result<Vec<f64>, FlowError> {
    let mut tp = t.to_vec();
    let mut tm = t.to_vec();
    tp[pi] += eps;
    tm[pi] -= eps;
    let xp: Vec<f64> = x.iter().zip(v).map(|(a, b)| a + eps * b).collect();
    let xm: Vec<f64> = x.iter().zip(v).map(|(a, b)| a - eps * b).collect();
    let fp = flow.apply(&tp, &xp)?;
    let fm = flow.apply(&tm, &xm)?;
    Ok(fp.iter().zip(&fm).map(|(a, b)| (a - b) / (2.0 * eps)).collect())
}

/// X⁻¹_t = −(g_t)⁻¹_* X_t, the generator of the inverse of the flow of X.
#[derive(Clone, Debug)]
pub struct InverseField {
    flow: GeneralisedFlow,
}

/// Inverse field of `field` with respect to the foot point t₀.
pub fn inverse_field(field: &PolyField, foot: Vec<f64>) -> Result<InverseField, FlowError> {
    Ok(InverseField {
        flow: GeneralisedFlow::generated(field.clone(), foot)?,
    })
}

impl InverseField {
    pub fn with_steps_per_unit(mut self, density: f64) -> Self {
        self.flow = self.flow.with_steps_per_unit(density);
        self
    }

    fn field(&self) -> &PolyField {
        match self.flow.kind() {
            FlowKind::Generated { field } => field,
            _ => unreachable!("inverse fields always hold a generated flow"),
        }
    }
}

impl VectorSystem for InverseField {
    fn state_dim(&self) -> usize {
        self.field().state_dim()
    }

    fn time_dim(&self) -> usize {
        self.field().time_dim()
    }

    fn eval_into(&self, pi: usize, t: &[f64], y: &[f64], out: &mut [f64]) -> Result<(), FieldError> {
        let z = self.flow.apply(t, y)?;
        let jac = self.flow.jacobian(t, y)?;
        let v = self.field().eval(pi, t, &z)?;
        let w = solve_square(jac, &v).ok_or_else(|| {
            FieldError::from(FlowError::SingularJacobian {
                t: t.to_vec(),
                x: y.to_vec(),
            })
        })?;
        for i in 0..out.len() {
            out[i] = -w[i];
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;
    use crate::fields::{integrate_to, TimePath, ZeroField};
    use crate::math::max_abs_diff;
    use alloc::vec;

    fn affine(a: &str, b: &str) -> GeneralisedFlow {
        GeneralisedFlow::affine(&["t"], "x", parse(a).unwrap(), parse(b).unwrap(), BTreeMap::new())
            .unwrap()
    }

    fn abel(eps: f64) -> PolyField {
        PolyField::parse(
            &["t"],
            &["x"],
            &[&["sin(t) + (1 + t)*x + exp(-t)*x^(eps - 1) + (2 - t)*x^eps"]],
            &[("eps", eps)],
        )
        .unwrap()
    }

    #[test]
    fn identity_flow_leaves_field_unchanged() {
        let f = abel(3.0);
        let id = GeneralisedFlow::identity(&["t"], &["x"]);
        let g = star_action_closed_form(&id, &f).unwrap();
        assert_eq!(g.components(), f.components());
        let unit = affine("1", "0");
        let g = star_action_closed_form(&unit, &f).unwrap();
        assert_eq!(g.bound_component(0, 0), f.bound_component(0, 0));
    }

    #[test]
    fn translation_pushforward() {
        let f = PolyField::parse(&["t"], &["x"], &[&["1"]], &[]).unwrap();
        let h = affine("1", "t^2");
        let g = star_action_closed_form(&h, &f).unwrap();
        for k in 0..5 {
            let t = 0.3 * k as f64;
            let v = g.eval(0, &[t], &[1.7]).unwrap()[0];
            assert!((v - (2.0 * t + 1.0)).abs() < 1e-14);
        }
    }

    #[test]
    fn scaling_transforms_abel_coefficients() {
        // x̄ = β x maps (a, c, f, g) to (aβ, β̇/β + c, f β^{2-ε}, g β^{1-ε}).
        let eps = 2.5;
        let f = abel(eps);
        let h = affine("exp(t/2)", "0");
        let g = star_action_closed_form(&h, &f).unwrap();
        let t = 0.7f64;
        let beta = (t / 2.0).exp();
        let (a, c, ff, gg) = (t.sin(), 1.0 + t, (-t).exp(), 2.0 - t);
        for x in [0.5, 1.0, 1.7] {
            let expected = a * beta
                + (0.5 + c) * x
                + ff * beta.powf(2.0 - eps) * x.powf(eps - 1.0)
                + gg * beta.powf(1.0 - eps) * x.powf(eps);
            let got = g.eval(0, &[t], &[x]).unwrap()[0];
            assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
        }
    }

    #[test]
    fn closed_form_matches_evaluator() {
        let f = abel(3.0);
        let h = affine("2 + sin(t)", "t^2 - 0.5");
        let closed = star_action_closed_form(&h, &f).unwrap();
        let numeric = star_action(&h, &f).unwrap();
        for k in 0..10 {
            let t = [0.1 * k as f64];
            let y = [0.2 + 0.3 * k as f64];
            let a = closed.eval(0, &t, &y).unwrap();
            let b = numeric.eval(0, &t, &y).unwrap();
            assert!(max_abs_diff(&a, &b) < 1e-12);
        }
    }

    #[test]
    fn explicit_closed_form_matches_evaluator() {
        let f = PolyField::parse(&["t"], &["x", "y"], &[&["y", "-x + t"]], &[]).unwrap();
        let h = GeneralisedFlow::explicit(
            &["t"],
            &["x", "y"],
            vec![parse("x + t*y").unwrap(), parse("exp(t)*y").unwrap()],
            vec![parse("x - t*y*exp(-t)").unwrap(), parse("y*exp(-t)").unwrap()],
            BTreeMap::new(),
        )
        .unwrap();
        let closed = star_action_closed_form(&h, &f).unwrap();
        let numeric = star_action(&h, &f).unwrap();
        let a = closed.eval(0, &[0.4], &[1.0, -0.5]).unwrap();
        let b = numeric.eval(0, &[0.4], &[1.0, -0.5]).unwrap();
        assert!(max_abs_diff(&a, &b) < 1e-12);
    }

    #[test]
    fn autonomisation_of_affine_flow() {
        let f = abel(3.0);
        let h = affine("1 + t^2", "sin(t)");
        let samples: Vec<_> = (0..20)
            .map(|k| (vec![0.05 * k as f64], vec![0.5 + 0.07 * k as f64]))
            .collect();
        let dev = autonomisation_check(&h, &f, &samples).unwrap();
        assert!(dev < 1e-8, "{dev}");
        let id = GeneralisedFlow::identity(&["t"], &["x"]);
        assert!(autonomisation_check(&id, &f, &samples).unwrap() < 1e-9);
    }

    #[test]
    fn inverse_of_autonomous_field_is_negated() {
        let f = PolyField::parse(&["t"], &["x"], &[&["x - x^3/3"]], &[]).unwrap();
        let inv = inverse_field(&f, vec![0.0]).unwrap();
        for (t, y) in [(0.3, 0.7), (1.0, -0.4), (0.5, 1.2)] {
            let a = inv.eval(0, &[t], &[y]).unwrap()[0];
            let b = f.eval(0, &[t], &[y]).unwrap()[0];
            assert!((a + b).abs() < 1e-7, "{a} vs {b}");
        }
        let zero = PolyField::parse(&["t"], &["x"], &[&["0"]], &[]).unwrap();
        let inv = inverse_field(&zero, vec![0.0]).unwrap();
        assert_eq!(inv.eval(0, &[0.4], &[2.0]).unwrap(), vec![0.0]);
    }

    #[test]
    fn inverse_field_flow_undoes_the_flow() {
        let f = PolyField::parse(&["t"], &["x"], &[&["sin(t)*x + cos(2*t)"]], &[]).unwrap();
        let g = GeneralisedFlow::generated(f.clone(), vec![0.0]).unwrap();
        let inv = inverse_field(&f, vec![0.0]).unwrap().with_steps_per_unit(200.0);
        let path = TimePath::new(vec![vec![0.0], vec![0.6]], 120).unwrap();
        for y in [-1.0, 0.3, 2.0] {
            let h = integrate_to(&inv, &path, &[y]).unwrap();
            let back = g.apply(&[0.6], &h).unwrap();
            assert!((back[0] - y).abs() < 1e-6, "{back:?} vs {y}");
        }
    }

    #[test]
    fn zero_field_star_is_flow_velocity() {
        let h = affine("exp(t)", "0");
        let star = star_action(&h, ZeroField { n: 1, s: 1 }).unwrap();
        let v = star.eval(0, &[0.2], &[3.0]).unwrap()[0];
        assert!((v - 3.0).abs() < 1e-14);
    }
}
