//! Generalised t-flows: t-dependent families of diffeomorphisms g_t of state
//! space, their composition, and their ⋆-action on polyvector fields.

mod compose;
mod star;

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::expr::{differentiate, EvalError, Expr, Program};
use crate::fields::{integrate_to, FieldError, PolyField, TimePath, VectorSystem};
use crate::linalg::solve_square;
use crate::math;

pub use compose::{affine_compose, compose_flows, FlowComposition};
pub use star::{
    autonomisation_check, inverse_field, star_action, star_action_closed_form, InverseField,
    StarField,
};

/// Failures of flow evaluation and transformation.
#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum FlowError {
    #[error("singular flow at t = {t:?}: scale {scale} is not positive")]
    Singular { t: Vec<f64>, scale: f64 },
    #[error("singular flow Jacobian at t = {t:?}, x = {x:?}")]
    SingularJacobian { t: Vec<f64>, x: Vec<f64> },
    #[error("{what}: {source}")]
    Expr { what: &'static str, source: EvalError },
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("no closed form: {0}")]
    NotClosedForm(&'static str),
    #[error("parameter '{0}' bound to different values in flow and field")]
    ParamConflict(String),
}

impl From<FlowError> for FieldError {
    fn from(e: FlowError) -> FieldError {
        match e {
            FlowError::Field(f) => f,
            other => FieldError::Other(alloc::format!("{other}")),
        }
    }
}

/// Union of two parameter maps; a name bound to two different values is an error.
pub(crate) fn merge_params(
    a: &BTreeMap<String, f64>,
    b: &BTreeMap<String, f64>,
) -> Result<BTreeMap<String, f64>, FlowError> {
    let mut out = a.clone();
    for (k, v) in b {
        match out.get(k) {
            Some(w) if w != v => return Err(FlowError::ParamConflict(k.clone())),
            _ => {
                out.insert(k.clone(), *v);
            }
        }
    }
    Ok(out)
}

fn expr_err(what: &'static str) -> impl Fn(EvalError) -> FlowError {
    move |source| FlowError::Expr { what, source }
}

/// A t-dependent diffeomorphism x ↦ g_t(x) of ℝⁿ.
pub trait FlowMap {
    fn state_dim(&self) -> usize;
    fn time_dim(&self) -> usize;

    fn apply(&self, t: &[f64], x: &[f64]) -> Result<Vec<f64>, FlowError>;

    fn inverse_apply(&self, t: &[f64], y: &[f64]) -> Result<Vec<f64>, FlowError>;

    /// ∂g_t(x)/∂t_π; central differences of `apply` unless overridden.
    fn time_derivative(&self, pi: usize, t: &[f64], x: &[f64]) -> Result<Vec<f64>, FlowError> {
        let h = 1e-5 * (1.0 + math::abs(t[pi]));
        let mut tp = t.to_vec();
        tp[pi] = t[pi] + h;
        let fp = self.apply(&tp, x)?;
        tp[pi] = t[pi] - h;
        let fm = self.apply(&tp, x)?;
        Ok(fp.iter().zip(&fm).map(|(a, b)| (a - b) / (2.0 * h)).collect())
    }

    /// Dg_t(x); central differences of `apply` unless overridden.
    fn jacobian(&self, t: &[f64], x: &[f64]) -> Result<DMatrix<f64>, FlowError> {
        let n = self.state_dim();
        let mut jac = DMatrix::zeros(n, n);
        let mut xp = x.to_vec();
        for j in 0..n {
            let h = 1e-5 * (1.0 + math::abs(x[j]));
            xp[j] = x[j] + h;
            let fp = self.apply(t, &xp)?;
            xp[j] = x[j] - h;
            let fm = self.apply(t, &xp)?;
            xp[j] = x[j];
            for i in 0..n {
                jac[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
            }
        }
        Ok(jac)
    }
}

impl<T: FlowMap + ?Sized> FlowMap for &T {
    fn state_dim(&self) -> usize {
        (**self).state_dim()
    }
    fn time_dim(&self) -> usize {
        (**self).time_dim()
    }
    fn apply(&self, t: &[f64], x: &[f64]) -> Result<Vec<f64>, FlowError> {
        (**self).apply(t, x)
    }
    fn inverse_apply(&self, t: &[f64], y: &[f64]) -> Result<Vec<f64>, FlowError> {
        (**self).inverse_apply(t, y)
    }
    fn time_derivative(&self, pi: usize, t: &[f64], x: &[f64]) -> Result<Vec<f64>, FlowError> {
        (**self).time_derivative(pi, t, x)
    }
    fn jacobian(&self, t: &[f64], x: &[f64]) -> Result<DMatrix<f64>, FlowError> {
        (**self).jacobian(t, x)
    }
}

impl<T: FlowMap + ?Sized> FlowMap for alloc::boxed::Box<T> {
    fn state_dim(&self) -> usize {
        (**self).state_dim()
    }
    fn time_dim(&self) -> usize {
        (**self).time_dim()
    }
    fn apply(&self, t: &[f64], x: &[f64]) -> Result<Vec<f64>, FlowError> {
        (**self).apply(t, x)
    }
    fn inverse_apply(&self, t: &[f64], y: &[f64]) -> Result<Vec<f64>, FlowError> {
        (**self).inverse_apply(t, y)
    }
    fn time_derivative(&self, pi: usize, t: &[f64], x: &[f64]) -> Result<Vec<f64>, FlowError> {
        (**self).time_derivative(pi, t, x)
    }
    fn jacobian(&self, t: &[f64], x: &[f64]) -> Result<DMatrix<f64>, FlowError> {
        (**self).jacobian(t, x)
    }
}

/// The pointwise inverse family t ↦ g_t⁻¹.
#[derive(Clone, Debug)]
pub struct InverseFlow<G>(pub G);

impl<G: FlowMap> FlowMap for InverseFlow<G> {
    fn state_dim(&self) -> usize {
        self.0.state_dim()
    }
    fn time_dim(&self) -> usize {
        self.0.time_dim()
    }
    fn apply(&self, t: &[f64], x: &[f64]) -> Result<Vec<f64>, FlowError> {
        self.0.inverse_apply(t, x)
    }
    fn inverse_apply(&self, t: &[f64], y: &[f64]) -> Result<Vec<f64>, FlowError> {
        self.0.apply(t, y)
    }
    /// ∂_π(g⁻¹)(y) = −Dg(x)⁻¹ ∂_π g(x) with x = g⁻¹(y).
    fn time_derivative(&self, pi: usize, t: &[f64], y: &[f64]) -> Result<Vec<f64>, FlowError> {
        let x = self.0.inverse_apply(t, y)?;
        let d = self.0.time_derivative(pi, t, &x)?;
        let jac = self.0.jacobian(t, &x)?;
        let z = solve_square(jac, &d).ok_or(FlowError::SingularJacobian {
            t: t.to_vec(),
            x: x.clone(),
        })?;
        Ok(z.iter().map(|v| -v).collect())
    }
    fn jacobian(&self, t: &[f64], y: &[f64]) -> Result<DMatrix<f64>, FlowError> {
        let x = self.0.inverse_apply(t, y)?;
        self.0
            .jacobian(t, &x)?
            .try_inverse()
            .ok_or(FlowError::SingularJacobian { t: t.to_vec(), x })
    }
}

#[derive(Clone, Debug)]
struct Compiled {
    value: Program,
    d_time: Vec<Program>,
    d_state: Vec<Program>,
}

#[derive(Clone, Debug)]
enum Repr {
    Identity,
    Affine {
        scale: Expr,
        shift: Expr,
        scale_c: Compiled,
        shift_c: Compiled,
    },
    Explicit {
        forward: Vec<Expr>,
        inverse: Vec<Expr>,
        forward_c: Vec<Compiled>,
        inverse_c: Vec<Program>,
    },
    Generated {
        field: PolyField,
        steps_per_unit: f64,
    },
}

/// Read-only view of a flow's representation.
#[derive(Clone, Copy, Debug)]
pub enum FlowKind<'a> {
    Identity,
    Affine { scale: &'a Expr, shift: &'a Expr },
    Explicit { forward: &'a [Expr], inverse: &'a [Expr] },
    Generated { field: &'a PolyField },
}

/// Generalised (or extended) t-flow with a foot point t₀.
#[derive(Clone, Debug)]
pub struct GeneralisedFlow {
    time_vars: Vec<String>,
    state_vars: Vec<String>,
    params: BTreeMap<String, f64>,
    foot: Vec<f64>,
    based: bool,
    repr: Repr,
}

fn compile_with_derivatives(
    e: &Expr,
    time_vars: &[&str],
    state_vars: &[&str],
    what: &'static str,
) -> Result<Compiled, FlowError> {
    let slots: Vec<&str> = time_vars.iter().chain(state_vars).copied().collect();
    let value = Program::compile(e, &slots).map_err(expr_err(what))?;
    let d_time = time_vars
        .iter()
        .map(|v| Program::compile(&differentiate(e, v), &slots).map_err(expr_err(what)))
        .collect::<Result<_, _>>()?;
    let d_state = state_vars
        .iter()
        .map(|v| Program::compile(&differentiate(e, v), &slots).map_err(expr_err(what)))
        .collect::<Result<_, _>>()?;
    Ok(Compiled {
        value,
        d_time,
        d_state,
    })
}

fn names(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| String::from(*s)).collect()
}

impl GeneralisedFlow {
    /// Identity flow on ℝⁿ.
    pub fn identity(time_vars: &[&str], state_vars: &[&str]) -> GeneralisedFlow {
        GeneralisedFlow {
            time_vars: names(time_vars),
            state_vars: names(state_vars),
            params: BTreeMap::new(),
            foot: vec![0.0; time_vars.len()],
            based: true,
            repr: Repr::Identity,
        }
    }

    /// x ↦ a(t)·x + b(t) on the line; a must stay positive where evaluated.
    pub fn affine(
        time_vars: &[&str],
        state_var: &str,
        scale: Expr,
        shift: Expr,
        params: BTreeMap<String, f64>,
    ) -> Result<GeneralisedFlow, FlowError> {
        let state_vars = [state_var];
        let scale_b = scale.bind(&params);
        let shift_b = shift.bind(&params);
        let scale_c = compile_with_derivatives(&scale_b, time_vars, &[], "affine scale")?;
        let shift_c = compile_with_derivatives(&shift_b, time_vars, &[], "affine shift")?;
        let mut flow = GeneralisedFlow {
            time_vars: names(time_vars),
            state_vars: names(&state_vars),
            params,
            foot: vec![0.0; time_vars.len()],
            based: false,
            repr: Repr::Affine {
                scale,
                shift,
                scale_c,
                shift_c,
            },
        };
        flow.based = flow.affine_is_identity_at_foot();
        Ok(flow)
    }

    /// Explicit forward map y^i(t, x) with inverse x^i(t, y); the inverse
    /// expressions are written in the state variable names.
    pub fn explicit(
        time_vars: &[&str],
        state_vars: &[&str],
        forward: Vec<Expr>,
        inverse: Vec<Expr>,
        params: BTreeMap<String, f64>,
    ) -> Result<GeneralisedFlow, FlowError> {
        let n = state_vars.len();
        if forward.len() != n || inverse.len() != n {
            return Err(FlowError::Dimension(alloc::format!(
                "explicit flow needs {n} forward and inverse components"
            )));
        }
        let slots: Vec<&str> = time_vars.iter().chain(state_vars).copied().collect();
        let forward_c = forward
            .iter()
            .map(|e| compile_with_derivatives(&e.bind(&params), time_vars, state_vars, "forward map"))
            .collect::<Result<_, _>>()?;
        let inverse_c = inverse
            .iter()
            .map(|e| Program::compile(&e.bind(&params), &slots).map_err(expr_err("inverse map")))
            .collect::<Result<_, _>>()?;
        Ok(GeneralisedFlow {
            time_vars: names(time_vars),
            state_vars: names(state_vars),
            params,
            foot: vec![0.0; time_vars.len()],
            based: false,
            repr: Repr::Explicit {
                forward,
                inverse,
                forward_c,
                inverse_c,
            },
        })
    }

    /// Flow generated by `field` from the foot point t₀ (g_{t₀} = id).
    pub fn generated(field: PolyField, foot: Vec<f64>) -> Result<GeneralisedFlow, FlowError> {
        if foot.len() != field.time_dim() {
            return Err(FlowError::Dimension(alloc::format!(
                "foot point has {} coordinates, field has {} times",
                foot.len(),
                field.time_dim()
            )));
        }
        Ok(GeneralisedFlow {
            time_vars: names(&field.time_vars()),
            state_vars: names(&field.state_vars()),
            params: field.params().clone(),
            foot,
            based: true,
            repr: Repr::Generated {
                field,
                steps_per_unit: crate::fields::DEFAULT_STEPS_PER_UNIT,
            },
        })
    }

    /// Sets the integration density of a generated flow.
    pub fn with_steps_per_unit(mut self, density: f64) -> Self {
        if let Repr::Generated { steps_per_unit, .. } = &mut self.repr {
            *steps_per_unit = density;
        }
        self
    }

    /// Moves the foot point. Affine and identity flows recompute the
    /// "based" flag; explicit flows keep the flag set by [`Self::with_based`].
    pub fn with_foot(mut self, foot: Vec<f64>) -> Self {
        self.foot = foot;
        match self.repr {
            Repr::Identity | Repr::Generated { .. } => self.based = true,
            Repr::Affine { .. } => self.based = self.affine_is_identity_at_foot(),
            Repr::Explicit { .. } => {}
        }
        self
    }

    /// Declares an explicit flow to be the identity at its foot point.
    pub fn with_based(mut self, based: bool) -> Self {
        if let Repr::Explicit { .. } = self.repr {
            self.based = based;
        }
        self
    }

    fn affine_is_identity_at_foot(&self) -> bool {
        match self.affine_coefficients(&self.foot) {
            Ok((a, b)) => a == 1.0 && b == 0.0,
            Err(_) => false,
        }
    }

    pub fn foot(&self) -> &[f64] {
        &self.foot
    }

    pub fn is_based(&self) -> bool {
        self.based
    }

    pub fn time_vars(&self) -> Vec<&str> {
        self.time_vars.iter().map(String::as_str).collect()
    }

    pub fn state_vars(&self) -> Vec<&str> {
        self.state_vars.iter().map(String::as_str).collect()
    }

    pub fn params(&self) -> &BTreeMap<String, f64> {
        &self.params
    }

    pub fn kind(&self) -> FlowKind<'_> {
        match &self.repr {
            Repr::Identity => FlowKind::Identity,
            Repr::Affine { scale, shift, .. } => FlowKind::Affine { scale, shift },
            Repr::Explicit {
                forward, inverse, ..
            } => FlowKind::Explicit { forward, inverse },
            Repr::Generated { field, .. } => FlowKind::Generated { field },
        }
    }

    /// (a(t), b(t)) of an affine flow; the identity reports (1, 0).
    pub fn affine_coefficients(&self, t: &[f64]) -> Result<(f64, f64), FlowError> {
        self.check_t(t)?;
        match &self.repr {
            Repr::Identity => Ok((1.0, 0.0)),
            Repr::Affine {
                scale_c, shift_c, ..
            } => {
                let a = scale_c.value.eval(t).map_err(expr_err("affine scale"))?;
                let b = shift_c.value.eval(t).map_err(expr_err("affine shift"))?;
                Ok((a, b))
            }
            _ => Err(FlowError::NotClosedForm("flow is not affine")),
        }
    }

    fn checked_scale(&self, t: &[f64]) -> Result<(f64, f64), FlowError> {
        let (a, b) = self.affine_coefficients(t)?;
        if !(a > 0.0) || !a.is_finite() {
            return Err(FlowError::Singular {
                t: t.to_vec(),
                scale: a,
            });
        }
        Ok((a, b))
    }

    fn check_t(&self, t: &[f64]) -> Result<(), FlowError> {
        if t.len() != self.time_vars.len() {
            return Err(FlowError::Dimension(alloc::format!(
                "time point has {} coordinates, flow has {}",
                t.len(),
                self.time_vars.len()
            )));
        }
        Ok(())
    }

    fn check_x(&self, x: &[f64]) -> Result<(), FlowError> {
        if x.len() != self.state_vars.len() {
            return Err(FlowError::Dimension(alloc::format!(
                "state point has {} coordinates, flow has {}",
                x.len(),
                self.state_vars.len()
            )));
        }
        Ok(())
    }

    fn generated_path(&self, from: &[f64], to: &[f64], density: f64) -> Result<TimePath, FlowError> {
        Ok(TimePath::with_density(
            alloc::vec![from.to_vec(), to.to_vec()],
            density,
        )?)
    }
}

fn slots(t: &[f64], x: &[f64]) -> Vec<f64> {
    let mut v = Vec::with_capacity(t.len() + x.len());
    v.extend_from_slice(t);
    v.extend_from_slice(x);
    v
}

impl FlowMap for GeneralisedFlow {
    fn state_dim(&self) -> usize {
        self.state_vars.len()
    }

    fn time_dim(&self) -> usize {
        self.time_vars.len()
    }

    fn apply(&self, t: &[f64], x: &[f64]) -> Result<Vec<f64>, FlowError> {
        self.check_t(t)?;
        self.check_x(x)?;
        match &self.repr {
            Repr::Identity => Ok(x.to_vec()),
            Repr::Affine { .. } => {
                let (a, b) = self.checked_scale(t)?;
                Ok(vec![a * x[0] + b])
            }
            Repr::Explicit { forward_c, .. } => {
                let vals = slots(t, x);
                forward_c
                    .iter()
                    .map(|c| c.value.eval(&vals).map_err(expr_err("forward map")))
                    .collect()
            }
            Repr::Generated {
                field,
                steps_per_unit,
            } => {
                if t == self.foot.as_slice() {
                    return Ok(x.to_vec());
                }
                let path = self.generated_path(&self.foot, t, *steps_per_unit)?;
                Ok(integrate_to(field, &path, x)?)
            }
        }
    }

    fn inverse_apply(&self, t: &[f64], y: &[f64]) -> Result<Vec<f64>, FlowError> {
        self.check_t(t)?;
        self.check_x(y)?;
        match &self.repr {
            Repr::Identity => Ok(y.to_vec()),
            Repr::Affine { .. } => {
                let (a, b) = self.checked_scale(t)?;
                Ok(vec![(y[0] - b) / a])
            }
            Repr::Explicit { inverse_c, .. } => {
                let vals = slots(t, y);
                inverse_c
                    .iter()
                    .map(|p| p.eval(&vals).map_err(expr_err("inverse map")))
                    .collect()
            }
            Repr::Generated {
                field,
                steps_per_unit,
            } => {
                if t == self.foot.as_slice() {
                    return Ok(y.to_vec());
                }
                let path = self.generated_path(t, &self.foot, *steps_per_unit)?;
                Ok(integrate_to(field, &path, y)?)
            }
        }
    }

    fn time_derivative(&self, pi: usize, t: &[f64], x: &[f64]) -> Result<Vec<f64>, FlowError> {
        self.check_t(t)?;
        self.check_x(x)?;
        match &self.repr {
            Repr::Identity => Ok(vec![0.0; x.len()]),
            Repr::Affine {
                scale_c, shift_c, ..
            } => {
                self.checked_scale(t)?;
                let da = scale_c.d_time[pi].eval(t).map_err(expr_err("affine scale"))?;
                let db = shift_c.d_time[pi].eval(t).map_err(expr_err("affine shift"))?;
                Ok(vec![da * x[0] + db])
            }
            Repr::Explicit { forward_c, .. } => {
                let vals = slots(t, x);
                forward_c
                    .iter()
                    .map(|c| c.d_time[pi].eval(&vals).map_err(expr_err("forward map")))
                    .collect()
            }
            Repr::Generated { field, .. } => {
                let y = self.apply(t, x)?;
                Ok(field.eval(pi, t, &y)?)
            }
        }
    }

    fn jacobian(&self, t: &[f64], x: &[f64]) -> Result<DMatrix<f64>, FlowError> {
        self.check_t(t)?;
        self.check_x(x)?;
        let n = x.len();
        match &self.repr {
            Repr::Identity => Ok(DMatrix::identity(n, n)),
            Repr::Affine { .. } => {
                let (a, _) = self.checked_scale(t)?;
                Ok(DMatrix::from_element(1, 1, a))
            }
            Repr::Explicit { forward_c, .. } => {
                let vals = slots(t, x);
                let mut jac = DMatrix::zeros(n, n);
                for (i, c) in forward_c.iter().enumerate() {
                    for j in 0..n {
                        jac[(i, j)] = c.d_state[j].eval(&vals).map_err(expr_err("forward map"))?;
                    }
                }
                Ok(jac)
            }
            Repr::Generated { .. } => {
                let mut jac = DMatrix::zeros(n, n);
                let mut xp = x.to_vec();
                for j in 0..n {
                    let h = 1e-5 * (1.0 + math::abs(x[j]));
                    xp[j] = x[j] + h;
                    let fp = self.apply(t, &xp)?;
                    xp[j] = x[j] - h;
                    let fm = self.apply(t, &xp)?;
                    xp[j] = x[j];
                    for i in 0..n {
                        jac[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
                    }
                }
                Ok(jac)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;
    use crate::fields::PolyField;

    fn affine(a: &str, b: &str) -> GeneralisedFlow {
        GeneralisedFlow::affine(&["t"], "x", parse(a).unwrap(), parse(b).unwrap(), BTreeMap::new())
            .unwrap()
    }

    #[test]
    fn identity_apply() {
        let id = GeneralisedFlow::identity(&["t"], &["x", "y"]);
        assert_eq!(id.apply(&[3.0], &[1.0, 2.0]).unwrap(), vec![1.0, 2.0]);
        assert!(id.is_based());
    }

    #[test]
    fn affine_ratio_scaling() {
        let g = affine("exp(t)/(1 + t^2)", "0");
        let y = g.apply(&[0.5], &[2.0]).unwrap()[0];
        assert_eq!(y, libm::exp(0.5) / 1.25 * 2.0);
    }

    #[test]
    fn affine_inverse() {
        let g = affine("2", "1");
        assert_eq!(g.inverse_apply(&[0.0], &[5.0]).unwrap(), vec![2.0]);
        assert!(!g.is_based());
        let g = affine("1 + t", "t^2");
        assert!(g.is_based());
        for k in 0..20 {
            let t = [0.05 * k as f64];
            let x = [-3.0 + 0.37 * k as f64];
            let back = g.inverse_apply(&t, &g.apply(&t, &x).unwrap()).unwrap();
            assert!((back[0] - x[0]).abs() < 1e-12);
        }
    }

    #[test]
    fn nonpositive_scale_is_singular() {
        let g = affine("t", "0");
        assert!(matches!(g.inverse_apply(&[0.0], &[1.0]), Err(FlowError::Singular { .. })));
        assert!(matches!(g.apply(&[-1.0], &[1.0]), Err(FlowError::Singular { .. })));
    }

    #[test]
    fn generated_linear_flow() {
        let f = PolyField::parse(&["t"], &["x"], &[&["x"]], &[]).unwrap();
        let g = GeneralisedFlow::generated(f, vec![0.0]).unwrap();
        let e = core::f64::consts::E;
        assert!((g.apply(&[1.0], &[1.0]).unwrap()[0] - e).abs() < 1e-8);
        assert!((g.inverse_apply(&[1.0], &[e]).unwrap()[0] - 1.0).abs() < 1e-7);
        let d = g.time_derivative(0, &[1.0], &[1.0]).unwrap()[0];
        assert!((d - e).abs() < 1e-8);
        let j = g.jacobian(&[1.0], &[1.0]).unwrap()[(0, 0)];
        assert!((j - e).abs() < 1e-7);
    }

    #[test]
    fn explicit_flow_derivatives() {
        let g = GeneralisedFlow::explicit(
            &["t"],
            &["x", "y"],
            vec![parse("x + t*y").unwrap(), parse("exp(t)*y").unwrap()],
            vec![parse("x - t*y*exp(-t)").unwrap(), parse("y*exp(-t)").unwrap()],
            BTreeMap::new(),
        )
        .unwrap()
        .with_based(true);
        let t = [0.4];
        let x = [1.0, 2.0];
        let y = g.apply(&t, &x).unwrap();
        let back = g.inverse_apply(&t, &y).unwrap();
        assert!(crate::math::max_abs_diff(&back, &x) < 1e-14);
        let jac = g.jacobian(&t, &x).unwrap();
        assert_eq!(jac[(0, 1)], 0.4);
        let d = g.time_derivative(0, &t, &x).unwrap();
        assert_eq!(d[0], 2.0);
    }

    #[test]
    fn inverse_flow_derivatives_match_finite_differences() {
        let g = affine("exp(t)", "sin(t)");
        let inv = InverseFlow(&g);
        let t = [0.3];
        let y = [1.7];
        let exact = inv.time_derivative(0, &t, &y).unwrap()[0];
        let h = 1e-5;
        let fd = (inv.apply(&[0.3 + h], &y).unwrap()[0] - inv.apply(&[0.3 - h], &y).unwrap()[0])
            / (2.0 * h);
        assert!((exact - fd).abs() < 1e-8);
        assert!((inv.jacobian(&t, &y).unwrap()[(0, 0)] - libm::exp(-0.3)).abs() < 1e-15);
    }
}
