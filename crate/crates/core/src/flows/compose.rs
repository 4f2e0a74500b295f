use alloc::boxed::Box;
use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use super::{merge_params, FlowError, FlowKind, FlowMap, GeneralisedFlow};
use crate::expr::{add, mul, Expr};

/// Pointwise composition f₁ ∘ f₂ ∘ … ∘ f_k (the last factor acts first).
pub struct FlowComposition {
    factors: Vec<Box<dyn FlowMap>>,
}

impl FlowComposition {
    pub fn new(factors: Vec<Box<dyn FlowMap>>) -> Result<FlowComposition, FlowError> {
        let Some(first) = factors.first() else {
            return Err(FlowError::Dimension("composition needs at least one factor".into()));
        };
        let (n, s) = (first.state_dim(), first.time_dim());
        if factors.iter().any(|f| f.state_dim() != n || f.time_dim() != s) {
            return Err(FlowError::Dimension("composed flows must share n and s".into()));
        }
        Ok(FlowComposition { factors })
    }

    pub fn len(&self) -> usize {
        self.factors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.factors.is_empty()
    }
}

/// (g ∘ h)_t = g_t ∘ h_t.
pub fn compose_flows<G, H>(g: G, h: H) -> Result<FlowComposition, FlowError>
where
    G: FlowMap + 'static,
    H: FlowMap + 'static,
{
    FlowComposition::new(alloc::vec![Box::new(g), Box::new(h)])
}

impl FlowMap for FlowComposition {
    fn state_dim(&self) -> usize {
        self.factors[0].state_dim()
    }

    fn time_dim(&self) -> usize {
        self.factors[0].time_dim()
    }

    fn apply(&self, t: &[f64], x: &[f64]) -> Result<Vec<f64>, FlowError> {
        let mut y = x.to_vec();
        for f in self.factors.iter().rev() {
            y = f.apply(t, &y)?;
        }
        Ok(y)
    }

    fn inverse_apply(&self, t: &[f64], y: &[f64]) -> Result<Vec<f64>, FlowError> {
        let mut x = y.to_vec();
        for f in &self.factors {
            x = f.inverse_apply(t, &x)?;
        }
        Ok(x)
    }

    /// Chain rule: ∂_π(g∘h) = ∂_π g(h(x)) + Dg(h(x))·∂_π h(x).
    fn time_derivative(&self, pi: usize, t: &[f64], x: &[f64]) -> Result<Vec<f64>, FlowError> {
        let mut y = x.to_vec();
        let mut dy = DVector::zeros(x.len());
        for f in self.factors.iter().rev() {
            let partial = DVector::from_vec(f.time_derivative(pi, t, &y)?);
            let jac = f.jacobian(t, &y)?;
            dy = partial + jac * dy;
            y = f.apply(t, &y)?;
        }
        Ok(dy.iter().copied().collect())
    }

    fn jacobian(&self, t: &[f64], x: &[f64]) -> Result<DMatrix<f64>, FlowError> {
        let n = x.len();
        let mut y = x.to_vec();
        let mut jac = DMatrix::identity(n, n);
        for f in self.factors.iter().rev() {
            jac = f.jacobian(t, &y)? * jac;
            y = f.apply(t, &y)?;
        }
        Ok(jac)
    }
}

fn affine_parts(f: &GeneralisedFlow) -> Result<(Expr, Expr), FlowError> {
    match f.kind() {
        FlowKind::Identity => Ok((Expr::Num(1.0), Expr::Num(0.0))),
        FlowKind::Affine { scale, shift } => Ok((scale.clone(), shift.clone())),
        _ => Err(FlowError::NotClosedForm("symbolic composition needs affine factors")),
    }
}

/// Symbolic composition of affine flows: a = a₁a₂, b = a₁b₂ + b₁.
pub fn affine_compose(g: &GeneralisedFlow, h: &GeneralisedFlow) -> Result<GeneralisedFlow, FlowError> {
    if g.time_vars() != h.time_vars() || g.state_vars() != h.state_vars() {
        return Err(FlowError::Dimension("composed flows must share variable names".into()));
    }
    if g.foot() != h.foot() {
        return Err(FlowError::Dimension("composed flows must share the foot point".into()));
    }
    let (a1, b1) = affine_parts(g)?;
    let (a2, b2) = affine_parts(h)?;
    let params: BTreeMap<_, _> = merge_params(g.params(), h.params())?;
    let scale = mul(a1.clone(), a2);
    let shift = add(mul(a1, b2), b1);
    let state = g.state_vars();
    Ok(GeneralisedFlow::affine(&g.time_vars(), state[0], scale, shift, params)?
        .with_foot(g.foot().to_vec()))
}
