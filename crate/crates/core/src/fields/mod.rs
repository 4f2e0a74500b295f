//! t-dependent polyvector fields ∂x/∂t_π = X_π(t, x), their brackets and
//! zero-curvature residuals, and fixed-step integration along time paths.

mod integrate;
mod poly;
mod residual;

use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Deref;

use nalgebra::DMatrix;

use crate::expr::{EvalError, ParseError};
use crate::math;

pub use integrate::{
    integrate_path, integrate_to, path_independence, TimePath, Trajectory, BLOW_UP_THRESHOLD,
    DEFAULT_STEPS_PER_UNIT,
};
pub use poly::PolyField;
pub use residual::{
    lie_bracket, zcc_report, zcc_residual, Axis, FieldSlice, PairResidual, ResidualReport,
    SampleGrid,
};

/// Point (t_1, …, t_s) of the time manifold.
#[derive(Clone, Debug, PartialEq)]
pub struct TimePoint(pub Vec<f64>);

/// Point (x^1, …, x^n) of state space.
#[derive(Clone, Debug, PartialEq)]
pub struct StatePoint(pub Vec<f64>);

macro_rules! point_impls {
    ($ty:ident) => {
        impl Deref for $ty {
            type Target = [f64];
            fn deref(&self) -> &[f64] {
                &self.0
            }
        }

        impl From<Vec<f64>> for $ty {
            fn from(v: Vec<f64>) -> Self {
                $ty(v)
            }
        }

        impl From<&[f64]> for $ty {
            fn from(v: &[f64]) -> Self {
                $ty(v.to_vec())
            }
        }
    };
}

point_impls!(TimePoint);
point_impls!(StatePoint);

/// Failures of field construction, evaluation and integration.
#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum FieldError {
    #[error("component X^{component}_{pi}: {source}")]
    Eval {
        pi: usize,
        component: usize,
        source: EvalError,
    },
    #[error("component X^{component}_{pi}: {source}")]
    Parse {
        pi: usize,
        component: usize,
        source: ParseError,
    },
    #[error("symbol '{0}' is neither a time variable, a state variable nor a bound parameter")]
    UnboundSymbol(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid time path: {0}")]
    InvalidPath(&'static str),
    #[error("integration blew up after t = {last_t:?} (last finite state {last_x:?})")]
    BlowUp { last_t: Vec<f64>, last_x: Vec<f64> },
    #[error("evaluation failed at t = {t:?}, x = {x:?}: {source}")]
    AtPoint {
        t: Vec<f64>,
        x: Vec<f64>,
        source: Box<FieldError>,
    },
    #[error("{0}")]
    Other(String),
}

pub(crate) fn dim_error(what: &str, expected: usize, got: usize) -> FieldError {
    FieldError::Dimension(alloc::format!("{what}: expected {expected}, got {got}"))
}

/// Anything that evaluates as a system ∂x/∂t_π = X_π(t, x).
///
/// Derivatives default to central differences; expression-backed fields
/// override them with exact derivatives.
pub trait VectorSystem {
    fn state_dim(&self) -> usize;
    fn time_dim(&self) -> usize;

    /// Writes X_π(t, x) into `out`.
    fn eval_into(&self, pi: usize, t: &[f64], x: &[f64], out: &mut [f64])
        -> Result<(), FieldError>;

    fn eval(&self, pi: usize, t: &[f64], x: &[f64]) -> Result<Vec<f64>, FieldError> {
        let mut out = vec![0.0; self.state_dim()];
        self.eval_into(pi, t, x, &mut out)?;
        Ok(out)
    }

    /// Matrix ∂X^i_π/∂x^j.
    fn jacobian_x(&self, pi: usize, t: &[f64], x: &[f64]) -> Result<DMatrix<f64>, FieldError> {
        jacobian_fd(self, pi, t, x)
    }

    /// ∂X_π/∂t_wrt.
    fn time_derivative(
        &self,
        pi: usize,
        wrt: usize,
        t: &[f64],
        x: &[f64],
    ) -> Result<Vec<f64>, FieldError> {
        time_derivative_fd(self, pi, wrt, t, x)
    }
}

impl<T: VectorSystem + ?Sized> VectorSystem for &T {
    fn state_dim(&self) -> usize {
        (**self).state_dim()
    }
    fn time_dim(&self) -> usize {
        (**self).time_dim()
    }
    fn eval_into(&self, pi: usize, t: &[f64], x: &[f64], out: &mut [f64]) -> Result<(), FieldError> {
        (**self).eval_into(pi, t, x, out)
    }
    fn jacobian_x(&self, pi: usize, t: &[f64], x: &[f64]) -> Result<DMatrix<f64>, FieldError> {
        (**self).jacobian_x(pi, t, x)
    }
    fn time_derivative(
        &self,
        pi: usize,
        wrt: usize,
        t: &[f64],
        x: &[f64],
    ) -> Result<Vec<f64>, FieldError> {
        (**self).time_derivative(pi, wrt, t, x)
    }
}

impl<T: VectorSystem + ?Sized> VectorSystem for Box<T> {
    fn state_dim(&self) -> usize {
        (**self).state_dim()
    }
    fn time_dim(&self) -> usize {
        (**self).time_dim()
    }
    fn eval_into(&self, pi: usize, t: &[f64], x: &[f64], out: &mut [f64]) -> Result<(), FieldError> {
        (**self).eval_into(pi, t, x, out)
    }
    fn jacobian_x(&self, pi: usize, t: &[f64], x: &[f64]) -> Result<DMatrix<f64>, FieldError> {
        (**self).jacobian_x(pi, t, x)
    }
    fn time_derivative(
        &self,
        pi: usize,
        wrt: usize,
        t: &[f64],
        x: &[f64],
    ) -> Result<Vec<f64>, FieldError> {
        (**self).time_derivative(pi, wrt, t, x)
    }
}

/// Central-difference Jacobian with step 1e−5·(1+|x^j|).
pub fn jacobian_fd<S: VectorSystem + ?Sized>(
    sys: &S,
    pi: usize,
    t: &[f64],
    x: &[f64],
) -> Result<DMatrix<f64>, FieldError> {
    let n = sys.state_dim();
    let mut jac = DMatrix::zeros(n, n);
    let mut xp = x.to_vec();
    let mut fp = vec![0.0; n];
    let mut fm = vec![0.0; n];
    for j in 0..n {
        let h = 1e-5 * (1.0 + math::abs(x[j]));
        xp[j] = x[j] + h;
        sys.eval_into(pi, t, &xp, &mut fp)?;
        xp[j] = x[j] - h;
        sys.eval_into(pi, t, &xp, &mut fm)?;
        xp[j] = x[j];
        for i in 0..n {
            jac[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
    Ok(jac)
}

/// Central-difference ∂X_π/∂t_wrt with step 1e−5·(1+|t_wrt|).
pub fn time_derivative_fd<S: VectorSystem + ?Sized>(
    sys: &S,
    pi: usize,
    wrt: usize,
    t: &[f64],
    x: &[f64],
) -> Result<Vec<f64>, FieldError> {
    let n = sys.state_dim();
    let h = 1e-5 * (1.0 + math::abs(t[wrt]));
    let mut tp = t.to_vec();
    let mut fp = vec![0.0; n];
    let mut fm = vec![0.0; n];
    tp[wrt] = t[wrt] + h;
    sys.eval_into(pi, &tp, x, &mut fp)?;
    tp[wrt] = t[wrt] - h;
    sys.eval_into(pi, &tp, x, &mut fm)?;
    Ok(fp.iter().zip(&fm).map(|(a, b)| (a - b) / (2.0 * h)).collect())
}

/// Wraps a system so that its derivatives come from finite differences only.
pub struct FiniteDifference<S>(pub S);

impl<S: VectorSystem> VectorSystem for FiniteDifference<S> {
    fn state_dim(&self) -> usize {
        self.0.state_dim()
    }
    fn time_dim(&self) -> usize {
        self.0.time_dim()
    }
    fn eval_into(&self, pi: usize, t: &[f64], x: &[f64], out: &mut [f64]) -> Result<(), FieldError> {
        self.0.eval_into(pi, t, x, out)
    }
}

/// The zero system on ℝⁿ with s times.
#[derive(Clone, Copy, Debug)]
pub struct ZeroField {
    pub n: usize,
    pub s: usize,
}

impl VectorSystem for ZeroField {
    fn state_dim(&self) -> usize {
        self.n
    }
    fn time_dim(&self) -> usize {
        self.s
    }
    fn eval_into(&self, _: usize, _: &[f64], _: &[f64], out: &mut [f64]) -> Result<(), FieldError> {
        out.iter_mut().for_each(|v| *v = 0.0);
        Ok(())
    }
    fn jacobian_x(&self, _: usize, _: &[f64], _: &[f64]) -> Result<DMatrix<f64>, FieldError> {
        Ok(DMatrix::zeros(self.n, self.n))
    }
    fn time_derivative(&self, _: usize, _: usize, _: &[f64], _: &[f64]) -> Result<Vec<f64>, FieldError> {
        Ok(vec![0.0; self.n])
    }
}
