use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};

use super::{BinOp, Expr, Func};
use crate::math;

/// Evaluation failure.
#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("unbound variable '{0}'")]
    Unbound(String),
    #[error("domain error in '{expr}': {reason}")]
    Domain { expr: String, reason: &'static str },
}

/// Source of variable values.
pub trait Bindings {
    fn get(&self, name: &str) -> Option<f64>;
}

impl Bindings for BTreeMap<String, f64> {
    fn get(&self, name: &str) -> Option<f64> {
        BTreeMap::get(self, name).copied()
    }
}

impl Bindings for [(&str, f64)] {
    fn get(&self, name: &str) -> Option<f64> {
        self.iter().find(|(n, _)| *n == name).map(|(_, v)| *v)
    }
}

impl<const N: usize> Bindings for [(&str, f64); N] {
    fn get(&self, name: &str) -> Option<f64> {
        Bindings::get(self.as_slice(), name)
    }
}

pub(crate) fn apply_binop(op: BinOp, a: f64, b: f64) -> Result<f64, &'static str> {
    match op {
        BinOp::Add => Ok(a + b),
        BinOp::Sub => Ok(a - b),
        BinOp::Mul => Ok(a * b),
        BinOp::Div => {
            if b == 0.0 {
                Err("division by zero")
            } else {
                Ok(a / b)
            }
        }
        BinOp::Pow => {
            if a == 0.0 && b < 0.0 {
                Err("zero raised to a negative power")
            } else if a < 0.0 && math::trunc(b) != b {
                Err("negative base with non-integer exponent")
            } else {
                Ok(math::powf(a, b))
            }
        }
    }
}

pub(crate) fn apply_func(f: Func, x: f64) -> Result<f64, &'static str> {
    Ok(match f {
        Func::Sin => math::sin(x),
        Func::Cos => math::cos(x),
        Func::Tan => math::tan(x),
        Func::Exp => math::exp(x),
        Func::Ln => {
            if x <= 0.0 {
                return Err("logarithm of a non-positive number");
            }
            math::ln(x)
        }
        Func::Sqrt => {
            if x < 0.0 {
                return Err("square root of a negative number");
            }
            math::sqrt(x)
        }
        Func::Tanh => math::tanh(x),
        Func::Sech => 1.0 / math::cosh(x),
        Func::Abs => math::abs(x),
        Func::Atan => math::atan(x),
        Func::Sinh => math::sinh(x),
        Func::Cosh => math::cosh(x),
    })
}

fn domain(e: &Expr, reason: &'static str) -> EvalError {
    EvalError::Domain {
        expr: e.to_string(),
        reason,
    }
}

/// Evaluates `e` with the given variable values.
pub fn evaluate<B: Bindings + ?Sized>(e: &Expr, bindings: &B) -> Result<f64, EvalError> {
    match e {
        Expr::Num(v) => Ok(*v),
        Expr::Var(name) => bindings
            .get(name)
            .ok_or_else(|| EvalError::Unbound(name.clone())),
        Expr::Neg(inner) => Ok(-evaluate(inner, bindings)?),
        Expr::Binary(op, a, b) => {
            let x = evaluate(a, bindings)?;
            let y = evaluate(b, bindings)?;
            apply_binop(*op, x, y).map_err(|r| domain(e, r))
        }
        Expr::Call(f, a) => {
            let x = evaluate(a, bindings)?;
            apply_func(*f, x).map_err(|r| domain(e, r))
        }
    }
}
