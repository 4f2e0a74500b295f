use alloc::string::String;
use alloc::vec::Vec;

use super::eval::{apply_binop, apply_func};
use super::{BinOp, EvalError, Expr, Func};

#[derive(Clone, Copy, Debug, PartialEq)]
enum Op {
    Const(f64),
    Slot(usize),
    Neg,
    Bin(BinOp),
    Call(Func),
}

const INLINE_STACK: usize = 32;

/// Postfix form of an expression over a fixed ordered list of variables.
///
/// Evaluation performs the same floating-point operations in the same order
/// as [`evaluate`](super::evaluate), so results are bit-identical.
#[derive(Clone, Debug)]
pub struct Program {
    ops: Vec<Op>,
    depth: usize,
    source: Expr,
    slots: Vec<String>,
}

impl Program {
    /// Compiles `e`; every free variable must appear in `slots`.
    pub fn compile(e: &Expr, slots: &[&str]) -> Result<Program, EvalError> {
        let mut ops = Vec::new();
        emit(e, slots, &mut ops)?;
        let mut depth = 0usize;
        let mut max_depth = 0usize;
        for op in &ops {
            match op {
                Op::Const(_) | Op::Slot(_) => depth += 1,
                Op::Bin(_) => depth -= 1,
                Op::Neg | Op::Call(_) => {}
            }
            max_depth = max_depth.max(depth);
        }
        Ok(Program {
            ops,
            depth: max_depth,
            source: e.clone(),
            slots: slots.iter().map(|s| String::from(*s)).collect(),
        })
    }

    pub fn source(&self) -> &Expr {
        &self.source
    }

    /// Constant value if the program has no variable dependence.
    pub fn constant(&self) -> Option<f64> {
        match self.ops.as_slice() {
            [Op::Const(v)] => Some(*v),
            _ => None,
        }
    }

    /// Evaluates with `values[i]` bound to the i-th slot.
    pub fn eval(&self, values: &[f64]) -> Result<f64, EvalError> {
        if let [Op::Const(v)] = self.ops.as_slice() {
            return Ok(*v);
        }
        let result = if self.depth <= INLINE_STACK {
            let mut stack = [0.0f64; INLINE_STACK];
            run(&self.ops, values, &mut stack)
        } else {
            let mut stack = alloc::vec![0.0f64; self.depth];
            run(&self.ops, values, &mut stack)
        };
        result.or_else(|_| self.explain(values))
    }

    /// Re-evaluates on the tree to produce an error naming the sub-expression.
    fn explain(&self, values: &[f64]) -> Result<f64, EvalError> {
        let bindings: Vec<(&str, f64)> = self
            .slots
            .iter()
            .map(String::as_str)
            .zip(values.iter().copied())
            .collect();
        super::evaluate(&self.source, bindings.as_slice())
    }
}

fn emit(e: &Expr, slots: &[&str], ops: &mut Vec<Op>) -> Result<(), EvalError> {
    match e {
        Expr::Num(v) => ops.push(Op::Const(*v)),
        Expr::Var(name) => {
            let idx = slots
                .iter()
                .position(|s| s == name)
                .ok_or_else(|| EvalError::Unbound(name.clone()))?;
            ops.push(Op::Slot(idx));
        }
        Expr::Neg(a) => {
            emit(a, slots, ops)?;
            ops.push(Op::Neg);
        }
        Expr::Binary(op, a, b) => {
            emit(a, slots, ops)?;
            emit(b, slots, ops)?;
            ops.push(Op::Bin(*op));
        }
        Expr::Call(f, a) => {
            emit(a, slots, ops)?;
            ops.push(Op::Call(*f));
        }
    }
    Ok(())
}

fn run(ops: &[Op], values: &[f64], stack: &mut [f64]) -> Result<f64, ()> {
    let mut sp = 0usize;
    for op in ops {
        match *op {
            Op::Const(v) => {
                stack[sp] = v;
                sp += 1;
            }
            Op::Slot(i) => {
                stack[sp] = values[i];
                sp += 1;
            }
            Op::Neg => stack[sp - 1] = -stack[sp - 1],
            Op::Bin(b) => {
                sp -= 1;
                stack[sp - 1] = apply_binop(b, stack[sp - 1], stack[sp]).map_err(|_| ())?;
            }
            Op::Call(f) => stack[sp - 1] = apply_func(f, stack[sp - 1]).map_err(|_| ())?,
        }
    }
    Ok(stack[0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{evaluate, parse};

    #[test]
    fn matches_tree_evaluation_bitwise() {
        let e = parse("sin(x)*exp(-y^2) + tanh(x/y) - sech(x)^2 + pow(y, 1.5)").unwrap();
        let p = Program::compile(&e, &["x", "y"]).unwrap();
        for k in 0..50 {
            let x = -2.0 + 0.1 * k as f64;
            let y = 0.3 + 0.05 * k as f64;
            let a = p.eval(&[x, y]).unwrap();
            let b = evaluate(&e, &[("x", x), ("y", y)]).unwrap();
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn errors_name_the_subexpression() {
        let e = parse("1 + sqrt(x)").unwrap();
        let p = Program::compile(&e, &["x"]).unwrap();
        assert!(matches!(p.eval(&[-1.0]), Err(EvalError::Domain { ref expr, .. }) if expr == "sqrt(x)"));
    }

    #[test]
    fn unknown_slot() {
        let e = parse("x + z").unwrap();
        assert_eq!(
            Program::compile(&e, &["x"]).unwrap_err(),
            EvalError::Unbound("z".into())
        );
    }

    #[test]
    fn deep_expressions_use_heap_stack() {
        let mut src = alloc::string::String::from("x");
        for _ in 0..40 {
            src = alloc::format!("(1 + {src})");
        }
        let src = alloc::format!("1 + (2 + (3 + (4 + {}))) ", src.replace("(1 + x)", "(1 + (x*(x*(x*(x*x)))))"));
        let e = parse(&src).unwrap();
        let p = Program::compile(&e, &["x"]).unwrap();
        assert_eq!(p.eval(&[1.0]).unwrap(), evaluate(&e, &[("x", 1.0)]).unwrap());
    }
}
