//! Scalar expression language for coefficient functions.
//!
//! Grammar (whitespace-insensitive):
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := unary (('*' | '/') unary)*
//! unary  := '-' unary | power
//! power  := atom ('^' unary)?
//! atom   := number | ident | ident '(' expr (',' expr)* ')' | '(' expr ')'
//! ```
//!
//! `^` is right-associative and binds tighter than unary minus, so `-x^2`
//! is `-(x^2)`. Functions: sin, cos, tan, exp, ln, sqrt, tanh, sech, abs,
//! atan, sinh, cosh and the two-argument `pow(base, exponent)`.

mod compile;
mod diff;
mod eval;
mod parse;

use alloc::boxed::Box;
use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use core::fmt;

pub use compile::Program;
pub use diff::differentiate;
pub use eval::{evaluate, Bindings, EvalError};
pub use parse::{parse, ParseError};

/// Binary operators.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

/// One-argument primitive functions.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Tan,
    Exp,
    Ln,
    Sqrt,
    Tanh,
    Sech,
    Abs,
    Atan,
    Sinh,
    Cosh,
}

impl Func {
    pub const ALL: [Func; 12] = [
        Func::Sin,
        Func::Cos,
        Func::Tan,
        Func::Exp,
        Func::Ln,
        Func::Sqrt,
        Func::Tanh,
        Func::Sech,
        Func::Abs,
        Func::Atan,
        Func::Sinh,
        Func::Cosh,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Tan => "tan",
            Func::Exp => "exp",
            Func::Ln => "ln",
            Func::Sqrt => "sqrt",
            Func::Tanh => "tanh",
            Func::Sech => "sech",
            Func::Abs => "abs",
            Func::Atan => "atan",
            Func::Sinh => "sinh",
            Func::Cosh => "cosh",
        }
    }

    pub fn from_name(name: &str) -> Option<Func> {
        Func::ALL.iter().copied().find(|f| f.name() == name)
    }
}

/// Expression tree. Parameters are ordinary variables that get bound to
/// constants when a field is built.
#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(String),
    Neg(Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
}

impl Expr {
    pub fn num(v: f64) -> Expr {
        Expr::Num(v)
    }

    pub fn var(name: &str) -> Expr {
        Expr::Var(String::from(name))
    }

    /// Names of all variables in the tree.
    pub fn free_vars(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_vars(&mut out);
        out
    }

    fn collect_vars(&self, out: &mut BTreeSet<String>) {
        match self {
            Expr::Num(_) => {}
            Expr::Var(v) => {
                out.insert(v.clone());
            }
            Expr::Neg(e) | Expr::Call(_, e) => e.collect_vars(out),
            Expr::Binary(_, a, b) => {
                a.collect_vars(out);
                b.collect_vars(out);
            }
        }
    }

    pub fn depends_on(&self, name: &str) -> bool {
        match self {
            Expr::Num(_) => false,
            Expr::Var(v) => v == name,
            Expr::Neg(e) | Expr::Call(_, e) => e.depends_on(name),
            Expr::Binary(_, a, b) => a.depends_on(name) || b.depends_on(name),
        }
    }

    /// Simultaneous substitution of variables by expressions.
    pub fn substitute(&self, map: &BTreeMap<String, Expr>) -> Expr {
        match self {
            Expr::Num(v) => Expr::Num(*v),
            Expr::Var(v) => map.get(v).cloned().unwrap_or_else(|| Expr::Var(v.clone())),
            Expr::Neg(e) => neg(e.substitute(map)),
            Expr::Call(f, e) => Expr::Call(*f, Box::new(e.substitute(map))),
            Expr::Binary(op, a, b) => binary(*op, a.substitute(map), b.substitute(map)),
        }
    }

    /// Replaces variables by numeric constants.
    pub fn bind(&self, values: &BTreeMap<String, f64>) -> Expr {
        let map = values.iter().map(|(k, v)| (k.clone(), Expr::Num(*v))).collect();
        self.substitute(&map)
    }

    pub fn as_num(&self) -> Option<f64> {
        match self {
            Expr::Num(v) => Some(*v),
            _ => None,
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Binary(BinOp::Add | BinOp::Sub, ..) => 1,
            Expr::Binary(BinOp::Mul | BinOp::Div, ..) => 2,
            Expr::Neg(_) => 3,
            Expr::Binary(BinOp::Pow, ..) => 4,
            _ => 5,
        }
    }
}

impl From<f64> for Expr {
    fn from(v: f64) -> Self {
        Expr::Num(v)
    }
}

fn is_zero(e: &Expr) -> bool {
    matches!(e, Expr::Num(v) if *v == 0.0)
}

fn is_one(e: &Expr) -> bool {
    matches!(e, Expr::Num(v) if *v == 1.0)
}

fn fold(op: BinOp, a: f64, b: f64) -> Option<f64> {
    let v = eval::apply_binop(op, a, b).ok()?;
    v.is_finite().then_some(v)
}

/// Builds `a op b`, folding literal arithmetic and trivial identities.
pub fn binary(op: BinOp, a: Expr, b: Expr) -> Expr {
    if let (Some(x), Some(y)) = (a.as_num(), b.as_num()) {
        if let Some(v) = fold(op, x, y) {
            return Expr::Num(v);
        }
    }
    match op {
        BinOp::Add if is_zero(&a) => b,
        BinOp::Add | BinOp::Sub if is_zero(&b) => a,
        BinOp::Sub if is_zero(&a) => neg(b),
        BinOp::Mul if is_zero(&a) || is_zero(&b) => Expr::Num(0.0),
        BinOp::Mul if is_one(&a) => b,
        BinOp::Mul | BinOp::Div if is_one(&b) => a,
        BinOp::Div if is_zero(&a) => Expr::Num(0.0),
        BinOp::Pow if is_zero(&b) => Expr::Num(1.0),
        BinOp::Pow if is_one(&b) => a,
        _ => Expr::Binary(op, Box::new(a), Box::new(b)),
    }
}

pub fn add(a: Expr, b: Expr) -> Expr {
    binary(BinOp::Add, a, b)
}

pub fn sub(a: Expr, b: Expr) -> Expr {
    binary(BinOp::Sub, a, b)
}

pub fn mul(a: Expr, b: Expr) -> Expr {
    binary(BinOp::Mul, a, b)
}

pub fn div(a: Expr, b: Expr) -> Expr {
    binary(BinOp::Div, a, b)
}

pub fn pow(a: Expr, b: Expr) -> Expr {
    binary(BinOp::Pow, a, b)
}

pub fn neg(e: Expr) -> Expr {
    match e {
        Expr::Num(v) => Expr::Num(-v),
        Expr::Neg(inner) => *inner,
        other => Expr::Neg(Box::new(other)),
    }
}

pub fn call(f: Func, e: Expr) -> Expr {
    if let Some(x) = e.as_num() {
        if let Ok(v) = eval::apply_func(f, x) {
            if v.is_finite() {
                return Expr::Num(v);
            }
        }
    }
    Expr::Call(f, Box::new(e))
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(v) if v.is_sign_negative() => write!(f, "(-{})", -v),
            Expr::Num(v) => write!(f, "{v}"),
            Expr::Var(name) => f.write_str(name),
            Expr::Neg(e) => {
                if e.precedence() >= 4 {
                    write!(f, "-{e}")
                } else {
                    write!(f, "-({e})")
                }
            }
            Expr::Call(func, e) => write!(f, "{}({e})", func.name()),
            Expr::Binary(op, a, b) => {
                let p = self.precedence();
                let (sym, left_paren, right_paren) = match op {
                    BinOp::Add => (" + ", a.precedence() < p, b.precedence() <= p),
                    BinOp::Sub => (" - ", a.precedence() < p, b.precedence() <= p),
                    BinOp::Mul => ("*", a.precedence() < p, b.precedence() <= p),
                    BinOp::Div => ("/", a.precedence() < p, b.precedence() <= p),
                    BinOp::Pow => ("^", a.precedence() <= p, b.precedence() < 3),
                };
                if left_paren {
                    write!(f, "({a})")?;
                } else {
                    write!(f, "{a}")?;
                }
                f.write_str(sym)?;
                if right_paren {
                    write!(f, "({b})")
                } else {
                    write!(f, "{b}")
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use alloc::vec::Vec;

    #[test]
    fn free_vars_of_abel_field() {
        let e = parse("a + c*x + f*x^(eps-1) + g*x^eps").unwrap();
        let vars: Vec<_> = e.free_vars().into_iter().collect();
        assert_eq!(vars, ["a", "c", "eps", "f", "g", "x"]);
    }

    #[test]
    fn printer_parenthesises_by_precedence() {
        let cases = [
            "a - (b - c)",
            "a/(b*c)",
            "(a + b)*c",
            "-(a + b)",
            "-x^2",
            "(-x)^2",
            "x^y^z",
            "(x^y)^z",
            "2^(-3)",
            "sin(x + y)*cos(x)",
        ];
        for src in cases {
            let e = parse(src).unwrap();
            let printed = e.to_string();
            assert_eq!(parse(&printed).unwrap(), e, "{src} printed as {printed}");
        }
    }

    #[test]
    fn negative_literals_round_trip() {
        let e = binary(BinOp::Pow, Expr::var("x"), Expr::Num(-2.5));
        assert_eq!(e.to_string(), "x^(-2.5)");
        assert_eq!(parse(&e.to_string()).unwrap(), Expr::Binary(
            BinOp::Pow,
            Box::new(Expr::var("x")),
            Box::new(Expr::Neg(Box::new(Expr::Num(2.5)))),
        ));
    }

    #[test]
    fn constant_folding() {
        assert_eq!(mul(Expr::Num(2.0), Expr::Num(3.0)), Expr::Num(6.0));
        assert_eq!(add(Expr::Num(0.0), Expr::var("x")), Expr::var("x"));
        assert_eq!(mul(Expr::var("x"), Expr::Num(0.0)), Expr::Num(0.0));
        assert_eq!(div(Expr::Num(1.0), Expr::Num(0.0)).as_num(), None);
        assert_eq!(pow(Expr::var("x"), Expr::Num(1.0)), Expr::var("x"));
    }

    #[test]
    fn substitution_is_simultaneous() {
        let e = parse("x + 2*y").unwrap();
        let mut map = BTreeMap::new();
        map.insert(String::from("x"), Expr::var("y"));
        map.insert(String::from("y"), Expr::var("x"));
        assert_eq!(e.substitute(&map), parse("y + 2*x").unwrap());
    }
}
