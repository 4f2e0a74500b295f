use super::{add, call, div, mul, neg, pow, sub, BinOp, Expr, Func};

/// Partial derivative of `e` with respect to `var`, with literal constant folding.
pub fn differentiate(e: &Expr, var: &str) -> Expr {
    if !e.depends_on(var) {
        return Expr::Num(0.0);
    }
    match e {
        Expr::Num(_) => Expr::Num(0.0),
        Expr::Var(v) => Expr::Num(if v == var { 1.0 } else { 0.0 }),
        Expr::Neg(a) => neg(differentiate(a, var)),
        Expr::Binary(op, a, b) => {
            let (a, b) = (a.as_ref(), b.as_ref());
            let da = differentiate(a, var);
            let db = differentiate(b, var);
            match op {
                BinOp::Add => add(da, db),
                BinOp::Sub => sub(da, db),
                BinOp::Mul => add(mul(da, b.clone()), mul(a.clone(), db)),
                BinOp::Div => sub(
                    div(da, b.clone()),
                    div(mul(a.clone(), db), pow(b.clone(), Expr::Num(2.0))),
                ),
                BinOp::Pow => {
                    if !b.depends_on(var) {
                        let lowered = sub(b.clone(), Expr::Num(1.0));
                        mul(mul(b.clone(), pow(a.clone(), lowered)), da)
                    } else if !a.depends_on(var) {
                        mul(mul(e.clone(), call(Func::Ln, a.clone())), db)
                    } else {
                        let inner = add(
                            mul(db, call(Func::Ln, a.clone())),
                            div(mul(b.clone(), da), a.clone()),
                        );
                        mul(e.clone(), inner)
                    }
                }
            }
        }
        Expr::Call(f, a) => {
            let u = a.as_ref().clone();
            let du = differentiate(a, var);
            let outer = match f {
                Func::Sin => call(Func::Cos, u),
                Func::Cos => neg(call(Func::Sin, u)),
                Func::Tan => div(Expr::Num(1.0), pow(call(Func::Cos, u), Expr::Num(2.0))),
                Func::Exp => e.clone(),
                Func::Ln => div(Expr::Num(1.0), u),
                Func::Sqrt => div(Expr::Num(1.0), mul(Expr::Num(2.0), e.clone())),
                Func::Tanh => pow(call(Func::Sech, u), Expr::Num(2.0)),
                Func::Sech => neg(mul(e.clone(), call(Func::Tanh, u))),
                Func::Abs => div(u.clone(), call(Func::Abs, u)),
                Func::Atan => div(
                    Expr::Num(1.0),
                    add(Expr::Num(1.0), pow(u, Expr::Num(2.0))),
                ),
                Func::Sinh => call(Func::Cosh, u),
                Func::Cosh => call(Func::Sinh, u),
            };
            mul(outer, du)
        }
    }
}
