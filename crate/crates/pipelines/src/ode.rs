//! Solvers that map an equation onto a simpler one by a t-dependent change
//! of variables, solve it there and map back, checked against direct
//! integration of the original equation.

use std::collections::BTreeMap;

use quasilie_core::expr::{add, div, mul, parse, sub, Expr, Program};
use quasilie_core::families::AbelCoefficients;
use quasilie_core::fields::{integrate_path, PolyField, TimePath, VectorSystem};
use quasilie_core::invariants::{classic_chiellini_check, gcc_check};

use crate::error::{PipelineError, Result};
use crate::report::{Check, Report};

/// A scalar solution on a time grid, computed both ways.
#[derive(Clone, Debug)]
pub struct ScalarSolution {
    pub times: Vec<f64>,
    pub pipeline: Vec<f64>,
    pub direct: Vec<f64>,
    pub report: Report,
}

impl ScalarSolution {
    pub fn max_deviation(&self) -> f64 {
        self.pipeline
            .iter()
            .zip(&self.direct)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// CSV with columns t, pipeline, direct.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["t", "pipeline", "direct"]).expect("in-memory CSV");
        for ((t, p), d) in self.times.iter().zip(&self.pipeline).zip(&self.direct) {
            w.write_record([crate::report::sci(*t), crate::report::sci(*p), crate::report::sci(*d)])
                .expect("in-memory CSV");
        }
        String::from_utf8(w.into_inner().expect("in-memory CSV")).expect("CSV is UTF-8")
    }
}

/// Node values of an integration with `sub` RK4 steps between nodes.
fn integrate_nodes<S: VectorSystem + ?Sized>(sys: &S, nodes: Vec<Vec<f64>>, x0: &[f64], sub: usize) -> Result<Vec<Vec<f64>>> {
    let count = nodes.len();
    let path = TimePath::new(nodes, sub)?;
    let traj = integrate_path(sys, &path, x0)?;
    Ok((0..count).map(|i| traj.states[i * sub].clone()).collect())
}

fn uniform(lo: f64, hi: f64, steps: usize) -> Vec<f64> {
    (0..=steps).map(|k| lo + (hi - lo) * k as f64 / steps as f64).collect()
}

/// Options of [`solve_generalised_abel`].
#[derive(Clone, Debug)]
pub struct AbelSolveOptions {
    pub steps: usize,
    /// RK4 steps in τ between consecutive output times.
    pub substeps: usize,
    pub gcc_tol: f64,
    pub agree_tol: f64,
}

impl Default for AbelSolveOptions {
    fn default() -> Self {
        AbelSolveOptions {
            steps: 1000,
            substeps: 4,
            gcc_tol: 1e-8,
            agree_tol: 1e-5,
        }
    }
}

/// Solves dx/dt = a + c·x + f·x^{ε−1} + g·x^ε when F₁ ≡ k₁ and F₂ ≡ k₂.
///
/// With y = (g/f)·x the equation becomes dy/dt = ρ(t)(k₂ + k₁y + y^{ε−1} + y^ε),
/// ρ = f^{ε−1}/g^{ε−2}; τ = ∫ρ dt is computed by composite Simpson and the
/// autonomous equation in τ is stepped with RK4.
pub fn solve_generalised_abel(
    coeffs: &AbelCoefficients,
    x0: f64,
    interval: [f64; 2],
    options: &AbelSolveOptions,
) -> Result<ScalarSolution> {
    let times = uniform(interval[0], interval[1], options.steps);
    let gcc = gcc_check(coeffs, &times, options.gcc_tol)?;
    if !gcc.pass {
        return Err(PipelineError::Precondition(format!(
            "not Chiellini-integrable w.r.t. this scheme (F1/F2 drift {:e})",
            gcc.max_drift
        )));
    }
    let (k1, k2, eps) = (gcc.k1, gcc.k2, coeffs.eps);
    let [_, _, f, g] = coeffs.bound();
    let fp = Program::compile(&f, &["t"])?;
    let gp = Program::compile(&g, &["t"])?;
    let rho = |t: f64| -> Result<f64> {
        let (fv, gv) = (fp.eval(&[t])?, gp.eval(&[t])?);
        Ok(real_pow(fv, eps - 1.0)? / real_pow(gv, eps - 2.0)?)
    };
    let beta = |t: f64| -> Result<f64> { Ok(gp.eval(&[t])? / fp.eval(&[t])?) };

    let mut tau = Vec::with_capacity(times.len());
    tau.push(0.0);
    for w in times.windows(2) {
        let (a, b) = (w[0], w[1]);
        let step = (b - a) / 6.0 * (rho(a)? + 4.0 * rho(0.5 * (a + b))? + rho(b)?);
        tau.push(tau.last().copied().unwrap_or(0.0) + step);
    }
    let mut params = BTreeMap::new();
    params.insert("k1".to_string(), k1);
    params.insert("k2".to_string(), k2);
    params.insert("eps".to_string(), eps);
    let reduced = PolyField::new(
        &["tau"],
        &["y"],
        vec![vec![parse("k2 + k1*y + y^(eps - 1) + y^eps")?]],
        params,
    )?;
    let y0 = beta(interval[0])? * x0;
    let ys = integrate_nodes(&reduced, tau.iter().map(|v| vec![*v]).collect(), &[y0], options.substeps)?;
    let pipeline = times
        .iter()
        .zip(&ys)
        .map(|(t, y)| Ok(y[0] / beta(*t)?))
        .collect::<Result<Vec<f64>>>()?;

    let original = coeffs.field()?;
    let direct: Vec<f64> = integrate_nodes(&original, times.iter().map(|t| vec![*t]).collect(), &[x0], 1)?
        .into_iter()
        .map(|x| x[0])
        .collect();

    let mut report = Report::new("solve-abel");
    report
        .check(Check::at_most("gcc_drift", gcc.max_drift, options.gcc_tol))
        .value("k1", k1)
        .value("k2", k2)
        .value("tau_end", *tau.last().unwrap_or(&0.0))
        .setting("steps", options.steps as f64)
        .setting("substeps", options.substeps as f64);
    let mut solution = ScalarSolution {
        times,
        pipeline,
        direct,
        report,
    };
    let dev = solution.max_deviation();
    solution
        .report
        .check(Check::at_most("pipeline_vs_direct", dev, options.agree_tol));
    Ok(solution)
}

/// dx/dt = f₁x² + f₂x³ as a generalised Abel equation (ε = 3, a = c = 0),
/// with the classic Chiellini condition reported alongside.
pub fn solve_classic_abel(
    f1: &Expr,
    f2: &Expr,
    x0: f64,
    interval: [f64; 2],
    options: &AbelSolveOptions,
) -> Result<ScalarSolution> {
    let coeffs = AbelCoefficients::new(Expr::num(0.0), Expr::num(0.0), f1.clone(), f2.clone(), 3.0);
    let times = uniform(interval[0], interval[1], options.steps.min(200));
    let classic = classic_chiellini_check(f1, f2, &BTreeMap::new(), &times, options.gcc_tol)?;
    let mut sol = solve_generalised_abel(&coeffs, x0, interval, options)?;
    sol.report.scenario = "classic-abel".into();
    sol.report
        .check(Check::at_most("chiellini_drift", classic.drift, options.gcc_tol))
        .value("chiellini_k", classic.k);
    Ok(sol)
}

fn real_pow(x: f64, p: f64) -> Result<f64> {
    if x < 0.0 && p.trunc() != p {
        return Err(PipelineError::Numeric(format!("{x}^{p} is not real")));
    }
    Ok(x.powf(p))
}

/// Coefficients of dy/dt = f((a₁t + b₁y + c₁)/(a₂t + b₂y + c₂)).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AlmostHomogeneous {
    pub a1: f64,
    pub b1: f64,
    pub c1: f64,
    pub a2: f64,
    pub b2: f64,
    pub c2: f64,
}

impl AlmostHomogeneous {
    /// The centre (t₀, y₀) with a₁t₀ + b₁y₀ = −c₁, a₂t₀ + b₂y₀ = −c₂.
    pub fn centre(&self) -> Result<(f64, f64)> {
        let det = self.a1 * self.b2 - self.a2 * self.b1;
        if det.abs() < 1e-12 {
            return Err(PipelineError::Precondition(format!("a1*b2 - a2*b1 = {det:e} vanishes")));
        }
        let t0 = (-self.c1 * self.b2 + self.c2 * self.b1) / det;
        let y0 = (-self.a1 * self.c2 + self.a2 * self.c1) / det;
        Ok((t0, y0))
    }
}

/// Solves the almost homogeneous equation through x = (y − y₀)/(t − t₀)
/// and s = ln|t − t₀|, which turn it into dx/ds = f((a₁ + b₁x)/(a₂ + b₂x)) − x.
/// `f` is an expression in the variable `z`.
pub fn almost_homogeneous_solve(
    eq: &AlmostHomogeneous,
    f: &Expr,
    y0: f64,
    interval: [f64; 2],
    steps: usize,
    tol: f64,
) -> Result<ScalarSolution> {
    let (tc, yc) = eq.centre()?;
    let (lo, hi) = (interval[0].min(interval[1]), interval[0].max(interval[1]));
    if lo <= tc && tc <= hi {
        return Err(PipelineError::Precondition(format!(
            "interval [{lo}, {hi}] contains the singular time t0 = {tc}"
        )));
    }
    let times = uniform(interval[0], interval[1], steps);
    let z_of = |num: Expr, den: Expr| BTreeMap::from([("z".to_string(), div(num, den))]);
    let lin = |a: f64, b: f64, c: f64, t: Expr, y: Expr| add(add(mul(Expr::num(a), t), mul(Expr::num(b), y)), Expr::num(c));

    let reduced_rhs = sub(
        f.substitute(&z_of(
            lin(0.0, eq.b1, eq.a1, Expr::num(0.0), Expr::var("x")),
            lin(0.0, eq.b2, eq.a2, Expr::num(0.0), Expr::var("x")),
        )),
        Expr::var("x"),
    );
    let reduced = PolyField::new(&["s"], &["x"], vec![vec![reduced_rhs]], BTreeMap::new())?;
    let s_nodes: Vec<Vec<f64>> = times.iter().map(|t| vec![(t - tc).abs().ln()]).collect();
    let x0 = (y0 - yc) / (interval[0] - tc);
    let xs = integrate_nodes(&reduced, s_nodes, &[x0], 4)?;
    let pipeline: Vec<f64> = times.iter().zip(&xs).map(|(t, x)| yc + (t - tc) * x[0]).collect();

    let direct_rhs = f.substitute(&z_of(
        lin(eq.a1, eq.b1, eq.c1, Expr::var("t"), Expr::var("y")),
        lin(eq.a2, eq.b2, eq.c2, Expr::var("t"), Expr::var("y")),
    ));
    let direct_field = PolyField::new(&["t"], &["y"], vec![vec![direct_rhs]], BTreeMap::new())?;
    let direct: Vec<f64> = integrate_nodes(&direct_field, times.iter().map(|t| vec![*t]).collect(), &[y0], 4)?
        .into_iter()
        .map(|y| y[0])
        .collect();

    let mut report = Report::new("almost-homogeneous");
    report.value("t0", tc).value("y0", yc).setting("steps", steps as f64);
    let mut sol = ScalarSolution {
        times,
        pipeline,
        direct,
        report,
    };
    let dev = sol.max_deviation();
    sol.report.check(Check::at_most("pipeline_vs_direct", dev, tol));
    Ok(sol)
}

/// Reduction of a shift-invariant system (F(t′ + t, t′ + y) = F(t, y), n = s)
/// by y = t + x to the autonomous system ∂x/∂t_π = F_π(0, x) − e_π.
pub struct ShiftReduction {
    pub reduced: PolyField,
    pub report: Report,
}

/// `samples` are (t, y) pairs where invariance is tested against a fixed set
/// of shifts; `path` and `y0` drive the round-trip check.
pub fn shift_invariant_reduce(
    field: &PolyField,
    samples: &[(Vec<f64>, Vec<f64>)],
    path: &TimePath,
    y0: &[f64],
    tol: f64,
) -> Result<ShiftReduction> {
    let s = field.time_dim();
    if field.state_dim() != s {
        return Err(PipelineError::Config(format!(
            "shift reduction needs n = s, got n = {}, s = {s}",
            field.state_dim()
        )));
    }
    let shifts = [0.37, -0.81, 1.23, -0.05];
    let mut invariance = 0.0f64;
    for (t, y) in samples {
        for (k, &d) in shifts.iter().enumerate() {
            let shift: Vec<f64> = (0..s).map(|i| d * (1.0 + 0.5 * ((i + k) % 3) as f64)).collect();
            let ts: Vec<f64> = t.iter().zip(&shift).map(|(a, b)| a + b).collect();
            let ys: Vec<f64> = y.iter().zip(&shift).map(|(a, b)| a + b).collect();
            for pi in 0..s {
                let a = field.eval(pi, t, y)?;
                let b = field.eval(pi, &ts, &ys)?;
                for (u, v) in a.iter().zip(&b) {
                    invariance = invariance.max((u - v).abs());
                }
            }
        }
    }
    if invariance > 1e-8 {
        return Err(PipelineError::Precondition(format!(
            "field is not shift invariant (deviation {invariance:e})"
        )));
    }
    let zero_time: BTreeMap<String, Expr> = field
        .time_vars()
        .iter()
        .map(|v| (v.to_string(), Expr::num(0.0)))
        .collect();
    let components: Vec<Vec<Expr>> = (0..s)
        .map(|pi| {
            (0..s)
                .map(|i| {
                    let e = field.bound_component(pi, i).substitute(&zero_time);
                    if i == pi {
                        sub(e, Expr::num(1.0))
                    } else {
                        e
                    }
                })
                .collect()
        })
        .collect();
    let reduced = PolyField::new(&field.time_vars(), &field.state_vars(), components, BTreeMap::new())?;

    let t0 = path.start();
    let x0: Vec<f64> = y0.iter().zip(t0).map(|(y, t)| y - t).collect();
    let original = integrate_path(field, path, y0)?;
    let reduced_traj = integrate_path(&reduced, path, &x0)?;
    let mut round_trip = 0.0f64;
    for ((t, y), x) in original.times.iter().zip(&original.states).zip(&reduced_traj.states) {
        for i in 0..s {
            round_trip = round_trip.max((t[i] + x[i] - y[i]).abs());
        }
    }
    let mut report = Report::new("shift-invariant");
    report
        .check(Check::at_most("shift_invariance", invariance, 1e-8))
        .check(Check::at_most("round_trip", round_trip, tol));
    for (pi, row) in reduced.components().iter().enumerate() {
        for (i, e) in row.iter().enumerate() {
            report.output(&format!("reduced[{pi}][{i}]"), e.to_string());
        }
    }
    Ok(ShiftReduction { reduced, report })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(s: &str) -> Expr {
        parse(s).unwrap()
    }

    #[test]
    fn zero_a_keeps_the_scaled_variable_on_its_own_dynamics() {
        // a ≡ 0 gives k₂ = 0; the reduced equation is dy/dτ = k₁y + y² + y³.
        let coeffs = AbelCoefficients::new(p("0"), p("0"), p("1"), p("1"), 3.0);
        let sol = solve_generalised_abel(&coeffs, 0.1, [0.0, 1.0], &AbelSolveOptions::default()).unwrap();
        assert!(sol.report.pass, "{:?}", sol.report);
        assert!(sol.pipeline.last().unwrap() > &0.1);
    }

    #[test]
    fn non_chiellini_family_is_rejected() {
        let coeffs = AbelCoefficients::new(p("1"), p("0"), p("1 + 0.1*sin(7*t)"), p("1"), 3.0);
        let err = solve_generalised_abel(&coeffs, 0.1, [0.0, 1.0], &AbelSolveOptions::default()).unwrap_err();
        assert_eq!(err.exit_code(), 1);
        assert!(err.to_string().contains("not Chiellini-integrable"));
    }

    #[test]
    fn homogeneous_constant_case() {
        let eq = AlmostHomogeneous {
            a1: 1.0,
            b1: 0.0,
            c1: 0.0,
            a2: 0.0,
            b2: 1.0,
            c2: 0.0,
        };
        let sol = almost_homogeneous_solve(&eq, &p("0.7"), 2.0, [1.0, 3.0], 200, 1e-10).unwrap();
        // y = 0.7t + C, so x = y/t = 0.7 + C/t with C = 2 − 0.7.
        for (t, y) in sol.times.iter().zip(&sol.pipeline) {
            assert!((y / t - (0.7 + 1.3 / t)).abs() < 1e-12);
        }
        let singular = AlmostHomogeneous { b2: 0.0, ..eq };
        assert!(almost_homogeneous_solve(&singular, &p("z"), 1.0, [1.0, 2.0], 10, 1e-6).is_err());
        assert!(almost_homogeneous_solve(&eq, &p("z"), 1.0, [-1.0, 2.0], 10, 1e-6).is_err());
    }

    #[test]
    fn shift_reduction_round_trip() {
        let f = PolyField::parse(
            &["t1", "t2"],
            &["y1", "y2"],
            &[&["1 + 0.3*sin(y1 - t1)", "0"], &["0", "1 + 0.2*cos(y2 - t2)"]],
            &[],
        )
        .unwrap();
        let samples = vec![(vec![0.1, 0.2], vec![0.5, -0.3]), (vec![1.0, -0.4], vec![0.0, 0.7])];
        let path = TimePath::with_density(vec![vec![0.0, 0.0], vec![0.6, 0.0], vec![0.6, 0.8]], 400.0).unwrap();
        let r = shift_invariant_reduce(&f, &samples, &path, &[0.2, 0.4], 1e-6).unwrap();
        assert!(r.report.pass, "{:?}", r.report);
        assert!(r.reduced.is_autonomous());
        let not_invariant = PolyField::parse(&["t"], &["y"], &[&["y*t"]], &[]).unwrap();
        let line = TimePath::with_density(vec![vec![0.0], vec![1.0]], 100.0).unwrap();
        let err = shift_invariant_reduce(&not_invariant, &[(vec![0.3], vec![0.2])], &line, &[0.1], 1e-6);
        assert!(matches!(err, Err(PipelineError::Precondition(_))));
    }
}
