//! Finite bases of vector fields, span membership by least squares,
//! quasi-Lie scheme axioms, the main property of a scheme, closure of
//! autonomised generators and the Abel controls.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::expr::{add, differentiate, div, mul, parse, sub, EvalError, Expr, Program};
use crate::families::{chebyshev_grid, AbelCoefficients, AbelPdeCoefficients};
use crate::fields::{FieldError, PolyField, VectorSystem, ZeroField};
use crate::flows::{star_action, star_action_closed_form, FlowError, FlowKind, GeneralisedFlow};
use crate::linalg::LeastSquares;
use crate::math;

fn num_expr(v: f64) -> Expr {
    Expr::Num(v)
}

/// Failures of basis construction, fits and control searches.
#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum SchemeError {
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error("basis field {index}: {source}")]
    Basis { index: usize, source: EvalError },
    #[error("sample matrix has rank {rank} < {cols}; add samples or remove dependent fields")]
    RankDeficient { rank: usize, cols: usize },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("{what} vanishes at t = {t:?}")]
    ZeroCoefficient { what: &'static str, t: Vec<f64> },
    #[error("{what} is not positive at t = {t:?}")]
    NotPositive { what: &'static str, t: Vec<f64> },
    #[error("no admissible control: transformed field misses the target span by {residual:e}")]
    ControlNotFound { residual: f64 },
    #[error("{0}")]
    Precondition(String),
}

/// A finite list of autonomous vector fields Y_j on ℝⁿ together with a
/// sample set on which spans are tested by least squares.
#[derive(Clone, Debug)]
pub struct VectorFieldBasis {
    name: Option<String>,
    state_vars: Vec<String>,
    fields: Vec<Vec<Expr>>,
    programs: Vec<Vec<Program>>,
    samples: Vec<Vec<f64>>,
    lsq: LeastSquares,
}

/// Coefficients of a least-squares fit and the max pointwise misfit.
#[derive(Clone, Debug, PartialEq)]
pub struct Decomposition {
    pub coefficients: Vec<f64>,
    pub residual: f64,
}

impl VectorFieldBasis {
    /// `fields[j][i]` is the i-th component of Y_j; parameters are bound first.
    pub fn new(
        state_vars: &[&str],
        fields: Vec<Vec<Expr>>,
        params: &BTreeMap<String, f64>,
        samples: Vec<Vec<f64>>,
    ) -> Result<VectorFieldBasis, SchemeError> {
        let n = state_vars.len();
        if n == 0 || fields.is_empty() {
            return Err(SchemeError::Dimension("basis needs n ≥ 1 and at least one field".into()));
        }
        if samples.iter().any(|p| p.len() != n) {
            return Err(SchemeError::Dimension("sample points must have n coordinates".into()));
        }
        let mut bound = Vec::with_capacity(fields.len());
        let mut programs = Vec::with_capacity(fields.len());
        for (j, y) in fields.iter().enumerate() {
            if y.len() != n {
                return Err(SchemeError::Dimension(format!("basis field {j} has {} components", y.len())));
            }
            let b: Vec<Expr> = y.iter().map(|e| e.bind(params)).collect();
            let p = b
                .iter()
                .map(|e| Program::compile(e, state_vars))
                .collect::<Result<Vec<_>, _>>()
                .map_err(|source| SchemeError::Basis { index: j, source })?;
            bound.push(b);
            programs.push(p);
        }
        let matrix = design_matrix(&programs, &samples, n)?;
        Ok(VectorFieldBasis {
            name: None,
            state_vars: state_vars.iter().map(|s| String::from(*s)).collect(),
            fields: bound,
            programs,
            samples,
            lsq: LeastSquares::new(matrix),
        })
    }

    /// Parses `fields[j][i]`.
    pub fn parse(
        state_vars: &[&str],
        fields: &[&[&str]],
        params: &[(&str, f64)],
        samples: Vec<Vec<f64>>,
    ) -> Result<VectorFieldBasis, SchemeError> {
        let mut exprs = Vec::with_capacity(fields.len());
        for (pi, row) in fields.iter().enumerate() {
            let mut parsed = Vec::with_capacity(row.len());
            for (i, src) in row.iter().enumerate() {
                parsed.push(parse(src).map_err(|source| FieldError::Parse {
                    pi,
                    component: i,
                    source,
                })?);
            }
            exprs.push(parsed);
        }
        let params = params.iter().map(|(k, v)| (String::from(*k), *v)).collect();
        VectorFieldBasis::new(state_vars, exprs, &params, samples)
    }

    pub fn with_name(mut self, name: &str) -> Self {
        self.name = Some(name.into());
        self
    }

    pub fn name(&self) -> Option<&str> {
        self.name.as_deref()
    }

    pub fn state_vars(&self) -> Vec<&str> {
        self.state_vars.iter().map(String::as_str).collect()
    }

    pub fn state_dim(&self) -> usize {
        self.state_vars.len()
    }

    /// Number r of listed fields.
    pub fn len(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }

    pub fn fields(&self) -> &[Vec<Expr>] {
        &self.fields
    }

    pub fn samples(&self) -> &[Vec<f64>] {
        &self.samples
    }

    /// Numerical dimension of the span on the sample set.
    pub fn rank(&self) -> usize {
        self.lsq.rank()
    }

    pub fn is_full_rank(&self) -> bool {
        self.lsq.full_column_rank()
    }

    /// Condition number of the sample evaluation matrix.
    pub fn condition(&self) -> f64 {
        self.lsq.condition()
    }

    /// The basis restricted to `indices`, on the same samples.
    pub fn subset(&self, indices: &[usize]) -> Result<VectorFieldBasis, SchemeError> {
        let fields = indices
            .iter()
            .map(|&j| {
                self.fields
                    .get(j)
                    .cloned()
                    .ok_or_else(|| SchemeError::Dimension(format!("no basis field {j}")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let mut sub = VectorFieldBasis::new(&self.state_vars(), fields, &BTreeMap::new(), self.samples.clone())?;
        sub.name = self.name.clone();
        Ok(sub)
    }

    /// Y_j(x).
    pub fn eval(&self, j: usize, x: &[f64]) -> Result<Vec<f64>, SchemeError> {
        self.programs[j]
            .iter()
            .map(|p| p.eval(x).map_err(|source| SchemeError::Basis { index: j, source }))
            .collect()
    }

    /// Σ_j c_j Y_j(x).
    pub fn combine(&self, coefficients: &[f64], x: &[f64]) -> Result<Vec<f64>, SchemeError> {
        let mut out = vec![0.0; self.state_dim()];
        for (j, c) in coefficients.iter().enumerate() {
            for (o, v) in out.iter_mut().zip(self.eval(j, x)?) {
                *o += c * v;
            }
        }
        Ok(out)
    }

    /// The Lie bracket [Y_i, Y_j] as expressions.
    pub fn bracket(&self, i: usize, j: usize) -> Vec<Expr> {
        bracket_exprs(&self.fields[i], &self.fields[j], &self.state_vars())
    }

    fn require_rank(&self) -> Result<(), SchemeError> {
        if !self.is_full_rank() {
            return Err(SchemeError::RankDeficient {
                rank: self.rank(),
                cols: self.len(),
            });
        }
        Ok(())
    }

    /// Fits stacked sample values (sample-major, component-minor).
    pub fn decompose_values(&self, values: &[f64]) -> Result<Decomposition, SchemeError> {
        self.require_rank()?;
        if values.len() != self.lsq.rows() {
            return Err(SchemeError::Dimension("value vector does not match the sample set".into()));
        }
        let (coefficients, residual) = self.lsq.solve(values);
        Ok(Decomposition {
            coefficients,
            residual,
        })
    }

    /// Least-squares coefficients of A_π(t, ·) over the sample set.
    pub fn decompose<S: VectorSystem + ?Sized>(
        &self,
        field: &S,
        pi: usize,
        t: &[f64],
    ) -> Result<Decomposition, SchemeError> {
        if field.state_dim() != self.state_dim() {
            return Err(SchemeError::Dimension("field and basis state dimensions differ".into()));
        }
        let mut values = Vec::with_capacity(self.lsq.rows());
        for x in &self.samples {
            values.extend(field.eval(pi, t, x)?);
        }
        self.decompose_values(&values)
    }

    /// Fits an autonomous field given as expressions in the basis variables.
    pub fn decompose_exprs(&self, components: &[Expr]) -> Result<Decomposition, SchemeError> {
        let programs = components
            .iter()
            .map(|e| Program::compile(e, &self.state_vars()))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|source| SchemeError::Basis { index: usize::MAX, source })?;
        let mut values = Vec::with_capacity(self.lsq.rows());
        for x in &self.samples {
            for p in &programs {
                values.push(p.eval(x).map_err(|source| SchemeError::Basis { index: usize::MAX, source })?);
            }
        }
        self.decompose_values(&values)
    }
}

fn design_matrix(programs: &[Vec<Program>], samples: &[Vec<f64>], n: usize) -> Result<DMatrix<f64>, SchemeError> {
    let mut m = DMatrix::zeros(samples.len() * n, programs.len());
    for (k, x) in samples.iter().enumerate() {
        for (j, y) in programs.iter().enumerate() {
            for (i, p) in y.iter().enumerate() {
                m[(k * n + i, j)] = p.eval(x).map_err(|source| SchemeError::Basis { index: j, source })?;
            }
        }
    }
    Ok(m)
}

/// [A, B]^i = Σ_j (A^j ∂_j B^i − B^j ∂_j A^i), symbolically.
pub fn bracket_exprs(a: &[Expr], b: &[Expr], vars: &[&str]) -> Vec<Expr> {
    (0..a.len())
        .map(|i| {
            let mut acc = Expr::Num(0.0);
            for (j, v) in vars.iter().enumerate() {
                acc = add(acc, mul(a[j].clone(), differentiate(&b[i], v)));
                acc = sub(acc, mul(b[j].clone(), differentiate(&a[i], v)));
            }
            acc
        })
        .collect()
}

fn line_samples(lo: f64, hi: f64, count: usize) -> Vec<Vec<f64>> {
    chebyshev_grid(&[lo], &[hi], count)
}

fn exprs(src: &[&str]) -> Vec<Vec<Expr>> {
    src.iter().map(|s| vec![parse(s).expect("built-in basis parses")]).collect()
}

/// Default number of Chebyshev samples for the built-in line bases.
pub const LINE_SAMPLES: usize = 16;

/// V_GA = ⟨∂x, x∂x, x^{ε−1}∂x, x^ε∂x⟩ sampled on x ∈ [1/2, 2].
pub fn general_abel_basis(eps: f64) -> Result<VectorFieldBasis, SchemeError> {
    let mut params = BTreeMap::new();
    params.insert(String::from("eps"), eps);
    Ok(VectorFieldBasis::new(
        &["x"],
        exprs(&["1", "x", "x^(eps - 1)", "x^eps"]),
        &params,
        line_samples(0.5, 2.0, LINE_SAMPLES),
    )?
    .with_name("V_GA"))
}

/// V_Ab = ⟨u³∂u, u²∂u, u∂u, ∂u⟩ sampled on u ∈ [−2, 2].
pub fn abel_pde_basis() -> Result<VectorFieldBasis, SchemeError> {
    Ok(VectorFieldBasis::new(
        &["u"],
        exprs(&["u^3", "u^2", "u", "1"]),
        &BTreeMap::new(),
        line_samples(-2.0, 2.0, LINE_SAMPLES),
    )?
    .with_name("V_Ab"))
}

/// V₀ = ⟨u³∂u, u∂u⟩, the Bernoulli target of the Abel PDE control.
pub fn bernoulli_basis() -> Result<VectorFieldBasis, SchemeError> {
    Ok(VectorFieldBasis::new(
        &["u"],
        exprs(&["u^3", "u"]),
        &BTreeMap::new(),
        line_samples(-2.0, 2.0, LINE_SAMPLES),
    )?
    .with_name("V_0"))
}

/// ⟨∂u, u∂u, u²∂u⟩ ≅ sl(2) on the line.
pub fn riccati_basis() -> Result<VectorFieldBasis, SchemeError> {
    Ok(VectorFieldBasis::new(
        &["u"],
        exprs(&["1", "u", "u^2"]),
        &BTreeMap::new(),
        line_samples(-2.0, 2.0, LINE_SAMPLES),
    )?
    .with_name("sl2"))
}

/// V^sg = ⟨∂u, sin u ∂u, cos u ∂u⟩ sampled on u ∈ [−π, π].
pub fn sine_gordon_basis() -> Result<VectorFieldBasis, SchemeError> {
    let pi = core::f64::consts::PI;
    Ok(VectorFieldBasis::new(
        &["u"],
        exprs(&["1", "sin(u)", "cos(u)"]),
        &BTreeMap::new(),
        line_samples(-pi, pi, LINE_SAMPLES),
    )?
    .with_name("V_sg"))
}

/// V_L = ⟨∂w, e^{λw/2}∂w⟩ sampled on w ∈ [−1, 1].
pub fn liouville_basis(lambda: f64) -> Result<VectorFieldBasis, SchemeError> {
    let mut params = BTreeMap::new();
    params.insert(String::from("lambda"), lambda);
    Ok(VectorFieldBasis::new(
        &["w"],
        exprs(&["1", "exp(lambda*w/2)"]),
        &params,
        line_samples(-1.0, 1.0, LINE_SAMPLES),
    )?
    .with_name("V_L"))
}

/// Worst residuals of the three scheme axioms.
#[derive(Clone, Debug, PartialEq)]
pub struct SchemeReport {
    /// W ⊆ span V.
    pub w_in_v: f64,
    /// [W, W] ⊆ span W.
    pub ww_in_w: f64,
    /// [W, V] ⊆ span V.
    pub wv_in_v: f64,
    /// Worst (i, j) for [W, V], as basis indices.
    pub worst_wv: Option<(usize, usize)>,
    pub tol: f64,
    pub pass: bool,
}

impl SchemeReport {
    pub fn max(&self) -> f64 {
        self.w_in_v.max(self.ww_in_w).max(self.wv_in_v)
    }
}

/// Checks W ⊆ V, [W, W] ⊆ W and [W, V] ⊆ V on the basis sample set.
pub fn verify_scheme(v: &VectorFieldBasis, w: &[usize], tol: f64) -> Result<SchemeReport, SchemeError> {
    let wb = v.subset(w)?;
    let mut w_in_v = 0.0f64;
    for &i in w {
        w_in_v = w_in_v.max(v.decompose_exprs(&v.fields[i])?.residual);
    }
    let mut ww_in_w = 0.0f64;
    for (a, &i) in w.iter().enumerate() {
        for &j in &w[a + 1..] {
            ww_in_w = ww_in_w.max(wb.decompose_exprs(&v.bracket(i, j))?.residual);
        }
    }
    let mut wv_in_v = 0.0f64;
    let mut worst_wv = None;
    for &i in w {
        for j in 0..v.len() {
            let r = v.decompose_exprs(&v.bracket(i, j))?.residual;
            if r > wv_in_v || worst_wv.is_none() {
                wv_in_v = wv_in_v.max(r);
                worst_wv = Some((i, j));
            }
        }
    }
    let pass = w_in_v <= tol && ww_in_w <= tol && wv_in_v <= tol;
    Ok(SchemeReport {
        w_in_v,
        ww_in_w,
        wv_in_v,
        worst_wv,
        tol,
        pass,
    })
}

/// A pair (W, V) given by a basis of V and the indices spanning W.
#[derive(Clone, Debug)]
pub struct QuasiLieScheme {
    pub v: VectorFieldBasis,
    pub w: Vec<usize>,
}

impl QuasiLieScheme {
    /// Builds the pair after checking the axioms to `tol`.
    pub fn new(v: VectorFieldBasis, w: Vec<usize>, tol: f64) -> Result<QuasiLieScheme, SchemeError> {
        let report = verify_scheme(&v, &w, tol)?;
        if !report.pass {
            return Err(SchemeError::Precondition(format!(
                "scheme axioms fail with worst residual {:e}",
                report.max()
            )));
        }
        Ok(QuasiLieScheme { v, w })
    }

    /// (W_GA, V_GA) with W_GA = ⟨x∂x⟩.
    pub fn general_abel(eps: f64) -> Result<QuasiLieScheme, SchemeError> {
        QuasiLieScheme::new(general_abel_basis(eps)?, vec![1], 1e-8)
    }

    /// (W_Ab, V_Ab) with W_Ab = ⟨u∂u, ∂u⟩.
    pub fn abel_pde() -> Result<QuasiLieScheme, SchemeError> {
        QuasiLieScheme::new(abel_pde_basis()?, vec![2, 3], 1e-8)
    }

    pub fn w_basis(&self) -> Result<VectorFieldBasis, SchemeError> {
        self.v.subset(&self.w)
    }
}

/// Tabulated coefficient curve b_j^π(t) of a field over a basis.
#[derive(Clone, Debug, PartialEq)]
pub struct MembershipReport {
    pub times: Vec<Vec<f64>>,
    /// `coefficients[k][π][j]` at `times[k]`.
    pub coefficients: Vec<Vec<Vec<f64>>>,
    pub worst_residual: f64,
    /// (time index, π) of the worst fit.
    pub worst_at: (usize, usize),
    pub tol: f64,
    pub member: bool,
}

/// Decomposes every component X_π(t, ·) over the basis at each grid time.
pub fn membership<S: VectorSystem + ?Sized>(
    field: &S,
    basis: &VectorFieldBasis,
    times: &[Vec<f64>],
    tol: f64,
) -> Result<MembershipReport, SchemeError> {
    if times.is_empty() {
        return Err(SchemeError::Dimension("membership needs at least one time".into()));
    }
    let mut coefficients = Vec::with_capacity(times.len());
    let mut worst_residual = 0.0f64;
    let mut worst_at = (0, 0);
    for (k, t) in times.iter().enumerate() {
        let mut row = Vec::with_capacity(field.time_dim());
        for pi in 0..field.time_dim() {
            let d = basis.decompose(field, pi, t)?;
            if d.residual > worst_residual || !d.residual.is_finite() {
                worst_residual = if d.residual.is_finite() { d.residual } else { f64::INFINITY };
                worst_at = (k, pi);
            }
            row.push(d.coefficients);
        }
        coefficients.push(row);
    }
    Ok(MembershipReport {
        times: times.to_vec(),
        coefficients,
        worst_residual,
        worst_at,
        tol,
        member: worst_residual <= tol,
    })
}

/// Outcome of checking that a flow preserves V-valued systems.
#[derive(Clone, Debug, PartialEq)]
pub struct MainPropertyReport {
    /// Membership residual of F in V.
    pub field_residual: f64,
    /// Residual of the flow's generator ∂_π h ∘ h⁻¹ in W.
    pub generator_residual: f64,
    /// Membership residual of h⋆F in V.
    pub transformed_residual: f64,
    pub tol: f64,
    /// h⋆F ∈ V(ℝ^s) on the grid.
    pub pass: bool,
}

/// Checks that h⋆F stays in V(ℝ^s) for F ∈ V(ℝ^s); also reports whether
/// the generator of h lies in W(ℝ^s).
pub fn main_property_check(
    scheme: &QuasiLieScheme,
    flow: &GeneralisedFlow,
    field: &PolyField,
    times: &[Vec<f64>],
    tol: f64,
) -> Result<MainPropertyReport, SchemeError> {
    let f = membership(field, &scheme.v, times, tol)?;
    if !f.member {
        return Err(SchemeError::Precondition(format!(
            "field is not V-valued (residual {:e})",
            f.worst_residual
        )));
    }
    let w = scheme.w_basis()?;
    let generator = star_action(flow, ZeroField {
        n: field.state_dim(),
        s: field.time_dim(),
    })?;
    let g = membership(&generator, &w, times, tol)?;
    let transformed = match flow.kind() {
        FlowKind::Generated { .. } => membership(&star_action(flow, field)?, &scheme.v, times, tol)?,
        _ => membership(&star_action_closed_form(flow, field)?, &scheme.v, times, tol)?,
    };
    Ok(MainPropertyReport {
        field_residual: f.worst_residual,
        generator_residual: g.worst_residual,
        transformed_residual: transformed.worst_residual,
        tol,
        pass: transformed.member,
    })
}

/// An autonomised generator ∂_{t_τ} + X_c, or X_c alone when τ is `None`.
#[derive(Clone, Copy)]
pub struct Generator<'a> {
    pub system: &'a dyn VectorSystem,
    pub component: usize,
    pub time_index: Option<usize>,
}

impl<'a> Generator<'a> {
    pub fn autonomised(system: &'a dyn VectorSystem, pi: usize) -> Generator<'a> {
        Generator {
            system,
            component: pi,
            time_index: Some(pi),
        }
    }

    pub fn spatial(system: &'a dyn VectorSystem, component: usize) -> Generator<'a> {
        Generator {
            system,
            component,
            time_index: None,
        }
    }
}

/// Closure data for one bracket [X̄_j, X̄_k].
#[derive(Clone, Debug, PartialEq)]
pub struct ClosurePair {
    pub j: usize,
    pub k: usize,
    /// Fitted f_jk^l(t) per sample time.
    pub coefficients: Vec<Vec<f64>>,
    /// Worst misfit of the x-components.
    pub misfit: f64,
    /// Worst |Σ_l δ^π_{τ_l} f_jk^l| over π.
    pub time_rows: f64,
    /// Max deviation of f_jk^l(t) from its mean over the sample times.
    pub drift: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClosureReport {
    pub pairs: Vec<ClosurePair>,
    pub worst_misfit: f64,
    pub worst_time_rows: f64,
    pub tol: f64,
    pub pass: bool,
}

fn generator_bracket(a: &Generator, b: &Generator, t: &[f64], x: &[f64]) -> Result<Vec<f64>, FieldError> {
    let xa = a.system.eval(a.component, t, x)?;
    let xb = b.system.eval(b.component, t, x)?;
    let ja = a.system.jacobian_x(a.component, t, x)?;
    let jb = b.system.jacobian_x(b.component, t, x)?;
    let mut out: Vec<f64> = (0..x.len())
        .map(|i| (0..x.len()).map(|j| xa[j] * jb[(i, j)] - xb[j] * ja[(i, j)]).sum())
        .collect();
    if let Some(ta) = a.time_index {
        for (o, d) in out.iter_mut().zip(b.system.time_derivative(b.component, ta, t, x)?) {
            *o += d;
        }
    }
    if let Some(tb) = b.time_index {
        for (o, d) in out.iter_mut().zip(a.system.time_derivative(a.component, tb, t, x)?) {
            *o -= d;
        }
    }
    Ok(out)
}

/// Fits [X̄_j, X̄_k] = Σ_l f_jk^l(t) X̄_l at each sample time over the state
/// samples; time components of the fit must cancel.
pub fn generator_closure_check(
    generators: &[Generator],
    times: &[Vec<f64>],
    states: &[Vec<f64>],
    tol: f64,
) -> Result<ClosureReport, SchemeError> {
    if generators.len() < 2 {
        return Err(SchemeError::Dimension("closure needs at least two generators".into()));
    }
    let n = generators[0].system.state_dim();
    let s = generators[0].system.time_dim();
    if generators.iter().any(|g| g.system.state_dim() != n || g.system.time_dim() != s) {
        return Err(SchemeError::Dimension("generators must share n and s".into()));
    }
    let r = generators.len();
    let x_rows = states.len() * n;
    let mut pairs = Vec::new();
    let mut worst_misfit = 0.0f64;
    let mut worst_time_rows = 0.0f64;
    for j in 0..r {
        for k in j + 1..r {
            let mut coefficients = Vec::with_capacity(times.len());
            let mut misfit = 0.0f64;
            let mut time_rows = 0.0f64;
            for t in times {
                let mut m = DMatrix::zeros(x_rows + s, r);
                let mut rhs = vec![0.0; x_rows + s];
                for (q, x) in states.iter().enumerate() {
                    for (l, g) in generators.iter().enumerate() {
                        let v = g.system.eval(g.component, t, x)?;
                        for i in 0..n {
                            m[(q * n + i, l)] = v[i];
                        }
                    }
                    let br = generator_bracket(&generators[j], &generators[k], t, x)?;
                    rhs[q * n..(q + 1) * n].copy_from_slice(&br);
                }
                for (l, g) in generators.iter().enumerate() {
                    if let Some(tau) = g.time_index {
                        m[(x_rows + tau, l)] = 1.0;
                    }
                }
                let lsq = LeastSquares::new(m.clone());
                let (f, _) = lsq.solve(&rhs);
                let fitted = &m * nalgebra::DVector::from_column_slice(&f);
                for row in 0..x_rows {
                    misfit = misfit.max(math::abs(fitted[row] - rhs[row]));
                }
                for row in x_rows..x_rows + s {
                    time_rows = time_rows.max(math::abs(fitted[row]));
                }
                coefficients.push(f);
            }
            let drift = coefficient_drift(&coefficients);
            worst_misfit = worst_misfit.max(misfit);
            worst_time_rows = worst_time_rows.max(time_rows);
            pairs.push(ClosurePair {
                j,
                k,
                coefficients,
                misfit,
                time_rows,
                drift,
            });
        }
    }
    Ok(ClosureReport {
        pairs,
        worst_misfit,
        worst_time_rows,
        tol,
        pass: worst_misfit <= tol && worst_time_rows <= tol,
    })
}

fn coefficient_drift(rows: &[Vec<f64>]) -> f64 {
    let Some(first) = rows.first() else {
        return 0.0;
    };
    let mut drift = 0.0f64;
    for l in 0..first.len() {
        let mean = rows.iter().map(|r| r[l]).sum::<f64>() / rows.len() as f64;
        for r in rows {
            drift = drift.max(math::abs(r[l] - mean));
        }
    }
    drift
}

/// The scaling y = β(t)·x with β = g/f, which maps a Chiellini-integrable
/// Abel equation onto one whose x^{ε−1} and x^ε coefficients coincide.
/// The foot point is the first grid time.
pub fn find_control_abel_ode(coeffs: &AbelCoefficients, times: &[f64]) -> Result<GeneralisedFlow, SchemeError> {
    let [_, _, f, g] = coeffs.bound();
    let fp = Program::compile(&f, &["t"]).map_err(|source| SchemeError::Basis { index: 2, source })?;
    let gp = Program::compile(&g, &["t"]).map_err(|source| SchemeError::Basis { index: 3, source })?;
    for &t in times {
        let fv = fp.eval(&[t]).map_err(|source| SchemeError::Basis { index: 2, source })?;
        let gv = gp.eval(&[t]).map_err(|source| SchemeError::Basis { index: 3, source })?;
        if math::abs(fv) < 1e-12 {
            return Err(SchemeError::ZeroCoefficient { what: "f", t: vec![t] });
        }
        if math::abs(gv) < 1e-12 {
            return Err(SchemeError::ZeroCoefficient { what: "g", t: vec![t] });
        }
        if gv / fv <= 0.0 {
            return Err(SchemeError::NotPositive { what: "g/f", t: vec![t] });
        }
    }
    let flow = GeneralisedFlow::affine(&["t"], "x", div(g, f), Expr::Num(0.0), BTreeMap::new())?;
    Ok(match times.first() {
        Some(&t0) => flow.with_foot(vec![t0]),
        None => flow,
    })
}

/// A control for the Abel PDE system together with its diagnostics.
#[derive(Clone, Debug)]
pub struct AbelPdeControl {
    /// v = a(t)·u + b(t) with b = a·B/(3A).
    pub flow: GeneralisedFlow,
    /// The transformed system h⋆X.
    pub transformed: PolyField,
    /// Fit of h⋆X over V₀ = ⟨u³∂u, u∂u⟩.
    pub membership: MembershipReport,
    pub diagnostics: AbelPdeDiagnostics,
}

/// Grid maxima of the closed-form conditions attached to the Abel PDE system.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AbelPdeDiagnostics {
    /// The two integrability polynomials in their printed form.
    pub printed_conditions: [f64; 2],
    /// 27A²·(constant term of h⋆X) for each time, h the unit-scale control.
    pub derived_conditions: [f64; 2],
    /// The five zero-curvature identities (u⁴, u³, u¹, u², u⁰ coefficients of −R₁₂).
    pub printed_zcc: [f64; 5],
}

/// Searches the affine control v = a·u + b with b = a·B/(3A) that maps the
/// Abel PDE system into V₀(ℝ²). The scale a defaults to 1 (V₀ is invariant
/// under scalings, so membership does not fix it). Success is decided by
/// the membership fit of the transformed field.
pub fn find_control_abel_pde(
    coeffs: &AbelPdeCoefficients,
    scale: Option<Expr>,
    times: &[Vec<f64>],
    tol: f64,
) -> Result<AbelPdeControl, SchemeError> {
    let [[a_, b_, ..], _] = coeffs.bound();
    let slots = ["t1", "t2"];
    let ap = Program::compile(&a_, &slots).map_err(|source| SchemeError::Basis { index: 0, source })?;
    for t in times {
        let v = ap.eval(t).map_err(|source| SchemeError::Basis { index: 0, source })?;
        if math::abs(v) < 1e-12 {
            return Err(SchemeError::ZeroCoefficient { what: "A", t: t.clone() });
        }
    }
    let scale = scale.unwrap_or(Expr::Num(1.0)).bind(&coeffs.params);
    let shift = div(mul(scale.clone(), b_), mul(num_expr(3.0), a_));
    let mut flow = GeneralisedFlow::affine(&slots, "u", scale, shift, BTreeMap::new())?;
    if let Some(t0) = times.first() {
        flow = flow.with_foot(t0.clone());
    }
    let field = coeffs.field()?;
    let transformed = star_action_closed_form(&flow, &field)?;
    let report = membership(&transformed, &bernoulli_basis()?, times, tol)?;
    let diagnostics = abel_pde_diagnostics(coeffs, times)?;
    if !report.member {
        return Err(SchemeError::ControlNotFound {
            residual: report.worst_residual,
        });
    }
    Ok(AbelPdeControl {
        flow,
        transformed,
        membership: report,
        diagnostics,
    })
}

/// Evaluates the closed-form integrability conditions and zero-curvature
/// identities of the Abel PDE system on the grid.
pub fn abel_pde_diagnostics(
    coeffs: &AbelPdeCoefficients,
    times: &[Vec<f64>],
) -> Result<AbelPdeDiagnostics, SchemeError> {
    let [[a, b, c, d], [e, f, g, h]] = coeffs.bound();
    let d1 = |x: &Expr| differentiate(x, "t1");
    let d2 = |x: &Expr| differentiate(x, "t2");
    let k = num_expr;
    let m = |x: &Expr, y: &Expr| mul(x.clone(), y.clone());
    let cond = [
        add(
            add(
                sub(mul(k(27.0), m(&d, &m(&e, &e))), mul(k(9.0), m(&f, &m(&e, &c)))),
                mul(k(2.0), m(&b, &m(&f, &f))),
            ),
            sub(mul(k(9.0), m(&e, &d1(&f))), mul(k(9.0), m(&f, &d1(&e)))),
        ),
        add(
            add(
                sub(mul(k(2.0), m(&h, &m(&d, &m(&e, &e)))), mul(k(9.0), m(&f, &m(&e, &g)))),
                mul(k(2.0), m(&f, &m(&f, &f))),
            ),
            sub(mul(k(9.0), m(&e, &d2(&f))), mul(k(9.0), m(&f, &d2(&e)))),
        ),
    ];
    let derived = [
        add(
            add(
                sub(mul(k(27.0), m(&a, &m(&a, &d))), mul(k(9.0), m(&a, &m(&b, &c)))),
                mul(k(2.0), m(&b, &m(&b, &b))),
            ),
            sub(mul(k(9.0), m(&a, &d1(&b))), mul(k(9.0), m(&b, &d1(&a)))),
        ),
        add(
            add(
                sub(mul(k(27.0), m(&a, &m(&a, &h))), mul(k(9.0), m(&a, &m(&b, &g)))),
                sub(mul(k(3.0), m(&f, &m(&b, &b))), div(m(&e, &m(&b, &m(&b, &b))), a.clone())),
            ),
            sub(mul(k(9.0), m(&a, &d2(&b))), mul(k(9.0), m(&b, &d2(&a)))),
        ),
    ];
    let zcc = [
        sub(m(&a, &f), m(&e, &b)),
        add(sub(d2(&a), d1(&e)), mul(k(2.0), sub(m(&a, &g), m(&c, &e)))),
        add(sub(d2(&c), d1(&g)), mul(k(2.0), sub(m(&b, &h), m(&d, &f)))),
        add(
            add(sub(d2(&b), d1(&f)), mul(k(3.0), sub(m(&a, &h), m(&d, &e)))),
            sub(m(&b, &g), m(&c, &f)),
        ),
        add(sub(d2(&d), d1(&h)), sub(m(&c, &h), m(&d, &g))),
    ];
    let slots = ["t1", "t2"];
    let worst = |list: &[Expr]| -> Result<Vec<f64>, SchemeError> {
        let progs = list
            .iter()
            .map(|e| Program::compile(e, &slots))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|source| SchemeError::Basis { index: 0, source })?;
        let mut out = vec![0.0f64; list.len()];
        for t in times {
            for (o, p) in out.iter_mut().zip(&progs) {
                let v = p.eval(t).map_err(|source| SchemeError::Basis { index: 0, source })?;
                *o = o.max(math::abs(v));
            }
        }
        Ok(out)
    };
    let c = worst(&cond)?;
    let r = worst(&derived)?;
    let z = worst(&zcc)?;
    Ok(AbelPdeDiagnostics {
        printed_conditions: [c[0], c[1]],
        derived_conditions: [r[0], r[1]],
        printed_zcc: [z[0], z[1], z[2], z[3], z[4]],
    })
}

/// Tensor grid of times from per-axis (lo, hi, count).
pub fn time_grid(axes: &[(f64, f64, usize)]) -> Vec<Vec<f64>> {
    let mut points = vec![Vec::new()];
    for &(lo, hi, count) in axes {
        let mut next = Vec::new();
        for p in &points {
            for k in 0..count {
                let v = if count == 1 {
                    lo
                } else {
                    lo + (hi - lo) * k as f64 / (count - 1) as f64
                };
                let mut q: Vec<f64> = p.clone();
                q.push(v);
                next.push(q);
            }
        }
        points = next;
    }
    points
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::families::{liouville, sine_gordon, sine_gordon_kink};
    use crate::flows::FlowMap;

    fn p(s: &str) -> Expr {
        parse(s).unwrap()
    }

    #[test]
    fn decompose_exact_members() {
        let v = general_abel_basis(3.0).unwrap();
        assert!(v.is_full_rank());
        let a = PolyField::parse(&["t"], &["x"], &[&["2 + 3*x"]], &[]).unwrap();
        let d = v.decompose(&a, 0, &[0.0]).unwrap();
        let expected = [2.0, 3.0, 0.0, 0.0];
        for (c, e) in d.coefficients.iter().zip(expected) {
            assert!((c - e).abs() < 1e-10);
        }
        assert!(d.residual < 1e-10);
        let quartic = PolyField::parse(&["t"], &["x"], &[&["x^4"]], &[]).unwrap();
        assert!(v.decompose(&quartic, 0, &[0.0]).unwrap().residual > 1e-2);
    }

    #[test]
    fn angle_addition_in_sine_gordon_basis() {
        let v = sine_gordon_basis().unwrap();
        let g0 = 0.7f64;
        let a = PolyField::parse(&["t"], &["u"], &[&["sin(u + g0)"]], &[("g0", g0)]).unwrap();
        let d = v.decompose(&a, 0, &[0.0]).unwrap();
        assert!(d.residual < 1e-12);
        assert!((d.coefficients[0]).abs() < 1e-12);
        assert!((d.coefficients[1] - libm::cos(g0)).abs() < 1e-12);
        assert!((d.coefficients[2] - libm::sin(g0)).abs() < 1e-12);
    }

    #[test]
    fn built_in_schemes_verify() {
        let ga = verify_scheme(&general_abel_basis(3.0).unwrap(), &[1], 1e-8).unwrap();
        assert!(ga.pass, "{ga:?}");
        let ga = verify_scheme(&general_abel_basis(2.5).unwrap(), &[1], 1e-8).unwrap();
        assert!(ga.pass, "{ga:?}");
        let ab = verify_scheme(&abel_pde_basis().unwrap(), &[2, 3], 1e-8).unwrap();
        assert!(ab.pass, "{ab:?}");
    }

    #[test]
    fn quadratic_generator_breaks_the_scheme() {
        let basis = VectorFieldBasis::parse(
            &["x"],
            &[&["1"], &["x"], &["x^2"], &["x^3"]],
            &[],
            line_samples(0.5, 2.0, 16),
        )
        .unwrap();
        let r = verify_scheme(&basis, &[2], 1e-8).unwrap();
        assert!(!r.pass && r.wv_in_v > 1e-2, "{r:?}");
        assert_eq!(r.worst_wv, Some((2, 3)));
    }

    #[test]
    fn dependent_fields_are_rank_deficient() {
        // x^(eps-1) = x^2 for eps = 3.
        let v = VectorFieldBasis::parse(
            &["x"],
            &[&["1"], &["x"], &["x^(eps - 1)"], &["x^2"]],
            &[("eps", 3.0)],
            line_samples(0.5, 2.0, 16),
        )
        .unwrap();
        assert_eq!(v.rank(), 3);
        assert!(matches!(v.decompose_exprs(&[p("x")]), Err(SchemeError::RankDeficient { .. })));
    }

    #[test]
    fn sine_gordon_and_liouville_are_members() {
        let times = time_grid(&[(-1.0, 1.0, 5), (-1.0, 1.0, 5)]);
        let sg = sine_gordon(&sine_gordon_kink(1.2), &Expr::Num(0.0), BTreeMap::new()).unwrap();
        let r = membership(&sg, &sine_gordon_basis().unwrap(), &times, 1e-9).unwrap();
        assert!(r.member, "{}", r.worst_residual);
        let l = liouville(1.0, 2.0, &p("t1^2 - t2")).unwrap();
        let r = membership(&l, &liouville_basis(2.0).unwrap(), &times, 1e-9).unwrap();
        assert!(r.member, "{}", r.worst_residual);
    }

    #[test]
    fn generic_abel_is_not_bernoulli() {
        let f = PolyField::parse(&["t1", "t2"], &["u"], &[&["u^3 + u^2 + 1"], &["u"]], &[]).unwrap();
        let r = membership(&f, &bernoulli_basis().unwrap(), &[vec![0.0, 0.0]], 1e-9).unwrap();
        assert!(!r.member);
    }

    #[test]
    fn main_property_for_scalings() {
        let scheme = QuasiLieScheme::general_abel(3.0).unwrap();
        let field = AbelCoefficients::new(p("sin(t)"), p("t"), p("1 + t^2"), p("exp(-t)"), 3.0)
            .field()
            .unwrap();
        let times = time_grid(&[(0.0, 1.0, 6)]);
        let flow = GeneralisedFlow::affine(&["t"], "x", p("exp(t)"), Expr::Num(0.0), BTreeMap::new()).unwrap();
        let r = main_property_check(&scheme, &flow, &field, &times, 1e-8).unwrap();
        assert!(r.pass && r.generator_residual < 1e-10, "{r:?}");
        let id = GeneralisedFlow::identity(&["t"], &["x"]);
        assert!(main_property_check(&scheme, &id, &field, &times, 1e-8).unwrap().pass);

        let quad = PolyField::parse(&["t"], &["x"], &[&["0.3*x^2"]], &[]).unwrap();
        let bad = GeneralisedFlow::generated(quad, vec![0.0]).unwrap();
        let r = main_property_check(&scheme, &bad, &field, &times[1..], 1e-8).unwrap();
        assert!(!r.pass && r.generator_residual > 1e-3, "{r:?}");
    }

    #[test]
    fn closure_of_riccati_family() {
        let field = crate::families::riccati_gradient(
            &["t1", "t2"],
            "u",
            &p("sin(t1)*t2 + t1^2"),
            [1.0, -0.5, 1.0],
            BTreeMap::new(),
        )
        .unwrap();
        let sl2 = PolyField::parse(&["t1", "t2"], &["u"], &[&["1"], &["u"]], &[]).unwrap();
        let sl2b = PolyField::parse(&["t1", "t2"], &["u"], &[&["u^2"], &["0"]], &[]).unwrap();
        let gens = [
            Generator::autonomised(&field, 0),
            Generator::autonomised(&field, 1),
            Generator::spatial(&sl2, 0),
            Generator::spatial(&sl2, 1),
            Generator::spatial(&sl2b, 0),
        ];
        let times = time_grid(&[(0.0, 0.4, 3), (0.0, 0.4, 3)]);
        let states: Vec<Vec<f64>> = line_samples(-1.0, 1.0, 8);
        let r = generator_closure_check(&gens, &times, &states, 1e-8).unwrap();
        assert!(r.pass, "{} {}", r.worst_misfit, r.worst_time_rows);

        let odd = PolyField::parse(&["t"], &["x"], &[&["t*x^2"]], &[]).unwrap();
        let other = PolyField::parse(&["t"], &["x"], &[&["exp(x)"]], &[]).unwrap();
        let gens = [Generator::autonomised(&odd, 0), Generator::spatial(&other, 0)];
        let r = generator_closure_check(&gens, &time_grid(&[(0.0, 1.0, 3)]), &states, 1e-6).unwrap();
        assert!(!r.pass);
    }

    #[test]
    fn structure_constants_of_sl2() {
        let f = PolyField::parse(&["t"], &["u"], &[&["1"]], &[]).unwrap();
        let g = PolyField::parse(&["t"], &["u"], &[&["u"]], &[]).unwrap();
        let h = PolyField::parse(&["t"], &["u"], &[&["u^2"]], &[]).unwrap();
        let gens = [Generator::spatial(&f, 0), Generator::spatial(&g, 0), Generator::spatial(&h, 0)];
        let states = line_samples(-1.0, 1.0, 8);
        let r = generator_closure_check(&gens, &time_grid(&[(0.0, 1.0, 4)]), &states, 1e-8).unwrap();
        assert!(r.pass);
        // [∂u, u∂u] = ∂u, [∂u, u²∂u] = 2u∂u, [u∂u, u²∂u] = u²∂u.
        let expected = [[1.0, 0.0, 0.0], [0.0, 2.0, 0.0], [0.0, 0.0, 1.0]];
        for (pair, e) in r.pairs.iter().zip(expected) {
            assert!(pair.drift < 1e-8);
            for (c, v) in pair.coefficients[0].iter().zip(e) {
                assert!((c - v).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn chiellini_control_scales_by_g_over_f() {
        let c = AbelCoefficients::new(p("0"), p("0"), p("exp(t)"), p("exp(2*t)"), 3.0);
        let flow = find_control_abel_ode(&c, &[0.0, 0.5, 1.0]).unwrap();
        let (a, b) = flow.affine_coefficients(&[0.5]).unwrap();
        assert!((a - libm::exp(0.5)).abs() < 1e-14 && b == 0.0);
        let same = AbelCoefficients::new(p("1"), p("0"), p("2"), p("2"), 3.0);
        let flow = find_control_abel_ode(&same, &[0.0, 1.0]).unwrap();
        assert_eq!(flow.apply(&[0.3], &[1.7]).unwrap(), vec![1.7]);
        let neg = AbelCoefficients::new(p("1"), p("0"), p("1"), p("-1"), 3.0);
        assert!(find_control_abel_ode(&neg, &[0.0]).is_err());
    }

    #[test]
    fn abel_pde_control_round_trip() {
        let x0 = crate::families::bernoulli_gradient(&p("0.3*t1 - 0.2*t2"), &p("0.5*t1*t2 + t1 + t2")).unwrap();
        let alpha = p("exp(0.4*t1 + 0.1*t2)");
        let h = GeneralisedFlow::affine(&["t1", "t2"], "u", alpha.clone(), p("sin(t1) - t2^2"), BTreeMap::new())
            .unwrap();
        let pushed = star_action_closed_form(&h, &x0).unwrap();
        let coeffs = AbelPdeCoefficients::from_field(&pushed).unwrap();
        let times = time_grid(&[(0.0, 0.5, 4), (0.0, 0.5, 4)]);
        let ctl = find_control_abel_pde(&coeffs, None, &times, 1e-7).unwrap();
        assert!(ctl.membership.worst_residual < 1e-7);
        assert!(ctl.diagnostics.printed_zcc.iter().all(|v| v.abs() < 1e-9), "{:?}", ctl.diagnostics);
        assert!(ctl.diagnostics.derived_conditions.iter().all(|v| v.abs() < 1e-9), "{:?}", ctl.diagnostics);

        let inverse_scale = div(Expr::Num(1.0), alpha);
        let ctl = find_control_abel_pde(&coeffs, Some(inverse_scale), &times, 1e-7).unwrap();
        for t in &times {
            for y in [-0.7, 0.2, 1.1] {
                let back = ctl.flow.apply(t, &h.apply(t, &[y]).unwrap()).unwrap()[0];
                assert!((back - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn abel_pde_control_trivial_and_negative() {
        let z = || Expr::Num(0.0);
        let bern = AbelPdeCoefficients::new([
            [p("exp(-t1)"), z(), p("t2"), z()],
            [p("0.5"), z(), p("t1"), z()],
        ]);
        let times = time_grid(&[(0.0, 0.5, 3), (0.0, 0.5, 3)]);
        let ctl = find_control_abel_pde(&bern, None, &times, 1e-7).unwrap();
        assert_eq!(ctl.flow.affine_coefficients(&[0.2, 0.3]).unwrap(), (1.0, 0.0));
        assert!(ctl.membership.worst_residual < 1e-12);

        let generic = AbelPdeCoefficients::new([
            [p("1"), p("1"), p("0"), p("1")],
            [p("1"), p("0"), p("0"), p("0")],
        ]);
        assert!(matches!(
            find_control_abel_pde(&generic, None, &times, 1e-7),
            Err(SchemeError::ControlNotFound { .. })
        ));
        let degenerate = AbelPdeCoefficients::new([[z(), p("1"), z(), z()], [z(), z(), z(), z()]]);
        assert!(matches!(
            find_control_abel_pde(&degenerate, None, &times, 1e-7),
            Err(SchemeError::ZeroCoefficient { .. })
        ));
    }
}
