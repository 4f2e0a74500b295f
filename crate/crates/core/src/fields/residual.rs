use alloc::vec;
use alloc::vec::Vec;

use super::{dim_error, FieldError, VectorSystem};
use crate::math;

/// A single component X_π of a system, viewed as a t-dependent vector field.
#[derive(Clone, Copy)]
pub struct FieldSlice<'a> {
    pub system: &'a dyn VectorSystem,
    pub pi: usize,
}

impl<'a> FieldSlice<'a> {
    pub fn new(system: &'a dyn VectorSystem, pi: usize) -> Self {
        FieldSlice { system, pi }
    }
}

/// [A, B]^i = Σ_j (A^j ∂_j B^i − B^j ∂_j A^i) at (t, x).
pub fn lie_bracket(
    a: FieldSlice<'_>,
    b: FieldSlice<'_>,
    t: &[f64],
    x: &[f64],
) -> Result<Vec<f64>, FieldError> {
    let n = a.system.state_dim();
    if b.system.state_dim() != n {
        return Err(dim_error("bracket state dimension", n, b.system.state_dim()));
    }
    let va = a.system.eval(a.pi, t, x)?;
    let vb = b.system.eval(b.pi, t, x)?;
    let ja = a.system.jacobian_x(a.pi, t, x)?;
    let jb = b.system.jacobian_x(b.pi, t, x)?;
    let mut out = vec![0.0; n];
    for i in 0..n {
        let mut p = 0.0;
        let mut q = 0.0;
        for j in 0..n {
            p += va[j] * jb[(i, j)];
            q += vb[j] * ja[(i, j)];
        }
        out[i] = p - q;
    }
    Ok(out)
}

/// R_{πν} = ∂_{t_π} X_ν − ∂_{t_ν} X_π + [X_π, X_ν].
pub fn zcc_residual<S: VectorSystem + ?Sized>(
    sys: &S,
    pi: usize,
    nu: usize,
    t: &[f64],
    x: &[f64],
) -> Result<Vec<f64>, FieldError> {
    let s = sys.time_dim();
    if pi >= s || nu >= s {
        return Err(dim_error("time index bound", s, pi.max(nu) + 1));
    }
    let d_nu = sys.time_derivative(nu, pi, t, x)?;
    let d_pi = sys.time_derivative(pi, nu, t, x)?;
    let dyn_sys = DynRef(sys);
    let br = lie_bracket(
        FieldSlice::new(&dyn_sys, pi),
        FieldSlice::new(&dyn_sys, nu),
        t,
        x,
    )?;
    Ok((0..sys.state_dim())
        .map(|i| (d_nu[i] - d_pi[i]) + br[i])
        .collect())
}

/// Adapter turning a possibly unsized generic system into a `dyn` object.
struct DynRef<'a, S: ?Sized>(&'a S);

impl<S: VectorSystem + ?Sized> VectorSystem for DynRef<'_, S> {
    fn state_dim(&self) -> usize {
        self.0.state_dim()
    }
    fn time_dim(&self) -> usize {
        self.0.time_dim()
    }
    fn eval_into(&self, pi: usize, t: &[f64], x: &[f64], out: &mut [f64]) -> Result<(), FieldError> {
        self.0.eval_into(pi, t, x, out)
    }
    fn jacobian_x(
        &self,
        pi: usize,
        t: &[f64],
        x: &[f64],
    ) -> Result<nalgebra::DMatrix<f64>, FieldError> {
        self.0.jacobian_x(pi, t, x)
    }
    fn time_derivative(
        &self,
        pi: usize,
        wrt: usize,
        t: &[f64],
        x: &[f64],
    ) -> Result<Vec<f64>, FieldError> {
        self.0.time_derivative(pi, wrt, t, x)
    }
}

/// Uniformly spaced axis `[lo, hi]` with `count` nodes (`count = 1` gives `lo`).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Axis {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

impl Axis {
    pub fn new(lo: f64, hi: f64, count: usize) -> Axis {
        Axis { lo, hi, count }
    }

    pub fn node(&self, k: usize) -> f64 {
        if self.count <= 1 {
            self.lo
        } else if k + 1 == self.count {
            self.hi
        } else {
            self.lo + (self.hi - self.lo) * k as f64 / (self.count - 1) as f64
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.count).map(|k| self.node(k)).collect()
    }
}

/// Cartesian grid over (t, x).
#[derive(Clone, Debug, PartialEq)]
pub struct SampleGrid {
    pub time: Vec<Axis>,
    pub state: Vec<Axis>,
}

impl SampleGrid {
    pub fn new(time: Vec<Axis>, state: Vec<Axis>) -> SampleGrid {
        SampleGrid { time, state }
    }

    pub fn len(&self) -> usize {
        self.time.iter().chain(&self.state).map(|a| a.count).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// The k-th grid point, last state axis varying fastest.
    pub fn point(&self, mut k: usize, t: &mut [f64], x: &mut [f64]) {
        for (d, axis) in self.state.iter().enumerate().rev() {
            x[d] = axis.node(k % axis.count);
            k /= axis.count;
        }
        for (d, axis) in self.time.iter().enumerate().rev() {
            t[d] = axis.node(k % axis.count);
            k /= axis.count;
        }
    }

    /// Calls `f(t, x)` on every grid point in order.
    pub fn for_each<E>(&self, mut f: impl FnMut(&[f64], &[f64]) -> Result<(), E>) -> Result<(), E> {
        let mut t = vec![0.0; self.time.len()];
        let mut x = vec![0.0; self.state.len()];
        for k in 0..self.len() {
            self.point(k, &mut t, &mut x);
            f(&t, &x)?;
        }
        Ok(())
    }
}

/// Residual statistics for one pair (π, ν).
#[derive(Clone, Debug, PartialEq)]
pub struct PairResidual {
    pub pi: usize,
    pub nu: usize,
    pub max: f64,
    pub mean: f64,
    pub worst_t: Vec<f64>,
    pub worst_x: Vec<f64>,
}

/// Aggregated zero-curvature residuals over a grid.
#[derive(Clone, Debug, PartialEq)]
pub struct ResidualReport {
    pub grid: SampleGrid,
    pub pairs: Vec<PairResidual>,
    pub tol: f64,
    pub pass: bool,
}

impl ResidualReport {
    /// Largest residual over all pairs (0 when s = 1).
    pub fn max(&self) -> f64 {
        self.pairs.iter().fold(0.0, |m, p| m.max(p.max))
    }

    pub fn worst(&self) -> Option<&PairResidual> {
        self.pairs.iter().fold(None, |best: Option<&PairResidual>, p| match best {
            Some(b) if b.max >= p.max => Some(b),
            _ => Some(p),
        })
    }
}

/// Evaluates ‖R_{πν}‖∞ for all π < ν on every grid point.
pub fn zcc_report<S: VectorSystem + ?Sized>(
    sys: &S,
    grid: &SampleGrid,
    tol: f64,
) -> Result<ResidualReport, FieldError> {
    if grid.time.len() != sys.time_dim() {
        return Err(dim_error("grid time axes", sys.time_dim(), grid.time.len()));
    }
    if grid.state.len() != sys.state_dim() {
        return Err(dim_error("grid state axes", sys.state_dim(), grid.state.len()));
    }
    let s = sys.time_dim();
    let mut pairs = Vec::new();
    for pi in 0..s {
        for nu in pi + 1..s {
            pairs.push(PairResidual {
                pi,
                nu,
                max: 0.0,
                mean: 0.0,
                worst_t: Vec::new(),
                worst_x: Vec::new(),
            });
        }
    }
    let mut sums = vec![0.0; pairs.len()];
    let mut count = 0usize;
    grid.for_each(|t, x| {
        for (k, pair) in pairs.iter_mut().enumerate() {
            let r = zcc_residual(sys, pair.pi, pair.nu, t, x)?;
            let norm = math::max_abs(&r);
            sums[k] += norm;
            if norm > pair.max || pair.worst_t.is_empty() {
                pair.max = norm;
                pair.worst_t = t.to_vec();
                pair.worst_x = x.to_vec();
            }
        }
        count += 1;
        Ok::<(), FieldError>(())
    })?;
    for (pair, sum) in pairs.iter_mut().zip(sums) {
        pair.mean = if count == 0 { 0.0 } else { sum / count as f64 };
    }
    let pass = pairs.iter().all(|p| p.max <= tol && p.max.is_finite());
    Ok(ResidualReport {
        grid: grid.clone(),
        pairs,
        tol,
        pass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{PolyField, ZeroField};

    fn auto(src: &str) -> PolyField {
        PolyField::parse(&["t"], &["x"], &[&[src]], &[]).unwrap()
    }

    #[test]
    fn bracket_examples() {
        let d = auto("1");
        let e = auto("x");
        let v = lie_bracket(FieldSlice::new(&d, 0), FieldSlice::new(&e, 0), &[0.0], &[1.7]).unwrap();
        assert_eq!(v, vec![1.0]);
        let a = auto("x^2");
        let b = auto("x^3");
        let v = lie_bracket(FieldSlice::new(&a, 0), FieldSlice::new(&b, 0), &[0.0], &[2.0]).unwrap();
        assert_eq!(v, vec![16.0]);
        let v = lie_bracket(FieldSlice::new(&a, 0), FieldSlice::new(&a, 0), &[0.0], &[2.0]).unwrap();
        assert_eq!(v, vec![0.0]);
    }

    #[test]
    fn zero_field_passes() {
        let grid = SampleGrid::new(
            vec![Axis::new(0.0, 1.0, 3), Axis::new(0.0, 1.0, 3)],
            vec![Axis::new(-1.0, 1.0, 5)],
        );
        let report = zcc_report(&ZeroField { n: 1, s: 2 }, &grid, 1e-12).unwrap();
        assert!(report.pass);
        assert_eq!(report.max(), 0.0);
        assert_eq!(report.pairs.len(), 1);
    }

    #[test]
    fn commuting_autonomous_components() {
        let f = PolyField::parse(&["t1", "t2"], &["x"], &[&["x"], &["2*x"]], &[]).unwrap();
        let r = zcc_residual(&f, 0, 1, &[0.1, 0.2], &[3.0]).unwrap();
        assert_eq!(r, vec![0.0]);
    }

    #[test]
    fn antisymmetry_is_exact() {
        let f = PolyField::parse(
            &["t1", "t2"],
            &["x", "y"],
            &[&["t2*x*y", "sin(t1)*y^2"], &["x^3 - t1", "cos(x*t2)"]],
            &[],
        )
        .unwrap();
        let t = [0.3, -0.7];
        let x = [1.1, 0.4];
        let a = zcc_residual(&f, 0, 1, &t, &x).unwrap();
        let b = zcc_residual(&f, 1, 0, &t, &x).unwrap();
        for (p, q) in a.iter().zip(&b) {
            assert_eq!(*p, -*q);
        }
    }

    #[test]
    fn grid_enumeration() {
        let grid = SampleGrid::new(vec![Axis::new(0.0, 1.0, 2)], vec![Axis::new(5.0, 6.0, 3)]);
        let mut seen = Vec::new();
        grid.for_each(|t, x| {
            seen.push((t[0], x[0]));
            Ok::<(), ()>(())
        })
        .unwrap();
        assert_eq!(
            seen,
            vec![(0.0, 5.0), (0.0, 5.5), (0.0, 6.0), (1.0, 5.0), (1.0, 5.5), (1.0, 6.0)]
        );
    }
}
