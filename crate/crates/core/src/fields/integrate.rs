use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use super::{dim_error, FieldError, VectorSystem};
use crate::math;

/// States with |x|∞ above this abort integration.
pub const BLOW_UP_THRESHOLD: f64 = 1e12;

/// Default step density along a path.
pub const DEFAULT_STEPS_PER_UNIT: f64 = 1000.0;

/// Piecewise-linear curve in time space with a step count per segment.
#[derive(Clone, Debug, PartialEq)]
pub struct TimePath {
    points: Vec<Vec<f64>>,
    steps: Vec<usize>,
}

impl TimePath {
    /// Path with the same number of steps on every segment.
    pub fn new(points: Vec<Vec<f64>>, steps_per_segment: usize) -> Result<TimePath, FieldError> {
        let segments = points.len().saturating_sub(1);
        TimePath::with_steps(points, vec![steps_per_segment; segments])
    }

    /// Path with `ceil(density · length)` steps on each segment.
    pub fn with_density(points: Vec<Vec<f64>>, steps_per_unit: f64) -> Result<TimePath, FieldError> {
        let steps = points
            .windows(2)
            .map(|w| {
                let len = segment_length(&w[0], &w[1]);
                let k = libm::ceil(len * steps_per_unit);
                if k < 1.0 {
                    1
                } else {
                    k as usize
                }
            })
            .collect();
        TimePath::with_steps(points, steps)
    }

    /// Path with the default density of 1000 steps per unit length.
    pub fn default_density(points: Vec<Vec<f64>>) -> Result<TimePath, FieldError> {
        TimePath::with_density(points, DEFAULT_STEPS_PER_UNIT)
    }

    pub fn with_steps(points: Vec<Vec<f64>>, steps: Vec<usize>) -> Result<TimePath, FieldError> {
        if points.len() < 2 {
            return Err(FieldError::InvalidPath("at least two points are required"));
        }
        let s = points[0].len();
        if s == 0 || points.iter().any(|p| p.len() != s) {
            return Err(FieldError::InvalidPath("points must share a nonzero dimension"));
        }
        if points.windows(2).any(|w| w[0] == w[1]) {
            return Err(FieldError::InvalidPath("consecutive points must differ"));
        }
        if steps.len() != points.len() - 1 || steps.contains(&0) {
            return Err(FieldError::InvalidPath("each segment needs a positive step count"));
        }
        Ok(TimePath { points, steps })
    }

    /// Straight segment from `a` to `b`.
    pub fn segment(a: Vec<f64>, b: Vec<f64>, steps: usize) -> Result<TimePath, FieldError> {
        TimePath::new(vec![a, b], steps)
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn steps(&self) -> &[usize] {
        &self.steps
    }

    pub fn start(&self) -> &[f64] {
        &self.points[0]
    }

    pub fn end(&self) -> &[f64] {
        &self.points[self.points.len() - 1]
    }

    pub fn time_dim(&self) -> usize {
        self.points[0].len()
    }

    /// Same path with every step count multiplied by `factor`.
    pub fn refined(&self, factor: usize) -> TimePath {
        TimePath {
            points: self.points.clone(),
            steps: self.steps.iter().map(|k| k * factor).collect(),
        }
    }
}

fn segment_length(a: &[f64], b: &[f64]) -> f64 {
    math::sqrt(a.iter().zip(b).map(|(x, y)| (y - x) * (y - x)).sum())
}

/// Sampled solution along a path, endpoints included.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trajectory {
    pub times: Vec<Vec<f64>>,
    pub states: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn end_state(&self) -> &[f64] {
        &self.states[self.states.len() - 1]
    }
}

struct Stepper<'a, S: ?Sized> {
    sys: &'a S,
    dir: Vec<f64>,
    buf: Vec<f64>,
}

impl<S: VectorSystem + ?Sized> Stepper<'_, S> {
    /// out = Σ_π dir_π X_π(t, x)
    fn rhs(&mut self, t: &[f64], x: &[f64], out: &mut [f64]) -> Result<(), FieldError> {
        out.iter_mut().for_each(|v| *v = 0.0);
        for pi in 0..self.dir.len() {
            let w = self.dir[pi];
            if w == 0.0 {
                continue;
            }
            self.sys
                .eval_into(pi, t, x, &mut self.buf)
                .map_err(|e| FieldError::AtPoint {
                    t: t.to_vec(),
                    x: x.to_vec(),
                    source: Box::new(e),
                })?;
            for (o, b) in out.iter_mut().zip(&self.buf) {
                *o += w * b;
            }
        }
        Ok(())
    }
}

fn walk<S: VectorSystem + ?Sized>(
    sys: &S,
    path: &TimePath,
    x0: &[f64],
    mut record: impl FnMut(&[f64], &[f64]),
) -> Result<Vec<f64>, FieldError> {
    let n = sys.state_dim();
    let s = sys.time_dim();
    if x0.len() != n {
        return Err(dim_error("initial state", n, x0.len()));
    }
    if path.time_dim() != s {
        return Err(dim_error("path time dimension", s, path.time_dim()));
    }
    let mut x = x0.to_vec();
    let mut t = path.start().to_vec();
    record(&t, &x);
    let mut st = Stepper {
        sys,
        dir: vec![0.0; s],
        buf: vec![0.0; n],
    };
    let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut xs = vec![0.0; n];
    let mut ts = vec![0.0; s];
    for (w, &steps) in path.points.windows(2).zip(&path.steps) {
        let (a, b) = (&w[0], &w[1]);
        let h = 1.0 / steps as f64;
        for pi in 0..s {
            st.dir[pi] = b[pi] - a[pi];
        }
        for k in 0..steps {
            let s0 = k as f64 * h;
            let at = |frac: f64, out: &mut [f64]| {
                for pi in 0..s {
                    out[pi] = a[pi] + frac * (b[pi] - a[pi]);
                }
            };
            at(s0, &mut ts);
            st.rhs(&ts, &x, &mut k1)?;
            at(s0 + 0.5 * h, &mut ts);
            for i in 0..n {
                xs[i] = x[i] + 0.5 * h * k1[i];
            }
            st.rhs(&ts, &xs, &mut k2)?;
            for i in 0..n {
                xs[i] = x[i] + 0.5 * h * k2[i];
            }
            st.rhs(&ts, &xs, &mut k3)?;
            if k + 1 == steps {
                ts.copy_from_slice(b);
            } else {
                at(s0 + h, &mut ts);
            }
            for i in 0..n {
                xs[i] = x[i] + h * k3[i];
            }
            st.rhs(&ts, &xs, &mut k4)?;
            for i in 0..n {
                xs[i] = x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
            if xs.iter().any(|v| !v.is_finite() || math::abs(*v) > BLOW_UP_THRESHOLD) {
                return Err(FieldError::BlowUp {
                    last_t: t,
                    last_x: x,
                });
            }
            x.copy_from_slice(&xs);
            t.copy_from_slice(&ts);
            record(&t, &x);
        }
    }
    Ok(x)
}

/// Classical RK4 integration of dx/ds = Σ_π (dt_π/ds) X_π(t(s), x) along `path`.
pub fn integrate_path<S: VectorSystem + ?Sized>(
    sys: &S,
    path: &TimePath,
    x0: &[f64],
) -> Result<Trajectory, FieldError> {
    let mut traj = Trajectory::default();
    walk(sys, path, x0, |t, x| {
        traj.times.push(t.to_vec());
        traj.states.push(x.to_vec());
    })?;
    Ok(traj)
}

/// Endpoint of [`integrate_path`] without storing the trajectory.
pub fn integrate_to<S: VectorSystem + ?Sized>(
    sys: &S,
    path: &TimePath,
    x0: &[f64],
) -> Result<Vec<f64>, FieldError> {
    walk(sys, path, x0, |_, _| {})
}

/// |endpoint(a) − endpoint(b)|∞ for two paths with common endpoints.
pub fn path_independence<S: VectorSystem + ?Sized>(
    sys: &S,
    x0: &[f64],
    a: &TimePath,
    b: &TimePath,
) -> Result<f64, FieldError> {
    if a.start() != b.start() || a.end() != b.end() {
        return Err(FieldError::InvalidPath("paths must share both endpoints"));
    }
    let ea = integrate_to(sys, a, x0)?;
    let eb = integrate_to(sys, b, x0)?;
    Ok(math::max_abs_diff(&ea, &eb))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{PolyField, ZeroField};

    #[test]
    fn zero_field_is_constant() {
        let path = TimePath::new(vec![vec![0.0, 0.0], vec![1.0, 2.0]], 10).unwrap();
        let traj = integrate_path(&ZeroField { n: 2, s: 2 }, &path, &[1.5, -2.0]).unwrap();
        assert_eq!(traj.len(), 11);
        assert!(traj.states.iter().all(|x| x == &vec![1.5, -2.0]));
        assert_eq!(traj.times[10], vec![1.0, 2.0]);
    }

    #[test]
    fn linear_growth_reaches_e() {
        let f = PolyField::parse(&["t"], &["x"], &[&["x"]], &[]).unwrap();
        let path = TimePath::default_density(vec![vec![0.0], vec![1.0]]).unwrap();
        assert_eq!(path.steps(), &[1000]);
        let end = integrate_to(&f, &path, &[1.0]).unwrap();
        assert!((end[0] - core::f64::consts::E).abs() < 1e-8);
    }

    #[test]
    fn blow_up_is_reported_with_last_sample() {
        let f = PolyField::parse(&["t"], &["x"], &[&["x^2"]], &[]).unwrap();
        let path = TimePath::new(vec![vec![0.0], vec![2.0]], 2000).unwrap();
        match integrate_path(&f, &path, &[1.0]) {
            Err(FieldError::BlowUp { last_t, last_x }) => {
                assert!(last_t[0] <= 1.0 + 1e-12 && last_t[0] > 0.99, "{last_t:?}");
                assert!(last_x[0].is_finite());
            }
            other => panic!("expected blow-up, got {other:?}"),
        }
    }

    #[test]
    fn path_validation() {
        assert!(TimePath::new(vec![vec![0.0]], 1).is_err());
        assert!(TimePath::new(vec![vec![0.0], vec![0.0]], 1).is_err());
        assert!(TimePath::new(vec![vec![0.0], vec![1.0, 2.0]], 1).is_err());
        assert!(TimePath::new(vec![vec![0.0], vec![1.0]], 0).is_err());
    }

    #[test]
    fn one_time_paths_agree() {
        let f = PolyField::parse(&["t"], &["x"], &[&["sin(t)*x"]], &[]).unwrap();
        let a = TimePath::new(vec![vec![0.0], vec![1.0]], 500).unwrap();
        let b = TimePath::new(vec![vec![0.0], vec![0.5], vec![1.0]], 250).unwrap();
        assert!(path_independence(&f, &[1.0], &a, &b).unwrap() < 1e-12);
    }
}
