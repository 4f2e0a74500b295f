//! Scalar solution surfaces of two-time systems on a rectangular grid, and
//! finite-difference PDE residuals evaluated on them.

use quasilie_core::fields::{integrate_path, TimePath, VectorSystem};

use crate::error::{PipelineError, Result};

/// u(t1_i, t2_j) stored as `values[i][j]`.
#[derive(Clone, Debug)]
pub struct Surface {
    pub t1: Vec<f64>,
    pub t2: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

fn nodes(lo: f64, hi: f64, spacing: f64) -> Result<Vec<f64>> {
    let count = ((hi - lo) / spacing).round();
    if !(count >= 4.0) || ((hi - lo) / count - spacing).abs() > 1e-9 * spacing {
        return Err(PipelineError::Config(format!(
            "spacing {spacing} does not divide [{lo}, {hi}] into at least 4 cells"
        )));
    }
    let count = count as usize;
    Ok((0..=count).map(|k| lo + (hi - lo) * k as f64 / count as f64).collect())
}

fn line_values<S: VectorSystem + ?Sized>(sys: &S, points: Vec<Vec<f64>>, x0: f64, sub: usize) -> Result<Vec<f64>> {
    let count = points.len();
    let traj = integrate_path(sys, &TimePath::new(points, sub)?, &[x0])?;
    Ok((0..count).map(|k| traj.states[k * sub][0]).collect())
}

/// Integrates a scalar system with u(lo1, lo2) = x0 along t2 at t1 = lo1 and
/// then along t1 from every t2 node. `sub` RK4 steps per grid cell.
pub fn solve_surface<S: VectorSystem + ?Sized>(
    sys: &S,
    lo: [f64; 2],
    hi: [f64; 2],
    spacing: f64,
    x0: f64,
    sub: usize,
) -> Result<Surface> {
    if sys.state_dim() != 1 || sys.time_dim() != 2 {
        return Err(PipelineError::Config("surface solves need n = 1 and s = 2".into()));
    }
    let t1 = nodes(lo[0], hi[0], spacing)?;
    let t2 = nodes(lo[1], hi[1], spacing)?;
    let base = line_values(sys, t2.iter().map(|&b| vec![lo[0], b]).collect(), x0, sub)?;
    let mut values = vec![vec![0.0; t2.len()]; t1.len()];
    for (j, (&b, &u)) in t2.iter().zip(&base).enumerate() {
        let line = line_values(sys, t1.iter().map(|&a| vec![a, b]).collect(), u, sub)?;
        for (i, v) in line.into_iter().enumerate() {
            values[i][j] = v;
        }
    }
    Ok(Surface { t1, t2, values })
}

impl Surface {
    fn h1(&self) -> f64 {
        self.t1[1] - self.t1[0]
    }

    fn h2(&self) -> f64 {
        self.t2[1] - self.t2[0]
    }

    /// max |u₁ + u₂₂₂ − 6u²u₂| over interior nodes, second-order central
    /// differences (five-point stencil for u₂₂₂).
    pub fn mkdv_residual(&self) -> f64 {
        let (h1, h2) = (self.h1(), self.h2());
        let u = &self.values;
        let mut worst = 0.0f64;
        for i in 1..self.t1.len() - 1 {
            for j in 2..self.t2.len() - 2 {
                let d1 = (u[i + 1][j] - u[i - 1][j]) / (2.0 * h1);
                let d2 = (u[i][j + 1] - u[i][j - 1]) / (2.0 * h2);
                let d222 = (u[i][j + 2] - 2.0 * u[i][j + 1] + 2.0 * u[i][j - 1] - u[i][j - 2]) / (2.0 * h2.powi(3));
                let r = d1 + d222 - 6.0 * u[i][j] * u[i][j] * d2;
                worst = worst.max(if r.is_finite() { r.abs() } else { f64::INFINITY });
            }
        }
        worst
    }

    /// max |w₁₂ − a·e^{λw}| over interior nodes, central mixed difference.
    pub fn liouville_residual(&self, a: f64, lambda: f64) -> f64 {
        let (h1, h2) = (self.h1(), self.h2());
        let w = &self.values;
        let mut worst = 0.0f64;
        for i in 1..self.t1.len() - 1 {
            for j in 1..self.t2.len() - 1 {
                let d12 = (w[i + 1][j + 1] - w[i + 1][j - 1] - w[i - 1][j + 1] + w[i - 1][j - 1]) / (4.0 * h1 * h2);
                let r = d12 - a * (lambda * w[i][j]).exp();
                worst = worst.max(if r.is_finite() { r.abs() } else { f64::INFINITY });
            }
        }
        worst
    }

    /// max |u − exact| over all nodes.
    pub fn max_error(&self, exact: impl Fn(f64, f64) -> f64) -> f64 {
        let mut worst = 0.0f64;
        for (i, &a) in self.t1.iter().enumerate() {
            for (j, &b) in self.t2.iter().enumerate() {
                worst = worst.max((self.values[i][j] - exact(a, b)).abs());
            }
        }
        worst
    }
}
