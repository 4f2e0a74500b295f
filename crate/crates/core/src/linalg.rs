//! Dense least squares and small linear solves on top of nalgebra.

use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};

use crate::math;

/// Relative singular-value cutoff below which a direction counts as null.
pub const RANK_TOL: f64 = 1e-10;

/// Least-squares solver for a fixed design matrix, via SVD.
#[derive(Clone, Debug)]
pub struct LeastSquares {
    matrix: DMatrix<f64>,
    svd: nalgebra::SVD<f64, nalgebra::Dyn, nalgebra::Dyn>,
    sigma_max: f64,
    sigma_min: f64,
}

impl LeastSquares {
    pub fn new(matrix: DMatrix<f64>) -> Self {
        let svd = matrix.clone().svd(true, true);
        let mut sigma_max = 0.0f64;
        let mut sigma_min = f64::INFINITY;
        for s in svd.singular_values.iter() {
            sigma_max = sigma_max.max(*s);
            sigma_min = sigma_min.min(*s);
        }
        if svd.singular_values.is_empty() {
            sigma_min = 0.0;
        }
        LeastSquares {
            matrix,
            svd,
            sigma_max,
            sigma_min,
        }
    }

    pub fn rows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn cols(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// Numerical rank with relative cutoff [`RANK_TOL`].
    pub fn rank(&self) -> usize {
        let cutoff = RANK_TOL * self.sigma_max;
        self.svd
            .singular_values
            .iter()
            .filter(|s| **s > cutoff)
            .count()
    }

    pub fn full_column_rank(&self) -> bool {
        self.rows() >= self.cols() && self.rank() == self.cols()
    }

    /// Ratio of largest to smallest singular value.
    pub fn condition(&self) -> f64 {
        if self.sigma_min == 0.0 {
            f64::INFINITY
        } else {
            self.sigma_max / self.sigma_min
        }
    }

    /// Minimum-norm least-squares solution and the max-abs residual.
    pub fn solve(&self, rhs: &[f64]) -> (Vec<f64>, f64) {
        let b = DVector::from_column_slice(rhs);
        let eps = RANK_TOL * self.sigma_max;
        let x = match self.svd.solve(&b, eps) {
            Ok(x) => x,
            Err(_) => DVector::zeros(self.cols()),
        };
        let r = &self.matrix * &x - &b;
        let residual = r.iter().fold(0.0f64, |m, v| m.max(math::abs(*v)));
        (x.iter().copied().collect(), residual)
    }
}

/// Solves the square system `a x = b`; `None` if singular.
pub fn solve_square(a: DMatrix<f64>, b: &[f64]) -> Option<Vec<f64>> {
    let rhs = DVector::from_column_slice(b);
    a.lu().solve(&rhs).map(|x| x.iter().copied().collect())
}
