//! Column-grouped finite-difference Jacobians.

use nalgebra::DMatrix;

use crate::error::Result;

/// Perturbation groups of structurally orthogonal columns, plus the rows each
/// column can touch.
#[derive(Debug, Clone)]
pub struct JacobianPattern {
    groups: Vec<Vec<usize>>,
    rows_of_col: Vec<Vec<usize>>,
}

impl JacobianPattern {
    pub fn new(groups: Vec<Vec<usize>>, rows_of_col: Vec<Vec<usize>>) -> Self {
        JacobianPattern { groups, rows_of_col }
    }

    /// One group per column, every column dense.
    pub fn dense(dim: usize) -> Self {
        JacobianPattern {
            groups: (0..dim).map(|j| vec![j]).collect(),
            rows_of_col: (0..dim).map(|_| (0..dim).collect()).collect(),
        }
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    pub fn dim(&self) -> usize {
        self.rows_of_col.len()
    }

    /// Forward-difference Jacobian of `f` at `x` with `f0 = f(x)`.
    /// `floor` bounds the perturbation magnitude from below per component.
    pub fn jacobian<F>(&self, mut f: F, x: &[f64], f0: &[f64], floor: &[f64]) -> Result<DMatrix<f64>>
    where
        F: FnMut(&[f64], &mut [f64]) -> Result<()>,
    {
        let dim = self.dim();
        let sqrt_eps = f64::EPSILON.sqrt();
        let mut jac = DMatrix::zeros(dim, dim);
        let mut xp = x.to_vec();
        let mut fp = vec![0.0; dim];
        let mut deltas = vec![0.0; dim];
        for group in &self.groups {
            for &j in group {
                let d = sqrt_eps * x[j].abs().max(floor[j]);
                // Make the step exactly representable.
                let xj = x[j] + d;
                deltas[j] = xj - x[j];
                xp[j] = xj;
            }
            f(&xp, &mut fp)?;
            for &j in group {
                for &i in &self.rows_of_col[j] {
                    jac[(i, j)] = (fp[i] - f0[i]) / deltas[j];
                }
                xp[j] = x[j];
            }
        }
        Ok(jac)
    }
}
