//! Damped Newton iteration with a finite-difference Jacobian.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct NewtonOptions {
    /// Convergence threshold on the max-norm of the residual.
    pub tol: f64,
    pub max_iter: usize,
    /// Smallest line-search step fraction before giving up.
    pub min_damping: f64,
    /// Iterations between Jacobian refreshes while convergence is fast.
    pub jacobian_age: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        NewtonOptions {
            tol: 1e-10,
            max_iter: 50,
            min_damping: 1.0 / 1024.0,
            jacobian_age: 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct NewtonReport {
    pub x: Vec<f64>,
    pub norm: f64,
    pub iterations: usize,
    /// Iterations whose full step was cut back by the line search.
    pub damped_steps: usize,
    pub evaluations: usize,
}

fn max_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| if x.is_nan() { f64::INFINITY } else { m.max(x.abs()) })
}

fn l2_sq(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

pub fn newton_solve<F>(f: F, x0: &[f64], tol: f64, max_iter: usize) -> Result<NewtonReport>
where
    F: FnMut(&[f64], &mut [f64]) -> Result<()>,
{
    newton_solve_with(
        f,
        x0,
        &NewtonOptions {
            tol,
            max_iter,
            ..Default::default()
        },
    )
}

pub fn newton_solve_with<F>(mut f: F, x0: &[f64], opts: &NewtonOptions) -> Result<NewtonReport>
where
    F: FnMut(&[f64], &mut [f64]) -> Result<()>,
{
    let dim = x0.len();
    let mut x = x0.to_vec();
    let mut r = vec![0.0; dim];
    f(&x, &mut r)?;
    let mut evaluations = 1;
    if max_norm(&r) == f64::INFINITY || r.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonConvergence {
            iterations: 0,
            norm: f64::INFINITY,
        });
    }
    let mut damped_steps = 0;
    let mut lu = None;
    let mut age = 0;
    let sqrt_eps = f64::EPSILON.sqrt();
    let mut trial = vec![0.0; dim];
    let mut r_trial = vec![0.0; dim];

    for it in 0..=opts.max_iter {
        let norm = max_norm(&r);
        if norm <= opts.tol {
            return Ok(NewtonReport {
                x,
                norm,
                iterations: it,
                damped_steps,
                evaluations,
            });
        }
        if it == opts.max_iter {
            return Err(Error::NonConvergence {
                iterations: it,
                norm,
            });
        }
        if lu.is_none() || age >= opts.jacobian_age {
            let mut jac = DMatrix::zeros(dim, dim);
            let mut xp = x.clone();
            let mut rp = vec![0.0; dim];
            for j in 0..dim {
                let step = sqrt_eps * x[j].abs().max(1.0);
                xp[j] = x[j] + step;
                let d = xp[j] - x[j];
                f(&xp, &mut rp)?;
                evaluations += 1;
                for i in 0..dim {
                    jac[(i, j)] = (rp[i] - r[i]) / d;
                }
                xp[j] = x[j];
            }
            lu = Some(jac.lu());
            age = 0;
        }
        age += 1;
        let rhs = DVector::from_iterator(dim, r.iter().map(|v| -v));
        let delta = lu
            .as_ref()
            .expect("factorized")
            .solve(&rhs)
            .ok_or_else(|| Error::Structural("singular Newton matrix".into()))?;
        if delta.iter().any(|d| !d.is_finite()) {
            return Err(Error::Structural("singular Newton matrix".into()));
        }

        // Backtracking on the squared residual.
        let phi0 = l2_sq(&r);
        let mut lambda = 1.0;
        let mut accepted = false;
        while lambda >= opts.min_damping {
            for j in 0..dim {
                trial[j] = x[j] + lambda * delta[j];
            }
            let ok = f(&trial, &mut r_trial).is_ok();
            evaluations += 1;
            if ok && r_trial.iter().all(|v| v.is_finite()) {
                let phi = l2_sq(&r_trial);
                if phi <= (1.0 - 1e-4 * lambda) * phi0 {
                    accepted = true;
                    break;
                }
            }
            lambda *= 0.5;
        }
        if !accepted {
            if age > 1 {
                // Stale Jacobian; refresh and retry from the same point.
                lu = None;
                continue;
            }
            return Err(Error::NonConvergence {
                iterations: it + 1,
                norm,
            });
        }
        if lambda < 1.0 {
            damped_steps += 1;
            age = opts.jacobian_age;
        }
        std::mem::swap(&mut x, &mut trial);
        std::mem::swap(&mut r, &mut r_trial);
    }
    unreachable!()
}
