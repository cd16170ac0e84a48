//! Damped Newton iteration with Levenberg-Marquardt regularization and
//! seeded multistart, used to solve perturbed stationarity systems whose
//! Jacobian may be singular at the reference point.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct NewtonOptions {
    pub max_iters: usize,
    /// Convergence threshold on the residual sup norm.
    pub tol: f64,
    pub restarts: usize,
    /// Offset scale of the multistart perturbations.
    pub start_radius: f64,
    pub seed: u64,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        NewtonOptions { max_iters: 80, tol: 1e-11, restarts: 8, start_radius: 0.3, seed: 0 }
    }
}

/// Minimize ||r(z)|| to zero from `z0`; `jac` may be a finite-difference
/// closure. Returns the first root found over the multistart schedule.
pub fn solve<R, J>(residual: R, jac: J, z0: &DVector<f64>, opts: &NewtonOptions) -> Option<DVector<f64>>
where
    R: Fn(&DVector<f64>) -> Option<DVector<f64>>,
    J: Fn(&DVector<f64>) -> Option<DMatrix<f64>>,
{
    if let Some(z) = solve_from(&residual, &jac, z0, opts) {
        return Some(z);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x9e3779b97f4a7c15);
    for r in 0..opts.restarts {
        // grow the offset radius geometrically over restarts
        let scale = opts.start_radius * 1.7f64.powi(r as i32) / 1.7f64.powi(opts.restarts as i32 / 2);
        let start = z0 + DVector::from_fn(z0.len(), |_, _| rng.gen_range(-scale..scale));
        if let Some(z) = solve_from(&residual, &jac, &start, opts) {
            return Some(z);
        }
    }
    None
}

fn solve_from<R, J>(residual: &R, jac: &J, z0: &DVector<f64>, opts: &NewtonOptions) -> Option<DVector<f64>>
where
    R: Fn(&DVector<f64>) -> Option<DVector<f64>>,
    J: Fn(&DVector<f64>) -> Option<DMatrix<f64>>,
{
    let mut z = z0.clone();
    let mut r = residual(&z)?;
    let mut lm = 1e-12;
    for _ in 0..opts.max_iters {
        if r.amax() <= opts.tol {
            return Some(z);
        }
        let j = jac(&z)?;
        let jt = j.transpose();
        let hess = &jt * &j;
        let rhs = &jt * &r;
        let scale = hess.diagonal().amax().max(1e-30);
        let mut improved = false;
        for _ in 0..30 {
            let mut reg = hess.clone();
            for d in 0..reg.nrows() {
                reg[(d, d)] += lm * scale;
            }
            let dz = match reg.clone().cholesky() {
                Some(ch) => ch.solve(&rhs),
                None => {
                    lm = (lm * 10.0).max(1e-10);
                    continue;
                }
            };
            let mut t = 1.0;
            let rn = r.norm();
            while t > 1e-8 {
                let cand = &z - &dz * t;
                if let Some(rc) = residual(&cand) {
                    if rc.norm() < rn * (1.0 - 1e-4 * t) || rc.amax() <= opts.tol {
                        z = cand;
                        r = rc;
                        lm = (lm * 0.25).max(1e-14);
                        improved = true;
                        break;
                    }
                }
                t *= 0.5;
            }
            if improved {
                break;
            }
            lm = (lm * 10.0).max(1e-10);
            if lm > 1e8 {
                return None;
            }
        }
        if !improved {
            return None;
        }
    }
    if r.amax() <= opts.tol {
        Some(z)
    } else {
        None
    }
}

/// Forward-difference Jacobian of `residual` at `z`.
pub fn fd_jacobian<R>(residual: &R, z: &DVector<f64>, step: f64) -> Option<DMatrix<f64>>
where
    R: Fn(&DVector<f64>) -> Option<DVector<f64>>,
{
    let r0 = residual(z)?;
    let mut j = DMatrix::zeros(r0.len(), z.len());
    for c in 0..z.len() {
        let h = step * (1.0 + z[c].abs());
        let mut zp = z.clone();
        zp[c] += h;
        let rp = residual(&zp)?;
        j.column_mut(c).copy_from(&((rp - &r0) / h));
    }
    Some(j)
}
