//! Uniform meshes, discrete trajectories and the strong/weak norm pair on
//! trajectory-control space.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::problem::VectorField;

/// Uniform mesh with N intervals on [t0, t1]. Controls and control
/// multipliers live on intervals (N samples, constant per interval, indexed
/// by the left node); states and adjoints live on nodes (N + 1 samples).
#[derive(Debug, Clone, Copy)]
pub struct Mesh {
    pub n_intervals: usize,
    pub t0: f64,
    pub t1: f64,
}

impl Mesh {
    pub fn new(n_intervals: usize, t0: f64, t1: f64) -> Result<Self> {
        if n_intervals < 2 {
            return Err(Error::Invalid("mesh needs at least 2 intervals".into()));
        }
        if t1 <= t0 {
            return Err(Error::Invalid("mesh needs t0 < t1".into()));
        }
        Ok(Mesh { n_intervals, t0, t1 })
    }

    pub fn unit(n_intervals: usize) -> Result<Self> {
        Mesh::new(n_intervals, 0.0, 1.0)
    }

    pub fn h(&self) -> f64 {
        (self.t1 - self.t0) / self.n_intervals as f64
    }

    pub fn node(&self, i: usize) -> f64 {
        self.t0 + self.h() * i as f64
    }
}

/// State samples on nodes and control samples on intervals.
#[derive(Debug, Clone)]
pub struct DiscreteTrajectory {
    pub x: Vec<DVector<f64>>,
    pub u: Vec<DVector<f64>>,
}

impl DiscreteTrajectory {
    pub fn check_mesh(&self, mesh: &Mesh, n: usize, m: usize) -> Result<()> {
        if self.x.len() != mesh.n_intervals + 1 || self.u.len() != mesh.n_intervals {
            return Err(Error::DimensionMismatch {
                expected: mesh.n_intervals + 1,
                got: self.x.len(),
            });
        }
        if self.x.iter().any(|v| v.len() != n) || self.u.iter().any(|v| v.len() != m) {
            return Err(Error::DimensionMismatch { expected: n, got: 0 });
        }
        Ok(())
    }

    pub fn endpoint_pair(&self) -> DVector<f64> {
        let n = self.x[0].len();
        let mut q = DVector::zeros(2 * n);
        q.rows_mut(0, n).copy_from(&self.x[0]);
        q.rows_mut(n, n).copy_from(&self.x[self.x.len() - 1]);
        q
    }
}

/// Adjoint samples on nodes (stored as column data, used as row vectors).
#[derive(Debug, Clone)]
pub struct AdjointPath {
    pub p: Vec<DVector<f64>>,
}

/// Control-constraint multiplier samples on intervals; componentwise >= 0.
#[derive(Debug, Clone)]
pub struct MultiplierPath {
    pub lambda: Vec<DVector<f64>>,
}

/// ||x||_{1,1} = |x_0| + sum |x_{i+1} - x_i|.
pub fn norm_x_11(x: &[DVector<f64>]) -> f64 {
    let mut s = x[0].norm();
    for w in x.windows(2) {
        s += (&w[1] - &w[0]).norm();
    }
    s
}

pub fn norm_x_inf(x: &[DVector<f64>]) -> f64 {
    x.iter().map(|v| v.norm()).fold(0.0, f64::max)
}

pub fn norm_u_inf(u: &[DVector<f64>]) -> f64 {
    u.iter().map(|v| v.norm()).fold(0.0, f64::max)
}

/// ||u||_2 = sqrt(sum h |u_i|^2).
pub fn norm_u_l2(u: &[DVector<f64>], h: f64) -> f64 {
    u.iter().map(|v| h * v.norm_squared()).sum::<f64>().sqrt()
}

/// ||v||_1 = sum h |v_i| for interval samples.
pub fn norm_l1(v: &[DVector<f64>], h: f64) -> f64 {
    v.iter().map(|x| h * x.norm()).sum()
}

/// Strong norm ||x||_{1,1} + ||u||_inf on trajectory-control space.
pub fn strong_norm(traj: &DiscreteTrajectory) -> f64 {
    norm_x_11(&traj.x) + norm_u_inf(&traj.u)
}

/// Weak norm ||x||_inf + ||u||_2.
pub fn weak_norm(traj: &DiscreteTrajectory, h: f64) -> f64 {
    norm_x_inf(&traj.x) + norm_u_l2(&traj.u, h)
}

/// Forward Euler sweep x_{i+1} = x_i + h f(x_i, u_i) for any dynamics
/// field with argument (x, u).
pub fn euler_forward(
    dynamics: &VectorField,
    x0: &DVector<f64>,
    u: &[DVector<f64>],
    mesh: &Mesh,
) -> Result<Vec<DVector<f64>>> {
    let h = mesh.h();
    let n = x0.len();
    let mut x = Vec::with_capacity(mesh.n_intervals + 1);
    x.push(x0.clone());
    for ui in u.iter().take(mesh.n_intervals) {
        let mut arg = DVector::zeros(n + ui.len());
        arg.rows_mut(0, n).copy_from(x.last().unwrap());
        arg.rows_mut(n, ui.len()).copy_from(ui);
        let next = x.last().unwrap() + dynamics.value(&arg)? * h;
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinitePropagation { node: x.len() });
        }
        x.push(next);
    }
    Ok(x)
}

/// Sensitivity matrices of the Euler scheme: X_i maps the reduced direction
/// v = (x0, u_0, ..., u_{N-1}) to the linearized state at node i,
/// X_{i+1} = (I + h f_x) X_i + h f_u E_i.
pub fn state_sensitivities(
    dynamics: &VectorField,
    traj: &DiscreteTrajectory,
    mesh: &Mesh,
    n: usize,
    m: usize,
) -> Result<Vec<DMatrix<f64>>> {
    let nn = mesh.n_intervals;
    let dim = n + nn * m;
    let h = mesh.h();
    let mut out = Vec::with_capacity(nn + 1);
    let mut x_i = DMatrix::zeros(n, dim);
    x_i.view_mut((0, 0), (n, n)).copy_from(&DMatrix::identity(n, n));
    out.push(x_i.clone());
    for i in 0..nn {
        let mut arg = DVector::zeros(n + m);
        arg.rows_mut(0, n).copy_from(&traj.x[i]);
        arg.rows_mut(n, m).copy_from(&traj.u[i]);
        let jac = dynamics.jacobian(&arg)?;
        let fx = jac.columns(0, n).into_owned();
        let fu = jac.columns(n, m).into_owned();
        let mut next = &x_i + (&fx * &x_i) * h;
        let col0 = n + i * m;
        for c in 0..m {
            for r in 0..n {
                next[(r, col0 + c)] += h * fu[(r, c)];
            }
        }
        out.push(next.clone());
        x_i = next;
    }
    Ok(out)
}
