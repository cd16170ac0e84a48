//! Analysis of Mayer problems with endpoint constraints: adjoint recovery
//! from the endpoint Lagrangian, optimality residuals, the strict
//! positive-independence test for endpoint multipliers, the critical cone
//! and the second-order form in reduced (x_0, u) coordinates.

use nalgebra::{DMatrix, DVector};

use crate::coercivity::QuadraticFormRep;
use crate::cone::PolyhedralCone;
use crate::error::{Error, Result};
use crate::feas::signed_kernel_nontrivial;
use crate::mesh::{norm_l1, norm_u_l2, AdjointPath, DiscreteTrajectory, Mesh};
use crate::nlp::Tolerances;
use crate::problem::MayerProblem;

/// Reference point: trajectory, adjoint, endpoint multipliers (alpha for
/// inequalities with the cost multiplier normalized to 1, beta for
/// equalities).
#[derive(Debug, Clone)]
pub struct StationaryTupleMayer {
    pub traj: DiscreteTrajectory,
    pub p: AdjointPath,
    pub alpha: DVector<f64>,
    pub beta: DVector<f64>,
}

impl StationaryTupleMayer {
    pub fn validate(&self, mayer: &MayerProblem, mesh: &Mesh) -> Result<()> {
        self.traj.check_mesh(mesh, mayer.n, mayer.m)?;
        if self.alpha.len() != mayer.endpoint_inequalities.len()
            || self.beta.len() != mayer.endpoint_equalities.len()
        {
            return Err(Error::DimensionMismatch {
                expected: mayer.endpoint_inequalities.len(),
                got: self.alpha.len(),
            });
        }
        for (i, &a) in self.alpha.iter().enumerate() {
            if a < -1e-10 {
                return Err(Error::EmptyNormalCone { index: i, value: a });
            }
        }
        Ok(())
    }
}

fn dyn_arg(x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
    let mut arg = DVector::zeros(x.len() + u.len());
    arg.rows_mut(0, x.len()).copy_from(x);
    arg.rows_mut(x.len(), u.len()).copy_from(u);
    arg
}

/// Gradient of the endpoint Lagrangian l = a0 phi_0 + alpha phi + beta psi
/// at q, as a vector in R^{2n}.
fn lagrangian_q_gradient(
    mayer: &MayerProblem,
    q: &DVector<f64>,
    a0: f64,
    alpha: &DVector<f64>,
    beta: &DVector<f64>,
) -> Result<DVector<f64>> {
    let mut g = DVector::zeros(2 * mayer.n);
    if a0 != 0.0 {
        g += mayer.endpoint_cost.eval(q)?.gradient * a0;
    }
    for (i, phi) in mayer.endpoint_inequalities.iter().enumerate() {
        if alpha[i] != 0.0 {
            g += phi.eval(q)?.gradient * alpha[i];
        }
    }
    for (j, psi) in mayer.endpoint_equalities.iter().enumerate() {
        if beta[j] != 0.0 {
            g += psi.eval(q)?.gradient * beta[j];
        }
    }
    Ok(g)
}

/// Backward sweep from the terminal block of the endpoint-Lagrangian
/// gradient. Returns the path and the transversality defect at t_0.
pub fn solve_adjoint_mayer(
    mayer: &MayerProblem,
    traj: &DiscreteTrajectory,
    alpha: &DVector<f64>,
    beta: &DVector<f64>,
    mesh: &Mesh,
) -> Result<(AdjointPath, f64)> {
    let n = mayer.n;
    let h = mesh.h();
    let lq = lagrangian_q_gradient(mayer, &traj.endpoint_pair(), 1.0, alpha, beta)?;
    let mut p = vec![DVector::zeros(n); mesh.n_intervals + 1];
    p[mesh.n_intervals] = lq.rows(n, n).into_owned();
    for i in (0..mesh.n_intervals).rev() {
        let jac = mayer.dynamics.jacobian(&dyn_arg(&traj.x[i], &traj.u[i]))?;
        let fx = jac.columns(0, n).into_owned();
        p[i] = &p[i + 1] + fx.transpose() * &p[i + 1] * h;
    }
    let defect = (-&p[0] - lq.rows(0, n)).norm();
    Ok((AdjointPath { p }, defect))
}

/// Residual blocks of the discrete optimality system with the minimal
/// selection in the endpoint inequality block.
#[derive(Debug, Clone)]
pub struct MayerResiduals {
    /// Adjoint-equation defects per interval.
    pub pi: Vec<DVector<f64>>,
    /// Stationarity defects p f_u per interval.
    pub rho: Vec<DVector<f64>>,
    /// Transversality defect (-p_0, p_N) - l_q, length 2n.
    pub nu: DVector<f64>,
    /// Dynamics defects f - dx/dt per interval.
    pub eta: Vec<DVector<f64>>,
    /// Endpoint-equality values psi(q).
    pub mu: DVector<f64>,
    /// Endpoint-inequality defects, minimal selection.
    pub xi: DVector<f64>,
    /// ||pi||_1 + ||rho||_2 + |nu| + ||eta||_1 + |mu| + |xi|.
    pub norm: f64,
}

pub fn optimality_residuals_mayer(
    mayer: &MayerProblem,
    tuple: &StationaryTupleMayer,
    mesh: &Mesh,
    tols: &Tolerances,
) -> Result<MayerResiduals> {
    tuple.validate(mayer, mesh)?;
    let (n, m) = (mayer.n, mayer.m);
    let h = mesh.h();
    let q = tuple.traj.endpoint_pair();
    let lq = lagrangian_q_gradient(mayer, &q, 1.0, &tuple.alpha, &tuple.beta)?;
    let mut nu = DVector::zeros(2 * n);
    nu.rows_mut(0, n).copy_from(&(-&tuple.p.p[0] - lq.rows(0, n)));
    nu.rows_mut(n, n).copy_from(&(&tuple.p.p[mesh.n_intervals] - lq.rows(n, n)));
    let mut pi = Vec::with_capacity(mesh.n_intervals);
    let mut rho = Vec::with_capacity(mesh.n_intervals);
    let mut eta = Vec::with_capacity(mesh.n_intervals);
    for i in 0..mesh.n_intervals {
        let arg = dyn_arg(&tuple.traj.x[i], &tuple.traj.u[i]);
        let f = mayer.dynamics.value(&arg)?;
        let jac = mayer.dynamics.jacobian(&arg)?;
        let pnext = &tuple.p.p[i + 1];
        pi.push((pnext - &tuple.p.p[i]) / h + jac.columns(0, n).transpose() * pnext);
        rho.push(jac.columns(n, m).transpose() * pnext);
        eta.push(f - (&tuple.traj.x[i + 1] - &tuple.traj.x[i]) / h);
    }
    let mut mu = DVector::zeros(mayer.endpoint_equalities.len());
    for (j, psi) in mayer.endpoint_equalities.iter().enumerate() {
        mu[j] = psi.value(&q)?;
    }
    let mut xi = DVector::zeros(mayer.endpoint_inequalities.len());
    for (i, phi) in mayer.endpoint_inequalities.iter().enumerate() {
        let v = phi.value(&q)?;
        xi[i] = if tuple.alpha[i] > tols.t_mul { v } else { v.max(0.0) };
    }
    let norm = norm_l1(&pi, h)
        + norm_u_l2(&rho, h)
        + nu.norm()
        + norm_l1(&eta, h)
        + mu.norm()
        + xi.norm();
    Ok(MayerResiduals { pi, rho, nu, eta, mu, xi, norm })
}

/// Active endpoint inequalities I and the subset I0 with zero multiplier.
pub fn endpoint_active_sets(
    mayer: &MayerProblem,
    q: &DVector<f64>,
    alpha: &DVector<f64>,
    tols: &Tolerances,
) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut vals = DVector::zeros(mayer.endpoint_inequalities.len());
    for (i, phi) in mayer.endpoint_inequalities.iter().enumerate() {
        vals[i] = phi.value(q)?;
    }
    let t_act = tols.act_scaled(&vals);
    let mut active = Vec::new();
    let mut zero = Vec::new();
    for (i, &v) in vals.iter().enumerate() {
        if v.abs() <= t_act {
            active.push(i);
            if alpha[i] <= tols.t_mul {
                zero.push(i);
            }
        } else if alpha[i] > tols.t_mul {
            return Err(Error::ComplementarityViolation { node: 0, row: i, value: alpha[i] * v });
        }
    }
    Ok((active, zero))
}

#[derive(Debug, Clone)]
pub struct StrictMfMayerReport {
    pub holds: bool,
    pub active: Vec<usize>,
    pub zero_mult: Vec<usize>,
    /// Nonzero homogeneous multiplier tuple (alpha on active rows, beta)
    /// when the condition fails.
    pub witness: Option<(DVector<f64>, DVector<f64>)>,
}

/// Strict positive independence of the endpoint multipliers: the
/// homogeneous optimality system with zero cost multiplier, alpha supported
/// on the active set and alpha >= 0 on the zero-multiplier subset, must
/// have only the trivial solution.
pub fn check_strict_mf_mayer(
    mayer: &MayerProblem,
    tuple: &StationaryTupleMayer,
    mesh: &Mesh,
    tols: &Tolerances,
) -> Result<StrictMfMayerReport> {
    tuple.validate(mayer, mesh)?;
    let q = tuple.traj.endpoint_pair();
    let (active, zero_mult) = endpoint_active_sets(mayer, &q, &tuple.alpha, tols)?;
    let s = mayer.endpoint_equalities.len();
    let cols = active.len() + s;
    let (n, m) = (mayer.n, mayer.m);
    let rows = n + mesh.n_intervals * m;
    let mut l = DMatrix::zeros(rows, cols);
    for c in 0..cols {
        let mut alpha = DVector::zeros(mayer.endpoint_inequalities.len());
        let mut beta = DVector::zeros(s);
        if c < active.len() {
            alpha[active[c]] = 1.0;
        } else {
            beta[c - active.len()] = 1.0;
        }
        let lq = lagrangian_q_gradient(mayer, &q, 0.0, &alpha, &beta)?;
        let mut p_next = lq.rows(n, n).into_owned();
        let h = mesh.h();
        let mut u_rows = DVector::zeros(mesh.n_intervals * m);
        for i in (0..mesh.n_intervals).rev() {
            let jac = mayer.dynamics.jacobian(&dyn_arg(&tuple.traj.x[i], &tuple.traj.u[i]))?;
            let fu_p: DVector<f64> = jac.columns(n, m).transpose() * &p_next;
            u_rows.rows_mut(i * m, m).copy_from(&fu_p);
            p_next = &p_next + jac.columns(0, n).transpose() * &p_next * h;
        }
        let mut col = DVector::zeros(rows);
        col.rows_mut(0, n).copy_from(&(-&p_next - lq.rows(0, n)));
        col.rows_mut(n, mesh.n_intervals * m).copy_from(&u_rows);
        l.column_mut(c).copy_from(&col);
    }
    let sign_idx: Vec<usize> = active
        .iter()
        .enumerate()
        .filter(|(_, i)| zero_mult.contains(i))
        .map(|(pos, _)| pos)
        .collect();
    let witness = signed_kernel_nontrivial(&l, &sign_idx).map(|z| {
        let mut alpha = DVector::zeros(mayer.endpoint_inequalities.len());
        for (pos, &i) in active.iter().enumerate() {
            alpha[i] = z[pos];
        }
        let beta = z.rows(active.len(), s).into_owned();
        (alpha, beta)
    });
    Ok(StrictMfMayerReport { holds: witness.is_none(), active, zero_mult, witness })
}

/// Sensitivity matrices of the linearized dynamics in (x_0, u) coordinates.
fn sensitivities(
    mayer: &MayerProblem,
    traj: &DiscreteTrajectory,
    mesh: &Mesh,
) -> Result<Vec<DMatrix<f64>>> {
    crate::mesh::state_sensitivities(&mayer.dynamics, traj, mesh, mayer.n, mayer.m)
}

/// Critical cone over (x_0, u): endpoint equality rows psi' q = 0, active
/// inequality rows and the cost row phi_i' q <= 0 with q expressed through
/// the linearized dynamics.
pub fn critical_cone_mayer(
    mayer: &MayerProblem,
    tuple: &StationaryTupleMayer,
    mesh: &Mesh,
    tols: &Tolerances,
) -> Result<PolyhedralCone> {
    tuple.validate(mayer, mesh)?;
    let q = tuple.traj.endpoint_pair();
    let (active, _) = endpoint_active_sets(mayer, &q, &tuple.alpha, tols)?;
    let sens = sensitivities(mayer, &tuple.traj, mesh)?;
    let n = mayer.n;
    let dim = n + mesh.n_intervals * mayer.m;
    let x_n = &sens[mesh.n_intervals];
    // row in reduced coordinates from an endpoint gradient in R^{2n}
    let reduce = |grad: &DVector<f64>| -> DVector<f64> {
        let mut row = DVector::zeros(dim);
        row.rows_mut(0, n).copy_from(&grad.rows(0, n));
        row += x_n.transpose() * grad.rows(n, n);
        row
    };
    let mut b = DMatrix::zeros(mayer.endpoint_equalities.len(), dim);
    for (j, psi) in mayer.endpoint_equalities.iter().enumerate() {
        b.row_mut(j).copy_from(&reduce(&psi.eval(&q)?.gradient).transpose());
    }
    let mut a = DMatrix::zeros(active.len() + 1, dim);
    a.row_mut(0).copy_from(&reduce(&mayer.endpoint_cost.eval(&q)?.gradient).transpose());
    for (r, &i) in active.iter().enumerate() {
        a.row_mut(r + 1)
            .copy_from(&reduce(&mayer.endpoint_inequalities[i].eval(&q)?.gradient).transpose());
    }
    Ok(PolyhedralCone::new(a, b))
}

/// Second-order form Omega(v) = q' l_qq q + sum h w_i' H_ww w_i over
/// (x_0, u), with the |x_0|^2 + ||u||_2^2 Gram matrix.
pub fn quadratic_form_mayer(
    mayer: &MayerProblem,
    tuple: &StationaryTupleMayer,
    mesh: &Mesh,
) -> Result<QuadraticFormRep> {
    tuple.validate(mayer, mesh)?;
    let (n, m) = (mayer.n, mayer.m);
    let h = mesh.h();
    let q = tuple.traj.endpoint_pair();
    let sens = sensitivities(mayer, &tuple.traj, mesh)?;
    let dim = n + mesh.n_intervals * m;
    let mut omega = DMatrix::zeros(dim, dim);
    for i in 0..mesh.n_intervals {
        let arg = dyn_arg(&tuple.traj.x[i], &tuple.traj.u[i]);
        let evals = mayer.dynamics.evals(&arg)?;
        let mut hww = DMatrix::zeros(n + m, n + m);
        for (j, e) in evals.iter().enumerate() {
            hww += &e.hessian * tuple.p.p[i + 1][j];
        }
        let mut wi = DMatrix::zeros(n + m, dim);
        wi.view_mut((0, 0), (n, dim)).copy_from(&sens[i]);
        wi.view_mut((n, n + i * m), (m, m)).copy_from(&DMatrix::identity(m, m));
        let wt_h = wi.transpose() * &hww;
        omega += wt_h * &wi * h;
    }
    let mut lqq = mayer.endpoint_cost.eval(&q)?.hessian;
    for (i, phi) in mayer.endpoint_inequalities.iter().enumerate() {
        if tuple.alpha[i] != 0.0 {
            lqq += phi.eval(&q)?.hessian * tuple.alpha[i];
        }
    }
    for (j, psi) in mayer.endpoint_equalities.iter().enumerate() {
        if tuple.beta[j] != 0.0 {
            lqq += psi.eval(&q)?.hessian * tuple.beta[j];
        }
    }
    let mut s = DMatrix::zeros(2 * n, dim);
    s.view_mut((0, 0), (n, dim)).copy_from(&sens[0]);
    s.view_mut((n, 0), (n, dim)).copy_from(&sens[mesh.n_intervals]);
    omega += s.transpose() * lqq * s;
    let omega = (&omega + omega.transpose()) * 0.5;
    let mut gram = DMatrix::zeros(dim, dim);
    gram.view_mut((0, 0), (n, n)).copy_from(&DMatrix::identity(n, n));
    for v in n..dim {
        gram[(v, v)] = h;
    }
    Ok(QuadraticFormRep { matrix: omega, weak_norm_gram: gram })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coercivity::{certify_coercivity, CoercivityOptions};
    use crate::parse::parse_problem_file;
    use crate::problem::Problem;
    use approx::assert_relative_eq;
    use nalgebra::dvector;

    pub(crate) fn terminal_eq(nn: usize) -> (MayerProblem, Mesh, StationaryTupleMayer) {
        // states (x, z): xdot = u, zdot = u^2 / 2, min z(1),
        // x(0) = 0, x(1) = 1, z(0) = 0; solution u = 1
        let text = "\
class: mayer
dims: 2, 1
dynamics:
  1 * u1^1
  0.5 * u1^2
endpoint:
  1 * q4^1
eq:
  1 * q1^1
  1 * q3^1 - 1
  1 * q2^1
";
        let mayer = match parse_problem_file(text).unwrap().problem {
            Problem::Mayer(p) => p,
            _ => unreachable!(),
        };
        let mesh = Mesh::unit(nn).unwrap();
        let h = mesh.h();
        let x: Vec<_> = (0..=nn).map(|i| dvector![i as f64 * h, i as f64 * h / 2.0]).collect();
        let u = vec![dvector![1.0]; nn];
        let traj = DiscreteTrajectory { x, u };
        let alpha = DVector::zeros(0);
        let beta = dvector![1.0, -1.0, -1.0];
        let (p, defect) = solve_adjoint_mayer(&mayer, &traj, &alpha, &beta, &mesh).unwrap();
        assert!(defect < 1e-12, "defect = {defect}");
        (mayer, mesh, StationaryTupleMayer { traj, p, alpha, beta })
    }

    #[test]
    fn terminal_eq_is_exactly_stationary() {
        let (mayer, mesh, tuple) = terminal_eq(50);
        for p in &tuple.p.p {
            assert_relative_eq!(p[0], -1.0, epsilon = 1e-12);
            assert_relative_eq!(p[1], 1.0, epsilon = 1e-12);
        }
        let res = optimality_residuals_mayer(&mayer, &tuple, &mesh, &Tolerances::default()).unwrap();
        assert!(res.norm < 1e-12, "norm = {}", res.norm);
    }

    #[test]
    fn terminal_eq_strict_mf_holds() {
        let (mayer, mesh, tuple) = terminal_eq(30);
        let rep = check_strict_mf_mayer(&mayer, &tuple, &mesh, &Tolerances::default()).unwrap();
        assert!(rep.holds);
        assert!(rep.active.is_empty());
    }

    #[test]
    fn terminal_eq_coercive_with_constant_one() {
        let (mayer, mesh, tuple) = terminal_eq(30);
        let tols = Tolerances::default();
        let cone = critical_cone_mayer(&mayer, &tuple, &mesh, &tols).unwrap();
        let form = quadratic_form_mayer(&mayer, &tuple, &mesh).unwrap();
        let opts = CoercivityOptions {
            strategy: crate::par::ExecStrategy::Sequential,
            ..Default::default()
        };
        let cert = certify_coercivity(&form, &cone, &opts).unwrap();
        assert!(cert.certified);
        assert_relative_eq!(cert.c0, 1.0, epsilon = 1e-8);
    }

    #[test]
    fn strict_mf_fails_for_duplicated_equality() {
        // psi_1 = x(1) - 1 and psi_2 = 2 x(1) - 2 are dependent
        let text = "\
class: mayer
dims: 1, 1
dynamics:
  1 * u1^1
endpoint:
  1 * q2^2
eq:
  1 * q2^1 - 1
  2 * q2^1 - 2
";
        let mayer = match parse_problem_file(text).unwrap().problem {
            Problem::Mayer(p) => p,
            _ => unreachable!(),
        };
        let mesh = Mesh::unit(10).unwrap();
        let h = mesh.h();
        let x: Vec<_> = (0..=10).map(|i| dvector![i as f64 * h]).collect();
        let u = vec![dvector![1.0]; 10];
        let traj = DiscreteTrajectory { x, u };
        let alpha = DVector::zeros(0);
        let (p, _) = solve_adjoint_mayer(&mayer, &traj, &alpha, &dvector![-2.0, 0.0], &mesh).unwrap();
        let tuple = StationaryTupleMayer { traj, p, alpha, beta: dvector![-2.0, 0.0] };
        let rep = check_strict_mf_mayer(&mayer, &tuple, &mesh, &Tolerances::default()).unwrap();
        assert!(!rep.holds);
        let (_, beta) = rep.witness.unwrap();
        assert!(beta.amax() > 1e-6);
    }
}
