//! Analysis of control-constrained problems after explicit Euler
//! transcription: adjoint and multiplier recovery, optimality residuals in
//! the weighted dual norm, critical cones, the second-order form with the
//! weak-norm metric, and the pointwise Legendre / Hamiltonian-growth checks.
//!
//! All interval-pointwise quantities are evaluated at interval left
//! endpoints, which makes the discrete system exactly the KKT system of the
//! transcribed nonlinear program.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::coercivity::{certify_coercivity, CoercivityCertificate, CoercivityOptions, QuadraticFormRep};
use crate::cone::PolyhedralCone;
use crate::error::{Error, Result};
use crate::feas::polyhedral_cone_nontrivial;
use crate::linalg::{lstsq, nullspace, rank};
use crate::mesh::{norm_l1, norm_u_l2, AdjointPath, DiscreteTrajectory, Mesh, MultiplierPath};
use crate::nlp::Tolerances;
use crate::problem::OcpProblem;

/// Reference point of the discrete optimality system.
#[derive(Debug, Clone)]
pub struct StationaryTupleOcp {
    pub traj: DiscreteTrajectory,
    pub p: AdjointPath,
    pub lambda: MultiplierPath,
}

impl StationaryTupleOcp {
    pub fn validate(&self, ocp: &OcpProblem, mesh: &Mesh) -> Result<()> {
        self.traj.check_mesh(mesh, ocp.n, ocp.m)?;
        if self.p.p.len() != mesh.n_intervals + 1 || self.lambda.lambda.len() != mesh.n_intervals {
            return Err(Error::DimensionMismatch {
                expected: mesh.n_intervals,
                got: self.lambda.lambda.len(),
            });
        }
        for (i, l) in self.lambda.lambda.iter().enumerate() {
            for (j, &v) in l.iter().enumerate() {
                if v < -1e-10 {
                    return Err(Error::EmptyNormalCone { index: i * ocp.k + j, value: v });
                }
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

/// Forward Euler: x_{i+1} = x_i + h f(x_i, u_i).
pub fn propagate_state(
    ocp: &OcpProblem,
    x0: &DVector<f64>,
    u: &[DVector<f64>],
    mesh: &Mesh,
) -> Result<Vec<DVector<f64>>> {
    let h = mesh.h();
    let mut x = Vec::with_capacity(mesh.n_intervals + 1);
    x.push(x0.clone());
    for ui in u.iter().take(mesh.n_intervals) {
        let f = ocp.dynamics.value(&dyn_arg(x.last().unwrap(), ui))?;
        let next = x.last().unwrap() + f * h;
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinitePropagation { node: x.len() });
        }
        x.push(next);
    }
    Ok(x)
}

/// Endpoint cost F(x_0, x_N) of a trajectory.
pub fn trajectory_cost(ocp: &OcpProblem, traj: &DiscreteTrajectory) -> Result<f64> {
    ocp.endpoint_cost.value(&traj.endpoint_pair())
}

/// Backward adjoint sweep p_i = p_{i+1} + h p_{i+1} f_x(x_i, u_i) with
/// terminal value from the endpoint-cost gradient. Returns the path and the
/// transversality defect | -p_0 - d F / d x_0 | at the initial node.
pub fn solve_adjoint(
    ocp: &OcpProblem,
    traj: &DiscreteTrajectory,
    mesh: &Mesh,
) -> Result<(AdjointPath, f64)> {
    let n = ocp.n;
    let h = mesh.h();
    let fq = ocp.endpoint_cost.eval(&traj.endpoint_pair())?.gradient;
    let mut p = vec![DVector::zeros(n); mesh.n_intervals + 1];
    p[mesh.n_intervals] = fq.rows(n, n).into_owned();
    for i in (0..mesh.n_intervals).rev() {
        let jac = ocp.dynamics.jacobian(&dyn_arg(&traj.x[i], &traj.u[i]))?;
        let fx = jac.columns(0, n).into_owned();
        // row-vector recursion: p_i = p_{i+1} (I + h f_x)
        p[i] = &p[i + 1] + fx.transpose() * &p[i + 1] * h;
    }
    let defect = (-&p[0] - fq.rows(0, n)).norm();
    Ok((AdjointPath { p }, defect))
}

#[derive(Debug, Clone)]
pub struct MultiplierRecovery {
    pub lambda: MultiplierPath,
    /// Worst stationarity residual |p f_u + lambda G'| over intervals.
    pub max_residual: f64,
    pub min_lambda: f64,
}

/// Recover control multipliers from stationarity p_{i+1} f_u + lambda_i G'
/// = 0 by least squares on the active rows of G at each interval. The
/// active gradients must have full row rank.
pub fn multiplier_from_stationarity(
    ocp: &OcpProblem,
    traj: &DiscreteTrajectory,
    p: &AdjointPath,
    mesh: &Mesh,
    tols: &Tolerances,
) -> Result<MultiplierRecovery> {
    let t_act = active_tolerance(ocp, traj, tols)?;
    let mut lambda = Vec::with_capacity(mesh.n_intervals);
    let mut max_residual = 0.0f64;
    let mut min_lambda = f64::INFINITY;
    for i in 0..mesh.n_intervals {
        let g = ocp.control_constraints.value(&traj.u[i])?;
        let gj = ocp.control_constraints.jacobian(&traj.u[i])?;
        let active: Vec<usize> = (0..ocp.k).filter(|&j| g[j] >= -t_act).collect();
        let jac = ocp.dynamics.jacobian(&dyn_arg(&traj.x[i], &traj.u[i]))?;
        let r: DVector<f64> = jac.columns(ocp.n, ocp.m).transpose() * &p.p[i + 1];
        let mut li = DVector::zeros(ocp.k);
        if !active.is_empty() {
            let mut ga = DMatrix::zeros(active.len(), ocp.m);
            for (row, &j) in active.iter().enumerate() {
                ga.row_mut(row).copy_from(&gj.row(j));
            }
            let rk = rank(&ga, tols.rank_rel);
            if rk < active.len() {
                return Err(Error::RegularityViolation { node: i, rank: rk, active: active.len() });
            }
            let la = lstsq(&ga.transpose(), &(-&r), tols.rank_rel);
            let resid = (&ga.transpose() * &la + &r).norm();
            max_residual = max_residual.max(resid);
            for (row, &j) in active.iter().enumerate() {
                li[j] = la[row];
            }
        } else {
            max_residual = max_residual.max(r.norm());
        }
        min_lambda = min_lambda.min(li.min());
        lambda.push(li);
    }
    Ok(MultiplierRecovery { lambda: MultiplierPath { lambda }, max_residual, min_lambda })
}

/// Scaled activity tolerance t_act * (1 + max |G|) over the trajectory.
fn active_tolerance(ocp: &OcpProblem, traj: &DiscreteTrajectory, tols: &Tolerances) -> Result<f64> {
    let mut gmax = 0.0f64;
    for u in &traj.u {
        let g = ocp.control_constraints.value(u)?;
        gmax = gmax.max(g.amax());
        for (j, &v) in g.iter().enumerate() {
            if v > tols.t_act * (1.0 + v.abs().max(1.0)) {
                return Err(Error::Infeasible { name: format!("control constraint {}", j + 1), violation: v });
            }
        }
    }
    Ok(tols.t_act * (1.0 + gmax))
}

/// Residual blocks of the discrete optimality system, with the minimal
/// selection in the constraint block.
#[derive(Debug, Clone)]
pub struct OcpResiduals {
    /// Transversality defect (-p_0, p_N) - F'(q), length 2n.
    pub nu: DVector<f64>,
    /// Adjoint-equation defects per interval.
    pub pi: Vec<DVector<f64>>,
    /// Stationarity defects p f_u + lambda G' per interval.
    pub rho: Vec<DVector<f64>>,
    /// Dynamics defects -dx/dt + f per interval.
    pub xi: Vec<DVector<f64>>,
    /// Constraint defects, minimal selection from the normal cone.
    pub eta: Vec<DVector<f64>>,
    /// |nu| + ||pi||_1 + ||rho||_2 + ||xi||_1 + ||eta||_2.
    pub norm: f64,
}

pub fn optimality_residuals_ocp(
    ocp: &OcpProblem,
    tuple: &StationaryTupleOcp,
    mesh: &Mesh,
    tols: &Tolerances,
) -> Result<OcpResiduals> {
    tuple.validate(ocp, mesh)?;
    let (n, m) = (ocp.n, ocp.m);
    let h = mesh.h();
    let fq = ocp.endpoint_cost.eval(&tuple.traj.endpoint_pair())?.gradient;
    let mut nu = DVector::zeros(2 * n);
    nu.rows_mut(0, n).copy_from(&(-&tuple.p.p[0] - fq.rows(0, n)));
    nu.rows_mut(n, n).copy_from(&(&tuple.p.p[mesh.n_intervals] - fq.rows(n, n)));
    let mut pi = Vec::with_capacity(mesh.n_intervals);
    let mut rho = Vec::with_capacity(mesh.n_intervals);
    let mut xi = Vec::with_capacity(mesh.n_intervals);
    let mut eta = Vec::with_capacity(mesh.n_intervals);
    for i in 0..mesh.n_intervals {
        let arg = dyn_arg(&tuple.traj.x[i], &tuple.traj.u[i]);
        let f = ocp.dynamics.value(&arg)?;
        let jac = ocp.dynamics.jacobian(&arg)?;
        let fx = jac.columns(0, n).into_owned();
        let fu = jac.columns(n, m).into_owned();
        let pnext = &tuple.p.p[i + 1];
        pi.push((pnext - &tuple.p.p[i]) / h + fx.transpose() * pnext);
        let g = ocp.control_constraints.value(&tuple.traj.u[i])?;
        let gj = ocp.control_constraints.jacobian(&tuple.traj.u[i])?;
        rho.push(fu.transpose() * pnext + gj.transpose() * &tuple.lambda.lambda[i]);
        xi.push(-(&tuple.traj.x[i + 1] - &tuple.traj.x[i]) / h + f);
        let mut e = DVector::zeros(ocp.k);
        for j in 0..ocp.k {
            e[j] = if tuple.lambda.lambda[i][j] > tols.t_mul { g[j] } else { g[j].max(0.0) };
        }
        eta.push(e);
    }
    let norm =
        nu.norm() + norm_l1(&pi, h) + norm_u_l2(&rho, h) + norm_l1(&xi, h) + norm_u_l2(&eta, h);
    Ok(OcpResiduals { nu, pi, rho, xi, eta, norm })
}

/// Index sets over intervals classifying each control constraint.
#[derive(Debug, Clone)]
pub struct TimeSets {
    /// Active intervals of constraint j.
    pub active: Vec<Vec<usize>>,
    /// Intervals with lambda_j > t_mul.
    pub positive: Vec<Vec<usize>>,
    /// Intervals with lambda_j > delta.
    pub positive_delta: Vec<Vec<usize>>,
    /// Intervals where some lambda_j lies in (t_mul, delta]: the thin band
    /// where the pointwise conditions must carry the certificate.
    pub band: Vec<usize>,
    pub delta: f64,
}

pub fn time_sets(
    ocp: &OcpProblem,
    tuple: &StationaryTupleOcp,
    mesh: &Mesh,
    delta: f64,
    tols: &Tolerances,
) -> Result<TimeSets> {
    tuple.validate(ocp, mesh)?;
    let t_act = active_tolerance(ocp, &tuple.traj, tols)?;
    let mut active = vec![Vec::new(); ocp.k];
    let mut positive = vec![Vec::new(); ocp.k];
    let mut positive_delta = vec![Vec::new(); ocp.k];
    let mut band = Vec::new();
    for i in 0..mesh.n_intervals {
        let g = ocp.control_constraints.value(&tuple.traj.u[i])?;
        let mut in_band = false;
        for j in 0..ocp.k {
            let lam = tuple.lambda.lambda[i][j];
            if g[j] >= -t_act {
                active[j].push(i);
            } else if lam > tols.t_mul {
                return Err(Error::ComplementarityViolation { node: i, row: j, value: lam * g[j] });
            }
            if lam > tols.t_mul {
                positive[j].push(i);
                if lam > delta {
                    positive_delta[j].push(i);
                } else {
                    in_band = true;
                }
            }
        }
        if in_band {
            band.push(i);
        }
    }
    Ok(TimeSets { active, positive, positive_delta, band, delta })
}

/// Which rows pin the control component of the critical cone.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ConeRep {
    /// Equality rows H_u(t_i) u_i = 0 on every interval.
    HamiltonianRows,
    /// Equality rows G_j' u_i = 0 where lambda_j > t_mul.
    MultiplierRows,
    /// Extended cone: equality rows only where lambda_j > delta.
    Extended(f64),
}

/// Critical cone in the reduced variables (x_0, u_0, ..., u_{N-1}); the
/// state component is eliminated through the linearized dynamics, so only
/// control rows remain. Rows are kept per interval to allow exact
/// elimination of the pinned directions.
#[derive(Debug, Clone)]
pub struct OcpCone {
    pub n: usize,
    pub m: usize,
    pub n_intervals: usize,
    /// (interval, row in R^m): row . u_i = 0.
    pub eq_rows: Vec<(usize, DVector<f64>)>,
    /// (interval, row in R^m): row . u_i <= 0.
    pub ineq_rows: Vec<(usize, DVector<f64>)>,
}

impl OcpCone {
    pub fn dim(&self) -> usize {
        self.n + self.n_intervals * self.m
    }

    pub fn to_polyhedral(&self) -> PolyhedralCone {
        let dim = self.dim();
        let mut a = DMatrix::zeros(self.ineq_rows.len(), dim);
        for (r, (i, row)) in self.ineq_rows.iter().enumerate() {
            a.view_mut((r, self.n + i * self.m), (1, self.m)).copy_from(&row.transpose());
        }
        let mut b = DMatrix::zeros(self.eq_rows.len(), dim);
        for (r, (i, row)) in self.eq_rows.iter().enumerate() {
            b.view_mut((r, self.n + i * self.m), (1, self.m)).copy_from(&row.transpose());
        }
        let mut cone = PolyhedralCone::new(a, b);
        cone.dim = dim;
        cone
    }

    /// Per-interval triviality of the control component. `free_measure` is
    /// h times the number of intervals whose pointwise cone is nontrivial;
    /// the component is trivial up to a time set of that measure.
    pub fn control_triviality(&self, mesh: &Mesh) -> (bool, f64) {
        let mut nontrivial = 0usize;
        for i in 0..self.n_intervals {
            let eq: Vec<&DVector<f64>> =
                self.eq_rows.iter().filter(|(j, _)| *j == i).map(|(_, r)| r).collect();
            let ineq: Vec<&DVector<f64>> =
                self.ineq_rows.iter().filter(|(j, _)| *j == i).map(|(_, r)| r).collect();
            let mut b = DMatrix::zeros(eq.len(), self.m);
            for (r, row) in eq.iter().enumerate() {
                b.row_mut(r).copy_from(&row.transpose());
            }
            let mut a = DMatrix::zeros(ineq.len(), self.m);
            for (r, row) in ineq.iter().enumerate() {
                a.row_mut(r).copy_from(&row.transpose());
            }
            if polyhedral_cone_nontrivial(&a, &b).is_some() {
                nontrivial += 1;
            }
        }
        (nontrivial == 0, mesh.h() * nontrivial as f64)
    }
}

pub fn critical_cone_ocp(
    ocp: &OcpProblem,
    tuple: &StationaryTupleOcp,
    mesh: &Mesh,
    rep: ConeRep,
    tols: &Tolerances,
) -> Result<OcpCone> {
    let sets = time_sets(ocp, tuple, mesh, if let ConeRep::Extended(d) = rep { d } else { 0.0 }, tols)?;
    let mut eq_rows = Vec::new();
    let mut ineq_rows = Vec::new();
    for i in 0..mesh.n_intervals {
        let gj = ocp.control_constraints.jacobian(&tuple.traj.u[i])?;
        for j in 0..ocp.k {
            if sets.active[j].binary_search(&i).is_ok() {
                ineq_rows.push((i, gj.row(j).transpose()));
            }
        }
        match rep {
            ConeRep::HamiltonianRows => {
                let jac = ocp.dynamics.jacobian(&dyn_arg(&tuple.traj.x[i], &tuple.traj.u[i]))?;
                let hu: DVector<f64> =
                    jac.columns(ocp.n, ocp.m).transpose() * &tuple.p.p[i + 1];
                if hu.norm() > 1e-12 * (1.0 + tuple.p.p[i + 1].norm()) {
                    eq_rows.push((i, hu));
                }
            }
            ConeRep::MultiplierRows => {
                for j in 0..ocp.k {
                    if sets.positive[j].binary_search(&i).is_ok() {
                        eq_rows.push((i, gj.row(j).transpose()));
                    }
                }
            }
            ConeRep::Extended(_) => {
                for j in 0..ocp.k {
                    if sets.positive_delta[j].binary_search(&i).is_ok() {
                        eq_rows.push((i, gj.row(j).transpose()));
                    }
                }
            }
        }
    }
    Ok(OcpCone { n: ocp.n, m: ocp.m, n_intervals: mesh.n_intervals, eq_rows, ineq_rows })
}

/// Per-interval orthonormal bases of the directions not pinned by equality
/// rows; the reduced coordinates are (x_0, utilde_0, ..., utilde_{N-1}).
#[derive(Debug, Clone)]
pub struct ControlReduction {
    pub z: Vec<DMatrix<f64>>,
    pub offsets: Vec<usize>,
    pub dim: usize,
    pub n: usize,
    pub m: usize,
}

impl ControlReduction {
    pub fn identity(n: usize, m: usize, n_intervals: usize) -> Self {
        let z = vec![DMatrix::identity(m, m); n_intervals];
        let offsets = (0..n_intervals).map(|i| n + i * m).collect();
        ControlReduction { z, offsets, dim: n + n_intervals * m, n, m }
    }

    pub fn from_eq_rows(cone: &OcpCone) -> Self {
        let mut z = Vec::with_capacity(cone.n_intervals);
        let mut offsets = Vec::with_capacity(cone.n_intervals);
        let mut dim = cone.n;
        for i in 0..cone.n_intervals {
            let rows: Vec<&DVector<f64>> =
                cone.eq_rows.iter().filter(|(j, _)| *j == i).map(|(_, r)| r).collect();
            let zi = if rows.is_empty() {
                DMatrix::identity(cone.m, cone.m)
            } else {
                let mut b = DMatrix::zeros(rows.len(), cone.m);
                for (r, row) in rows.iter().enumerate() {
                    b.row_mut(r).copy_from(&row.transpose());
                }
                nullspace(&b, 1e-10)
            };
            offsets.push(dim);
            dim += zi.ncols();
            z.push(zi);
        }
        ControlReduction { z, offsets, dim, n: cone.n, m: cone.m }
    }

    /// Expand a reduced direction into (x_0, u) coordinates.
    pub fn expand(&self, v: &DVector<f64>) -> DVector<f64> {
        let nn = self.z.len();
        let mut out = DVector::zeros(self.n + nn * self.m);
        out.rows_mut(0, self.n).copy_from(&v.rows(0, self.n));
        for i in 0..nn {
            let w = self.z[i].ncols();
            if w > 0 {
                let ui = &self.z[i] * v.rows(self.offsets[i], w);
                out.rows_mut(self.n + i * self.m, self.m).copy_from(&ui);
            }
        }
        out
    }
}

/// Second-order form and weak-norm Gram matrix in reduced coordinates:
/// Omega(v) = q' F'' q + sum_i h w_i' Hbar_ww w_i with q and the state part
/// of w_i obtained from the linearized dynamics. The Gram realizes
/// |x_0|^2 + ||u||_2^2.
pub fn quadratic_form_ocp_reduced(
    ocp: &OcpProblem,
    tuple: &StationaryTupleOcp,
    mesh: &Mesh,
    red: &ControlReduction,
) -> Result<QuadraticFormRep> {
    let (n, m) = (ocp.n, ocp.m);
    let h = mesh.h();
    let d = red.dim;
    let mut omega = DMatrix::zeros(d, d);
    let mut x_i = DMatrix::zeros(n, d);
    x_i.view_mut((0, 0), (n, n)).copy_from(&DMatrix::identity(n, n));
    let x_start = x_i.clone();
    for i in 0..mesh.n_intervals {
        let arg = dyn_arg(&tuple.traj.x[i], &tuple.traj.u[i]);
        let evals = ocp.dynamics.evals(&arg)?;
        let gevals = ocp.control_constraints.evals(&tuple.traj.u[i])?;
        // Hbar_ww = sum_j p_j f_j'' + lambda . G'' (uu block)
        let mut hww = DMatrix::zeros(n + m, n + m);
        for (j, e) in evals.iter().enumerate() {
            hww += &e.hessian * tuple.p.p[i + 1][j];
        }
        for (j, e) in gevals.iter().enumerate() {
            let lam = tuple.lambda.lambda[i][j];
            if lam != 0.0 {
                let mut block = hww.view_mut((n, n), (m, m));
                block += &e.hessian * lam;
            }
        }
        let w = red.z[i].ncols();
        // W_i = [X_i; Z_i E_i] stacked state and control rows
        let mut wi = DMatrix::zeros(n + m, d);
        wi.view_mut((0, 0), (n, d)).copy_from(&x_i);
        if w > 0 {
            wi.view_mut((n, red.offsets[i]), (m, w)).copy_from(&red.z[i]);
        }
        let wt_h = wi.transpose() * &hww;
        omega += wt_h * &wi * h;
        // advance sensitivities: X_{i+1} = (I + h f_x) X_i + h f_u Z_i E_i
        let mut jac = DMatrix::zeros(n, n + m);
        for (j, e) in evals.iter().enumerate() {
            jac.row_mut(j).copy_from(&e.gradient.transpose());
        }
        let fx = jac.columns(0, n).into_owned();
        let fu = jac.columns(n, m).into_owned();
        let mut next = &x_i + (&fx * &x_i) * h;
        if w > 0 {
            let fuz = &fu * &red.z[i];
            let mut block = next.view_mut((0, red.offsets[i]), (n, w));
            block += fuz * h;
        }
        x_i = next;
    }
    let mut s = DMatrix::zeros(2 * n, d);
    s.view_mut((0, 0), (n, d)).copy_from(&x_start);
    s.view_mut((n, 0), (n, d)).copy_from(&x_i);
    let fqq = ocp.endpoint_cost.eval(&tuple.traj.endpoint_pair())?.hessian;
    omega += s.transpose() * fqq * s;
    let omega = (&omega + omega.transpose()) * 0.5;
    let mut gram = DMatrix::zeros(d, d);
    gram.view_mut((0, 0), (n, n)).copy_from(&DMatrix::identity(n, n));
    for v in n..d {
        gram[(v, v)] = h;
    }
    Ok(QuadraticFormRep { matrix: omega, weak_norm_gram: gram })
}

/// Full-coordinate form over (x_0, u).
pub fn quadratic_form_ocp(
    ocp: &OcpProblem,
    tuple: &StationaryTupleOcp,
    mesh: &Mesh,
) -> Result<QuadraticFormRep> {
    let red = ControlReduction::identity(ocp.n, ocp.m, mesh.n_intervals);
    quadratic_form_ocp_reduced(ocp, tuple, mesh, &red)
}

#[derive(Debug, Clone)]
pub struct OcpCoercivityReport {
    pub delta: f64,
    pub certificate: CoercivityCertificate,
    /// Counterexample expanded to (x_0, u) coordinates, if refuted.
    pub counterexample: Option<DVector<f64>>,
    /// Value of Omega / (||x||_inf^2 + ||u||_2^2) on the extremal
    /// direction, with the state recomputed from the linearized dynamics.
    pub sup_norm_ratio: Option<f64>,
}

/// Certify the second-order condition on the extended cone: the equality
/// rows are eliminated exactly per interval, the reduced form is certified,
/// and witnesses are mapped back.
pub fn certify_coercivity_ocp(
    ocp: &OcpProblem,
    tuple: &StationaryTupleOcp,
    mesh: &Mesh,
    delta: f64,
    tols: &Tolerances,
    opts: &CoercivityOptions,
) -> Result<OcpCoercivityReport> {
    let cone = critical_cone_ocp(ocp, tuple, mesh, ConeRep::Extended(delta), tols)?;
    let red = ControlReduction::from_eq_rows(&cone);
    let form = quadratic_form_ocp_reduced(ocp, tuple, mesh, &red)?;
    // surviving inequality rows in reduced coordinates
    let mut rows = Vec::new();
    for (i, row) in &cone.ineq_rows {
        let w = red.z[*i].ncols();
        if w == 0 {
            continue;
        }
        let r: DVector<f64> = red.z[*i].transpose() * row;
        if r.norm() > 1e-12 * (1.0 + row.norm()) {
            rows.push((red.offsets[*i], r));
        }
    }
    let mut a = DMatrix::zeros(rows.len(), red.dim);
    for (r, (off, row)) in rows.iter().enumerate() {
        a.view_mut((r, *off), (1, row.len())).copy_from(&row.transpose());
    }
    let reduced_cone = PolyhedralCone::new(a, DMatrix::zeros(0, red.dim));
    let certificate = certify_coercivity(&form, &reduced_cone, opts)?;
    let witness_red = certificate.counterexample.clone();
    let counterexample = witness_red.as_ref().map(|v| red.expand(v));
    let sup_norm_ratio = match &counterexample {
        Some(v) => Some(sup_norm_ratio(ocp, tuple, mesh, v)?),
        None => None,
    };
    Ok(OcpCoercivityReport { delta, certificate, counterexample, sup_norm_ratio })
}

/// Omega(v) / (||x||_inf^2 + ||u||_2^2) for a direction v = (x_0, u), with
/// the state component recomputed from the linearized dynamics.
pub fn sup_norm_ratio(
    ocp: &OcpProblem,
    tuple: &StationaryTupleOcp,
    mesh: &Mesh,
    v: &DVector<f64>,
) -> Result<f64> {
    let (n, m) = (ocp.n, ocp.m);
    let h = mesh.h();
    let red = ControlReduction::identity(n, m, mesh.n_intervals);
    let form = quadratic_form_ocp_reduced(ocp, tuple, mesh, &red)?;
    let mut x = v.rows(0, n).into_owned();
    let mut xmax = x.norm();
    let mut ul2 = 0.0;
    for i in 0..mesh.n_intervals {
        let jac = ocp.dynamics.jacobian(&dyn_arg(&tuple.traj.x[i], &tuple.traj.u[i]))?;
        let ui = v.rows(n + i * m, m).into_owned();
        let dx = jac.columns(0, n) * &x + jac.columns(n, m) * &ui;
        x += dx * h;
        xmax = xmax.max(x.norm());
        ul2 += h * ui.norm_squared();
    }
    let denom = xmax * xmax + ul2;
    if denom <= 1e-30 {
        return Ok(f64::INFINITY);
    }
    Ok(form.value(v) / denom)
}

#[derive(Debug, Clone)]
pub struct LegendreReport {
    pub delta: f64,
    /// Smallest pointwise coercivity constant over the band; +inf when the
    /// band is empty or every pointwise cone is trivial.
    pub c_l: f64,
    pub satisfied: bool,
    pub worst_interval: Option<usize>,
    pub band_measure: f64,
}

/// Strengthened pointwise condition: Hbar_uu positive definite on the
/// pointwise cone C_delta(t_i) for every interval in the band where some
/// multiplier lies in (0, delta].
pub fn check_legendre(
    ocp: &OcpProblem,
    tuple: &StationaryTupleOcp,
    mesh: &Mesh,
    delta: f64,
    tols: &Tolerances,
    opts: &CoercivityOptions,
) -> Result<LegendreReport> {
    let sets = time_sets(ocp, tuple, mesh, delta, tols)?;
    let (n, m) = (ocp.n, ocp.m);
    let mut c_l = f64::INFINITY;
    let mut worst = None;
    for &i in &sets.band {
        let arg = dyn_arg(&tuple.traj.x[i], &tuple.traj.u[i]);
        let evals = ocp.dynamics.evals(&arg)?;
        let gevals = ocp.control_constraints.evals(&tuple.traj.u[i])?;
        let mut huu = DMatrix::zeros(m, m);
        for (j, e) in evals.iter().enumerate() {
            huu += e.hessian.view((n, n), (m, m)) * tuple.p.p[i + 1][j];
        }
        let gj = ocp.control_constraints.jacobian(&tuple.traj.u[i])?;
        let mut a_rows = Vec::new();
        let mut b_rows = Vec::new();
        for j in 0..ocp.k {
            let lam = tuple.lambda.lambda[i][j];
            if lam != 0.0 {
                huu += &gevals[j].hessian * lam;
            }
            if lam > delta {
                b_rows.push(j);
            } else if sets.active[j].binary_search(&i).is_ok() {
                a_rows.push(j);
            }
        }
        let mut a = DMatrix::zeros(a_rows.len(), m);
        for (r, &j) in a_rows.iter().enumerate() {
            a.row_mut(r).copy_from(&gj.row(j));
        }
        let mut b = DMatrix::zeros(b_rows.len(), m);
        for (r, &j) in b_rows.iter().enumerate() {
            b.row_mut(r).copy_from(&gj.row(j));
        }
        let cone = PolyhedralCone::new(a, b);
        let form = QuadraticFormRep::with_identity_gram((&huu + huu.transpose()) * 0.5);
        let cert = certify_coercivity(&form, &cone, opts)?;
        if cert.c0 < c_l {
            c_l = cert.c0;
            worst = Some(i);
        }
    }
    Ok(LegendreReport {
        delta,
        c_l,
        satisfied: c_l > opts.tol_pd,
        worst_interval: worst,
        band_measure: mesh.h() * sets.band.len() as f64,
    })
}

#[derive(Debug, Clone)]
pub struct HamiltonianGrowthReport {
    pub delta: f64,
    pub epsilon: f64,
    /// Smallest sampled ratio (H(x, u, p) - H(x, uhat, p)) / |u - uhat|^2
    /// over admissible u near uhat on the band.
    pub c_h: f64,
    pub satisfied: bool,
    pub samples_used: usize,
    pub worst_interval: Option<usize>,
}

/// Sampled check of local quadratic growth of the Hamiltonian over the
/// admissible set, on the band intervals.
pub fn check_hamiltonian_growth(
    ocp: &OcpProblem,
    tuple: &StationaryTupleOcp,
    mesh: &Mesh,
    delta: f64,
    epsilon: f64,
    samples: usize,
    seed: u64,
    tols: &Tolerances,
) -> Result<HamiltonianGrowthReport> {
    let sets = time_sets(ocp, tuple, mesh, delta, tols)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut c_h = f64::INFINITY;
    let mut worst = None;
    let mut used = 0usize;
    for &i in &sets.band {
        let uhat = &tuple.traj.u[i];
        let h0 = tuple.p.p[i + 1].dot(&ocp.dynamics.value(&dyn_arg(&tuple.traj.x[i], uhat))?);
        let mut accepted = 0usize;
        let mut attempts = 0usize;
        while accepted < samples && attempts < samples * 50 {
            attempts += 1;
            let du = DVector::from_fn(ocp.m, |_, _| rng.gen_range(-epsilon..epsilon));
            if du.norm() < 1e-12 || du.norm() >= epsilon {
                continue;
            }
            let u = uhat + &du;
            if !ocp.control_feasible(&u)? {
                continue;
            }
            accepted += 1;
            let hv = tuple.p.p[i + 1].dot(&ocp.dynamics.value(&dyn_arg(&tuple.traj.x[i], &u))?);
            let ratio = (hv - h0) / du.norm_squared();
            if ratio < c_h {
                c_h = ratio;
                worst = Some(i);
            }
        }
        used += accepted;
    }
    Ok(HamiltonianGrowthReport {
        delta,
        epsilon,
        c_h,
        satisfied: c_h > 0.0,
        samples_used: used,
        worst_interval: worst,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parse::parse_problem_file;
    use crate::problem::Problem;
    use approx::assert_relative_eq;
    use nalgebra::dvector;

    fn tols() -> Tolerances {
        Tolerances::default()
    }

    fn opts() -> CoercivityOptions {
        CoercivityOptions { strategy: crate::par::ExecStrategy::Sequential, ..Default::default() }
    }

    fn scalar_integrator() -> OcpProblem {
        // min x(1), xdot = x, -1 <= u <= 1 (control unused by the dynamics)
        let text = "\
class: ocp
dims: 1, 1, 2
dynamics:
  1 * x1^1
endpoint:
  1 * q2^1
control_ineq:
  1 * u1^1 - 1
  -1 * u1^1 - 1
";
        match parse_problem_file(text).unwrap().problem {
            Problem::Ocp(p) => p,
            _ => unreachable!(),
        }
    }

    pub(crate) fn example1(n_text: &str) -> (OcpProblem, Mesh) {
        // states (y, x): ydot = 1, xdot = y u - u^2, u >= 0, min x(1) - x(0)
        let text = "\
class: ocp
dims: 2, 1, 1
dynamics:
  1
  1 * x1^1 * u1^1 - 1 * u1^2
endpoint:
  1 * q4^1 - 1 * q2^1
control_ineq:
  -1 * u1^1
";
        let ocp = match parse_problem_file(text).unwrap().problem {
            Problem::Ocp(p) => p,
            _ => unreachable!(),
        };
        let mesh = Mesh::unit(n_text.parse().unwrap()).unwrap();
        (ocp, mesh)
    }

    pub(crate) fn example1_tuple(ocp: &OcpProblem, mesh: &Mesh) -> StationaryTupleOcp {
        let x0 = dvector![0.0, 0.0];
        let u = vec![dvector![0.0]; mesh.n_intervals];
        let x = propagate_state(ocp, &x0, &u, mesh).unwrap();
        let traj = DiscreteTrajectory { x, u };
        let (p, _) = solve_adjoint(ocp, &traj, mesh).unwrap();
        let rec = multiplier_from_stationarity(ocp, &traj, &p, mesh, &Tolerances::default()).unwrap();
        StationaryTupleOcp { traj, p, lambda: rec.lambda }
    }

    fn lq_bound(nn: usize) -> (OcpProblem, Mesh, StationaryTupleOcp) {
        // min 0.5 x(0)^2 + x(1), xdot = u, -1 <= u <= 1; solution u = -1
        let text = "\
class: ocp
dims: 1, 1, 2
dynamics:
  1 * u1^1
endpoint:
  0.5 * q1^2 + 1 * q2^1
control_ineq:
  1 * u1^1 - 1
  -1 * u1^1 - 1
";
        let ocp = match parse_problem_file(text).unwrap().problem {
            Problem::Ocp(p) => p,
            _ => unreachable!(),
        };
        let mesh = Mesh::unit(nn).unwrap();
        let x0 = dvector![-1.0];
        let u = vec![dvector![-1.0]; nn];
        let x = propagate_state(&ocp, &x0, &u, &mesh).unwrap();
        let traj = DiscreteTrajectory { x, u };
        let (p, defect) = solve_adjoint(&ocp, &traj, &mesh).unwrap();
        assert!(defect < 1e-12);
        let rec = multiplier_from_stationarity(&ocp, &traj, &p, &mesh, &Tolerances::default()).unwrap();
        let tuple = StationaryTupleOcp { traj, p, lambda: rec.lambda };
        (ocp, mesh, tuple)
    }

    #[test]
    fn euler_first_order_on_exponential() {
        let ocp = scalar_integrator();
        let mesh = Mesh::unit(1000).unwrap();
        let u = vec![dvector![0.0]; 1000];
        let x = propagate_state(&ocp, &dvector![1.0], &u, &mesh).unwrap();
        let e = std::f64::consts::E;
        let rel = (x[1000][0] - e).abs() / e;
        assert!(rel < 2e-3, "rel = {rel}");
        assert!(rel > 1e-4, "suspiciously accurate for first order: {rel}");
    }

    #[test]
    fn example1_exact_adjoint_and_multipliers() {
        let (ocp, mesh) = example1("200");
        let tuple = example1_tuple(&ocp, &mesh);
        for p in &tuple.p.p {
            assert_relative_eq!(p[1], 1.0, epsilon = 1e-12);
            assert_relative_eq!(p[0], 0.0, epsilon = 1e-12);
        }
        for (i, l) in tuple.lambda.lambda.iter().enumerate() {
            assert_relative_eq!(l[0], mesh.node(i), epsilon = 1e-12);
        }
        let res = optimality_residuals_ocp(&ocp, &tuple, &mesh, &tols()).unwrap();
        assert!(res.norm < 1e-10, "norm = {}", res.norm);
    }

    #[test]
    fn example1_time_sets_and_cone() {
        let (ocp, mesh) = example1("40");
        let tuple = example1_tuple(&ocp, &mesh);
        let sets = time_sets(&ocp, &tuple, &mesh, 0.51, &tols()).unwrap();
        assert_eq!(sets.active[0].len(), 40);
        assert_eq!(sets.positive[0], (1..40).collect::<Vec<_>>());
        // band: 0 < t_i <= 0.51
        assert_eq!(sets.band, (1..=20).collect::<Vec<_>>());
        let cone = critical_cone_ocp(&ocp, &tuple, &mesh, ConeRep::MultiplierRows, &tols()).unwrap();
        let (trivial, measure) = cone.control_triviality(&mesh);
        assert!(!trivial);
        assert_relative_eq!(measure, mesh.h(), epsilon = 1e-14);
    }

    #[test]
    fn example1_form_is_negative_on_first_interval_ray() {
        let (ocp, mesh) = example1("40");
        let tuple = example1_tuple(&ocp, &mesh);
        let form = quadratic_form_ocp(&ocp, &tuple, &mesh).unwrap();
        // direction: x_0 = 0, u = e_0; Omega = -2 h, weak norm^2 = h
        let mut v = DVector::zeros(2 + 40);
        v[2] = 1.0;
        assert_relative_eq!(form.value(&v), -2.0 * mesh.h(), epsilon = 1e-12);
        assert_relative_eq!(form.weak_norm_sq(&v), mesh.h(), epsilon = 1e-14);
    }

    #[test]
    fn example1_coercivity_refuted() {
        let (ocp, mesh) = example1("200");
        let tuple = example1_tuple(&ocp, &mesh);
        let rep = certify_coercivity_ocp(&ocp, &tuple, &mesh, 0.1, &tols(), &opts()).unwrap();
        assert!(!rep.certificate.certified);
        let w = rep.counterexample.unwrap();
        let form = quadratic_form_ocp(&ocp, &tuple, &mesh).unwrap();
        assert!(form.value(&w) < 0.0);
        assert!(rep.sup_norm_ratio.unwrap() < 0.0);
    }

    #[test]
    fn lq_bound_certified_at_one() {
        let (ocp, mesh, tuple) = lq_bound(50);
        let res = optimality_residuals_ocp(&ocp, &tuple, &mesh, &tols()).unwrap();
        assert!(res.norm < 1e-12, "norm = {}", res.norm);
        let rep = certify_coercivity_ocp(&ocp, &tuple, &mesh, 0.5, &tols(), &opts()).unwrap();
        assert!(rep.certificate.certified);
        assert_relative_eq!(rep.certificate.c0, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn lq_bound_legendre_band_empty() {
        let (ocp, mesh, tuple) = lq_bound(20);
        let rep = check_legendre(&ocp, &tuple, &mesh, 0.5, &tols(), &opts()).unwrap();
        assert!(rep.satisfied);
        assert!(rep.c_l.is_infinite());
        assert_eq!(rep.band_measure, 0.0);
    }

    #[test]
    fn example1_legendre_and_growth_refuted() {
        let (ocp, mesh) = example1("40");
        let tuple = example1_tuple(&ocp, &mesh);
        let leg = check_legendre(&ocp, &tuple, &mesh, 0.5, &tols(), &opts()).unwrap();
        assert!(!leg.satisfied);
        assert_relative_eq!(leg.c_l, -2.0, epsilon = 1e-9);
        let gro =
            check_hamiltonian_growth(&ocp, &tuple, &mesh, 0.5, 0.1, 40, 7, &tols()).unwrap();
        assert!(!gro.satisfied, "c_h = {}", gro.c_h);
        assert!(gro.samples_used > 0);
    }

    #[test]
    fn cone_representations_agree_and_nest() {
        let (ocp, mesh) = example1("30");
        let tuple = example1_tuple(&ocp, &mesh);
        let cc = critical_cone_ocp(&ocp, &tuple, &mesh, ConeRep::HamiltonianRows, &tols())
            .unwrap()
            .to_polyhedral();
        let ccc = critical_cone_ocp(&ocp, &tuple, &mesh, ConeRep::MultiplierRows, &tols())
            .unwrap()
            .to_polyhedral();
        let kd1 = critical_cone_ocp(&ocp, &tuple, &mesh, ConeRep::Extended(0.2), &tols())
            .unwrap()
            .to_polyhedral();
        let kd2 = critical_cone_ocp(&ocp, &tuple, &mesh, ConeRep::Extended(0.6), &tols())
            .unwrap()
            .to_polyhedral();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let v = DVector::from_fn(cc.dim, |_, _| rng.gen_range(-1.0..1.0));
            assert_eq!(cc.contains(&v, 1e-9), ccc.contains(&v, 1e-9));
            if ccc.contains(&v, 1e-9) {
                assert!(kd1.contains(&v, 1e-9));
            }
            if kd1.contains(&v, 1e-9) {
                assert!(kd2.contains(&v, 1e-9));
            }
        }
    }
}
