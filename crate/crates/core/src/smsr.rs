//! Empirical study of the error bound for stationarity systems: seeded
//! disturbance sampling at halving magnitudes, active-set Newton solves of
//! the perturbed systems, and the distance-to-disturbance ratio statistics
//! that estimate the modulus and detect non-Lipschitz behavior.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::mayer::StationaryTupleMayer;
use crate::mesh::{norm_l1, norm_u_l2, norm_x_11, AdjointPath, DiscreteTrajectory, Mesh, MultiplierPath};
use crate::newton::{fd_jacobian, solve as newton_solve, NewtonOptions};
use crate::nlp::{active_sets, StationaryTupleNlp, Tolerances};
use crate::ocp::{critical_cone_ocp, ConeRep, StationaryTupleOcp};
use crate::par::{map_collect, ExecStrategy};
use crate::problem::{MayerProblem, NlpProblem, OcpProblem};
use crate::registry;

/// Magnitude schedule: halvings of `top`, largest first.
pub fn halving_magnitudes(top: f64, count: usize) -> Vec<f64> {
    (0..count).map(|i| top * 0.5f64.powi(i as i32)).collect()
}

#[derive(Debug, Clone)]
pub struct KappaOptions {
    pub magnitudes: Vec<f64>,
    pub samples: usize,
    pub seed: u64,
    /// Neighborhood radius factor: solutions farther than
    /// radius_factor * (1 + reference sup norm) are discarded.
    pub radius_factor: f64,
    pub strategy: ExecStrategy,
    pub newton: NewtonOptions,
}

impl Default for KappaOptions {
    fn default() -> Self {
        KappaOptions {
            magnitudes: halving_magnitudes(1e-2, 6),
            samples: 32,
            seed: 0,
            radius_factor: 0.1,
            strategy: ExecStrategy::default(),
            newton: NewtonOptions::default(),
        }
    }
}

/// Ratio statistics per magnitude, largest magnitude first. The plateau
/// flag distinguishes a Lipschitz bound (ratios level off) from a
/// degenerate one (ratios keep growing as the disturbance shrinks).
#[derive(Debug, Clone)]
pub struct KappaEstimate {
    pub magnitudes: Vec<f64>,
    pub max_ratio: Vec<f64>,
    pub mean_ratio: Vec<f64>,
    pub kappa: f64,
    pub plateau: bool,
    pub samples_per_magnitude: usize,
    pub failures: usize,
}

fn finish_estimate(
    magnitudes: Vec<f64>,
    per_mag: Vec<Vec<Option<f64>>>,
    samples: usize,
) -> KappaEstimate {
    let mut max_ratio = Vec::new();
    let mut mean_ratio = Vec::new();
    let mut failures = 0usize;
    let mut kappa = f64::NAN;
    for ratios in &per_mag {
        let ok: Vec<f64> = ratios.iter().flatten().cloned().collect();
        failures += ratios.len() - ok.len();
        let mx = ok.iter().cloned().fold(f64::NAN, f64::max);
        let mean = if ok.is_empty() { f64::NAN } else { ok.iter().sum::<f64>() / ok.len() as f64 };
        if !mx.is_nan() && (kappa.is_nan() || mx > kappa) {
            kappa = mx;
        }
        max_ratio.push(mx);
        mean_ratio.push(mean);
    }
    let plateau = match (max_ratio.first(), max_ratio.last()) {
        (Some(&a), Some(&b)) if a.is_finite() && b.is_finite() => b <= 1.25 * a,
        _ => false,
    };
    KappaEstimate {
        magnitudes,
        max_ratio,
        mean_ratio,
        kappa,
        plateau,
        samples_per_magnitude: samples,
        failures,
    }
}

fn sample_rng(seed: u64, mag_idx: usize, sample: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(
        seed ^ (mag_idx as u64).wrapping_mul(0x9e3779b97f4a7c15)
            ^ (sample as u64).wrapping_mul(0xd1342543de82ef95),
    )
}

/// Scale block magnitudes so the composite norm is exactly `mag`. Blocks
/// get independent random weights so extreme directions are explored.
fn block_weights(rng: &mut ChaCha8Rng, count: usize) -> Vec<f64> {
    let mut w: Vec<f64> = (0..count).map(|_| rng.gen_range(0.05..1.0)).collect();
    let s: f64 = w.iter().sum();
    for v in &mut w {
        *v /= s;
    }
    w
}

fn random_unit(rng: &mut ChaCha8Rng, len: usize) -> DVector<f64> {
    if len == 0 {
        return DVector::zeros(0);
    }
    loop {
        let v = DVector::from_fn(len, |_, _| rng.gen_range(-1.0..1.0));
        let n = v.norm();
        if n > 1e-6 {
            return v / n;
        }
    }
}

// ---------------------------------------------------------------------------
// nonlinear programs

/// Disturbance of the KKT system: stationarity shift zeta, equality shift
/// eta, inequality shift xi.
#[derive(Debug, Clone)]
pub struct PerturbationNlp {
    pub zeta: DVector<f64>,
    pub eta: DVector<f64>,
    pub xi: DVector<f64>,
}

pub fn perturbation_norm_nlp(p: &PerturbationNlp) -> f64 {
    p.xi.norm() + p.eta.norm() + p.zeta.norm()
}

pub fn sample_perturbation_nlp(
    problem: &NlpProblem,
    rng: &mut ChaCha8Rng,
    magnitude: f64,
) -> PerturbationNlp {
    let w = block_weights(rng, 3);
    let zeta = random_unit(rng, problem.n) * w[0];
    let eta = random_unit(rng, problem.num_eq()) * w[1];
    let xi = random_unit(rng, problem.num_ineq()) * w[2];
    let mut p = PerturbationNlp { zeta, eta, xi };
    let n = perturbation_norm_nlp(&p);
    let s = magnitude / n;
    p.zeta *= s;
    p.eta *= s;
    p.xi *= s;
    p
}

/// Solve the disturbed KKT system near the reference point by active-set
/// refinement: indices in the working set hold f_i(x) = xi_i with free
/// multiplier, the rest have lambda_i = 0. Starting from the reference
/// active set, indices with negative multiplier are released and violated
/// ones added until the complementarity checks pass.
pub fn solve_perturbed_kkt(
    problem: &NlpProblem,
    tuple: &StationaryTupleNlp,
    pert: &PerturbationNlp,
    tols: &Tolerances,
    nopts: &NewtonOptions,
) -> Result<Option<StationaryTupleNlp>> {
    let sets = active_sets(problem, tuple, tols)?;
    let mut working: Vec<usize> = sets.active.clone();
    let mut tried: Vec<Vec<usize>> = Vec::new();
    for _ in 0..12 {
        if tried.contains(&working) {
            return Ok(None);
        }
        tried.push(working.clone());
        match solve_kkt_with_working_set(problem, tuple, pert, &working, nopts)? {
            Some(candidate) => {
                let f = problem.ineq_values(&candidate.x)?;
                let scale = 1.0 + f.amax();
                let mut next = working.clone();
                let mut ok = true;
                for &i in &working {
                    if candidate.lambda[i] < -1e-9 {
                        next.retain(|&j| j != i);
                        ok = false;
                    }
                }
                for i in 0..problem.num_ineq() {
                    if !working.contains(&i) && f[i] > pert.xi[i] + 1e-9 * scale {
                        next.push(i);
                        ok = false;
                    }
                }
                if ok {
                    let mut lam = candidate.lambda.clone();
                    for v in lam.iter_mut() {
                        *v = v.max(0.0);
                    }
                    return Ok(Some(StationaryTupleNlp { lambda: lam, ..candidate }));
                }
                next.sort_unstable();
                next.dedup();
                working = next;
            }
            None => {
                // release a weakly active index and retry
                match working.iter().position(|i| sets.zero_mult.contains(i)) {
                    Some(pos) => {
                        working.remove(pos);
                    }
                    None => return Ok(None),
                }
            }
        }
    }
    Ok(None)
}

fn solve_kkt_with_working_set(
    problem: &NlpProblem,
    tuple: &StationaryTupleNlp,
    pert: &PerturbationNlp,
    working: &[usize],
    nopts: &NewtonOptions,
) -> Result<Option<StationaryTupleNlp>> {
    let n = problem.n;
    let s = problem.num_eq();
    let a = working.len();
    let dim = n + a + s;
    let unpack = |z: &DVector<f64>| {
        let x = z.rows(0, n).into_owned();
        let la = z.rows(n, a).into_owned();
        let y = z.rows(n + a, s).into_owned();
        (x, la, y)
    };
    let residual = |z: &DVector<f64>| -> Option<DVector<f64>> {
        let (x, la, y) = unpack(z);
        let mut r = DVector::zeros(dim);
        let mut grad = problem.objective.eval(&x).ok()?.gradient;
        for (idx, &i) in working.iter().enumerate() {
            grad += problem.inequalities[i].eval(&x).ok()?.gradient * la[idx];
        }
        for (j, g) in problem.equalities.iter().enumerate() {
            grad += g.eval(&x).ok()?.gradient * y[j];
        }
        r.rows_mut(0, n).copy_from(&(grad - &pert.zeta));
        for (idx, &i) in working.iter().enumerate() {
            r[n + idx] = problem.inequalities[i].value(&x).ok()? - pert.xi[i];
        }
        for (j, g) in problem.equalities.iter().enumerate() {
            r[n + a + j] = g.value(&x).ok()? - pert.eta[j];
        }
        Some(r)
    };
    let jac = |z: &DVector<f64>| -> Option<DMatrix<f64>> {
        let (x, la, y) = unpack(z);
        let mut j = DMatrix::zeros(dim, dim);
        let mut hess = problem.objective.eval(&x).ok()?.hessian;
        for (idx, &i) in working.iter().enumerate() {
            let e = problem.inequalities[i].eval(&x).ok()?;
            hess += &e.hessian * la[idx];
            j.view_mut((0, n + idx), (n, 1)).copy_from(&e.gradient);
            j.view_mut((n + idx, 0), (1, n)).copy_from(&e.gradient.transpose());
        }
        for (jj, g) in problem.equalities.iter().enumerate() {
            let e = g.eval(&x).ok()?;
            hess += &e.hessian * y[jj];
            j.view_mut((0, n + a + jj), (n, 1)).copy_from(&e.gradient);
            j.view_mut((n + a + jj, 0), (1, n)).copy_from(&e.gradient.transpose());
        }
        j.view_mut((0, 0), (n, n)).copy_from(&hess);
        Some(j)
    };
    let mut z0 = DVector::zeros(dim);
    z0.rows_mut(0, n).copy_from(&tuple.x);
    for (idx, &i) in working.iter().enumerate() {
        z0[n + idx] = tuple.lambda[i];
    }
    z0.rows_mut(n + a, s).copy_from(&tuple.ystar);
    Ok(newton_solve(residual, jac, &z0, nopts).map(|z| {
        let (x, la, y) = unpack(&z);
        let mut lambda = DVector::zeros(problem.num_ineq());
        for (idx, &i) in working.iter().enumerate() {
            lambda[i] = la[idx];
        }
        StationaryTupleNlp { x, lambda, ystar: y }
    }))
}

/// |dx| + |dlambda| + |dy|.
pub fn nlp_distance(a: &StationaryTupleNlp, b: &StationaryTupleNlp) -> f64 {
    (&a.x - &b.x).norm() + (&a.lambda - &b.lambda).norm() + (&a.ystar - &b.ystar).norm()
}

pub fn estimate_kappa_nlp(
    problem: &NlpProblem,
    tuple: &StationaryTupleNlp,
    tols: &Tolerances,
    opts: &KappaOptions,
) -> Result<KappaEstimate> {
    let radius = opts.radius_factor * (1.0 + tuple.x.amax());
    let per_mag: Vec<Vec<Option<f64>>> = opts
        .magnitudes
        .iter()
        .enumerate()
        .map(|(mi, &mag)| {
            map_collect(opts.samples, opts.strategy, |s| {
                let mut rng = sample_rng(opts.seed, mi, s);
                let pert = sample_perturbation_nlp(problem, &mut rng, mag);
                let sol = solve_perturbed_kkt(problem, tuple, &pert, tols, &opts.newton)
                    .ok()
                    .flatten()?;
                if (&sol.x - &tuple.x).amax() > radius {
                    return None;
                }
                Some(nlp_distance(&sol, tuple) / perturbation_norm_nlp(&pert))
            })
        })
        .collect();
    Ok(finish_estimate(opts.magnitudes.clone(), per_mag, opts.samples))
}

// ---------------------------------------------------------------------------
// control problems

/// Disturbance of the discrete optimality system of a control problem.
#[derive(Debug, Clone)]
pub struct PerturbationOcp {
    pub nu: DVector<f64>,
    pub pi: Vec<DVector<f64>>,
    pub rho: Vec<DVector<f64>>,
    pub xi: Vec<DVector<f64>>,
    pub eta: Vec<DVector<f64>>,
}

pub fn perturbation_norm_ocp(p: &PerturbationOcp, h: f64) -> f64 {
    p.nu.norm() + norm_l1(&p.pi, h) + norm_u_l2(&p.rho, h) + norm_l1(&p.xi, h)
        + norm_u_l2(&p.eta, h)
}

pub fn sample_perturbation_ocp(
    ocp: &OcpProblem,
    mesh: &Mesh,
    rng: &mut ChaCha8Rng,
    magnitude: f64,
) -> PerturbationOcp {
    let nn = mesh.n_intervals;
    let h = mesh.h();
    let w = block_weights(rng, 5);
    let field = |rng: &mut ChaCha8Rng, len: usize| -> Vec<DVector<f64>> {
        (0..nn).map(|_| DVector::from_fn(len, |_, _| rng.gen_range(-1.0..1.0))).collect()
    };
    let mut p = PerturbationOcp {
        nu: random_unit(rng, 2 * ocp.n) * w[0],
        pi: field(rng, ocp.n),
        rho: field(rng, ocp.m),
        xi: field(rng, ocp.n),
        eta: field(rng, ocp.k),
    };
    let scale_block = |block: &mut Vec<DVector<f64>>, norm: f64, weight: f64| {
        if norm > 1e-12 {
            for v in block.iter_mut() {
                *v *= weight / norm;
            }
        }
    };
    let (n_pi, n_rho) = (norm_l1(&p.pi, h), norm_u_l2(&p.rho, h));
    let (n_xi, n_eta) = (norm_l1(&p.xi, h), norm_u_l2(&p.eta, h));
    scale_block(&mut p.pi, n_pi, w[1]);
    scale_block(&mut p.rho, n_rho, w[2]);
    scale_block(&mut p.xi, n_xi, w[3]);
    scale_block(&mut p.eta, n_eta, w[4]);
    let n0 = perturbation_norm_ocp(&p, h);
    let s = magnitude / n0;
    p.nu *= s;
    for block in [&mut p.pi, &mut p.rho, &mut p.xi, &mut p.eta] {
        for v in block.iter_mut() {
            *v *= s;
        }
    }
    p
}

/// Unknowns of the perturbed control system: initial state, controls, and
/// the multipliers of the working-set constraints. States and adjoints are
/// eliminated by the forward and backward recursions.
fn ocp_residual(
    ocp: &OcpProblem,
    mesh: &Mesh,
    pert: &PerturbationOcp,
    working: &[(usize, usize)],
    z: &DVector<f64>,
) -> Option<DVector<f64>> {
    let (n, m) = (ocp.n, ocp.m);
    let nn = mesh.n_intervals;
    let h = mesh.h();
    let x0 = z.rows(0, n).into_owned();
    let u: Vec<DVector<f64>> =
        (0..nn).map(|i| z.rows(n + i * m, m).into_owned()).collect();
    let mut lambda = vec![DVector::zeros(ocp.k); nn];
    for (idx, &(i, j)) in working.iter().enumerate() {
        lambda[i][j] = z[n + nn * m + idx];
    }
    // forward sweep with dynamics disturbance
    let mut x = vec![x0; nn + 1];
    for i in 0..nn {
        let mut arg = DVector::zeros(n + m);
        arg.rows_mut(0, n).copy_from(&x[i]);
        arg.rows_mut(n, m).copy_from(&u[i]);
        let f = ocp.dynamics.value(&arg).ok()?;
        x[i + 1] = &x[i] + (f - &pert.xi[i]) * h;
        if x[i + 1].iter().any(|v| !v.is_finite()) {
            return None;
        }
    }
    let mut q = DVector::zeros(2 * n);
    q.rows_mut(0, n).copy_from(&x[0]);
    q.rows_mut(n, n).copy_from(&x[nn]);
    let fq = ocp.endpoint_cost.eval(&q).ok()?.gradient;
    // backward sweep with terminal disturbance
    let mut p_next: DVector<f64> = fq.rows(n, n) + pert.nu.rows(n, n);
    let mut r = DVector::zeros(n + nn * m + working.len());
    for i in (0..nn).rev() {
        let mut arg = DVector::zeros(n + m);
        arg.rows_mut(0, n).copy_from(&x[i]);
        arg.rows_mut(n, m).copy_from(&u[i]);
        let jac = ocp.dynamics.jacobian(&arg).ok()?;
        let gj = ocp.control_constraints.jacobian(&u[i]).ok()?;
        let stat: DVector<f64> = jac.columns(n, m).transpose() * &p_next
            + gj.transpose() * &lambda[i]
            - &pert.rho[i];
        r.rows_mut(n + i * m, m).copy_from(&stat);
        p_next = &p_next + jac.columns(0, n).transpose() * &p_next * h - &pert.pi[i] * h;
    }
    r.rows_mut(0, n).copy_from(&(-&p_next - fq.rows(0, n) - pert.nu.rows(0, n)));
    for (idx, &(i, j)) in working.iter().enumerate() {
        let g = ocp.control_constraints.value(&u[i]).ok()?;
        r[n + nn * m + idx] = g[j] - pert.eta[i][j];
    }
    Some(r)
}

/// Analytic Jacobian of `ocp_residual`: forward sensitivity propagation of
/// the state followed by a backward pass for the adjoint sensitivities.
/// One assembly replaces dim+1 finite-difference residual sweeps.
fn ocp_jacobian(
    ocp: &OcpProblem,
    mesh: &Mesh,
    pert: &PerturbationOcp,
    working: &[(usize, usize)],
    z: &DVector<f64>,
) -> Option<DMatrix<f64>> {
    let (n, m) = (ocp.n, ocp.m);
    let nn = mesh.n_intervals;
    let h = mesh.h();
    let dim = n + nn * m + working.len();
    let x0 = z.rows(0, n).into_owned();
    let u: Vec<DVector<f64>> = (0..nn).map(|i| z.rows(n + i * m, m).into_owned()).collect();
    let mut lambda = vec![DVector::zeros(ocp.k); nn];
    for (idx, &(i, j)) in working.iter().enumerate() {
        lambda[i][j] = z[n + nn * m + idx];
    }
    // forward sweep: states, dynamics derivatives, and X_i = dx_i/dz
    let mut x = vec![x0; nn + 1];
    let mut fevals = Vec::with_capacity(nn);
    let mut xs: Vec<DMatrix<f64>> = Vec::with_capacity(nn + 1);
    let mut xcur = DMatrix::zeros(n, dim);
    for d in 0..n {
        xcur[(d, d)] = 1.0;
    }
    xs.push(xcur.clone());
    for i in 0..nn {
        let mut arg = DVector::zeros(n + m);
        arg.rows_mut(0, n).copy_from(&x[i]);
        arg.rows_mut(n, m).copy_from(&u[i]);
        let ev = ocp.dynamics.evals(&arg).ok()?;
        let f = DVector::from_fn(n, |j, _| ev[j].value);
        x[i + 1] = &x[i] + (f - &pert.xi[i]) * h;
        if x[i + 1].iter().any(|v| !v.is_finite()) {
            return None;
        }
        let mut fx = DMatrix::zeros(n, n);
        let mut fu = DMatrix::zeros(n, m);
        for (row, e) in ev.iter().enumerate() {
            fx.row_mut(row).copy_from(&e.gradient.rows(0, n).transpose());
            fu.row_mut(row).copy_from(&e.gradient.rows(n, m).transpose());
        }
        let mut xnext = &xcur + &fx * &xcur * h;
        for r in 0..n {
            for c in 0..m {
                xnext[(r, n + i * m + c)] += h * fu[(r, c)];
            }
        }
        xs.push(xnext.clone());
        xcur = xnext;
        fevals.push((ev, fx, fu));
    }
    let mut q = DVector::zeros(2 * n);
    q.rows_mut(0, n).copy_from(&x[0]);
    q.rows_mut(n, n).copy_from(&x[nn]);
    let eq = ocp.endpoint_cost.eval(&q).ok()?;
    let hq = eq.hessian;
    // backward sweep: adjoint values and P_i = dp_i/dz
    let mut p_next: DVector<f64> = eq.gradient.rows(n, n) + pert.nu.rows(n, n);
    let mut pmat: DMatrix<f64> = hq.view((n, 0), (n, n)) * &xs[0] + hq.view((n, n), (n, n)) * &xs[nn];
    let mut jm = DMatrix::zeros(dim, dim);
    for i in (0..nn).rev() {
        let (ev, fx, fu) = &fevals[i];
        let gev = ocp.control_constraints.evals(&u[i]).ok()?;
        // dynamics curvature weighted by the current adjoint value
        let mut hp = DMatrix::zeros(n + m, n + m);
        for (j, e) in ev.iter().enumerate() {
            hp += &e.hessian * p_next[j];
        }
        // stationarity rows: f_u^T p_{i+1} + g_u^T lambda_i - rho_i
        let mut row: DMatrix<f64> = fu.transpose() * &pmat;
        let hpu = hp.rows(n, m).into_owned();
        row += hpu.columns(0, n) * &xs[i];
        for r in 0..m {
            for c in 0..m {
                row[(r, n + i * m + c)] += hpu[(r, n + c)];
            }
        }
        for (j, e) in gev.iter().enumerate() {
            if lambda[i][j] != 0.0 {
                for r in 0..m {
                    for c in 0..m {
                        row[(r, n + i * m + c)] += lambda[i][j] * e.hessian[(r, c)];
                    }
                }
            }
        }
        for (idx, &(i2, j)) in working.iter().enumerate() {
            if i2 == i {
                for r in 0..m {
                    row[(r, n + nn * m + idx)] += gev[j].gradient[r];
                }
            }
        }
        jm.view_mut((n + i * m, 0), (m, dim)).copy_from(&row);
        // propagate the adjoint value and sensitivity through the interval
        let hpx = hp.rows(0, n).into_owned();
        let mut pnew = &pmat + fx.transpose() * &pmat * h;
        pnew += hpx.columns(0, n) * &xs[i] * h;
        for r in 0..n {
            for c in 0..m {
                pnew[(r, n + i * m + c)] += h * hpx[(r, n + c)];
            }
        }
        p_next = &p_next + fx.transpose() * &p_next * h - &pert.pi[i] * h;
        pmat = pnew;
    }
    let top: DMatrix<f64> =
        -&pmat - hq.view((0, 0), (n, n)) * &xs[0] - hq.view((0, n), (n, n)) * &xs[nn];
    jm.view_mut((0, 0), (n, dim)).copy_from(&top);
    // working rows depend on the interval's control block only
    for (idx, &(i, j)) in working.iter().enumerate() {
        let gj = ocp.control_constraints.jacobian(&u[i]).ok()?;
        for c in 0..m {
            jm[(n + nn * m + idx, n + i * m + c)] = gj[(j, c)];
        }
    }
    Some(jm)
}

pub fn solve_perturbed_ocp(
    ocp: &OcpProblem,
    tuple: &StationaryTupleOcp,
    mesh: &Mesh,
    pert: &PerturbationOcp,
    tols: &Tolerances,
    nopts: &NewtonOptions,
) -> Result<Option<StationaryTupleOcp>> {
    let (n, m) = (ocp.n, ocp.m);
    let nn = mesh.n_intervals;
    let mut working: Vec<(usize, usize)> = Vec::new();
    for i in 0..nn {
        let g = ocp.control_constraints.value(&tuple.traj.u[i])?;
        let t_act = tols.act_scaled(&g);
        for j in 0..ocp.k {
            if g[j] >= -t_act {
                working.push((i, j));
            }
        }
    }
    let mut tried = 0usize;
    loop {
        tried += 1;
        if tried > 12 {
            return Ok(None);
        }
        let mut z0 = DVector::zeros(n + nn * m + working.len());
        z0.rows_mut(0, n).copy_from(&tuple.traj.x[0]);
        for i in 0..nn {
            z0.rows_mut(n + i * m, m).copy_from(&tuple.traj.u[i]);
        }
        for (idx, &(i, j)) in working.iter().enumerate() {
            z0[n + nn * m + idx] = tuple.lambda.lambda[i][j];
        }
        let residual = |z: &DVector<f64>| ocp_residual(ocp, mesh, pert, &working, z);
        let jac = |z: &DVector<f64>| ocp_jacobian(ocp, mesh, pert, &working, z);
        let z = match newton_solve(&residual, &jac, &z0, nopts) {
            Some(z) => z,
            None => return Ok(None),
        };
        // rebuild the tuple and check complementarity of the working set
        let x0 = z.rows(0, n).into_owned();
        let u: Vec<DVector<f64>> = (0..nn).map(|i| z.rows(n + i * m, m).into_owned()).collect();
        let mut lambda = vec![DVector::zeros(ocp.k); nn];
        for (idx, &(i, j)) in working.iter().enumerate() {
            lambda[i][j] = z[n + nn * m + idx];
        }
        let mut x = vec![x0; nn + 1];
        for i in 0..nn {
            let mut arg = DVector::zeros(n + m);
            arg.rows_mut(0, n).copy_from(&x[i]);
            arg.rows_mut(n, m).copy_from(&u[i]);
            let f = ocp.dynamics.value(&arg)?;
            x[i + 1] = &x[i] + (f - &pert.xi[i]) * mesh.h();
        }
        let mut next = working.clone();
        let mut ok = true;
        for &(i, j) in &working {
            if lambda[i][j] < -1e-9 {
                next.retain(|&p| p != (i, j));
                ok = false;
            }
        }
        for i in 0..nn {
            let g = ocp.control_constraints.value(&u[i])?;
            let scale = 1.0 + g.amax();
            for j in 0..ocp.k {
                if !working.contains(&(i, j)) && g[j] > pert.eta[i][j] + 1e-9 * scale {
                    next.push((i, j));
                    ok = false;
                }
            }
        }
        if ok {
            for l in lambda.iter_mut() {
                for v in l.iter_mut() {
                    *v = v.max(0.0);
                }
            }
            // adjoint consistent with the perturbed backward recursion
            let traj = DiscreteTrajectory { x, u };
            let mut q = DVector::zeros(2 * n);
            q.rows_mut(0, n).copy_from(&traj.x[0]);
            q.rows_mut(n, n).copy_from(&traj.x[nn]);
            let fq = ocp.endpoint_cost.eval(&q)?.gradient;
            let mut p = vec![DVector::zeros(n); nn + 1];
            p[nn] = fq.rows(n, n) + pert.nu.rows(n, n);
            for i in (0..nn).rev() {
                let mut arg = DVector::zeros(n + m);
                arg.rows_mut(0, n).copy_from(&traj.x[i]);
                arg.rows_mut(n, m).copy_from(&traj.u[i]);
                let jac = ocp.dynamics.jacobian(&arg)?;
                p[i] = &p[i + 1] + jac.columns(0, n).transpose() * &p[i + 1] * mesh.h()
                    - &pert.pi[i] * mesh.h();
            }
            return Ok(Some(StationaryTupleOcp {
                traj,
                p: AdjointPath { p },
                lambda: MultiplierPath { lambda },
            }));
        }
        next.sort_unstable();
        next.dedup();
        if next == working {
            return Ok(None);
        }
        working = next;
    }
}

/// Per-block distances of the error-bound estimates.
#[derive(Debug, Clone, Copy)]
pub struct OcpDistances {
    pub dx_11: f64,
    pub du_2: f64,
    pub dp_11: f64,
    pub dlambda_2: f64,
}

impl OcpDistances {
    pub fn max(&self) -> f64 {
        self.dx_11.max(self.du_2).max(self.dp_11).max(self.dlambda_2)
    }
}

pub fn ocp_distances(a: &StationaryTupleOcp, b: &StationaryTupleOcp, h: f64) -> OcpDistances {
    let dx: Vec<DVector<f64>> =
        a.traj.x.iter().zip(&b.traj.x).map(|(p, q)| p - q).collect();
    let du: Vec<DVector<f64>> =
        a.traj.u.iter().zip(&b.traj.u).map(|(p, q)| p - q).collect();
    let dp: Vec<DVector<f64>> = a.p.p.iter().zip(&b.p.p).map(|(p, q)| p - q).collect();
    let dl: Vec<DVector<f64>> =
        a.lambda.lambda.iter().zip(&b.lambda.lambda).map(|(p, q)| p - q).collect();
    OcpDistances {
        dx_11: norm_x_11(&dx),
        du_2: norm_u_l2(&du, h),
        dp_11: norm_x_11(&dp),
        dlambda_2: norm_u_l2(&dl, h),
    }
}

pub fn estimate_kappa_ocp(
    ocp: &OcpProblem,
    tuple: &StationaryTupleOcp,
    mesh: &Mesh,
    tols: &Tolerances,
    opts: &KappaOptions,
) -> Result<KappaEstimate> {
    let h = mesh.h();
    let sup = tuple
        .traj
        .x
        .iter()
        .map(|v| v.amax())
        .chain(tuple.traj.u.iter().map(|v| v.amax()))
        .fold(0.0f64, f64::max);
    let radius = opts.radius_factor * (1.0 + sup);
    let per_mag: Vec<Vec<Option<f64>>> = opts
        .magnitudes
        .iter()
        .enumerate()
        .map(|(mi, &mag)| {
            map_collect(opts.samples, opts.strategy, |s| {
                let mut rng = sample_rng(opts.seed, mi, s);
                let pert = sample_perturbation_ocp(ocp, mesh, &mut rng, mag);
                let sol = solve_perturbed_ocp(ocp, tuple, mesh, &pert, tols, &opts.newton)
                    .ok()
                    .flatten()?;
                let far = sol
                    .traj
                    .x
                    .iter()
                    .zip(&tuple.traj.x)
                    .map(|(a, b)| (a - b).amax())
                    .chain(
                        sol.traj.u.iter().zip(&tuple.traj.u).map(|(a, b)| (a - b).amax()),
                    )
                    .fold(0.0f64, f64::max);
                if far > radius {
                    return None;
                }
                Some(ocp_distances(&sol, tuple, h).max() / perturbation_norm_ocp(&pert, h))
            })
        })
        .collect();
    Ok(finish_estimate(opts.magnitudes.clone(), per_mag, opts.samples))
}

// ---------------------------------------------------------------------------
// Mayer problems

/// Disturbance of the Mayer optimality system.
#[derive(Debug, Clone)]
pub struct PerturbationMayer {
    pub pi: Vec<DVector<f64>>,
    pub rho: Vec<DVector<f64>>,
    pub nu: DVector<f64>,
    pub eta: Vec<DVector<f64>>,
    pub mu: DVector<f64>,
    pub xi: DVector<f64>,
}

pub fn perturbation_norm_mayer(p: &PerturbationMayer, h: f64) -> f64 {
    norm_l1(&p.pi, h) + norm_u_l2(&p.rho, h) + p.nu.norm() + norm_l1(&p.eta, h) + p.mu.norm()
        + p.xi.norm()
}

pub fn sample_perturbation_mayer(
    mayer: &MayerProblem,
    mesh: &Mesh,
    rng: &mut ChaCha8Rng,
    magnitude: f64,
) -> PerturbationMayer {
    let nn = mesh.n_intervals;
    let h = mesh.h();
    let w = block_weights(rng, 6);
    let field = |rng: &mut ChaCha8Rng, len: usize| -> Vec<DVector<f64>> {
        (0..nn).map(|_| DVector::from_fn(len, |_, _| rng.gen_range(-1.0..1.0))).collect()
    };
    let mut p = PerturbationMayer {
        pi: field(rng, mayer.n),
        rho: field(rng, mayer.m),
        nu: random_unit(rng, 2 * mayer.n) * w[2],
        eta: field(rng, mayer.n),
        mu: random_unit(rng, mayer.endpoint_equalities.len()) * w[4],
        xi: random_unit(rng, mayer.endpoint_inequalities.len()) * w[5],
    };
    let scale_block = |block: &mut Vec<DVector<f64>>, norm: f64, weight: f64| {
        if norm > 1e-12 {
            for v in block.iter_mut() {
                *v *= weight / norm;
            }
        }
    };
    let (n_pi, n_rho, n_eta) = (norm_l1(&p.pi, h), norm_u_l2(&p.rho, h), norm_l1(&p.eta, h));
    scale_block(&mut p.pi, n_pi, w[0]);
    scale_block(&mut p.rho, n_rho, w[1]);
    scale_block(&mut p.eta, n_eta, w[3]);
    let n0 = perturbation_norm_mayer(&p, h);
    let s = magnitude / n0;
    p.nu *= s;
    p.mu *= s;
    p.xi *= s;
    for block in [&mut p.pi, &mut p.rho, &mut p.eta] {
        for v in block.iter_mut() {
            *v *= s;
        }
    }
    p
}

fn mayer_residual(
    mayer: &MayerProblem,
    mesh: &Mesh,
    pert: &PerturbationMayer,
    working: &[usize],
    z: &DVector<f64>,
) -> Option<DVector<f64>> {
    let (n, m) = (mayer.n, mayer.m);
    let nn = mesh.n_intervals;
    let h = mesh.h();
    let s = mayer.endpoint_equalities.len();
    let x0 = z.rows(0, n).into_owned();
    let u: Vec<DVector<f64>> = (0..nn).map(|i| z.rows(n + i * m, m).into_owned()).collect();
    let beta = z.rows(n + nn * m, s).into_owned();
    let mut alpha = DVector::zeros(mayer.endpoint_inequalities.len());
    for (idx, &i) in working.iter().enumerate() {
        alpha[i] = z[n + nn * m + s + idx];
    }
    let mut x = vec![x0; nn + 1];
    for i in 0..nn {
        let mut arg = DVector::zeros(n + m);
        arg.rows_mut(0, n).copy_from(&x[i]);
        arg.rows_mut(n, m).copy_from(&u[i]);
        let f = mayer.dynamics.value(&arg).ok()?;
        x[i + 1] = &x[i] + (f - &pert.eta[i]) * h;
        if x[i + 1].iter().any(|v| !v.is_finite()) {
            return None;
        }
    }
    let mut q = DVector::zeros(2 * n);
    q.rows_mut(0, n).copy_from(&x[0]);
    q.rows_mut(n, n).copy_from(&x[nn]);
    let mut lq = mayer.endpoint_cost.eval(&q).ok()?.gradient;
    for (i, phi) in mayer.endpoint_inequalities.iter().enumerate() {
        if alpha[i] != 0.0 {
            lq += phi.eval(&q).ok()?.gradient * alpha[i];
        }
    }
    for (j, psi) in mayer.endpoint_equalities.iter().enumerate() {
        if beta[j] != 0.0 {
            lq += psi.eval(&q).ok()?.gradient * beta[j];
        }
    }
    // (-p_0 - l_q_x0, p_N - l_q_x1) = nu fixes both ends of the adjoint sweep
    let mut p_next: DVector<f64> = lq.rows(n, n) + pert.nu.rows(n, n);
    let mut r = DVector::zeros(n + nn * m + s + working.len());
    for i in (0..nn).rev() {
        let mut arg = DVector::zeros(n + m);
        arg.rows_mut(0, n).copy_from(&x[i]);
        arg.rows_mut(n, m).copy_from(&u[i]);
        let jac = mayer.dynamics.jacobian(&arg).ok()?;
        let stat: DVector<f64> = jac.columns(n, m).transpose() * &p_next - &pert.rho[i];
        r.rows_mut(n + i * m, m).copy_from(&stat);
        p_next = &p_next + jac.columns(0, n).transpose() * &p_next * h - &pert.pi[i] * h;
    }
    r.rows_mut(0, n).copy_from(&(&p_next + lq.rows(0, n) + pert.nu.rows(0, n)));
    for (j, psi) in mayer.endpoint_equalities.iter().enumerate() {
        r[n + nn * m + j] = psi.value(&q).ok()? - pert.mu[j];
    }
    for (idx, &i) in working.iter().enumerate() {
        r[n + nn * m + s + idx] = mayer.endpoint_inequalities[i].value(&q).ok()? - pert.xi[i];
    }
    Some(r)
}

pub fn solve_perturbed_mayer(
    mayer: &MayerProblem,
    tuple: &StationaryTupleMayer,
    mesh: &Mesh,
    pert: &PerturbationMayer,
    tols: &Tolerances,
    nopts: &NewtonOptions,
) -> Result<Option<StationaryTupleMayer>> {
    let (n, m) = (mayer.n, mayer.m);
    let nn = mesh.n_intervals;
    let s = mayer.endpoint_equalities.len();
    let q = tuple.traj.endpoint_pair();
    let (active, _) = crate::mayer::endpoint_active_sets(mayer, &q, &tuple.alpha, tols)?;
    let mut working = active;
    for _ in 0..8 {
        let mut z0 = DVector::zeros(n + nn * m + s + working.len());
        z0.rows_mut(0, n).copy_from(&tuple.traj.x[0]);
        for i in 0..nn {
            z0.rows_mut(n + i * m, m).copy_from(&tuple.traj.u[i]);
        }
        z0.rows_mut(n + nn * m, s).copy_from(&tuple.beta);
        for (idx, &i) in working.iter().enumerate() {
            z0[n + nn * m + s + idx] = tuple.alpha[i];
        }
        let residual = |z: &DVector<f64>| mayer_residual(mayer, mesh, pert, &working, z);
        let jac = |z: &DVector<f64>| fd_jacobian(&residual, z, 1e-7);
        let z = match newton_solve(&residual, &jac, &z0, nopts) {
            Some(z) => z,
            None => return Ok(None),
        };
        let x0 = z.rows(0, n).into_owned();
        let u: Vec<DVector<f64>> = (0..nn).map(|i| z.rows(n + i * m, m).into_owned()).collect();
        let beta = z.rows(n + nn * m, s).into_owned();
        let mut alpha = DVector::zeros(mayer.endpoint_inequalities.len());
        for (idx, &i) in working.iter().enumerate() {
            alpha[i] = z[n + nn * m + s + idx];
        }
        let mut x = vec![x0; nn + 1];
        for i in 0..nn {
            let mut arg = DVector::zeros(n + m);
            arg.rows_mut(0, n).copy_from(&x[i]);
            arg.rows_mut(n, m).copy_from(&u[i]);
            x[i + 1] = &x[i] + (mayer.dynamics.value(&arg)? - &pert.eta[i]) * mesh.h();
        }
        let mut qn = DVector::zeros(2 * n);
        qn.rows_mut(0, n).copy_from(&x[0]);
        qn.rows_mut(n, n).copy_from(&x[nn]);
        let mut next = working.clone();
        let mut ok = true;
        for &i in &working {
            if alpha[i] < -1e-9 {
                next.retain(|&j| j != i);
                ok = false;
            }
        }
        for (i, phi) in mayer.endpoint_inequalities.iter().enumerate() {
            let v = phi.value(&qn)?;
            if !working.contains(&i) && v > pert.xi[i] + 1e-9 * (1.0 + v.abs()) {
                next.push(i);
                ok = false;
            }
        }
        if ok {
            for v in alpha.iter_mut() {
                *v = v.max(0.0);
            }
            let traj = DiscreteTrajectory { x, u };
            // adjoint consistent with the perturbed backward recursion
            let mut lq = mayer.endpoint_cost.eval(&qn)?.gradient;
            for (i, phi) in mayer.endpoint_inequalities.iter().enumerate() {
                lq += phi.eval(&qn)?.gradient * alpha[i];
            }
            for (j, psi) in mayer.endpoint_equalities.iter().enumerate() {
                lq += psi.eval(&qn)?.gradient * beta[j];
            }
            let mut p = vec![DVector::zeros(n); nn + 1];
            p[nn] = lq.rows(n, n) + pert.nu.rows(n, n);
            for i in (0..nn).rev() {
                let mut arg = DVector::zeros(n + m);
                arg.rows_mut(0, n).copy_from(&traj.x[i]);
                arg.rows_mut(n, m).copy_from(&traj.u[i]);
                let jac = mayer.dynamics.jacobian(&arg)?;
                p[i] = &p[i + 1] + jac.columns(0, n).transpose() * &p[i + 1] * mesh.h()
                    - &pert.pi[i] * mesh.h();
            }
            return Ok(Some(StationaryTupleMayer { traj, p: AdjointPath { p }, alpha, beta }));
        }
        next.sort_unstable();
        next.dedup();
        if next == working {
            return Ok(None);
        }
        working = next;
    }
    Ok(None)
}

/// ||dx||_{1,1} + ||du||_2 + ||dp||_{1,1} + |dalpha| + |dbeta|.
pub fn mayer_distance(a: &StationaryTupleMayer, b: &StationaryTupleMayer, h: f64) -> f64 {
    let dx: Vec<DVector<f64>> = a.traj.x.iter().zip(&b.traj.x).map(|(p, q)| p - q).collect();
    let du: Vec<DVector<f64>> = a.traj.u.iter().zip(&b.traj.u).map(|(p, q)| p - q).collect();
    let dp: Vec<DVector<f64>> = a.p.p.iter().zip(&b.p.p).map(|(p, q)| p - q).collect();
    norm_x_11(&dx)
        + norm_u_l2(&du, h)
        + norm_x_11(&dp)
        + (&a.alpha - &b.alpha).norm()
        + (&a.beta - &b.beta).norm()
}

pub fn estimate_kappa_mayer(
    mayer: &MayerProblem,
    tuple: &StationaryTupleMayer,
    mesh: &Mesh,
    tols: &Tolerances,
    opts: &KappaOptions,
) -> Result<KappaEstimate> {
    let h = mesh.h();
    let sup = tuple
        .traj
        .x
        .iter()
        .map(|v| v.amax())
        .chain(tuple.traj.u.iter().map(|v| v.amax()))
        .fold(0.0f64, f64::max);
    let radius = opts.radius_factor * (1.0 + sup);
    let per_mag: Vec<Vec<Option<f64>>> = opts
        .magnitudes
        .iter()
        .enumerate()
        .map(|(mi, &mag)| {
            map_collect(opts.samples, opts.strategy, |s| {
                let mut rng = sample_rng(opts.seed, mi, s);
                let pert = sample_perturbation_mayer(mayer, mesh, &mut rng, mag);
                let sol = solve_perturbed_mayer(mayer, tuple, mesh, &pert, tols, &opts.newton)
                    .ok()
                    .flatten()?;
                let far = sol
                    .traj
                    .x
                    .iter()
                    .zip(&tuple.traj.x)
                    .map(|(a, b)| (a - b).amax())
                    .chain(sol.traj.u.iter().zip(&tuple.traj.u).map(|(a, b)| (a - b).amax()))
                    .fold(0.0f64, f64::max);
                if far > radius {
                    return None;
                }
                Some(mayer_distance(&sol, tuple, h) / perturbation_norm_mayer(&pert, h))
            })
        })
        .collect();
    Ok(finish_estimate(opts.magnitudes.clone(), per_mag, opts.samples))
}

// ---------------------------------------------------------------------------
// the descent counterexample

#[derive(Debug, Clone)]
pub struct Example1Entry {
    pub s: usize,
    pub j_discrete: f64,
    pub j_continuous: f64,
    pub rel_err: f64,
    pub control_sup: f64,
}

#[derive(Debug, Clone)]
pub struct Example1Report {
    pub mesh_n: usize,
    pub entries: Vec<Example1Entry>,
    /// Whether the critical cone control component is exactly trivial.
    pub cone_exactly_trivial: bool,
    /// Measure of the interval set where cone directions remain; vanishes
    /// with the mesh width.
    pub free_control_measure: f64,
}

/// Evaluate the descent sequence u_s = 1/s on [0, 1/s) for the built-in
/// counterexample: the cost drops like -1/(2 s^3) although the critical
/// cone is trivial up to one interval. Requires s | mesh_n.
pub fn example1_counterexample(
    mesh_n: usize,
    s_values: &[usize],
    tols: &Tolerances,
) -> Result<Example1Report> {
    let file = registry::load("example1")?;
    let ocp = match &file.problem {
        crate::problem::Problem::Ocp(p) => p.clone(),
        _ => unreachable!(),
    };
    let mesh = Mesh::unit(mesh_n)?;
    let tuple = registry::ocp_reference(&ocp, &file.solution, &mesh, tols)?;
    let j_ref = ocp.endpoint_cost.value(&tuple.traj.endpoint_pair())?;
    let cone = critical_cone_ocp(&ocp, &tuple, &mesh, ConeRep::MultiplierRows, tols)?;
    let (cone_exactly_trivial, free_control_measure) = cone.control_triviality(&mesh);
    let mut entries = Vec::new();
    for &s in s_values {
        if s == 0 || mesh_n % s != 0 {
            return Err(Error::MeshIndivisible { n: mesh_n, s });
        }
        let cut = mesh_n / s;
        let us = 1.0 / s as f64;
        let u: Vec<DVector<f64>> = (0..mesh_n)
            .map(|i| DVector::from_element(1, if i < cut { us } else { 0.0 }))
            .collect();
        let x = crate::mesh::euler_forward(&ocp.dynamics, &tuple.traj.x[0], &u, &mesh)?;
        let traj = DiscreteTrajectory { x, u };
        let j = ocp.endpoint_cost.value(&traj.endpoint_pair())? - j_ref;
        let j_cont = -1.0 / (2.0 * (s as f64).powi(3));
        entries.push(Example1Entry {
            s,
            j_discrete: j,
            j_continuous: j_cont,
            rel_err: (j - j_cont).abs() / j_cont.abs(),
            control_sup: us,
        });
    }
    Ok(Example1Report { mesh_n, entries, cone_exactly_trivial, free_control_measure })
}
