//! First- and second-order analysis of finite-dimensional nonlinear
//! programs: KKT residuals, constraint qualifications, critical cones,
//! coercivity and quadratic-growth probing.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::coercivity::QuadraticFormRep;
use crate::cone::PolyhedralCone;
use crate::error::{Error, Result};
use crate::feas::{signed_kernel_nontrivial, zero_in_convex_hull};
use crate::linalg::{lstsq, nullspace, rank};
use crate::problem::NlpProblem;

/// Candidate primal point with inequality and equality multipliers.
#[derive(Debug, Clone)]
pub struct StationaryTupleNlp {
    pub x: DVector<f64>,
    pub lambda: DVector<f64>,
    pub ystar: DVector<f64>,
}

pub const LAMBDA_NEG_TOL: f64 = 1e-10;

impl StationaryTupleNlp {
    pub fn validate(&self, problem: &NlpProblem) -> Result<()> {
        if self.x.len() != problem.n {
            return Err(Error::DimensionMismatch { expected: problem.n, got: self.x.len() });
        }
        if self.lambda.len() != problem.num_ineq() {
            return Err(Error::DimensionMismatch {
                expected: problem.num_ineq(),
                got: self.lambda.len(),
            });
        }
        if self.ystar.len() != problem.num_eq() {
            return Err(Error::DimensionMismatch {
                expected: problem.num_eq(),
                got: self.ystar.len(),
            });
        }
        for (i, &l) in self.lambda.iter().enumerate() {
            if l < -LAMBDA_NEG_TOL {
                return Err(Error::EmptyNormalCone { index: i, value: l });
            }
        }
        Ok(())
    }
}

/// Scale-aware default tolerances for activity and multiplier thresholds.
#[derive(Debug, Clone, Copy)]
pub struct Tolerances {
    pub t_act: f64,
    pub t_mul: f64,
    pub rank_rel: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { t_act: 1e-7, t_mul: 1e-8, rank_rel: 1e-9 }
    }
}

impl Tolerances {
    /// The activity tolerance scaled by the constraint magnitudes.
    pub fn act_scaled(&self, f_values: &DVector<f64>) -> f64 {
        self.t_act * (1.0 + f_values.amax())
    }
}

/// Active inequality indices and the zero/positive multiplier split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActiveSets {
    pub active: Vec<usize>,
    pub zero_mult: Vec<usize>,
    pub pos_mult: Vec<usize>,
}

pub fn active_sets(
    problem: &NlpProblem,
    tuple: &StationaryTupleNlp,
    tols: &Tolerances,
) -> Result<ActiveSets> {
    tuple.validate(problem)?;
    let f = problem.ineq_values(&tuple.x)?;
    let g = problem.eq_values(&tuple.x)?;
    let t_act = tols.act_scaled(&f);
    for (j, &gv) in g.iter().enumerate() {
        if gv.abs() > t_act {
            return Err(Error::Infeasible { name: format!("eq[{j}]"), violation: gv.abs() });
        }
    }
    for (i, &fv) in f.iter().enumerate() {
        if fv > t_act {
            return Err(Error::Infeasible { name: format!("ineq[{i}]"), violation: fv });
        }
    }
    let active: Vec<usize> = (0..f.len()).filter(|&i| f[i].abs() <= t_act).collect();
    let (pos_mult, zero_mult) = active
        .iter()
        .cloned()
        .partition(|&i| tuple.lambda[i] > tols.t_mul);
    Ok(ActiveSets { active, zero_mult, pos_mult })
}

/// Residual of the KKT system split into its three image blocks.
#[derive(Debug, Clone)]
pub struct KktResidualNlp {
    /// Minimal-norm normal-cone residual.
    pub xi: DVector<f64>,
    /// Equality residual g(x).
    pub eta: DVector<f64>,
    /// Stationarity residual (gradient of the Lagrangian).
    pub zeta: DVector<f64>,
    /// |xi| + ||eta|| + ||zeta||'' with the dual weak norm on zeta.
    pub norm_z: f64,
}

/// Dual weak norm ||zeta||'' = sup { zeta v : v' G v <= 1 } for a positive
/// definite Gram matrix G.
pub fn dual_weak_norm(zeta: &DVector<f64>, gram: &DMatrix<f64>) -> f64 {
    match gram.clone().cholesky() {
        Some(ch) => ch.solve(zeta).dot(zeta).max(0.0).sqrt(),
        None => zeta.norm(),
    }
}

pub fn kkt_residual(problem: &NlpProblem, tuple: &StationaryTupleNlp) -> Result<KktResidualNlp> {
    kkt_residual_with_gram(problem, tuple, None)
}

pub fn kkt_residual_with_gram(
    problem: &NlpProblem,
    tuple: &StationaryTupleNlp,
    gram: Option<&DMatrix<f64>>,
) -> Result<KktResidualNlp> {
    tuple.validate(problem)?;
    let x = &tuple.x;
    let mut zeta = problem.objective.eval(x)?.gradient;
    let f = problem.ineq_values(x)?;
    let mut xi = DVector::zeros(problem.num_ineq());
    for (i, fi) in problem.inequalities.iter().enumerate() {
        zeta += fi.eval(x)?.gradient * tuple.lambda[i];
        xi[i] = if tuple.lambda[i] > 0.0 { f[i] } else { f[i].max(0.0) };
    }
    let eta = problem.eq_values(x)?;
    for (j, gj) in problem.equalities.iter().enumerate() {
        zeta += gj.eval(x)?.gradient * tuple.ystar[j];
    }
    let zeta_dual = match gram {
        Some(g) => dual_weak_norm(&zeta, g),
        None => zeta.norm(),
    };
    let norm_z = xi.norm() + eta.norm() + zeta_dual;
    Ok(KktResidualNlp { xi, eta, zeta, norm_z })
}

#[derive(Debug, Clone)]
pub struct MfcqReport {
    pub holds: bool,
    /// Violating convex multipliers on the active gradients, if any.
    pub witness: Option<DVector<f64>>,
    pub eq_rank: usize,
    pub eq_rows: usize,
}

/// Mangasarian-Fromovitz constraint qualification at a feasible point:
/// full-rank equality Jacobian plus positive independence of the active
/// inequality gradients on its kernel.
pub fn check_mfcq(problem: &NlpProblem, x: &DVector<f64>, tols: &Tolerances) -> Result<MfcqReport> {
    let f = problem.ineq_values(x)?;
    let t_act = tols.act_scaled(&f);
    let jac = problem.eq_jacobian(x)?;
    let eq_rank = rank(&jac, tols.rank_rel);
    if eq_rank < problem.num_eq() {
        return Ok(MfcqReport { holds: false, witness: None, eq_rank, eq_rows: problem.num_eq() });
    }
    let kernel = nullspace(&jac, tols.rank_rel);
    let active: Vec<usize> = (0..f.len()).filter(|&i| f[i].abs() <= t_act).collect();
    let projected: Vec<DVector<f64>> = active
        .iter()
        .map(|&i| -> Result<DVector<f64>> {
            let g = problem.inequalities[i].eval(x)?.gradient;
            Ok(kernel.transpose() * g)
        })
        .collect::<Result<_>>()?;
    let witness = zero_in_convex_hull(&projected);
    Ok(MfcqReport {
        holds: witness.is_none(),
        witness,
        eq_rank,
        eq_rows: problem.num_eq(),
    })
}

#[derive(Debug, Clone)]
pub struct StrictMfcqReport {
    pub holds: bool,
    /// Nontrivial multipliers (lambda over active indices, then y*) solving
    /// the homogeneous gradient system with signs on the zero-multiplier rows.
    pub witness: Option<DVector<f64>>,
    pub active: ActiveSets,
}

/// Strict MFCQ at a KKT point: the homogeneous multiplier system has only
/// the trivial solution; implies multiplier uniqueness for the fixed primal.
pub fn check_strict_mfcq(
    problem: &NlpProblem,
    tuple: &StationaryTupleNlp,
    tols: &Tolerances,
) -> Result<StrictMfcqReport> {
    let sets = active_sets(problem, tuple, tols)?;
    let ncols = sets.active.len() + problem.num_eq();
    let mut mat = DMatrix::zeros(problem.n, ncols);
    for (c, &i) in sets.active.iter().enumerate() {
        mat.column_mut(c)
            .copy_from(&problem.inequalities[i].eval(&tuple.x)?.gradient);
    }
    for j in 0..problem.num_eq() {
        mat.column_mut(sets.active.len() + j)
            .copy_from(&problem.equalities[j].eval(&tuple.x)?.gradient);
    }
    let sign_idx: Vec<usize> = sets
        .active
        .iter()
        .enumerate()
        .filter(|(_, i)| sets.zero_mult.contains(i))
        .map(|(c, _)| c)
        .collect();
    let witness = signed_kernel_nontrivial(&mat, &sign_idx);
    Ok(StrictMfcqReport { holds: witness.is_none(), witness, active: sets })
}

/// The critical cone K at a KKT point: objective and active-inequality
/// linearizations nonpositive, equality linearizations zero.
pub fn critical_cone_nlp(
    problem: &NlpProblem,
    tuple: &StationaryTupleNlp,
    sets: &ActiveSets,
) -> Result<PolyhedralCone> {
    let n = problem.n;
    let mut a = DMatrix::zeros(1 + sets.active.len(), n);
    a.row_mut(0)
        .copy_from(&problem.objective.eval(&tuple.x)?.gradient.transpose());
    for (r, &i) in sets.active.iter().enumerate() {
        a.row_mut(1 + r)
            .copy_from(&problem.inequalities[i].eval(&tuple.x)?.gradient.transpose());
    }
    let b = problem.eq_jacobian(&tuple.x)?;
    Ok(PolyhedralCone::new(a, b))
}

/// Hessian of the Lagrangian at the tuple, with an overridable weak-norm
/// Gram (identity by default: the two norms coincide in finite dimensions).
pub fn quadratic_form_nlp(
    problem: &NlpProblem,
    tuple: &StationaryTupleNlp,
    gram: Option<DMatrix<f64>>,
) -> Result<QuadraticFormRep> {
    tuple.validate(problem)?;
    let mut h = problem.objective.eval(&tuple.x)?.hessian;
    for (i, fi) in problem.inequalities.iter().enumerate() {
        h += fi.eval(&tuple.x)?.hessian * tuple.lambda[i];
    }
    for (j, gj) in problem.equalities.iter().enumerate() {
        h += gj.eval(&tuple.x)?.hessian * tuple.ystar[j];
    }
    Ok(match gram {
        Some(g) => QuadraticFormRep { matrix: h, weak_norm_gram: g },
        None => QuadraticFormRep::with_identity_gram(h),
    })
}

#[derive(Debug, Clone)]
pub struct GrowthReport {
    /// Smallest observed ratio (phi(x) - phi(xhat)) / (||x - xhat||')^2.
    pub fitted_c: f64,
    /// Sample points with a negative ratio.
    pub violations: Vec<(DVector<f64>, f64)>,
    pub accepted: usize,
    pub note: Option<String>,
}

/// Probe the quadratic growth of the objective over feasible points near
/// the reference. Equalities are handled by a projected-Newton retraction.
pub fn quadratic_growth_probe(
    problem: &NlpProblem,
    tuple: &StationaryTupleNlp,
    radius: f64,
    samples: usize,
    seed: u64,
    gram: Option<&DMatrix<f64>>,
) -> Result<GrowthReport> {
    tuple.validate(problem)?;
    let phi_hat = problem.objective.value(&tuple.x)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fitted_c = f64::INFINITY;
    let mut violations = Vec::new();
    let mut accepted = 0usize;
    let mut retraction_failures = 0usize;
    let mut attempts = 0usize;
    while accepted < samples && attempts < samples * 20 {
        attempts += 1;
        let dir = DVector::from_fn(problem.n, |_, _| rng.gen_range(-1.0..1.0));
        if dir.norm() < 1e-12 {
            continue;
        }
        let r: f64 = rng.gen_range(0.0f64..1.0).powf(1.0 / problem.n as f64) * radius;
        let mut x = &tuple.x + dir.normalize() * r;
        // retraction onto {g = 0}
        if problem.num_eq() > 0 {
            let mut converged = false;
            for _ in 0..50 {
                let g = problem.eq_values(&x)?;
                if g.amax() <= 1e-12 * (1.0 + x.amax()) {
                    converged = true;
                    break;
                }
                let jac = problem.eq_jacobian(&x)?;
                let step = lstsq(&jac, &g, 1e-12);
                x -= step;
            }
            if !converged {
                retraction_failures += 1;
                continue;
            }
        }
        let dx = &x - &tuple.x;
        if dx.norm() > radius * 1.5 || dx.norm() < 1e-10 {
            continue;
        }
        if problem.ineq_values(&x)?.iter().any(|&f| f > 0.0) {
            continue;
        }
        let phi = problem.objective.value(&x)?;
        let weak_sq = match gram {
            Some(g) => (g * &dx).dot(&dx),
            None => dx.norm_squared(),
        };
        let ratio = (phi - phi_hat) / weak_sq;
        accepted += 1;
        if ratio < fitted_c {
            fitted_c = ratio;
        }
        if phi - phi_hat < -1e-12 * (1.0 + phi_hat.abs()) {
            violations.push((x.clone(), ratio));
        }
    }
    if retraction_failures * 2 > attempts {
        return Err(Error::RetractionFailure { failed: retraction_failures, total: attempts });
    }
    let note = if fitted_c > 100.0 {
        Some("superquadratic".to_string())
    } else {
        None
    };
    Ok(GrowthReport { fitted_c, violations, accepted, note })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parse::parse_problem_file;
    use crate::problem::Problem;
    use approx::assert_relative_eq;
    use nalgebra::dvector;

    fn nlp(text: &str) -> NlpProblem {
        match parse_problem_file(text).unwrap().problem {
            Problem::Nlp(p) => p,
            _ => panic!("expected nlp"),
        }
    }

    fn min_x_sq_bound() -> NlpProblem {
        // min x^2 s.t. -x <= 0
        nlp("class: nlp\ndims: 1\nobjective:\n  x1^2\nineq:\n  -1*x1\n")
    }

    fn eq_quadratic() -> NlpProblem {
        // min x1^2 + x2^2 s.t. x1 + x2 = 1
        nlp("class: nlp\ndims: 2\nobjective:\n  x1^2 + x2^2\neq:\n  x1 + x2 - 1\n")
    }

    #[test]
    fn active_sets_at_origin() {
        let p = min_x_sq_bound();
        let t = StationaryTupleNlp { x: dvector![0.0], lambda: dvector![0.0], ystar: dvector![] };
        let s = active_sets(&p, &t, &Tolerances::default()).unwrap();
        assert_eq!(s.active, vec![0]);
        assert_eq!(s.zero_mult, vec![0]);
        assert!(s.pos_mult.is_empty());
    }

    #[test]
    fn active_sets_positive_multiplier() {
        // f = (x - 1, -x), xhat = 1, lambda = (2, 0)
        let p = nlp("class: nlp\ndims: 1\nobjective:\n  x1\nineq:\n  x1 - 1\n  -1*x1\n");
        let t = StationaryTupleNlp { x: dvector![1.0], lambda: dvector![2.0, 0.0], ystar: dvector![] };
        let s = active_sets(&p, &t, &Tolerances::default()).unwrap();
        assert_eq!(s.active, vec![0]);
        assert_eq!(s.pos_mult, vec![0]);
    }

    #[test]
    fn inactive_constraint_empty_set() {
        let p = min_x_sq_bound();
        let t = StationaryTupleNlp { x: dvector![0.5], lambda: dvector![0.0], ystar: dvector![] };
        let s = active_sets(&p, &t, &Tolerances::default()).unwrap();
        assert!(s.active.is_empty());
    }

    #[test]
    fn kkt_residual_exact_point() {
        let p = min_x_sq_bound();
        let t = StationaryTupleNlp { x: dvector![0.0], lambda: dvector![0.0], ystar: dvector![] };
        let r = kkt_residual(&p, &t).unwrap();
        assert!(r.norm_z < 1e-14);
    }

    #[test]
    fn kkt_residual_off_point() {
        let p = min_x_sq_bound();
        let t = StationaryTupleNlp { x: dvector![0.1], lambda: dvector![0.0], ystar: dvector![] };
        let r = kkt_residual(&p, &t).unwrap();
        assert_relative_eq!(r.zeta[0], 0.2, epsilon = 1e-14);
        assert_eq!(r.xi[0], 0.0); // max(-0.1, 0)
    }

    #[test]
    fn kkt_residual_eq_problem() {
        let p = eq_quadratic();
        let t = StationaryTupleNlp {
            x: dvector![0.5, 0.5],
            lambda: dvector![],
            ystar: dvector![-1.0],
        };
        let r = kkt_residual(&p, &t).unwrap();
        assert!(r.norm_z < 1e-14, "norm {}", r.norm_z);
    }

    #[test]
    fn negative_multiplier_is_empty_normal_cone() {
        let p = min_x_sq_bound();
        let t = StationaryTupleNlp { x: dvector![0.0], lambda: dvector![-0.5], ystar: dvector![] };
        assert!(matches!(kkt_residual(&p, &t), Err(Error::EmptyNormalCone { .. })));
    }

    #[test]
    fn mfcq_single_gradient() {
        let p = min_x_sq_bound();
        let r = check_mfcq(&p, &dvector![0.0], &Tolerances::default()).unwrap();
        assert!(r.holds);
    }

    #[test]
    fn mfcq_opposite_gradients_fail() {
        let p = nlp("class: nlp\ndims: 1\nobjective:\n  x1^2\nineq:\n  x1\n  -1*x1\n");
        let r = check_mfcq(&p, &dvector![0.0], &Tolerances::default()).unwrap();
        assert!(!r.holds);
        let w = r.witness.unwrap();
        assert_relative_eq!(w[0], 0.5, epsilon = 1e-6);
        assert_relative_eq!(w[1], 0.5, epsilon = 1e-6);
    }

    #[test]
    fn mfcq_with_equality_projection() {
        // g = x1 + x2 - 1, f1 = -x1 at (0, 1)
        let p = nlp(
            "class: nlp\ndims: 2\nobjective:\n  x1\nineq:\n  -1*x1\neq:\n  x1 + x2 - 1\n",
        );
        let r = check_mfcq(&p, &dvector![0.0, 1.0], &Tolerances::default()).unwrap();
        assert!(r.holds);
    }

    #[test]
    fn strict_mfcq_equality_only() {
        let p = eq_quadratic();
        let t = StationaryTupleNlp {
            x: dvector![0.5, 0.5],
            lambda: dvector![],
            ystar: dvector![-1.0],
        };
        let r = check_strict_mfcq(&p, &t, &Tolerances::default()).unwrap();
        assert!(r.holds);
    }

    #[test]
    fn strict_mfcq_opposed_active_gradients_fail() {
        // f1 = -x, f2 = x, both active at 0 with zero multipliers:
        // lambda = (1, 1) solves the homogeneous system.
        let p = nlp("class: nlp\ndims: 1\nobjective:\n  x1^2\nineq:\n  -1*x1\n  x1\n");
        let t =
            StationaryTupleNlp { x: dvector![0.0], lambda: dvector![0.0, 0.0], ystar: dvector![] };
        let r = check_strict_mfcq(&p, &t, &Tolerances::default()).unwrap();
        assert!(!r.holds);
        assert!(r.witness.is_some());
    }

    #[test]
    fn strict_mfcq_duplicated_same_sign_holds() {
        // f1 = f2 = -x active with zero multipliers: lambda >= 0 and
        // -(a + b) = 0 force a = b = 0, so strict MFCQ holds.
        let p = nlp("class: nlp\ndims: 1\nobjective:\n  x1^2\nineq:\n  -1*x1\n  -1*x1\n");
        let t =
            StationaryTupleNlp { x: dvector![0.0], lambda: dvector![0.0, 0.0], ystar: dvector![] };
        let r = check_strict_mfcq(&p, &t, &Tolerances::default()).unwrap();
        assert!(r.holds);
    }

    #[test]
    fn critical_cone_halfline() {
        let p = min_x_sq_bound();
        let t = StationaryTupleNlp { x: dvector![0.0], lambda: dvector![0.0], ystar: dvector![] };
        let sets = active_sets(&p, &t, &Tolerances::default()).unwrap();
        let k = critical_cone_nlp(&p, &t, &sets).unwrap();
        assert!(k.contains(&dvector![1.0], 1e-9));
        assert!(!k.contains(&dvector![-1.0], 1e-9));
    }

    #[test]
    fn critical_cone_point_for_linear_objective() {
        // min -x s.t. x <= 0 at 0 with lambda = 1: K = {0}
        let p = nlp("class: nlp\ndims: 1\nobjective:\n  -1*x1\nineq:\n  x1\n");
        let t = StationaryTupleNlp { x: dvector![0.0], lambda: dvector![1.0], ystar: dvector![] };
        let sets = active_sets(&p, &t, &Tolerances::default()).unwrap();
        let k = critical_cone_nlp(&p, &t, &sets).unwrap();
        assert!(k.is_trivial());
    }

    #[test]
    fn quadratic_form_affine_constraints() {
        let p = eq_quadratic();
        let t = StationaryTupleNlp {
            x: dvector![0.5, 0.5],
            lambda: dvector![],
            ystar: dvector![-1.0],
        };
        let f = quadratic_form_nlp(&p, &t, None).unwrap();
        assert_eq!(f.matrix, DMatrix::from_diagonal(&dvector![2.0, 2.0]));
    }

    #[test]
    fn quadratic_form_quartic_degenerate() {
        let p = nlp("class: nlp\ndims: 1\nobjective:\n  x1^4\n");
        let t = StationaryTupleNlp { x: dvector![0.0], lambda: dvector![], ystar: dvector![] };
        let f = quadratic_form_nlp(&p, &t, None).unwrap();
        assert_eq!(f.matrix[(0, 0)], 0.0);
    }

    #[test]
    fn growth_probe_unconstrained_quadratic() {
        let p = nlp("class: nlp\ndims: 1\nobjective:\n  x1^2\n");
        let t = StationaryTupleNlp { x: dvector![0.0], lambda: dvector![], ystar: dvector![] };
        let rep = quadratic_growth_probe(&p, &t, 1e-2, 200, 7, None).unwrap();
        assert!(rep.violations.is_empty());
        assert_relative_eq!(rep.fitted_c, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn growth_probe_on_feasible_line() {
        let p = eq_quadratic();
        let t = StationaryTupleNlp {
            x: dvector![0.5, 0.5],
            lambda: dvector![],
            ystar: dvector![-1.0],
        };
        let rep = quadratic_growth_probe(&p, &t, 1e-2, 200, 7, None).unwrap();
        assert!(rep.violations.is_empty());
        // phi - phi_hat = ||dx||^2 exactly on the feasible line
        assert_relative_eq!(rep.fitted_c, 1.0, epsilon = 1e-6);
    }

    #[test]
    fn growth_probe_superquadratic_note() {
        // min -x s.t. x <= 0 at 0: growth is linear, ratios blow up.
        let p = nlp("class: nlp\ndims: 1\nobjective:\n  -1*x1\nineq:\n  x1\n");
        let t = StationaryTupleNlp { x: dvector![0.0], lambda: dvector![1.0], ystar: dvector![] };
        let rep = quadratic_growth_probe(&p, &t, 1e-2, 200, 7, None).unwrap();
        assert!(rep.fitted_c > 0.0);
        assert_eq!(rep.note.as_deref(), Some("superquadratic"));
    }
}
