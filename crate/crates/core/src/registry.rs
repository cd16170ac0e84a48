//! Built-in benchmark problems with analytic reference solutions, stored in
//! the same file format the parser accepts. Solution-block conventions:
//! nonlinear programs carry `x` (and `lambda`, `y` when present); control
//! problems carry `x0` and a constant control `u`; Mayer problems
//! additionally carry `alpha` and `beta`.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::mayer::{solve_adjoint_mayer, StationaryTupleMayer};
use crate::mesh::{euler_forward, DiscreteTrajectory, Mesh};
use crate::nlp::{StationaryTupleNlp, Tolerances};
use crate::ocp::{multiplier_from_stationarity, solve_adjoint, StationaryTupleOcp};
use crate::parse::{parse_problem_file, ProblemFile};
use crate::problem::{MayerProblem, NlpProblem, OcpProblem, Problem};
use std::collections::BTreeMap;

pub const NLP_SCALAR_QUADRATIC: &str = "\
# unconstrained scalar quadratic; the perturbed stationary point is x = zeta
class: nlp
dims: 1
objective:
  0.5 * x1^2
solution:
  x = 0
";

pub const NLP_EQ_QUADRATIC: &str = "\
# quadratic over a line; stationary point (0.5, 0.5) with y = -1
class: nlp
dims: 2
objective:
  1 * x1^2 + 1 * x2^2
eq:
  1 * x1^1 + 1 * x2^1 - 1
solution:
  x = 0.5, 0.5
  y = -1
";

pub const NLP_SCALAR_QUARTIC: &str = "\
# degenerate minimum: x = zeta^(1/3), so the distance-to-disturbance ratio
# grows as the disturbance shrinks
class: nlp
dims: 1
objective:
  0.25 * x1^4
solution:
  x = 0
";

pub const NLP_DIAG_QUADRATIC: &str = "\
# diag(1, 4) curvature; the worst perturbation direction gives ratio 1
class: nlp
dims: 2
objective:
  0.5 * x1^2 + 2 * x2^2
solution:
  x = 0, 0
";

pub const MAYER_TERMINAL_EQ: &str = "\
# steer x from 0 to 1 at minimal control energy accumulated in z
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
solution:
  x0 = 0, 0
  u = 1
  beta = 1, -1, -1
";

pub const LQ_BOUND: &str = "\
# linear-quadratic with an active lower control bound; u = -1 throughout
class: ocp
dims: 1, 1, 2
dynamics:
  1 * u1^1
endpoint:
  0.5 * q1^2 + 1 * q2^1
control_ineq:
  1 * u1^1 - 1
  -1 * u1^1 - 1
solution:
  x0 = -1
  u = -1
";

pub const EXAMPLE1: &str = "\
# nonstationary counterexample in autonomous form: states (y, x) with
# ydot = 1, xdot = y u - u^2, u >= 0; the critical cone is trivial up to
# the first interval yet u = 0 is not a weak local minimum
class: ocp
dims: 2, 1, 1
dynamics:
  1
  1 * x1^1 * u1^1 - 1 * u1^2
endpoint:
  1 * q4^1 - 1 * q2^1
control_ineq:
  -1 * u1^1
solution:
  x0 = 0, 0
  u = 0
";

pub const NAMES: [&str; 7] = [
    "nlp_scalar_quadratic",
    "nlp_eq_quadratic",
    "nlp_scalar_quartic",
    "nlp_diag_quadratic",
    "mayer_terminal_eq",
    "lq_bound",
    "example1",
];

pub fn lookup(name: &str) -> Option<&'static str> {
    match name {
        "nlp_scalar_quadratic" => Some(NLP_SCALAR_QUADRATIC),
        "nlp_eq_quadratic" => Some(NLP_EQ_QUADRATIC),
        "nlp_scalar_quartic" => Some(NLP_SCALAR_QUARTIC),
        "nlp_diag_quadratic" => Some(NLP_DIAG_QUADRATIC),
        "mayer_terminal_eq" => Some(MAYER_TERMINAL_EQ),
        "lq_bound" => Some(LQ_BOUND),
        "example1" => Some(EXAMPLE1),
        _ => None,
    }
}

pub fn load(name: &str) -> Result<ProblemFile> {
    let text =
        lookup(name).ok_or_else(|| Error::Invalid(format!("unknown registry problem '{name}'")))?;
    parse_problem_file(text)
}

fn get_vec(solution: &BTreeMap<String, Vec<f64>>, key: &str) -> Option<DVector<f64>> {
    solution.get(key).map(|v| DVector::from_vec(v.clone()))
}

/// Reference stationary tuple of a nonlinear program from its solution
/// block; absent multiplier entries default to zero.
pub fn nlp_reference(
    problem: &NlpProblem,
    solution: &BTreeMap<String, Vec<f64>>,
) -> Result<StationaryTupleNlp> {
    let x = get_vec(solution, "x")
        .ok_or_else(|| Error::Invalid("solution block needs 'x'".into()))?;
    let lambda = get_vec(solution, "lambda").unwrap_or_else(|| DVector::zeros(problem.num_ineq()));
    let ystar = get_vec(solution, "y").unwrap_or_else(|| DVector::zeros(problem.num_eq()));
    let tuple = StationaryTupleNlp { x, lambda, ystar };
    tuple.validate(problem)?;
    Ok(tuple)
}

/// Reference tuple of a control problem on a given mesh: the constant
/// control is propagated, the adjoint solved backward and the multipliers
/// recovered from stationarity.
pub fn ocp_reference(
    ocp: &OcpProblem,
    solution: &BTreeMap<String, Vec<f64>>,
    mesh: &Mesh,
    tols: &Tolerances,
) -> Result<StationaryTupleOcp> {
    let x0 = get_vec(solution, "x0")
        .ok_or_else(|| Error::Invalid("solution block needs 'x0'".into()))?;
    let uc = get_vec(solution, "u")
        .ok_or_else(|| Error::Invalid("solution block needs 'u'".into()))?;
    let u = vec![uc; mesh.n_intervals];
    let x = euler_forward(&ocp.dynamics, &x0, &u, mesh)?;
    let traj = DiscreteTrajectory { x, u };
    let (p, _) = solve_adjoint(ocp, &traj, mesh)?;
    let rec = multiplier_from_stationarity(ocp, &traj, &p, mesh, tols)?;
    let tuple = StationaryTupleOcp { traj, p, lambda: rec.lambda };
    tuple.validate(ocp, mesh)?;
    Ok(tuple)
}

/// Reference tuple of a Mayer problem on a given mesh.
pub fn mayer_reference(
    mayer: &MayerProblem,
    solution: &BTreeMap<String, Vec<f64>>,
    mesh: &Mesh,
) -> Result<StationaryTupleMayer> {
    let x0 = get_vec(solution, "x0")
        .ok_or_else(|| Error::Invalid("solution block needs 'x0'".into()))?;
    let uc = get_vec(solution, "u")
        .ok_or_else(|| Error::Invalid("solution block needs 'u'".into()))?;
    let u = vec![uc; mesh.n_intervals];
    let x = euler_forward(&mayer.dynamics, &x0, &u, mesh)?;
    let traj = DiscreteTrajectory { x, u };
    let alpha = get_vec(solution, "alpha")
        .unwrap_or_else(|| DVector::zeros(mayer.endpoint_inequalities.len()));
    let beta = get_vec(solution, "beta")
        .unwrap_or_else(|| DVector::zeros(mayer.endpoint_equalities.len()));
    let (p, _) = solve_adjoint_mayer(mayer, &traj, &alpha, &beta, mesh)?;
    let tuple = StationaryTupleMayer { traj, p, alpha, beta };
    tuple.validate(mayer, mesh)?;
    Ok(tuple)
}

/// Reference tuple for any problem class.
pub enum ReferenceTuple {
    Nlp(StationaryTupleNlp),
    Mayer(StationaryTupleMayer),
    Ocp(StationaryTupleOcp),
}

pub fn reference_tuple(
    file: &ProblemFile,
    mesh: &Mesh,
    tols: &Tolerances,
) -> Result<ReferenceTuple> {
    match &file.problem {
        Problem::Nlp(p) => Ok(ReferenceTuple::Nlp(nlp_reference(p, &file.solution)?)),
        Problem::Mayer(p) => Ok(ReferenceTuple::Mayer(mayer_reference(p, &file.solution, mesh)?)),
        Problem::Ocp(p) => Ok(ReferenceTuple::Ocp(ocp_reference(p, &file.solution, mesh, tols)?)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mayer::optimality_residuals_mayer;
    use crate::nlp::kkt_residual;
    use crate::ocp::optimality_residuals_ocp;

    #[test]
    fn every_entry_parses_and_is_stationary() {
        let tols = Tolerances::default();
        let mesh = Mesh::unit(50).unwrap();
        for name in NAMES {
            let file = load(name).unwrap();
            match reference_tuple(&file, &mesh, &tols).unwrap() {
                ReferenceTuple::Nlp(t) => {
                    let p = match &file.problem {
                        Problem::Nlp(p) => p,
                        _ => unreachable!(),
                    };
                    let r = kkt_residual(p, &t).unwrap();
                    assert!(r.norm_z < 1e-10, "{name}: {}", r.norm_z);
                }
                ReferenceTuple::Mayer(t) => {
                    let p = match &file.problem {
                        Problem::Mayer(p) => p,
                        _ => unreachable!(),
                    };
                    let r = optimality_residuals_mayer(p, &t, &mesh, &tols).unwrap();
                    assert!(r.norm < 1e-10, "{name}: {}", r.norm);
                }
                ReferenceTuple::Ocp(t) => {
                    let p = match &file.problem {
                        Problem::Ocp(p) => p,
                        _ => unreachable!(),
                    };
                    let r = optimality_residuals_ocp(p, &t, &mesh, &tols).unwrap();
                    assert!(r.norm < 1e-10, "{name}: {}", r.norm);
                }
            }
        }
    }
}
