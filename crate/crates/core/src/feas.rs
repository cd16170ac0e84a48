//! Exact feasibility primitives for the constraint-qualification tests,
//! backed by a simplex LP solver plus nullspace checks.

use microlp::{ComparisonOp, OptimizationDirection, Problem as Lp};
use nalgebra::{DMatrix, DVector};

use crate::linalg::nullspace;

const FEAS_TOL: f64 = 1e-8;

/// Is 0 in the convex hull of the given points? Returns the convex weights
/// if so. Decides MFCQ-style positive-independence questions.
pub fn zero_in_convex_hull(points: &[DVector<f64>]) -> Option<DVector<f64>> {
    if points.is_empty() {
        return None;
    }
    let dim = points[0].len();
    let mut lp = Lp::new(OptimizationDirection::Minimize);
    let vars: Vec<_> = (0..points.len()).map(|_| lp.add_var(0.0, (0.0, 1.0))).collect();
    let mut sum = microlp::LinearExpr::empty();
    for &v in &vars {
        sum.add(v, 1.0);
    }
    lp.add_constraint(sum, ComparisonOp::Eq, 1.0);
    for coord in 0..dim {
        let mut expr = microlp::LinearExpr::empty();
        for (j, &v) in vars.iter().enumerate() {
            expr.add(v, points[j][coord]);
        }
        lp.add_constraint(expr, ComparisonOp::Eq, 0.0);
    }
    let sol = lp.solve().ok()?;
    let lambda = DVector::from_fn(points.len(), |i, _| *sol.var_value(vars[i]));
    // re-verify: simplex equality handling is floating point
    let mut resid = DVector::zeros(dim);
    for (j, p) in points.iter().enumerate() {
        resid += p * lambda[j];
    }
    let scale = points.iter().map(|p| p.amax()).fold(1.0, f64::max);
    if resid.amax() <= 1e-6 * scale {
        Some(lambda)
    } else {
        None
    }
}

/// Does {z : B z = 0, z_i >= 0 for i in sign_idx} contain a nonzero point?
/// `b` may have zero rows. Returns a witness scaled to unit max-norm.
pub fn signed_kernel_nontrivial(
    b: &DMatrix<f64>,
    sign_idx: &[usize],
) -> Option<DVector<f64>> {
    let dim = b.ncols();
    if dim == 0 {
        return None;
    }
    // (a) LP: maximize the signed coordinates within a box.
    if !sign_idx.is_empty() {
        let mut lp = Lp::new(OptimizationDirection::Maximize);
        let vars: Vec<_> = (0..dim)
            .map(|i| {
                let signed = sign_idx.contains(&i);
                let lo = if signed { 0.0 } else { -1.0 };
                let obj = if signed { 1.0 } else { 0.0 };
                lp.add_var(obj, (lo, 1.0))
            })
            .collect();
        for r in 0..b.nrows() {
            let mut expr = microlp::LinearExpr::empty();
            for (c, &v) in vars.iter().enumerate() {
                expr.add(v, b[(r, c)]);
            }
            lp.add_constraint(expr, ComparisonOp::Eq, 0.0);
        }
        if let Ok(sol) = lp.solve() {
            if sol.objective() > FEAS_TOL {
                let z = DVector::from_fn(dim, |i, _| *sol.var_value(vars[i]));
                let scale = b.amax().max(1.0);
                if (b * &z).amax() <= 1e-6 * scale {
                    return Some(&z / z.amax());
                }
            }
        }
    }
    // (b) nonzero kernel element with the signed coordinates pinned to zero
    let mut stacked = DMatrix::zeros(b.nrows() + sign_idx.len(), dim);
    stacked.view_mut((0, 0), (b.nrows(), dim)).copy_from(b);
    for (r, &i) in sign_idx.iter().enumerate() {
        stacked[(b.nrows() + r, i)] = 1.0;
    }
    let ns = nullspace(&stacked, 1e-10);
    if ns.ncols() > 0 {
        let z: DVector<f64> = ns.column(0).into();
        return Some(&z / z.amax());
    }
    None
}

/// Does {z : A z <= 0, B z = 0} contain a nonzero point? Used to search
/// eigenspaces for cone members.
pub fn polyhedral_cone_nontrivial(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
) -> Option<DVector<f64>> {
    let dim = a.ncols().max(b.ncols());
    if dim == 0 {
        return None;
    }
    for coord in 0..dim {
        for sign in [1.0, -1.0] {
            let mut lp = Lp::new(OptimizationDirection::Maximize);
            let vars: Vec<_> = (0..dim)
                .map(|i| lp.add_var(if i == coord { sign } else { 0.0 }, (-1.0, 1.0)))
                .collect();
            for r in 0..a.nrows() {
                let mut expr = microlp::LinearExpr::empty();
                for (c, &v) in vars.iter().enumerate() {
                    expr.add(v, a[(r, c)]);
                }
                lp.add_constraint(expr, ComparisonOp::Le, 0.0);
            }
            for r in 0..b.nrows() {
                let mut expr = microlp::LinearExpr::empty();
                for (c, &v) in vars.iter().enumerate() {
                    expr.add(v, b[(r, c)]);
                }
                lp.add_constraint(expr, ComparisonOp::Eq, 0.0);
            }
            if let Ok(sol) = lp.solve() {
                if sol.objective() > FEAS_TOL {
                    let z = DVector::from_fn(dim, |i, _| *sol.var_value(vars[i]));
                    let scale = a.amax().max(b.amax()).max(1.0);
                    let ok = (a * &z).max() <= 1e-6 * scale && (b * &z).amax() <= 1e-6 * scale;
                    if ok && z.amax() > FEAS_TOL {
                        return Some(&z / z.amax());
                    }
                }
            }
        }
    }
    None
}
