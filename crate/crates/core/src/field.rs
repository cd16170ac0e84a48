//! Scalar fields with exact derivative oracles and a finite-difference
//! consistency check for the second-order Taylor expansion.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::poly::Polynomial;

/// Value, gradient and Hessian of a scalar field at a point.
#[derive(Debug, Clone)]
pub struct FieldEval {
    pub value: f64,
    pub gradient: DVector<f64>,
    pub hessian: DMatrix<f64>,
}

type Oracle = dyn Fn(&DVector<f64>) -> FieldEval + Send + Sync;

/// A twice differentiable scalar function of `dim` variables. Polynomial
/// fields carry their coefficient representation and serialize exactly;
/// custom fields wrap an in-code oracle.
#[derive(Clone)]
pub enum ScalarField {
    Poly(Polynomial),
    Custom { dim: usize, oracle: Arc<Oracle> },
}

impl std::fmt::Debug for ScalarField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ScalarField::Poly(p) => write!(f, "ScalarField::Poly(dim={})", p.dim),
            ScalarField::Custom { dim, .. } => write!(f, "ScalarField::Custom(dim={dim})"),
        }
    }
}

const HESS_SYM_TOL: f64 = 1e-12;

impl ScalarField {
    pub fn poly(p: Polynomial) -> Self {
        ScalarField::Poly(p)
    }

    pub fn custom<F>(dim: usize, oracle: F) -> Self
    where
        F: Fn(&DVector<f64>) -> FieldEval + Send + Sync + 'static,
    {
        ScalarField::Custom { dim, oracle: Arc::new(oracle) }
    }

    pub fn dim(&self) -> usize {
        match self {
            ScalarField::Poly(p) => p.dim,
            ScalarField::Custom { dim, .. } => *dim,
        }
    }

    pub fn as_poly(&self) -> Option<&Polynomial> {
        match self {
            ScalarField::Poly(p) => Some(p),
            _ => None,
        }
    }

    /// Evaluate value, gradient and Hessian at `point`.
    pub fn eval(&self, point: &DVector<f64>) -> Result<FieldEval> {
        if point.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: point.len() });
        }
        let out = match self {
            ScalarField::Poly(p) => FieldEval {
                value: p.value(point),
                gradient: p.gradient(point),
                hessian: p.hessian(point),
            },
            ScalarField::Custom { oracle, .. } => oracle(point),
        };
        if out.gradient.len() != self.dim()
            || out.hessian.nrows() != self.dim()
            || out.hessian.ncols() != self.dim()
        {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: out.gradient.len() });
        }
        let scale = 1.0 + out.hessian.amax();
        let asym = (&out.hessian - out.hessian.transpose()).amax();
        if asym > HESS_SYM_TOL * scale {
            return Err(Error::Invalid(format!(
                "hessian asymmetry {asym:.3e} exceeds tolerance"
            )));
        }
        Ok(out)
    }

    pub fn value(&self, point: &DVector<f64>) -> Result<f64> {
        Ok(self.eval(point)?.value)
    }
}

/// One row of the finite-difference table: worst second-order Taylor
/// remainder over coordinate directions of magnitude `step`.
#[derive(Debug, Clone)]
pub struct FdRow {
    pub step: f64,
    pub remainder: f64,
}

#[derive(Debug, Clone)]
pub struct FdReport {
    pub rows: Vec<FdRow>,
    /// Observed decay orders between consecutive steps.
    pub orders: Vec<f64>,
    pub passed: bool,
}

/// Check the derivative oracles of `field` against finite differences at
/// `point`. `steps` must be positive and decreasing. The second-order
/// remainder must vanish (degree <= 2 polynomials) or decay superquadratically.
pub fn finite_difference_check(
    field: &ScalarField,
    point: &DVector<f64>,
    steps: &[f64],
) -> Result<FdReport> {
    if steps.is_empty() || steps.iter().any(|&h| h <= 0.0) {
        return Err(Error::Invalid("steps must be positive".into()));
    }
    if steps.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::Invalid("steps must be strictly decreasing".into()));
    }
    let base = field.eval(point)?;
    let n = field.dim();
    let mut rows = Vec::with_capacity(steps.len());
    for &h in steps {
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for sgn in [1.0, -1.0] {
                let mut shifted = point.clone();
                shifted[i] += sgn * h;
                let delta = &shifted - point;
                let predicted = base.value
                    + base.gradient.dot(&delta)
                    + 0.5 * (&base.hessian * &delta).dot(&delta);
                let actual = field.value(&shifted)?;
                worst = worst.max((actual - predicted).abs());
            }
        }
        rows.push(FdRow { step: h, remainder: worst });
    }
    let scale = 1.0 + base.value.abs() + base.gradient.amax();
    let exact = rows.iter().all(|r| r.remainder <= 1e-10 * scale);
    let mut orders = Vec::new();
    for w in rows.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        if b.remainder <= 1e-14 * scale {
            orders.push(f64::INFINITY);
        } else {
            orders.push((a.remainder / b.remainder).ln() / (a.step / b.step).ln());
        }
    }
    let min_order = orders.iter().cloned().fold(f64::INFINITY, f64::min);
    let passed = exact || min_order >= 2.5;
    Ok(FdReport { rows, orders, passed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::poly::Term;
    use nalgebra::dvector;

    #[test]
    fn quadratic_field_remainder_is_roundoff() {
        let p = Polynomial::new(2, vec![
            Term { coef: 1.0, powers: vec![(0, 2)] },
            Term { coef: 1.0, powers: vec![(1, 2)] },
        ]);
        let f = ScalarField::poly(p);
        let rep =
            finite_difference_check(&f, &dvector![0.3, -0.7], &[1e-1, 1e-2, 1e-3]).unwrap();
        assert!(rep.passed);
        assert!(rep.rows.iter().all(|r| r.remainder < 1e-12));
    }

    #[test]
    fn cubic_field_remainder_scales_like_h_cubed() {
        // x^3 at x = 1: remainder of the order-2 expansion is exactly h^3.
        let p = Polynomial::new(1, vec![Term { coef: 1.0, powers: vec![(0, 3)] }]);
        let f = ScalarField::poly(p);
        let rep = finite_difference_check(&f, &dvector![1.0], &[1e-1, 1e-2]).unwrap();
        assert!(rep.passed);
        let r = rep.rows[1].remainder;
        assert!(r > 0.5e-6 && r < 2e-6, "remainder {r}");
    }

    #[test]
    fn wrong_gradient_is_flagged() {
        let f = ScalarField::custom(1, |x: &DVector<f64>| FieldEval {
            value: x[0] * x[0],
            gradient: dvector![1.5 * x[0]], // deliberately wrong
            hessian: DMatrix::from_element(1, 1, 2.0),
        });
        let rep = finite_difference_check(&f, &dvector![1.0], &[1e-1, 1e-2, 1e-3]).unwrap();
        assert!(!rep.passed);
        assert!(rep.orders.iter().all(|&o| o < 1.5));
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let p = Polynomial::zero(2);
        let f = ScalarField::poly(p);
        assert!(f.eval(&dvector![1.0]).is_err());
    }

    #[test]
    fn asymmetric_hessian_rejected() {
        let f = ScalarField::custom(2, |_| FieldEval {
            value: 0.0,
            gradient: dvector![0.0, 0.0],
            hessian: DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]),
        });
        assert!(f.eval(&dvector![0.0, 0.0]).is_err());
    }
}
