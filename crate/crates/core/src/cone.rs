//! Polyhedral cones {v : A v <= 0, B v = 0}. All critical cones reduce to
//! this representation after discretization.

use nalgebra::{DMatrix, DVector};

use crate::feas::polyhedral_cone_nontrivial;

#[derive(Debug, Clone)]
pub struct PolyhedralCone {
    /// Inequality rows: A v <= 0.
    pub a: DMatrix<f64>,
    /// Equality rows: B v = 0.
    pub b: DMatrix<f64>,
    pub dim: usize,
}

impl PolyhedralCone {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>) -> Self {
        assert!(a.nrows() == 0 || b.nrows() == 0 || a.ncols() == b.ncols());
        let dim = a.ncols().max(b.ncols());
        PolyhedralCone { a, b, dim }
    }

    /// The whole space R^dim.
    pub fn full_space(dim: usize) -> Self {
        PolyhedralCone { a: DMatrix::zeros(0, dim), b: DMatrix::zeros(0, dim), dim }
    }

    pub fn num_ineq(&self) -> usize {
        self.a.nrows()
    }

    pub fn num_eq(&self) -> usize {
        self.b.nrows()
    }

    pub fn contains(&self, v: &DVector<f64>, tol: f64) -> bool {
        debug_assert_eq!(v.len(), self.dim);
        let scale = 1.0 + v.amax();
        if self.a.nrows() > 0 && (&self.a * v).max() > tol * scale {
            return false;
        }
        if self.b.nrows() > 0 && (&self.b * v).amax() > tol * scale {
            return false;
        }
        true
    }

    /// True iff the cone is {0}.
    pub fn is_trivial(&self) -> bool {
        polyhedral_cone_nontrivial(&self.padded_a(), &self.padded_b()).is_none()
    }

    fn padded_a(&self) -> DMatrix<f64> {
        if self.a.ncols() == self.dim { self.a.clone() } else { DMatrix::zeros(self.a.nrows(), self.dim) }
    }

    fn padded_b(&self) -> DMatrix<f64> {
        if self.b.ncols() == self.dim { self.b.clone() } else { DMatrix::zeros(self.b.nrows(), self.dim) }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;

    #[test]
    fn halfline_membership() {
        // {v : -v <= 0} = [0, inf)
        let k = PolyhedralCone::new(DMatrix::from_row_slice(1, 1, &[-1.0]), DMatrix::zeros(0, 1));
        assert!(k.contains(&dvector![2.0], 1e-9));
        assert!(!k.contains(&dvector![-1.0], 1e-9));
        assert!(!k.is_trivial());
    }

    #[test]
    fn pinched_cone_is_trivial() {
        // {v : -v <= 0, v <= 0} = {0}
        let k = PolyhedralCone::new(
            DMatrix::from_row_slice(2, 1, &[-1.0, 1.0]),
            DMatrix::zeros(0, 1),
        );
        assert!(k.is_trivial());
    }

    #[test]
    fn kernel_cone() {
        let k = PolyhedralCone::new(
            DMatrix::zeros(0, 2),
            DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
        );
        assert!(k.contains(&dvector![1.0, -1.0], 1e-9));
        assert!(!k.contains(&dvector![1.0, 1.0], 1e-9));
    }
}
