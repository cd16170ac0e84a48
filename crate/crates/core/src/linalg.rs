//! Dense linear-algebra helpers: rank, nullspace bases, generalized
//! symmetric eigenvalues for a positive-definite metric.

use nalgebra::{DMatrix, DVector};

/// Rank with an absolute singular-value cutoff `tol * sigma_max`.
pub fn rank(mat: &DMatrix<f64>, rel_tol: f64) -> usize {
    if mat.nrows() == 0 || mat.ncols() == 0 {
        return 0;
    }
    let svd = mat.clone().svd(false, false);
    let smax = svd.singular_values.max();
    if smax == 0.0 {
        return 0;
    }
    svd.singular_values.iter().filter(|&&s| s > rel_tol * smax).count()
}

/// Orthonormal basis of the nullspace of `mat` (columns). An empty matrix
/// (0 rows) has the full space as nullspace. Computed from the spectral
/// decomposition of mat' * mat, which is full even when mat is wide.
pub fn nullspace(mat: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    let ncols = mat.ncols();
    if mat.nrows() == 0 {
        return DMatrix::identity(ncols, ncols);
    }
    let gram = mat.transpose() * mat;
    let eig = gram.symmetric_eigen();
    let lmax = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max).max(0.0);
    let smax = lmax.sqrt();
    // the gram eigenvalues carry O(eps * lmax) roundoff, so the cutoff must
    // not drop below that noise floor or genuine null directions are lost
    let cutoff = (rel_tol * smax.max(1.0)).powi(2).max(1e-12 * lmax.max(1.0));
    let keep: Vec<usize> = (0..ncols).filter(|&i| eig.eigenvalues[i] <= cutoff).collect();
    let mut basis = DMatrix::zeros(ncols, keep.len());
    for (j, &i) in keep.iter().enumerate() {
        basis.column_mut(j).copy_from(&eig.eigenvectors.column(i));
    }
    basis
}

/// Eigenpairs of the pencil (A, G) with G symmetric positive definite:
/// A v = mu G v. Returns (eigenvalues, eigenvectors as columns), sorted
/// ascending. Eigenvectors are G-orthonormal.
pub fn generalized_symmetric_eigen(
    a: &DMatrix<f64>,
    g: &DMatrix<f64>,
) -> Option<(DVector<f64>, DMatrix<f64>)> {
    let n = a.nrows();
    if n == 0 {
        return Some((DVector::zeros(0), DMatrix::zeros(0, 0)));
    }
    let chol = g.clone().cholesky()?;
    let l = chol.l();
    let linv = l.clone().try_inverse()?;
    let reduced = &linv * a * linv.transpose();
    let sym = (reduced.clone() + reduced.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].partial_cmp(&eig.eigenvalues[j]).unwrap());
    let mut vals = DVector::zeros(n);
    let mut vecs = DMatrix::zeros(n, n);
    let back = linv.transpose();
    for (c, &i) in order.iter().enumerate() {
        vals[c] = eig.eigenvalues[i];
        let v = &back * eig.eigenvectors.column(i);
        vecs.column_mut(c).copy_from(&v);
    }
    Some((vals, vecs))
}

/// Minimum-norm least-squares solution of `mat * x = rhs` via SVD.
pub fn lstsq(mat: &DMatrix<f64>, rhs: &DVector<f64>, rel_tol: f64) -> DVector<f64> {
    if mat.ncols() == 0 {
        return DVector::zeros(0);
    }
    let svd = mat.clone().svd(true, true);
    svd.solve(rhs, rel_tol).unwrap_or_else(|_| DVector::zeros(mat.ncols()))
}
