//! Small dense helpers on top of nalgebra shared by the numerical modules.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Solves `a x = b` by LU with partial pivoting, rejecting (near-)singular
/// systems.
pub fn solve(a: &DMatrix<f64>, b: &DVector<f64>, context: &'static str) -> Result<DVector<f64>> {
    if a.nrows() != a.ncols() || a.nrows() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.nrows(),
            actual: b.len(),
            context,
        });
    }
    if a.nrows() == 1 {
        let d = a[(0, 0)];
        if d == 0.0 || !d.is_finite() {
            return Err(Error::SingularMatrix(context));
        }
        return Ok(b / d);
    }
    let scale = a.amax();
    let lu = a.clone().lu();
    let u = lu.u();
    let min_pivot = u.diagonal().iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
    if !(min_pivot > scale * 1e-14) {
        return Err(Error::SingularMatrix(context));
    }
    lu.solve(b).ok_or(Error::SingularMatrix(context))
}

/// Solves `a X = B` column by column.
pub fn solve_matrix(a: &DMatrix<f64>, b: &DMatrix<f64>, context: &'static str) -> Result<DMatrix<f64>> {
    let scale = a.amax();
    let lu = a.clone().lu();
    let min_pivot = lu.u().diagonal().iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
    if a.nrows() != a.ncols() || !(min_pivot > scale * 1e-14) {
        return Err(Error::SingularMatrix(context));
    }
    lu.solve(b).ok_or(Error::SingularMatrix(context))
}

/// Inverse of a square matrix, with the same singularity check as [`solve`].
pub fn inverse(a: &DMatrix<f64>, context: &'static str) -> Result<DMatrix<f64>> {
    solve_matrix(a, &DMatrix::identity(a.nrows(), a.ncols()), context)
}

/// Symmetric `M^{-1/2}` and `M^{-1}` via eigendecomposition. Eigenvalues
/// below `floor` are clamped to it.
pub fn sym_inverse_sqrt(m: &DMatrix<f64>, floor: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let vals = eig.eigenvalues.map(|v| v.max(floor));
    let v = &eig.eigenvectors;
    let inv_sqrt = v * DMatrix::from_diagonal(&vals.map(|l| 1.0 / l.sqrt())) * v.transpose();
    let inv = v * DMatrix::from_diagonal(&vals.map(|l| 1.0 / l)) * v.transpose();
    (inv_sqrt, inv)
}

/// Orthogonal projector `I - Gᵀ(GGᵀ)⁻¹G` onto the null space of `G`.
pub fn tangent_projector(g: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let ggt = g * g.transpose();
    let inv = inverse(&ggt, "G Gᵀ")?;
    Ok(DMatrix::identity(g.ncols(), g.ncols()) - g.transpose() * inv * g)
}

pub fn all_finite(v: &DVector<f64>) -> bool {
    v.iter().all(|x| x.is_finite())
}

#[cfg(test)]
pub(crate) fn relative_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / (1.0 + b.norm())
}
