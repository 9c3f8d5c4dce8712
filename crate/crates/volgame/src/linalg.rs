//! Small dense linear-algebra helpers shared by the solver modules.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Eigenvalues of a symmetric matrix, ascending.
pub fn symmetric_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let sym = 0.5 * (m + m.transpose());
    let mut ev: Vec<f64> = sym.symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(|a, b| a.partial_cmp(b).expect("eigenvalues are finite"));
    ev
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    *symmetric_eigenvalues(m)
        .first()
        .expect("nonempty spectrum")
}

pub fn max_eigenvalue(m: &DMatrix<f64>) -> f64 {
    *symmetric_eigenvalues(m)
        .last()
        .expect("nonempty spectrum")
}

/// Solves `A x = b` by pivoted LU.
pub fn solve(a: &DMatrix<f64>, b: &DVector<f64>, context: &str) -> Result<DVector<f64>> {
    a.clone()
        .lu()
        .solve(b)
        .ok_or_else(|| Error::SingularSystem {
            context: context.into(),
        })
}

/// Solves `A X = B` columnwise by pivoted LU.
pub fn solve_matrix(a: &DMatrix<f64>, b: &DMatrix<f64>, context: &str) -> Result<DMatrix<f64>> {
    a.clone()
        .lu()
        .solve(b)
        .ok_or_else(|| Error::SingularSystem {
            context: context.into(),
        })
}

/// Solves `X A = B`, i.e. the transposed system.
pub fn solve_right(a: &DMatrix<f64>, b: &DMatrix<f64>, context: &str) -> Result<DMatrix<f64>> {
    let xt = solve_matrix(&a.transpose(), &b.transpose(), context)?;
    Ok(xt.transpose())
}

/// Solves `x A = b` for a row vector.
pub fn solve_row(
    a: &DMatrix<f64>,
    b: &nalgebra::RowDVector<f64>,
    context: &str,
) -> Result<nalgebra::RowDVector<f64>> {
    let x = solve(&a.transpose(), &b.transpose(), context)?;
    Ok(x.transpose())
}

/// 2-norm condition number via singular values; infinite when singular.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.iter().cloned().fold(0.0_f64, f64::max);
    let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Symmetric nonnegative square root. Eigenvalues below `-floor` are an
/// error; small negatives are clamped to zero.
pub fn symmetric_sqrt(m: &DMatrix<f64>, floor: f64) -> Result<DMatrix<f64>> {
    let sym = 0.5 * (m + m.transpose());
    let eig = sym.symmetric_eigen();
    let scale = eig
        .eigenvalues
        .iter()
        .fold(0.0_f64, |a, &b| a.max(b.abs()))
        .max(1.0);
    let mut roots = eig.eigenvalues.clone();
    for v in roots.iter_mut() {
        if *v < -floor * scale {
            return Err(Error::CaptureMatrixIndefinite { eigenvalue: *v });
        }
        *v = v.max(0.0).sqrt();
    }
    let d = DMatrix::from_diagonal(&roots);
    Ok(&eig.eigenvectors * d * eig.eigenvectors.transpose())
}
