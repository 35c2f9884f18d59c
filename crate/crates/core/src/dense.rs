// SPDX-License-Identifier: Apache-2.0

//! Dense materialization helpers and the dense-size cap.

use faer::{Mat, Side};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::field::Field;
use crate::grid::Grid;

/// Default largest `k·nᵈ` for which operators are materialized.
pub const DEFAULT_DENSE_CAP: usize = 8192;

/// Environment variable overriding [`DEFAULT_DENSE_CAP`].
pub const DENSE_CAP_ENV: &str = "MEDSCAT_DENSE_CAP";

pub fn dense_cap() -> usize {
    std::env::var(DENSE_CAP_ENV).ok().and_then(|v| v.trim().parse().ok()).unwrap_or(DEFAULT_DENSE_CAP)
}

pub fn check_densifiable(dof: usize) -> Result<()> {
    let cap = dense_cap();
    if dof > cap {
        return Err(Error::DenseCap { dof, cap });
    }
    Ok(())
}

/// Columns `T e_j` for every flat basis index.
pub fn materialize<F>(grid: &Grid, mut apply: F) -> Result<Mat<Complex64>>
where
    F: FnMut(&Field) -> Result<Field>,
{
    let n = grid.dof();
    check_densifiable(n)?;
    let mut mat = Mat::<Complex64>::zeros(n, n);
    for j in 0..n {
        let col = apply(&Field::basis(grid, j))?;
        for (i, v) in col.values().iter().enumerate() {
            mat[(i, j)] = *v;
        }
    }
    Ok(mat)
}

pub fn column_to_field(grid: &Grid, mat: &Mat<Complex64>, j: usize) -> Field {
    let values = (0..mat.nrows()).map(|i| mat[(i, j)]).collect();
    Field::from_values(grid, values).expect("column length matches grid")
}

pub fn matvec(mat: &Mat<Complex64>, f: &Field) -> Vec<Complex64> {
    let v = f.values();
    let mut out = vec![Complex64::new(0.0, 0.0); mat.nrows()];
    for (j, &vj) in v.iter().enumerate().take(mat.ncols()) {
        if vj == Complex64::new(0.0, 0.0) {
            continue;
        }
        let col = mat.col(j);
        for (o, a) in out.iter_mut().zip(col.iter()) {
            *o += a * vj;
        }
    }
    out
}

/// `A^H v`.
pub fn adjoint_matvec(mat: &Mat<Complex64>, f: &Field) -> Vec<Complex64> {
    let v = f.values();
    (0..mat.ncols()).map(|j| mat.col(j).iter().zip(v).map(|(a, b)| a.conj() * b).sum()).collect()
}

/// Eigen-decomposition of a Hermitian matrix (eigenvalues ascending). Uses the real
/// symmetric solver when the imaginary parts vanish.
pub fn hermitian_eigen(mat: &Mat<Complex64>) -> Result<(Vec<f64>, Mat<Complex64>)> {
    let n = mat.nrows();
    let mut scale = 0.0f64;
    let mut imag = 0.0f64;
    for j in 0..n {
        for i in 0..n {
            let v = mat[(i, j)];
            scale = scale.max(v.norm());
            imag = imag.max(v.im.abs());
        }
    }
    if imag <= 1e-15 * scale {
        let real = Mat::<f64>::from_fn(n, n, |i, j| 0.5 * (mat[(i, j)].re + mat[(j, i)].re));
        let evd =
            real.self_adjoint_eigen(Side::Lower).map_err(|e| Error::LinAlg(format!("symmetric eigensolver: {e:?}")))?;
        let vals = evd.S().column_vector().iter().copied().collect();
        let u = evd.U();
        let vecs = Mat::<Complex64>::from_fn(n, n, |i, j| Complex64::new(u[(i, j)], 0.0));
        return Ok((vals, vecs));
    }
    let herm = Mat::<Complex64>::from_fn(n, n, |i, j| 0.5 * (mat[(i, j)] + mat[(j, i)].conj()));
    let evd =
        herm.self_adjoint_eigen(Side::Lower).map_err(|e| Error::LinAlg(format!("hermitian eigensolver: {e:?}")))?;
    let vals = evd.S().column_vector().iter().map(|c| c.re).collect();
    Ok((vals, evd.U().to_owned()))
}

/// Singular values, nonincreasing.
pub fn singular_values(mat: &Mat<Complex64>) -> Result<Vec<f64>> {
    mat.singular_values().map_err(|e| Error::LinAlg(format!("svd: {e:?}")))
}

/// Inverse through partial-pivoting LU.
pub fn inverse(mat: &Mat<Complex64>) -> Result<Mat<Complex64>> {
    use faer::linalg::solvers::DenseSolveCore;
    let n = mat.nrows();
    let lu = mat.partial_piv_lu();
    let inv = lu.inverse();
    let finite = (0..n).all(|j| (0..n).all(|i| inv[(i, j)].re.is_finite() && inv[(i, j)].im.is_finite()));
    if !finite || n == 0 {
        return Err(Error::LinAlg("matrix is singular".into()));
    }
    Ok(inv)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eigen_of_hermitian_two_by_two() {
        let m = Mat::<Complex64>::from_fn(2, 2, |i, j| match (i, j) {
            (0, 1) => Complex64::new(0.0, 2.0),
            (1, 0) => Complex64::new(0.0, -2.0),
            _ => Complex64::new(0.0, 0.0),
        });
        let (vals, _) = hermitian_eigen(&m).unwrap();
        assert!((vals[0] + 2.0).abs() < 1e-14 && (vals[1] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn inverse_round_trip() {
        let m = Mat::<Complex64>::from_fn(3, 3, |i, j| {
            Complex64::new(if i == j { 4.0 } else { 1.0 / (1.0 + i as f64 + j as f64) }, (i as f64) - (j as f64))
        });
        let inv = inverse(&m).unwrap();
        let prod = &m * &inv;
        for i in 0..3 {
            for j in 0..3 {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((prod[(i, j)] - Complex64::new(e, 0.0)).norm() < 1e-13);
            }
        }
    }
}
