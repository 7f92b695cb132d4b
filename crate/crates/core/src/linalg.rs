//! Thin dense linear-algebra helpers over `faer`.

use faer::linalg::matmul::matmul;
use faer::{Accum, Mat, MatMut, MatRef, Par, Side};

use crate::error::{Error, Result};

/// Relative rank tolerance for singular values obtained from a direct SVD.
pub const RANK_TOL: f64 = 1e-10;

/// Relative rank tolerance for singular values recovered as square roots of
/// Gram-matrix eigenvalues. Eigenvalue round-off of order `1e-16 * λ_max`
/// turns into singular-value noise of order `1e-8 * σ_max`.
pub const GRAM_RANK_TOL: f64 = 1e-7;

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Scales `v` to unit length in place and returns its former norm.
pub fn normalize(v: &mut [f64]) -> f64 {
    let n = norm(v);
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

pub fn row(m: MatRef<'_, f64>, i: usize) -> Vec<f64> {
    (0..m.ncols()).map(|j| m[(i, j)]).collect()
}

pub fn col(m: MatRef<'_, f64>, j: usize) -> Vec<f64> {
    (0..m.nrows()).map(|i| m[(i, j)]).collect()
}

/// Contiguous view of column `j`. Panics if `m` is not column-major.
pub fn col_slice<'a>(m: MatRef<'a, f64>, j: usize) -> &'a [f64] {
    m.col(j)
        .try_as_col_major()
        .expect("column-major matrix")
        .as_slice()
}

/// `m * x`.
pub fn matvec(m: MatRef<'_, f64>, x: &[f64]) -> Vec<f64> {
    assert_eq!(m.ncols(), x.len());
    let mut out = vec![0.0; m.nrows()];
    let xs = MatRef::from_column_major_slice(x, x.len(), 1);
    let os = MatMut::from_column_major_slice_mut(&mut out, m.nrows(), 1);
    matmul(os, Accum::Replace, m, xs, 1.0, Par::Seq);
    out
}

/// `mᵀ * x`.
pub fn matvec_t(m: MatRef<'_, f64>, x: &[f64]) -> Vec<f64> {
    assert_eq!(m.nrows(), x.len());
    let mut out = vec![0.0; m.ncols()];
    let xs = MatRef::from_column_major_slice(x, x.len(), 1);
    let os = MatMut::from_column_major_slice_mut(&mut out, m.ncols(), 1);
    matmul(os, Accum::Replace, m.transpose(), xs, 1.0, Par::Seq);
    out
}

pub fn mat_mul(a: MatRef<'_, f64>, b: MatRef<'_, f64>) -> Mat<f64> {
    let mut out = Mat::zeros(a.nrows(), b.ncols());
    matmul(out.as_mut(), Accum::Replace, a, b, 1.0, Par::Seq);
    out
}

/// `aᵀ * b`.
pub fn mat_tmul(a: MatRef<'_, f64>, b: MatRef<'_, f64>) -> Mat<f64> {
    mat_mul(a.transpose(), b)
}

/// `xᵀx`, symmetrized.
pub fn gram(x: MatRef<'_, f64>) -> Mat<f64> {
    let mut g = mat_tmul(x, x);
    symmetrize(&mut g);
    g
}

pub fn symmetrize(m: &mut Mat<f64>) {
    let n = m.nrows();
    for j in 0..n {
        for i in (j + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

/// Eigendecomposition of a symmetric matrix, eigenvalues in descending order.
pub fn sym_eigen_desc(m: MatRef<'_, f64>) -> Result<(Vec<f64>, Mat<f64>)> {
    let (vals, vecs) = sym_eigen_asc(m)?;
    let n = vals.len();
    let vals = vals.into_iter().rev().collect();
    let vecs = Mat::from_fn(vecs.nrows(), n, |i, j| vecs[(i, n - 1 - j)]);
    Ok((vals, vecs))
}

/// Eigendecomposition of a symmetric matrix, eigenvalues in ascending order.
pub fn sym_eigen_asc(m: MatRef<'_, f64>) -> Result<(Vec<f64>, Mat<f64>)> {
    if m.nrows() != m.ncols() {
        return Err(Error::invalid("eigendecomposition needs a square matrix"));
    }
    check_finite(m)?;
    let evd = m
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Decomposition(format!("symmetric eigensolver: {e:?}")))?;
    let s = evd.S().column_vector();
    let vals = (0..m.nrows()).map(|i| s[i]).collect();
    Ok((vals, evd.U().to_owned()))
}

pub fn sym_eigenvalues_desc(m: MatRef<'_, f64>) -> Result<Vec<f64>> {
    check_finite(m)?;
    let mut vals = m
        .self_adjoint_eigenvalues(Side::Lower)
        .map_err(|e| Error::Decomposition(format!("symmetric eigensolver: {e:?}")))?;
    vals.reverse();
    Ok(vals)
}

/// Thin SVD `m = u diag(s) vᵀ`, singular values descending.
pub fn thin_svd(m: MatRef<'_, f64>) -> Result<(Mat<f64>, Vec<f64>, Mat<f64>)> {
    check_finite(m)?;
    let svd = m
        .thin_svd()
        .map_err(|e| Error::Decomposition(format!("svd: {e:?}")))?;
    let s = svd.S().column_vector();
    let k = s.nrows();
    let sigma = (0..k).map(|i| s[i]).collect();
    Ok((svd.U().to_owned(), sigma, svd.V().to_owned()))
}

pub fn check_finite(m: MatRef<'_, f64>) -> Result<()> {
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            if !m[(i, j)].is_finite() {
                return Err(Error::invalid(format!("non-finite entry at ({i}, {j})")));
            }
        }
    }
    Ok(())
}

/// Flips each column so that its largest-magnitude coordinate is positive.
pub fn fix_column_signs(m: &mut Mat<f64>) {
    for j in 0..m.ncols() {
        let mut best = 0.0f64;
        let mut sign = 1.0;
        for i in 0..m.nrows() {
            let v = m[(i, j)];
            if v.abs() > best {
                best = v.abs();
                sign = v.signum();
            }
        }
        if sign < 0.0 {
            for i in 0..m.nrows() {
                m[(i, j)] = -m[(i, j)];
            }
        }
    }
}

/// Largest singular value of `x` by power iteration on `xᵀx`, without forming
/// the Gram matrix.
pub fn largest_singular_value(x: MatRef<'_, f64>) -> f64 {
    let d = x.ncols();
    if d == 0 || x.nrows() == 0 {
        return 0.0;
    }
    let mut v: Vec<f64> = (0..d).map(|j| 1.0 + 1e-3 * j as f64).collect();
    normalize(&mut v);
    let mut lambda = 0.0;
    for _ in 0..2000 {
        let xv = matvec(x, &v);
        let mut w = matvec_t(x, &xv);
        let rayleigh = dot(&v, &w);
        let n = normalize(&mut w);
        if n == 0.0 {
            return 0.0;
        }
        v = w;
        if (rayleigh - lambda).abs() <= 1e-15 * rayleigh {
            lambda = rayleigh;
            break;
        }
        lambda = rayleigh;
    }
    // One last Rayleigh quotient on the converged vector.
    let xv = matvec(x, &v);
    dot(&xv, &xv).max(lambda).sqrt()
}
