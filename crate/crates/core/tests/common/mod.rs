//! Shared fixtures and dense reference solvers built on nalgebra.

#![allow(dead_code)]

use faer::{Mat, MatRef};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use qsfa::rng;
use rand_distr::{Distribution, StandardNormal};

pub fn to_na(m: MatRef<'_, f64>) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

pub fn from_na(m: &DMatrix<f64>) -> Mat<f64> {
    Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

pub fn gaussian(rows: usize, cols: usize, seed: u64) -> Mat<f64> {
    let mut r = rng::stream(seed, "test-gaussian", &[rows as u64, cols as u64]);
    Mat::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut r))
}

pub fn gaussian_vec(len: usize, seed: u64) -> Vec<f64> {
    let mut r = rng::stream(seed, "test-vector", &[len as u64]);
    (0..len).map(|_| StandardNormal.sample(&mut r)).collect()
}

pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    (a - b).amax()
}

pub fn vec_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Distance between two unit vectors up to a global sign.
pub fn sign_free_diff(a: &[f64], b: &[f64]) -> f64 {
    let plus = vec_diff(a, b);
    let neg: Vec<f64> = b.iter().map(|v| -v).collect();
    plus.min(vec_diff(a, &neg))
}

pub fn unit(v: &DVector<f64>) -> Vec<f64> {
    let n = v.norm();
    v.iter().map(|x| x / n).collect()
}

/// Symmetric eigendecomposition with ascending eigenvalues.
pub fn sym_eigen_asc(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let e = SymmetricEigen::new(m.clone());
    let mut idx: Vec<usize> = (0..e.eigenvalues.len()).collect();
    idx.sort_by(|&a, &b| e.eigenvalues[a].total_cmp(&e.eigenvalues[b]));
    let vals = idx.iter().map(|&i| e.eigenvalues[i]).collect();
    let vecs = DMatrix::from_fn(m.nrows(), idx.len(), |r, c| e.eigenvectors[(r, idx[c])]);
    (vals, vecs)
}

/// `B^{-1/2}` of a positive definite matrix.
pub fn inv_sqrt(b: &DMatrix<f64>) -> DMatrix<f64> {
    let (vals, vecs) = sym_eigen_asc(b);
    let d = DMatrix::from_diagonal(&DVector::from_iterator(vals.len(), vals.iter().map(|l| 1.0 / l.sqrt())));
    &vecs * d * vecs.transpose()
}

/// Smallest `k` solutions of `A u = λ B u` via Cholesky reduction, with
/// `uᵀ B u = 1`.
pub fn generalized_smallest(a: &DMatrix<f64>, b: &DMatrix<f64>, k: usize) -> (Vec<f64>, DMatrix<f64>) {
    let l = b.clone().cholesky().expect("B positive definite").l();
    let linv = l.clone().try_inverse().expect("invertible factor");
    let c = &linv * a * linv.transpose();
    let c = (&c + c.transpose()) * 0.5;
    let (vals, vecs) = sym_eigen_asc(&c);
    let u = linv.transpose() * vecs.columns(0, k);
    (vals[..k].to_vec(), u)
}

/// Column `j` of `m` scaled to unit norm and signed so its largest-magnitude
/// entry is positive.
pub fn canonical_column(m: &DMatrix<f64>, j: usize) -> Vec<f64> {
    let c = m.column(j);
    let n = c.norm();
    let pivot = c.iter().copied().fold(0.0f64, |p, v| if v.abs() > p.abs() { v } else { p });
    let s = if pivot < 0.0 { -1.0 } else { 1.0 };
    c.iter().map(|v| s * v / n).collect()
}

/// Labelled Gaussian blobs: `per_class` rows around centres spaced along the
/// first axis, with anisotropic noise.
pub fn blobs(classes: usize, per_class: usize, dim: usize, spread: f64, seed: u64) -> (Mat<f64>, Vec<usize>) {
    let noise = gaussian(classes * per_class, dim, seed);
    let mut labels = Vec::with_capacity(classes * per_class);
    let m = Mat::from_fn(classes * per_class, dim, |i, j| {
        let k = i / per_class;
        let centre = if j == 0 { 3.0 * k as f64 } else { 0.0 };
        centre + spread * noise[(i, j)] * (1.0 + j as f64 / dim as f64)
    });
    for i in 0..classes * per_class {
        labels.push(i / per_class);
    }
    (m, labels)
}

/// Chi-square statistic of `counts` against probabilities `p`.
pub fn chi_square(counts: &[usize], p: &[f64]) -> f64 {
    let n: usize = counts.iter().sum();
    counts
        .iter()
        .zip(p)
        .filter(|(_, &p)| p > 0.0)
        .map(|(&c, &p)| {
            let e = p * n as f64;
            (c as f64 - e).powi(2) / e
        })
        .sum()
}

/// Upper critical value of the chi-square distribution at level `1e-3`
/// (Wilson-Hilferty approximation).
pub fn chi_square_critical(dof: usize) -> f64 {
    let k = dof as f64;
    let z = 3.090_232;
    let t = 1.0 - 2.0 / (9.0 * k) + z * (2.0 / (9.0 * k)).sqrt();
    k * t.powi(3)
}

/// Ten-class `side × side` images in `[0, 1]`: each class lights a different
/// stroke pattern, with pixel noise and random intensity.
pub fn synthetic_digits(n: usize, side: usize, seed: u64) -> qsfa::data::RawDataset {
    let d = side * side;
    let noise = gaussian(n, d, seed);
    let labels: Vec<usize> = (0..n).map(|i| (i * 7 + 3) % 10).collect();
    let images = Mat::from_fn(n, d, |i, j| {
        let (r, c) = (j / side, j % side);
        let k = labels[i];
        let on = match k {
            0 => r == 1 || r == side - 2,
            1 => c == side / 2,
            2 => r == c,
            3 => r + c == side - 1,
            4 => c == 1,
            5 => r == side / 2,
            6 => r < side / 2 && c < side / 2,
            7 => r >= side / 2 && c >= side / 2,
            8 => (r + c) % 3 == 0,
            _ => r % 2 == 0 && c % 2 == 0,
        };
        let base = if on { 0.8 } else { 0.1 };
        (base + 0.15 * noise[(i, j)]).clamp(0.0, 1.0)
    });
    qsfa::data::RawDataset {
        images,
        labels,
        image_rows: side,
        image_cols: side,
    }
}
