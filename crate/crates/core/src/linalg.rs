//! Small dense linear-algebra helpers shared by the atom sets, solvers and
//! geometry estimators.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::rng::Rng;

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn norm1(a: &[f64]) -> f64 {
    a.iter().map(|v| v.abs()).sum()
}

pub fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn scale(a: &[f64], s: f64) -> Vec<f64> {
    a.iter().map(|v| v * s).collect()
}

/// Normalizes in place; returns the original norm.
pub fn normalize(a: &mut [f64]) -> f64 {
    let n = norm2(a);
    if n > 0.0 {
        a.iter_mut().for_each(|v| *v /= n);
    }
    n
}

pub fn gaussian_vec(rng: &mut Rng, len: usize) -> Vec<f64> {
    (0..len)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// Neumaier-compensated sum; result does not depend on how the terms were
/// produced, only on their order.
pub fn compensated_sum(values: &[f64]) -> f64 {
    let mut sum = 0.0f64;
    let mut c = 0.0f64;
    for &v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            c += (sum - t) + v;
        } else {
            c += (v - t) + sum;
        }
        sum = t;
    }
    sum + c
}

/// Mean and standard error of the mean.
pub fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = compensated_sum(values) / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let dev: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
    let var = compensated_sum(&dev) / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Euclidean projection onto the ℓ1 ball of radius `radius` (sort and
/// threshold).
pub fn project_l1_ball(x: &[f64], radius: f64) -> Vec<f64> {
    if norm1(x) <= radius {
        return x.to_vec();
    }
    if radius <= 0.0 {
        return vec![0.0; x.len()];
    }
    let theta = l1_threshold(x, radius);
    x.iter()
        .map(|&v| v.signum() * (v.abs() - theta).max(0.0))
        .collect()
}

/// Threshold θ such that Σ (|x_i| − θ)₊ = radius. Requires ‖x‖₁ > radius > 0.
fn l1_threshold(x: &[f64], radius: f64) -> f64 {
    let mut mags: Vec<f64> = x.iter().map(|v| v.abs()).collect();
    mags.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (j, &u) in mags.iter().enumerate() {
        cumsum += u;
        let t = (cumsum - radius) / (j + 1) as f64;
        if u - t > 0.0 {
            theta = t;
        } else {
            break;
        }
    }
    theta.max(0.0)
}

/// Singular value decomposition with singular values sorted in descending
/// order. Ties keep a deterministic factor order and each left singular
/// vector has its first nonzero component positive.
#[derive(Debug, Clone)]
pub struct SortedSvd {
    pub u: DMatrix<f64>,
    pub s: Vec<f64>,
    pub v: DMatrix<f64>,
}

impl SortedSvd {
    pub fn new(m: &DMatrix<f64>) -> Self {
        let (u, sv, v) = jacobi_svd(m);
        let k = sv.len();
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&a, &b| {
            sv[b]
                .total_cmp(&sv[a])
                .then_with(|| lexicographic(&u.column(a), &u.column(b)))
        });
        let mut su = DMatrix::zeros(m.nrows(), k);
        let mut svv = DMatrix::zeros(m.ncols(), k);
        let mut s = Vec::with_capacity(k);
        for (dst, &src) in order.iter().enumerate() {
            let mut uc = u.column(src).into_owned();
            let mut vc = v.column(src).into_owned();
            if let Some(first) = uc.iter().find(|x| x.abs() > 1e-14) {
                if *first < 0.0 {
                    uc.neg_mut();
                    vc.neg_mut();
                }
            }
            su.set_column(dst, &uc);
            svv.set_column(dst, &vc);
            s.push(sv[src]);
        }
        SortedSvd { u: su, s, v: svv }
    }

    /// Rebuilds `U diag(values) Vᵀ`.
    pub fn compose(&self, values: &[f64]) -> DMatrix<f64> {
        let mut us = self.u.clone();
        for (j, &d) in values.iter().enumerate() {
            us.column_mut(j).scale_mut(d);
        }
        &us * self.v.transpose()
    }
}

fn lexicographic(
    a: &nalgebra::DVectorView<'_, f64>,
    b: &nalgebra::DVectorView<'_, f64>,
) -> std::cmp::Ordering {
    for (x, y) in a.iter().zip(b.iter()) {
        let o = y.abs().total_cmp(&x.abs());
        if o != std::cmp::Ordering::Equal {
            return o;
        }
    }
    std::cmp::Ordering::Equal
}

pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    let mut s = jacobi_svd(m).1;
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Thin SVD `m = U diag(s) Vᵀ` by one-sided Jacobi rotations, unsorted. `U`
/// and `V` have `min(rows, cols)` orthonormal columns even when `m` is rank
/// deficient. (The bidiagonal SVD in nalgebra loses accuracy on
/// rank-deficient inputs, which the tangent-cone projections produce
/// routinely.)
pub fn jacobi_svd(m: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>, DMatrix<f64>) {
    if m.nrows() < m.ncols() {
        let (v, s, u) = jacobi_svd(&m.transpose());
        return (u, s, v);
    }
    let (rows, k) = m.shape();
    let mut w = m.clone();
    let mut v = DMatrix::<f64>::identity(k, k);
    for _sweep in 0..80 {
        let mut rotated = false;
        for i in 0..k {
            for j in (i + 1)..k {
                let alpha = w.column(i).norm_squared();
                let beta = w.column(j).norm_squared();
                let gamma = w.column(i).dot(&w.column(j));
                if gamma == 0.0 || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for r in 0..rows {
                    let (a, b) = (w[(r, i)], w[(r, j)]);
                    w[(r, i)] = c * a - s * b;
                    w[(r, j)] = s * a + c * b;
                }
                for r in 0..k {
                    let (a, b) = (v[(r, i)], v[(r, j)]);
                    v[(r, i)] = c * a - s * b;
                    v[(r, j)] = s * a + c * b;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let s: Vec<f64> = (0..k).map(|j| w.column(j).norm()).collect();
    let top = s.iter().copied().fold(0.0, f64::max);
    let tiny = top * f64::EPSILON * rows as f64;
    let mut u = DMatrix::<f64>::zeros(rows, k);
    let mut missing = Vec::new();
    for (j, &sj) in s.iter().enumerate() {
        if sj > tiny && sj > 0.0 {
            u.set_column(j, &(w.column(j) / sj));
        } else {
            missing.push(j);
        }
    }
    // complete U with standard basis vectors orthogonalized against the rest
    let mut basis = 0;
    for j in missing {
        while basis < rows {
            let mut e = DVector::<f64>::zeros(rows);
            e[basis] = 1.0;
            basis += 1;
            for _ in 0..2 {
                for c in 0..k {
                    if c != j {
                        let proj = u.column(c).dot(&e);
                        e -= u.column(c) * proj;
                    }
                }
            }
            let n = e.norm();
            if n > 0.5 {
                u.set_column(j, &(e / n));
                break;
            }
        }
    }
    (u, s, v)
}

/// Column-major view of a vectorized matrix parameter.
pub fn to_matrix(x: &[f64], rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_column_slice(rows, cols, x)
}

pub fn from_matrix(m: &DMatrix<f64>) -> Vec<f64> {
    m.as_slice().to_vec()
}

/// Orthogonal polar factor `U Vᵀ` of a square matrix.
pub fn polar_factor(m: &DMatrix<f64>) -> DMatrix<f64> {
    let (u, _, v) = jacobi_svd(m);
    u * v.transpose()
}

/// Haar-distributed orthogonal matrix (QR of a Gaussian matrix with the sign
/// of R's diagonal absorbed).
pub fn random_orthogonal(rng: &mut Rng, m: usize) -> DMatrix<f64> {
    let g = DMatrix::from_vec(m, m, gaussian_vec(rng, m * m));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..m {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// Symmetric part `(A + Aᵀ)/2`.
pub fn sym(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// Projection of a symmetric matrix onto the positive semidefinite cone.
pub fn project_psd(a: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(a.clone());
    let vals = eig.eigenvalues.map(|v| v.max(0.0));
    &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose()
}

pub fn max_eigenvalue_sym(a: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(a.clone()).eigenvalues.max()
}

pub fn dvec(x: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(x)
}
