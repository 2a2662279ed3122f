//! Dense symmetric eigensolver.
//!
//! Householder reduction to tridiagonal form followed by implicit QL with
//! Wilkinson-style shifts. The full decomposition accumulates rotations on
//! the eigenvector rows; [`symmetric_top_eigen`] instead recovers only the
//! leading eigenvectors by inverse iteration on the tridiagonal matrix, which
//! keeps the cost at one reduction for large `d`.

use crate::error::{Error, Result};
use crate::linalg::matrix::{axpy, dot, norm, Matrix};
use crate::Scalar;

const SYMMETRY_TOL: f64 = 1e-10;
const MAX_QL_SWEEPS: usize = 60;

/// Full spectral decomposition `X = V diag(λ) V^T`.
#[derive(Clone, Debug)]
pub struct EigenSystem<T> {
    /// Eigenvalues in descending order.
    pub eigenvalues: Vec<T>,
    /// Orthogonal matrix whose column `i` is the eigenvector of `eigenvalues[i]`.
    pub eigenvectors: Matrix<T>,
}

impl<T: Scalar> EigenSystem<T> {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Eigenvector `i` as a vector.
    pub fn vector(&self, i: usize) -> Vec<T> {
        self.eigenvectors.column(i)
    }

    /// `V diag(λ) V^T`
    pub fn reconstruct(&self) -> Matrix<T> {
        let n = self.dim();
        let vt = self.eigenvectors.transpose();
        let mut out = Matrix::zeros(n, n);
        for (k, &lambda) in self.eigenvalues.iter().enumerate() {
            let v = vt.row(k);
            for i in 0..n {
                let s = lambda * v[i];
                if s != T::zero() {
                    axpy(s, v, out.row_mut(i));
                }
            }
        }
        out
    }
}

/// Leading eigenpairs of a symmetric matrix.
#[derive(Clone, Debug)]
pub struct TopEigen<T> {
    /// Descending eigenvalues.
    pub values: Vec<T>,
    /// Row `i` is the unit eigenvector of `values[i]`.
    pub vectors: Matrix<T>,
    /// Every eigenvalue of the input, descending.
    pub spectrum: Vec<T>,
}

/// Householder tridiagonalization. Reflector `k` is stored in the (unused)
/// upper part of row `k`.
struct Tridiagonal<T> {
    n: usize,
    work: Vec<T>,
    betas: Vec<T>,
    diag: Vec<T>,
    /// `off[i] = T[i, i+1]`, with `off[n-1] = 0`.
    off: Vec<T>,
}

impl<T: Scalar> Tridiagonal<T> {
    fn reduce(x: &Matrix<T>) -> Self {
        let n = x.rows();
        let mut a = x.as_slice().to_vec();
        let mut betas = vec![T::zero(); n];
        let mut diag = vec![T::zero(); n];
        let mut off = vec![T::zero(); n];
        let mut p = vec![T::zero(); n];
        let two = T::of(2.0);

        for k in 0..n.saturating_sub(2) {
            let len = n - k - 1;
            let mut v: Vec<T> = (k + 1..n).map(|i| a[i * n + k]).collect();
            let tail_sq: T = v[1..].iter().map(|&t| t * t).sum();
            diag[k] = a[k * n + k];
            if tail_sq == T::zero() {
                off[k] = v[0];
                betas[k] = T::zero();
                a[k * n + k + 1..(k + 1) * n].iter_mut().for_each(|t| *t = T::zero());
                continue;
            }
            let xnorm = (v[0] * v[0] + tail_sq).sqrt();
            let alpha = if v[0] > T::zero() { -xnorm } else { xnorm };
            v[0] -= alpha;
            let vtv = v[0] * v[0] + tail_sq;
            let beta = two / vtv;
            off[k] = alpha;
            betas[k] = beta;

            // p = beta * A22 v, one pass over the lower triangle
            let p = &mut p[..len];
            p.iter_mut().for_each(|t| *t = T::zero());
            for r in 0..len {
                let i = k + 1 + r;
                let row = &a[i * n + k + 1..i * n + i];
                let vr = v[r];
                p[r] += dot(row, &v[..r]) + a[i * n + i] * vr;
                axpy(vr, row, &mut p[..r]);
            }
            p.iter_mut().for_each(|t| *t *= beta);
            let kappa = beta / two * dot(p, &v);
            let w: Vec<T> = p.iter().zip(&v).map(|(&pi, &vi)| pi - kappa * vi).collect();

            // A22 -= v w^T + w v^T on the lower triangle
            for r in 0..len {
                let i = k + 1 + r;
                let row = &mut a[i * n + k + 1..=i * n + i];
                let (vr, wr) = (v[r], w[r]);
                for (c, t) in row.iter_mut().enumerate() {
                    *t -= vr * w[c] + wr * v[c];
                }
            }
            a[k * n + k + 1..(k + 1) * n].copy_from_slice(&v);
        }
        if n >= 2 {
            diag[n - 2] = a[(n - 2) * n + n - 2];
            off[n - 2] = a[(n - 1) * n + n - 2];
        }
        if n >= 1 {
            diag[n - 1] = a[(n - 1) * n + n - 1];
        }
        Tridiagonal {
            n,
            work: a,
            betas,
            diag,
            off,
        }
    }

    /// Maps a vector from the tridiagonal basis back to the original one.
    fn back_transform(&self, y: &mut [T]) {
        let n = self.n;
        for k in (0..n.saturating_sub(2)).rev() {
            let beta = self.betas[k];
            if beta == T::zero() {
                continue;
            }
            let v = &self.work[k * n + k + 1..(k + 1) * n];
            let seg = &mut y[k + 1..];
            let s = beta * dot(v, seg);
            axpy(-s, v, seg);
        }
    }

    fn norm_estimate(&self) -> T {
        let mut m = T::zero();
        for i in 0..self.n {
            let prev = if i > 0 { self.off[i - 1].abs() } else { T::zero() };
            let row = self.diag[i].abs() + self.off[i].abs() + prev;
            if row > m {
                m = row;
            }
        }
        m
    }
}

/// Implicit QL on a symmetric tridiagonal matrix. When `rows` is given, its
/// rows are rotated alongside so that on exit row `i` holds the eigenvector
/// for `d[i]` (starting from the identity).
fn tridiagonal_ql<T: Scalar>(d: &mut [T], e: &mut [T], mut rows: Option<&mut Matrix<T>>) -> Result<()> {
    let n = d.len();
    if n == 0 {
        return Ok(());
    }
    let eps = T::epsilon();
    let two = T::of(2.0);
    let mut f = T::zero();
    let mut tst1 = T::zero();
    for l in 0..n {
        tst1 = tst1.max(d[l].abs() + e[l].abs());
        let mut m = l;
        while m < n {
            if e[m].abs() <= eps * tst1 {
                break;
            }
            m += 1;
        }
        if m == n {
            m = n - 1;
        }
        if m > l {
            let mut sweeps = 0;
            loop {
                sweeps += 1;
                if sweeps > MAX_QL_SWEEPS {
                    return Err(Error::NoConvergence(format!(
                        "tridiagonal QL stalled at index {l}"
                    )));
                }
                let mut g = d[l];
                let mut p = (d[l + 1] - g) / (two * e[l]);
                let mut r = p.hypot(T::one());
                if p < T::zero() {
                    r = -r;
                }
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                let dl1 = d[l + 1];
                let mut h = g - d[l];
                for di in d.iter_mut().skip(l + 2) {
                    *di -= h;
                }
                f += h;

                p = d[m];
                let mut c = T::one();
                let mut c2 = c;
                let mut c3 = c;
                let el1 = e[l + 1];
                let mut s = T::zero();
                let mut s2 = T::zero();
                for i in (l..m).rev() {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    g = c * e[i];
                    h = c * p;
                    r = p.hypot(e[i]);
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * g;
                    d[i + 1] = h + s * (c * g + s * d[i]);
                    if let Some(z) = rows.as_deref_mut() {
                        rotate_rows(z, i, s, c);
                    }
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;
                if e[l].abs() <= eps * tst1 {
                    break;
                }
            }
        }
        d[l] += f;
        e[l] = T::zero();
    }
    Ok(())
}

#[inline]
fn rotate_rows<T: Scalar>(z: &mut Matrix<T>, i: usize, s: T, c: T) {
    let cols = z.cols();
    let data = z.as_mut_slice();
    let (lo, hi) = data.split_at_mut((i + 1) * cols);
    let ri = &mut lo[i * cols..];
    let rj = &mut hi[..cols];
    for (a, b) in ri.iter_mut().zip(rj.iter_mut()) {
        let h = *b;
        *b = s * *a + c * h;
        *a = c * *a - s * h;
    }
}

/// Flips `v` so its largest-magnitude entry (first on ties) is positive.
pub(crate) fn fix_sign<T: Scalar>(v: &mut [T]) {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if !v.is_empty() && v[best] < T::zero() {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// Descending order; equal eigenvalues keep their solver order.
fn descending_order<T: Scalar>(values: &[T]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].partial_cmp(&values[a]).unwrap_or(std::cmp::Ordering::Equal));
    idx
}

/// Full eigendecomposition of a symmetric matrix, eigenvalues descending,
/// each eigenvector signed so its largest-magnitude entry is positive.
pub fn symmetric_eigen<T: Scalar>(x: &Matrix<T>) -> Result<EigenSystem<T>> {
    x.ensure_symmetric(SYMMETRY_TOL)?;
    if !x.is_finite() {
        return Err(Error::invalid("matrix has non-finite entries"));
    }
    let n = x.rows();
    let tri = Tridiagonal::reduce(x);
    let mut d = tri.diag.clone();
    let mut e = tri.off.clone();
    let mut z = Matrix::identity(n);
    tridiagonal_ql(&mut d, &mut e, Some(&mut z))?;

    let order = descending_order(&d);
    let mut vectors = Matrix::zeros(n, n);
    let mut values = Vec::with_capacity(n);
    for (dst, &src) in order.iter().enumerate() {
        let row = vectors.row_mut(dst);
        row.copy_from_slice(z.row(src));
        tri.back_transform(row);
        fix_sign(row);
        values.push(d[src]);
    }
    Ok(EigenSystem {
        eigenvalues: values,
        eigenvectors: vectors.transpose(),
    })
}

/// All eigenvalues of a symmetric matrix, descending.
pub fn symmetric_eigenvalues<T: Scalar>(x: &Matrix<T>) -> Result<Vec<T>> {
    x.ensure_symmetric(SYMMETRY_TOL)?;
    let tri = Tridiagonal::reduce(x);
    let mut d = tri.diag.clone();
    let mut e = tri.off.clone();
    tridiagonal_ql(&mut d, &mut e, None)?;
    let order = descending_order(&d);
    Ok(order.into_iter().map(|i| d[i]).collect())
}

/// The `m` largest eigenpairs of a symmetric matrix.
///
/// Eigenvalues come from QL without accumulation; eigenvectors from inverse
/// iteration on the tridiagonal form, re-orthogonalized against the ones
/// already found, then mapped back through the Householder reflectors.
pub fn symmetric_top_eigen<T: Scalar>(x: &Matrix<T>, m: usize) -> Result<TopEigen<T>> {
    x.ensure_symmetric(SYMMETRY_TOL)?;
    if !x.is_finite() {
        return Err(Error::invalid("matrix has non-finite entries"));
    }
    let n = x.rows();
    if m > n {
        return Err(Error::invalid(format!("requested {m} eigenpairs of a {n}x{n} matrix")));
    }
    let tri = Tridiagonal::reduce(x);
    let mut d = tri.diag.clone();
    let mut e = tri.off.clone();
    tridiagonal_ql(&mut d, &mut e, None)?;
    d.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));

    let tnorm = tri.norm_estimate().max(T::min_positive_value());
    let sep = T::of(10.0) * T::epsilon() * tnorm;
    let mut found: Vec<Vec<T>> = Vec::with_capacity(m);
    let mut shift = T::zero();
    for (j, &lambda) in d.iter().take(m).enumerate() {
        shift = if j > 0 && (shift - lambda).abs() < sep {
            shift - sep
        } else {
            lambda
        };
        let y = inverse_iteration(&tri.diag, &tri.off, shift, tnorm, &found, j)?;
        found.push(y);
    }

    let mut vectors = Matrix::zeros(m, n);
    for (i, mut y) in found.into_iter().enumerate() {
        tri.back_transform(&mut y);
        fix_sign(&mut y);
        vectors.row_mut(i).copy_from_slice(&y);
    }
    Ok(TopEigen {
        values: d[..m].to_vec(),
        vectors,
        spectrum: d,
    })
}

/// LU factors of `T - shift I` with partial pivoting (LAPACK `gttrf` layout).
struct TridiagonalLu<T> {
    diag: Vec<T>,
    upper: Vec<T>,
    upper2: Vec<T>,
    lower: Vec<T>,
    swapped: Vec<bool>,
}

impl<T: Scalar> TridiagonalLu<T> {
    fn factor(d: &[T], e: &[T], shift: T, tiny: T) -> Self {
        let n = d.len();
        let mut diag: Vec<T> = d.iter().map(|&v| v - shift).collect();
        let mut upper: Vec<T> = e[..n.saturating_sub(1)].to_vec();
        let mut lower = upper.clone();
        let mut upper2 = vec![T::zero(); n.saturating_sub(2)];
        let mut swapped = vec![false; n.saturating_sub(1)];
        for i in 0..n.saturating_sub(1) {
            if diag[i].abs() >= lower[i].abs() {
                if diag[i] == T::zero() {
                    diag[i] = tiny;
                }
                let fact = lower[i] / diag[i];
                lower[i] = fact;
                diag[i + 1] -= fact * upper[i];
            } else {
                let fact = diag[i] / lower[i];
                diag[i] = lower[i];
                lower[i] = fact;
                let temp = upper[i];
                upper[i] = diag[i + 1];
                diag[i + 1] = temp - fact * diag[i + 1];
                if i + 2 < n {
                    upper2[i] = upper[i + 1];
                    upper[i + 1] = -fact * upper[i + 1];
                }
                swapped[i] = true;
            }
        }
        if let Some(last) = diag.last_mut() {
            if *last == T::zero() {
                *last = tiny;
            }
        }
        TridiagonalLu {
            diag,
            upper,
            upper2,
            lower,
            swapped,
        }
    }

    fn solve(&self, y: &mut [T]) {
        let n = y.len();
        for i in 0..n.saturating_sub(1) {
            if self.swapped[i] {
                let temp = y[i];
                y[i] = y[i + 1];
                y[i + 1] = temp - self.lower[i] * y[i];
            } else {
                y[i + 1] -= self.lower[i] * y[i];
            }
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            if i + 1 < n {
                s -= self.upper[i] * y[i + 1];
            }
            if i + 2 < n {
                s -= self.upper2[i] * y[i + 2];
            }
            y[i] = s / self.diag[i];
        }
    }
}

fn inverse_iteration<T: Scalar>(
    d: &[T],
    e: &[T],
    shift: T,
    tnorm: T,
    previous: &[Vec<T>],
    salt: usize,
) -> Result<Vec<T>> {
    let n = d.len();
    let tiny = T::epsilon() * tnorm;
    let lu = TridiagonalLu::factor(d, e, shift, tiny);
    // deterministic, non-degenerate start vector
    let mut y: Vec<T> = (0..n)
        .map(|i| {
            let h = crate::rng::derive_seed(0x1f2e_3d4c, &[salt as u64, i as u64]);
            T::of(0.5 + (h >> 11) as f64 / (1u64 << 53) as f64)
        })
        .collect();
    for _ in 0..5 {
        lu.solve(&mut y);
        for _pass in 0..2 {
            for q in previous {
                let c = dot(q, &y);
                axpy(-c, q, &mut y);
            }
        }
        let nrm = norm(&y);
        if !(nrm > T::zero()) || !nrm.is_finite() {
            return Err(Error::NoConvergence("inverse iteration broke down".into()));
        }
        y.iter_mut().for_each(|v| *v /= nrm);
    }
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn random_symmetric(n: usize, seed: u64) -> Matrix<f64> {
        let mut rng = crate::rng::SimRng::seed_from_u64(seed);
        let g = Matrix::<f64>::random_normal(n, n, 1.0, &mut rng);
        g.add(&g.transpose()).unwrap().scale(0.5)
    }

    fn orthogonality_error(v: &Matrix<f64>) -> f64 {
        let g = v.transpose().matmul(v).unwrap();
        g.sub(&Matrix::identity(v.cols())).unwrap().max_abs()
    }

    #[test]
    fn diagonal_matrix_gives_signed_basis_vectors() {
        let x = Matrix::from_diag(&[3.0, 1.0, 2.0]);
        let es = symmetric_eigen(&x).unwrap();
        assert_eq!(es.eigenvalues, vec![3.0, 2.0, 1.0]);
        assert_eq!(es.vector(0), vec![1.0, 0.0, 0.0]);
        assert_eq!(es.vector(1), vec![0.0, 0.0, 1.0]);
        assert_eq!(es.vector(2), vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn ties_keep_index_order() {
        let es = symmetric_eigen(&Matrix::from_diag(&[1.0, 1.0, 1.0])).unwrap();
        for i in 0..3 {
            let mut e = vec![0.0; 3];
            e[i] = 1.0;
            assert_eq!(es.vector(i), e);
        }
    }

    #[test]
    fn reconstructs_random_matrices() {
        for (n, seed) in [(1, 1), (2, 2), (3, 3), (17, 4), (64, 5), (200, 6)] {
            let x = random_symmetric(n, seed);
            let es = symmetric_eigen(&x).unwrap();
            let resid = es.reconstruct().sub(&x).unwrap().frobenius_norm();
            assert!(resid <= 1e-10 * x.frobenius_norm(), "n={n} resid={resid}");
            assert!(orthogonality_error(&es.eigenvectors) < 1e-12);
            assert!(es.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn spectral_shift_moves_every_eigenvalue() {
        let x = random_symmetric(12, 9);
        let shifted = x.add(&Matrix::identity(12).scale(2.5)).unwrap();
        let a = symmetric_eigenvalues(&x).unwrap();
        let b = symmetric_eigenvalues(&shifted).unwrap();
        for (u, v) in a.iter().zip(&b) {
            assert!((u + 2.5 - v).abs() < 1e-12);
        }
    }

    #[test]
    fn top_eigen_matches_full_decomposition() {
        let x = random_symmetric(80, 11);
        let full = symmetric_eigen(&x).unwrap();
        let top = symmetric_top_eigen(&x, 6).unwrap();
        for i in 0..6 {
            assert!((top.values[i] - full.eigenvalues[i]).abs() < 1e-11);
            let v = full.vector(i);
            let c = dot(top.vectors.row(i), &v);
            assert!((c - 1.0).abs() < 1e-9, "vector {i}: cos={c}");
        }
    }

    #[test]
    fn top_eigen_handles_clusters() {
        // rank-2 projector plus a repeated eigenvalue block
        let mut diag = vec![0.0; 30];
        diag[..4].copy_from_slice(&[5.0, 5.0, 5.0, 1.0]);
        let x = Matrix::from_diag(&diag);
        let top = symmetric_top_eigen(&x, 4).unwrap();
        let g = top.vectors.gram_rows();
        assert!(g.sub(&Matrix::identity(4)).unwrap().max_abs() < 1e-10);
        for i in 0..3 {
            let r = top.vectors.row(i);
            let inside: f64 = r[..3].iter().map(|v| v * v).sum();
            assert!((inside - 1.0).abs() < 1e-10);
        }
        assert!((top.vectors.row(3)[3].abs() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn rejects_asymmetric_input() {
        let x = Matrix::from_rows(&[[1.0, 2.0], [0.0, 1.0]]).unwrap();
        assert!(matches!(symmetric_eigen(&x), Err(Error::NotSymmetric(_))));
    }

    #[test]
    fn works_in_single_precision() {
        let x: Matrix<f32> = random_symmetric(20, 3).cast();
        let es = symmetric_eigen(&x).unwrap();
        let resid = es.reconstruct().sub(&x).unwrap().frobenius_norm();
        assert!(resid <= 1e-5 * x.frobenius_norm());
    }
}
