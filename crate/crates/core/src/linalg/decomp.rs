//! Orthonormal bases, QR-style orthogonalization and a one-sided Jacobi SVD.

use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::matrix::{axpy, dot, norm, Matrix};
use crate::Scalar;

/// Orthonormal basis (as rows) of the row span of `rows`.
///
/// Modified Gram-Schmidt with re-orthogonalization. With `pivot` set, the
/// remaining row of largest residual norm is taken next and extraction stops
/// once every residual is below `rel_tol` times the largest input row norm,
/// which makes the returned row count a numerical rank. Without pivoting rows
/// are processed in order and dependent rows are skipped.
pub fn orthonormal_row_basis<T: Scalar>(rows: &Matrix<T>, rel_tol: f64, pivot: bool) -> Matrix<T> {
    let d = rows.cols();
    let scale = rows.row_iter().map(norm).fold(T::zero(), T::max);
    if scale == T::zero() || rows.rows() == 0 {
        return Matrix::zeros(0, d);
    }
    let tol = T::tolerance(rel_tol) * scale;
    let mut residual: Vec<Vec<T>> = rows.row_iter().map(|r| r.to_vec()).collect();
    let mut basis: Vec<Vec<T>> = Vec::new();
    let mut used = vec![false; residual.len()];

    for step in 0..residual.len() {
        let pick = if pivot {
            let mut best: Option<(usize, T)> = None;
            for (i, r) in residual.iter().enumerate() {
                if used[i] {
                    continue;
                }
                let n = norm(r);
                if best.is_none_or(|(_, b)| n > b) {
                    best = Some((i, n));
                }
            }
            match best {
                Some((i, n)) if n > tol => i,
                _ => break,
            }
        } else {
            step
        };
        used[pick] = true;
        let mut v = std::mem::take(&mut residual[pick]);
        for _pass in 0..2 {
            for q in &basis {
                let c = dot(q, &v);
                axpy(-c, q, &mut v);
            }
        }
        let n = norm(&v);
        if n <= tol {
            continue;
        }
        v.iter_mut().for_each(|x| *x /= n);
        if pivot {
            for (i, r) in residual.iter_mut().enumerate() {
                if !used[i] {
                    let c = dot(&v, r);
                    axpy(-c, &v, r);
                }
            }
        }
        basis.push(v);
    }
    Matrix::from_rows(&basis).unwrap_or_else(|_| Matrix::zeros(0, d))
}

/// Haar-distributed random orthogonal `n x n` matrix (Gram-Schmidt of a
/// Gaussian matrix, equivalent to QR with a positive `R` diagonal).
pub fn random_orthogonal<T: Scalar, R: Rng + ?Sized>(n: usize, rng: &mut R) -> Matrix<T> {
    loop {
        let g = Matrix::random_normal(n, n, T::one(), rng);
        let q = orthonormal_row_basis(&g, 1e-12, false);
        if q.rows() == n {
            return q;
        }
    }
}

/// Thin singular value decomposition `A = U diag(s) V^T`.
#[derive(Clone, Debug)]
pub struct Svd<T> {
    /// `rows x r` with orthonormal columns.
    pub u: Matrix<T>,
    /// Descending singular values, length `r = min(rows, cols)`.
    pub singular_values: Vec<T>,
    /// `r x cols`; row `i` is the right singular vector of `s[i]`
    /// (zero for a zero singular value).
    pub vt: Matrix<T>,
}

impl<T: Scalar> Svd<T> {
    pub fn rank(&self, rel_tol: f64) -> usize {
        let top = self.singular_values.first().copied().unwrap_or(T::zero());
        let tol = T::tolerance(rel_tol) * top;
        self.singular_values.iter().filter(|&&s| s > tol && s > T::zero()).count()
    }

    pub fn reconstruct(&self) -> Matrix<T> {
        let mut us = self.u.clone();
        for i in 0..us.rows() {
            for (j, &s) in self.singular_values.iter().enumerate() {
                us[(i, j)] *= s;
            }
        }
        us.matmul(&self.vt).expect("svd factors are conformant")
    }
}

/// One-sided Jacobi SVD. Accurate for the small dense matrices used here
/// (classifier weights, subspace overlaps).
pub fn svd<T: Scalar>(a: &Matrix<T>) -> Result<Svd<T>> {
    if !a.is_finite() {
        return Err(Error::invalid("svd input has non-finite entries"));
    }
    if a.rows() > a.cols() {
        let t = svd(&a.transpose())?;
        return Ok(Svd {
            u: t.vt.transpose(),
            singular_values: t.singular_values,
            vt: t.u.transpose(),
        });
    }
    let r = a.rows();
    let mut b = a.clone();
    let mut j = Matrix::<T>::identity(r);
    let eps = T::epsilon();
    // Rows this small are numerically zero; rotating them against each
    // other never settles.
    let negligible = {
        let f = eps * a.frobenius_norm();
        f * f
    };
    let mut converged = false;
    for _sweep in 0..80 {
        let mut rotated = false;
        for p in 0..r {
            for q in p + 1..r {
                let alpha = dot(b.row(p), b.row(p));
                let beta = dot(b.row(q), b.row(q));
                let gamma = dot(b.row(p), b.row(q));
                if alpha <= negligible || beta <= negligible || gamma.abs() <= eps * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (T::of(2.0) * gamma);
                let t = zeta.signum() / (zeta.abs() + (T::one() + zeta * zeta).sqrt());
                let c = T::one() / (T::one() + t * t).sqrt();
                let s = c * t;
                rotate_pair(&mut b, p, q, c, s);
                rotate_pair(&mut j, p, q, c, s);
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NoConvergence("one-sided Jacobi SVD".into()));
    }
    let sigma: Vec<T> = b.row_iter().map(norm).collect();
    let mut order: Vec<usize> = (0..r).collect();
    order.sort_by(|&x, &y| sigma[y].partial_cmp(&sigma[x]).unwrap_or(std::cmp::Ordering::Equal));

    let mut u = Matrix::zeros(r, r);
    let mut vt = Matrix::zeros(r, a.cols());
    let mut values = Vec::with_capacity(r);
    for (dst, &src) in order.iter().enumerate() {
        let s = sigma[src];
        values.push(s);
        for i in 0..r {
            u[(i, dst)] = j[(src, i)];
        }
        if s > T::zero() {
            for (o, &x) in vt.row_mut(dst).iter_mut().zip(b.row(src)) {
                *o = x / s;
            }
        }
    }
    Ok(Svd {
        u,
        singular_values: values,
        vt,
    })
}

fn rotate_pair<T: Scalar>(m: &mut Matrix<T>, p: usize, q: usize, c: T, s: T) {
    let cols = m.cols();
    let data = m.as_mut_slice();
    let (lo, hi) = data.split_at_mut(q * cols);
    let rp = &mut lo[p * cols..(p + 1) * cols];
    let rq = &mut hi[..cols];
    for (x, y) in rp.iter_mut().zip(rq.iter_mut()) {
        let (a, b) = (*x, *y);
        *x = c * a - s * b;
        *y = s * a + c * b;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SimRng;
    use rand::SeedableRng;

    #[test]
    fn basis_of_dependent_rows_has_numerical_rank() {
        let m = Matrix::from_rows(&[
            [1.0, 0.0, 0.0, 0.0],
            [2.0, 0.0, 0.0, 0.0],
            [1.0, 1.0, 0.0, 0.0],
        ])
        .unwrap();
        let q = orthonormal_row_basis(&m, 1e-10, true);
        assert_eq!(q.rows(), 2);
        assert!(q.gram_rows().sub(&Matrix::identity(2)).unwrap().max_abs() < 1e-14);
        assert_eq!(orthonormal_row_basis(&Matrix::<f64>::zeros(3, 4), 1e-10, true).rows(), 0);
    }

    #[test]
    fn random_orthogonal_is_orthogonal() {
        let mut rng = SimRng::seed_from_u64(3);
        let q: Matrix<f64> = random_orthogonal(25, &mut rng);
        let err = q.matmul(&q.transpose()).unwrap().sub(&Matrix::identity(25)).unwrap();
        assert!(err.max_abs() < 1e-13);
    }

    #[test]
    fn svd_reconstructs_wide_and_tall() {
        let mut rng = SimRng::seed_from_u64(5);
        for (r, c) in [(4, 6), (6, 4), (1, 5), (3, 3)] {
            let a = Matrix::<f64>::random_normal(r, c, 1.0, &mut rng);
            let s = svd(&a).unwrap();
            let err = s.reconstruct().sub(&a).unwrap().frobenius_norm();
            assert!(err < 1e-12, "{r}x{c}: {err}");
            assert!(s.singular_values.windows(2).all(|w| w[0] >= w[1]));
            let k = s.singular_values.len();
            let utu = s.u.transpose().matmul(&s.u).unwrap();
            assert!(utu.sub(&Matrix::identity(k)).unwrap().max_abs() < 1e-12);
        }
    }

    #[test]
    fn svd_of_rank_deficient_rows_converges() {
        // A factorization input that used to cycle forever: rank 3, with
        // rows that rotate down to roundoff. The zero padding matters: it
        // changes how the dot products round.
        let head = [
            [1.0000000099999358, -0.1666666643261983, -0.1666666630238492],
            [-1.0000000021418605, -0.1666666707586213, -0.16666666962834153],
            [-2.1418605201087008e-09, 0.8333333356738017, -0.1666666725936827],
            [-1.9194533141739245e-09, -0.16666666631986868, -0.1666666693720454],
            [-1.6866642691890088e-09, -0.16666666713318504, 0.8333333373089594],
            [-2.1100965905129776e-09, -0.16666666713592843, -0.16666666269104063],
        ];
        let rows: Vec<Vec<f64>> = head
            .iter()
            .map(|h| {
                let mut r = h.to_vec();
                r.resize(32, 0.0);
                r
            })
            .collect();
        let a = Matrix::from_rows(&rows).unwrap();
        let s = svd(&a).unwrap();
        assert_eq!(s.rank(1e-10), 3);
        assert!(s.reconstruct().sub(&a).unwrap().max_abs() < 1e-12);
        let s = svd(&a.transpose()).unwrap();
        assert_eq!(s.rank(1e-10), 3);
    }

    #[test]
    fn svd_of_rank_one() {
        let a = Matrix::from_rows(&[[2.0, 4.0], [1.0, 2.0]]).unwrap();
        let s = svd(&a).unwrap();
        assert_eq!(s.rank(1e-10), 1);
        assert!((s.singular_values[0] - 5.0f64).abs() < 1e-12);
        assert!(s.reconstruct().sub(&a).unwrap().max_abs() < 1e-12);
    }
}
