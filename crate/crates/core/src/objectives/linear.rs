use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix};
use crate::objectives::LinearEncoder;
use crate::rng::standard_normal;
use crate::Scalar;

fn check_cov<T: Scalar>(enc: &LinearEncoder<T>, x: &Matrix<T>) -> Result<()> {
    let d = enc.input_dim();
    if x.shape() != (d, d) {
        return Err(Error::dims(format!("covariance {:?} for input dim {d}", x.shape())));
    }
    Ok(())
}

/// `-tr(w^T w X) + 1/2 |w^T w|_F^2`, the expectation over independent
/// standard normal augmentations of the per-sample linear SSL loss.
///
/// Evaluated through the `m x m` forms `tr(w X w^T)` and `|w w^T|_F^2`.
pub fn linear_ssl_loss_expected<T: Scalar>(enc: &LinearEncoder<T>, x: &Matrix<T>) -> Result<T> {
    check_cov(enc, x)?;
    let w = enc.weight();
    let wx = w.matmul(x)?;
    let fit: T = w.row_iter().zip(wx.row_iter()).map(|(a, b)| dot(a, b)).sum();
    let wwt = w.gram_rows();
    Ok(-fit + T::of(0.5) * wwt.frobenius_norm_sq())
}

/// `-2 w X + 2 w w^T w`.
pub fn linear_ssl_gradient<T: Scalar>(enc: &LinearEncoder<T>, x: &Matrix<T>) -> Result<Matrix<T>> {
    check_cov(enc, x)?;
    let w = enc.weight();
    let mut g = w.matmul(x)?;
    g.scale_in_place(-T::of(2.0));
    let wwtw = w.gram_rows().matmul(w)?;
    g.add_scaled(T::of(2.0), &wwtw)?;
    Ok(g)
}

/// `|X - w^T w|_F^2`, formed explicitly.
pub fn reconstruction_objective<T: Scalar>(enc: &LinearEncoder<T>, x: &Matrix<T>) -> Result<T> {
    check_cov(enc, x)?;
    let wtw = enc.weight().row_outer_sum();
    Ok(x.sub(&wtw)?.frobenius_norm_sq())
}

/// Two augmented views `x + xi` and `x + xi'` of every row. Per sample the
/// first view's noise is drawn before the second's.
pub fn draw_views<T: Scalar, R: Rng + ?Sized>(batch: &Matrix<T>, rng: &mut R) -> (Matrix<T>, Matrix<T>) {
    let (n, d) = batch.shape();
    let mut first = batch.clone();
    let mut second = batch.clone();
    for i in 0..n {
        for v in first.row_mut(i) {
            *v += standard_normal::<T, _>(rng);
        }
        for v in second.row_mut(i) {
            *v += standard_normal::<T, _>(rng);
        }
    }
    debug_assert_eq!(first.shape(), (n, d));
    (first, second)
}

/// Batch mean of `-(w a)^T (w b) + 1/2 |w^T w|_F^2` over paired views, and
/// its gradient in `w`.
pub fn linear_ssl_views_loss_grad<T: Scalar>(
    enc: &LinearEncoder<T>,
    first: &Matrix<T>,
    second: &Matrix<T>,
) -> Result<(T, Matrix<T>)> {
    let n = first.rows();
    if n == 0 {
        return Err(Error::Empty("batch".into()));
    }
    if second.shape() != first.shape() {
        return Err(Error::dims("view shapes differ"));
    }
    let w = enc.weight();
    let za = enc.embed_rows(first)?;
    let zb = enc.embed_rows(second)?;
    let wwt = w.gram_rows();
    let reg = T::of(0.5) * wwt.frobenius_norm_sq();
    let inv_n = T::one() / T::of_usize(n);

    let mut fit = T::zero();
    for (a, b) in za.row_iter().zip(zb.row_iter()) {
        fit += dot(a, b);
    }
    // -(1/n) sum (w a) b^T + (w b) a^T  =  -(1/n) (Za^T B + Zb^T A)
    let mut g = za.transpose().matmul(second)?;
    g.add_scaled(T::one(), &zb.transpose().matmul(first)?)?;
    g.scale_in_place(-inv_n);
    g.add_scaled(T::of(2.0), &wwt.matmul(w)?)?;
    Ok((-fit * inv_n + reg, g))
}

/// Draws fresh augmentations for every row and returns the batch mean of the
/// per-sample loss.
pub fn linear_ssl_loss_stochastic<T: Scalar, R: Rng + ?Sized>(
    enc: &LinearEncoder<T>,
    batch: &Matrix<T>,
    rng: &mut R,
) -> Result<T> {
    if batch.cols() != enc.input_dim() {
        return Err(Error::dims(format!("batch dim {} vs input dim {}", batch.cols(), enc.input_dim())));
    }
    let (a, b) = draw_views(batch, rng);
    Ok(linear_ssl_views_loss_grad(enc, &a, &b)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::random_orthogonal;
    use crate::rng::stream_rng;
    use proptest::prelude::*;

    fn random_psd(d: usize, seed: u64) -> Matrix<f64> {
        let mut rng = stream_rng(seed, &[]);
        let g = Matrix::<f64>::random_normal(d, d + 2, 1.0, &mut rng);
        let mut x = g.gram_rows();
        x.scale_in_place(1.0 / d as f64);
        x
    }

    fn enc(w: Matrix<f64>) -> LinearEncoder<f64> {
        LinearEncoder::new(w).unwrap()
    }

    #[test]
    fn zero_weight() {
        let x = random_psd(4, 1);
        let e = enc(Matrix::zeros(2, 4));
        assert_eq!(linear_ssl_loss_expected(&e, &x).unwrap(), 0.0);
        assert_eq!(linear_ssl_gradient(&e, &x).unwrap(), Matrix::zeros(2, 4));
        assert!((reconstruction_objective(&e, &x).unwrap() - x.frobenius_norm_sq()).abs() < 1e-12);
        let mut rng = stream_rng(3, &[]);
        assert_eq!(linear_ssl_loss_stochastic(&e, &x, &mut rng).unwrap(), 0.0);
    }

    #[test]
    fn orthonormal_rows_on_identity() {
        let q: Matrix<f64> = random_orthogonal(6, &mut stream_rng(4, &[]));
        let e = enc(q.truncate_rows(3));
        let l = linear_ssl_loss_expected(&e, &Matrix::identity(6)).unwrap();
        assert!((l + 1.5).abs() < 1e-12);
    }

    #[test]
    fn reconstruction_hand_value() {
        let x = Matrix::from_diag(&[2.0, 1.0]);
        let e = enc(Matrix::from_rows(&[[2f64.sqrt(), 0.0]]).unwrap());
        assert!((reconstruction_objective(&e, &x).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn expected_loss_matches_monte_carlo() {
        let mut rng = stream_rng(11, &[]);
        let d = 4;
        let batch = Matrix::<f64>::random_normal(3, d, 1.0, &mut rng);
        let mut x = batch.row_outer_sum();
        x.scale_in_place(1.0 / 3.0);
        let e = LinearEncoder::<f64>::random(2, d, &mut rng).unwrap();
        let exact = linear_ssl_loss_expected(&e, &x).unwrap();
        let draws = 100_000;
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..draws {
            let v = linear_ssl_loss_stochastic(&e, &batch, &mut rng).unwrap();
            s += v;
            s2 += v * v;
        }
        let mean = s / draws as f64;
        let se = ((s2 / draws as f64 - mean * mean) / draws as f64).sqrt();
        assert!((mean - exact).abs() < 3.0 * se, "{mean} vs {exact} (se {se})");
    }

    #[test]
    fn stochastic_loss_is_deterministic() {
        let mut r = stream_rng(5, &[]);
        let e = LinearEncoder::<f64>::random(2, 3, &mut r).unwrap();
        let b = Matrix::<f64>::random_normal(4, 3, 1.0, &mut r);
        let a1 = linear_ssl_loss_stochastic(&e, &b, &mut stream_rng(8, &[])).unwrap();
        let a2 = linear_ssl_loss_stochastic(&e, &b, &mut stream_rng(8, &[])).unwrap();
        assert_eq!(a1.to_bits(), a2.to_bits());
    }

    fn fd_check(f: impl Fn(&Matrix<f64>) -> f64, w: &Matrix<f64>, g: &Matrix<f64>) {
        let h = 1e-5;
        for i in 0..w.rows() {
            for j in 0..w.cols() {
                let mut wp = w.clone();
                let mut wm = w.clone();
                wp[(i, j)] += h;
                wm[(i, j)] -= h;
                let fd = (f(&wp) - f(&wm)) / (2.0 * h);
                let an = g[(i, j)];
                assert!((fd - an).abs() <= 1e-5 * fd.abs().max(1.0), "({i},{j}): {fd} vs {an}");
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn expected_gradient_matches_finite_differences(seed in any::<u64>()) {
            let x = random_psd(6, seed);
            let w = Matrix::<f64>::random_normal(4, 6, 0.7, &mut stream_rng(seed, &[1]));
            let g = linear_ssl_gradient(&enc(w.clone()), &x).unwrap();
            fd_check(|w| linear_ssl_loss_expected(&enc(w.clone()), &x).unwrap(), &w, &g);
        }

        #[test]
        fn view_gradient_matches_finite_differences(seed in any::<u64>()) {
            let mut rng = stream_rng(seed, &[]);
            let a = Matrix::<f64>::random_normal(5, 6, 1.0, &mut rng);
            let b = Matrix::<f64>::random_normal(5, 6, 1.0, &mut rng);
            let w = Matrix::<f64>::random_normal(3, 6, 0.7, &mut rng);
            let (_, g) = linear_ssl_views_loss_grad(&enc(w.clone()), &a, &b).unwrap();
            fd_check(|w| linear_ssl_views_loss_grad(&enc(w.clone()), &a, &b).unwrap().0, &w, &g);
        }

        #[test]
        fn loss_reconstruction_identity(seed in any::<u64>(), m in 1usize..6) {
            let x = random_psd(7, seed);
            let w = Matrix::<f64>::random_normal(m, 7, 1.0, &mut stream_rng(seed, &[2]));
            let e = enc(w);
            let lhs = 2.0 * linear_ssl_loss_expected(&e, &x).unwrap() + x.frobenius_norm_sq();
            let rhs = reconstruction_objective(&e, &x).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-9 * rhs.abs().max(1.0));
        }
    }
}
