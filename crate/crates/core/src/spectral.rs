//! Exact solutions of the linear SSL objective and subspace diagnostics.

use crate::datagen::LocalDataset;
use crate::error::{Error, Result};
use crate::linalg::{orthonormal_row_basis, svd, symmetric_eigen, symmetric_top_eigen, EigenSystem, Matrix, TopEigen};
use crate::objectives::LinearEncoder;
use crate::Scalar;

/// Rank tolerance when extracting a subspace from encoder rows.
pub const RANK_TOL: f64 = 1e-10;
/// Eigenvalues in `[-PSD_TOL * scale, 0)` are treated as zero.
pub const PSD_TOL: f64 = 1e-8;

/// Squared projections of coordinate directions onto a subspace.
#[derive(Clone, Debug, PartialEq)]
pub struct RepresentabilityVector<T> {
    /// Direction indices, in the order of `values`.
    pub directions: Vec<usize>,
    pub values: Vec<T>,
    pub subspace_dim: usize,
}

impl<T: Scalar> RepresentabilityVector<T> {
    pub fn get(&self, direction: usize) -> Option<T> {
        self.directions.iter().position(|&d| d == direction).map(|i| self.values[i])
    }

    pub fn min(&self) -> Option<T> {
        self.values.iter().copied().reduce(T::min)
    }
}

/// `(1/n) sum_i x_i x_i^T`.
pub fn empirical_covariance<T: Scalar>(dataset: &LocalDataset<T>) -> Result<Matrix<T>> {
    dataset.second_moment().cloned()
}

/// Full eigendecomposition, eigenvalues descending.
pub fn symmetric_eig<T: Scalar>(x: &Matrix<T>) -> Result<EigenSystem<T>> {
    symmetric_eigen(x)
}

/// `sum_k (|D_k| / |D|) X_k`.
pub fn global_covariance<T: Scalar>(datasets: &[LocalDataset<T>]) -> Result<Matrix<T>> {
    let total: usize = datasets.iter().map(LocalDataset::len).sum();
    if total == 0 {
        return Err(Error::Empty("union of the datasets is empty".into()));
    }
    let d = datasets[0].dim();
    let mut acc = Matrix::zeros(d, d);
    for ds in datasets.iter().filter(|ds| !ds.is_empty()) {
        if ds.dim() != d {
            return Err(Error::dims(format!("dataset dims {} and {d}", ds.dim())));
        }
        acc.add_scaled(T::of_usize(ds.len()) / T::of_usize(total), ds.second_moment()?)?;
    }
    Ok(acc)
}

fn encoder_from_eigen<T: Scalar>(top: &TopEigen<T>) -> Result<LinearEncoder<T>> {
    let scale = top.spectrum.first().copied().unwrap_or(T::zero()).abs().max(T::one());
    let floor = -T::of(PSD_TOL) * scale;
    if let Some(&low) = top.spectrum.last() {
        if low < floor {
            return Err(Error::NotPositiveSemidefinite(low.as_f64()));
        }
    }
    let mut w = top.vectors.clone();
    for (i, &lambda) in top.values.iter().enumerate() {
        let root = lambda.max(T::zero()).sqrt();
        w.row_mut(i).iter_mut().for_each(|v| *v *= root);
    }
    LinearEncoder::new(w)
}

/// Global minimizer of the linear SSL objective for covariance `x`: rows
/// `sqrt(lambda_i) v_i^T` for the top `m` eigenpairs.
pub fn ssl_minimizer_oracle<T: Scalar>(x: &Matrix<T>, m: usize) -> Result<LinearEncoder<T>> {
    if m == 0 || m > x.rows() {
        return Err(Error::invalid(format!("m = {m} must be in [1, {}]", x.rows())));
    }
    encoder_from_eigen(&symmetric_top_eigen(x, m)?)
}

/// [`ssl_minimizer_oracle`] of the second moment of `samples` (one per row).
///
/// With fewer samples than dimensions the top eigenvectors come from the
/// `n x n` Gram matrix `A A^T / n`: if `A A^T u = n lambda u` then
/// `A^T u / sqrt(n lambda)` is a unit eigenvector of `A^T A / n`.
pub fn ssl_minimizer_from_samples<T: Scalar>(samples: &Matrix<T>, m: usize) -> Result<LinearEncoder<T>> {
    let (n, d) = samples.shape();
    if n == 0 {
        return Err(Error::Empty("no samples".into()));
    }
    if m == 0 || m > d {
        return Err(Error::invalid(format!("m = {m} must be in [1, {d}]")));
    }
    let inv_n = T::one() / T::of_usize(n);
    if n < d && m <= n {
        let mut gram = samples.gram_rows();
        gram.scale_in_place(inv_n);
        let top = symmetric_top_eigen(&gram, m)?;
        let tiny = T::of(RANK_TOL) * top.values[0].abs().max(T::min_positive_value());
        if top.values.iter().all(|&l| l > tiny) {
            let mut w = Matrix::zeros(m, d);
            for i in 0..m {
                let v = samples.transpose_matvec(top.vectors.row(i))?;
                // unit eigenvector scaled by sqrt(lambda): A^T u / sqrt(n)
                let s = inv_n.sqrt();
                for (o, x) in w.row_mut(i).iter_mut().zip(v) {
                    *o = x * s;
                }
            }
            return LinearEncoder::new(w);
        }
    }
    let mut cov = samples.row_outer_sum();
    cov.scale_in_place(inv_n);
    ssl_minimizer_oracle(&cov, m)
}

/// Local minimizer for one source.
pub fn local_ssl_minimizer<T: Scalar>(dataset: &LocalDataset<T>, m: usize) -> Result<LinearEncoder<T>> {
    ssl_minimizer_from_samples(dataset.samples(), m)
}

/// `r_i = |P_S e_i|^2` for the row span `S` of `rows`. An empty `directions`
/// list asks for every coordinate. A zero matrix spans the zero subspace.
pub fn representability<T: Scalar>(rows: &Matrix<T>, directions: &[usize]) -> Result<RepresentabilityVector<T>> {
    let d = rows.cols();
    if let Some(&bad) = directions.iter().find(|&&i| i >= d) {
        return Err(Error::invalid(format!("direction {bad} outside dimension {d}")));
    }
    let q = orthonormal_row_basis(rows, RANK_TOL, true);
    let directions: Vec<usize> = if directions.is_empty() { (0..d).collect() } else { directions.to_vec() };
    let values = directions
        .iter()
        .map(|&i| q.row_iter().map(|r| r[i] * r[i]).sum::<T>().min(T::one()))
        .collect();
    Ok(RepresentabilityVector {
        directions,
        values,
        subspace_dim: q.rows(),
    })
}

/// Representability of an encoder's row span.
pub fn encoder_representability<T: Scalar>(
    enc: &LinearEncoder<T>,
    directions: &[usize],
) -> Result<RepresentabilityVector<T>> {
    representability(enc.weight(), directions)
}

/// Largest principal angle (radians) between the row spans of `a` and `b`.
/// Spans of different dimension are at angle pi/2.
pub fn principal_angle<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Result<T> {
    if a.cols() != b.cols() {
        return Err(Error::dims(format!("ambient dims {} and {}", a.cols(), b.cols())));
    }
    let qa = orthonormal_row_basis(a, RANK_TOL, true);
    let qb = orthonormal_row_basis(b, RANK_TOL, true);
    if qa.rows() == 0 || qb.rows() == 0 {
        return Err(Error::Empty("principal angle of a zero span".into()));
    }
    if qa.rows() != qb.rows() {
        return Ok(T::of(std::f64::consts::FRAC_PI_2));
    }
    let overlap = qa.matmul_transpose(&qb)?;
    let cos = svd(&overlap)?.singular_values.last().copied().unwrap_or(T::zero());
    let residual = qa.sub(&overlap.matmul(&qb)?)?;
    let sin = svd(&residual)?.singular_values.first().copied().unwrap_or(T::zero());
    Ok(sin.atan2(cos.min(T::one())))
}
