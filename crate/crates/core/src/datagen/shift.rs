use crate::datagen::LocalDataset;
use crate::error::{Error, Result};
use crate::linalg::{random_orthogonal, Matrix};
use crate::rng::{stream, stream_rng};
use crate::Scalar;

/// The orthogonal matrix applied to the source at position `k`.
pub fn input_shift_matrix<T: Scalar>(d: usize, k: usize, seed: u64) -> Matrix<T> {
    random_orthogonal(d, &mut stream_rng(seed, &[stream::INPUT_SHIFT, k as u64]))
}

/// Multiplies every sample of source `k` by its own random orthogonal matrix.
pub fn apply_input_shift<T: Scalar>(datasets: &[LocalDataset<T>], seed: u64) -> Result<Vec<LocalDataset<T>>> {
    let Some(first) = datasets.first() else {
        return Ok(Vec::new());
    };
    let d = first.dim();
    if let Some(bad) = datasets.iter().find(|ds| ds.dim() != d) {
        return Err(Error::dims(format!("source dims {} and {d}", bad.dim())));
    }
    datasets
        .iter()
        .enumerate()
        .map(|(k, ds)| {
            let q = input_shift_matrix::<T>(d, k, seed);
            let samples = ds.samples().matmul_transpose(&q)?;
            LocalDataset::new(samples, ds.labels().to_vec(), ds.num_classes(), ds.source_id())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate_theory_dataset, TheoryGenConfig};
    use crate::linalg::norm;

    #[test]
    fn preserves_norms_and_labels() {
        let src = generate_theory_dataset::<f64>(&TheoryGenConfig::new(8, 2, 10, 3, 1)).unwrap();
        let out = apply_input_shift(&src, 5).unwrap();
        assert_eq!(out, apply_input_shift(&src, 5).unwrap());
        for (a, b) in src.iter().zip(&out) {
            assert_eq!(a.labels(), b.labels());
            for i in 0..a.len() {
                assert!((norm(a.sample(i)) - norm(b.sample(i))).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn sources_get_distinct_transforms() {
        let q0 = input_shift_matrix::<f64>(6, 0, 3);
        let q1 = input_shift_matrix::<f64>(6, 1, 3);
        assert!(q0.sub(&q1).unwrap().frobenius_norm() > 0.0);
    }

    #[test]
    fn rejects_mixed_dims() {
        let a = LocalDataset::<f64>::empty(3, 1, 0);
        let b = LocalDataset::<f64>::empty(4, 1, 1);
        assert!(apply_input_shift(&[a, b], 0).is_err());
    }
}
