use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::Scalar;

/// Linear embedding `f_w(x) = w x` with an optional `m x m` predictor `g`
/// (identity when absent) and an optional `c x m` classification head used
/// by supervised training.
///
/// The same type doubles as a gradient container: a gradient has exactly the
/// blocks of the model it was taken at.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearEncoder<T> {
    weight: Matrix<T>,
    predictor: Option<Matrix<T>>,
    head: Option<Matrix<T>>,
}

impl<T: Scalar> LinearEncoder<T> {
    pub fn new(weight: Matrix<T>) -> Result<Self> {
        if weight.rows() == 0 || weight.cols() == 0 {
            return Err(Error::invalid(format!("encoder weight must be non-empty, got {:?}", weight.shape())));
        }
        Ok(LinearEncoder {
            weight,
            predictor: None,
            head: None,
        })
    }

    /// Entries drawn i.i.d. from N(0, 1/d).
    pub fn random<R: Rng + ?Sized>(m: usize, d: usize, rng: &mut R) -> Result<Self> {
        if d == 0 {
            return Err(Error::invalid("input dimension must be positive"));
        }
        let std = T::one() / T::of_usize(d).sqrt();
        Self::new(Matrix::random_normal(m, d, std, rng))
    }

    pub fn with_predictor(mut self, g: Matrix<T>) -> Result<Self> {
        let m = self.embedding_dim();
        if g.shape() != (m, m) {
            return Err(Error::dims(format!("predictor {:?} for embedding dim {m}", g.shape())));
        }
        self.predictor = Some(g);
        Ok(self)
    }

    pub fn with_head(mut self, h: Matrix<T>) -> Result<Self> {
        if h.cols() != self.embedding_dim() || h.rows() == 0 {
            return Err(Error::dims(format!(
                "head {:?} for embedding dim {}",
                h.shape(),
                self.embedding_dim()
            )));
        }
        self.head = Some(h);
        Ok(self)
    }

    #[inline]
    pub fn embedding_dim(&self) -> usize {
        self.weight.rows()
    }

    #[inline]
    pub fn input_dim(&self) -> usize {
        self.weight.cols()
    }

    #[inline]
    pub fn weight(&self) -> &Matrix<T> {
        &self.weight
    }

    #[inline]
    pub fn predictor(&self) -> Option<&Matrix<T>> {
        self.predictor.as_ref()
    }

    #[inline]
    pub fn head(&self) -> Option<&Matrix<T>> {
        self.head.as_ref()
    }

    pub fn weight_mut(&mut self) -> &mut Matrix<T> {
        &mut self.weight
    }

    pub fn predictor_mut(&mut self) -> Option<&mut Matrix<T>> {
        self.predictor.as_mut()
    }

    pub fn head_mut(&mut self) -> Option<&mut Matrix<T>> {
        self.head.as_mut()
    }

    pub fn embed(&self, x: &[T]) -> Result<Vec<T>> {
        self.weight.matvec(x)
    }

    /// Features of every row of `x` (one per row).
    pub fn embed_rows(&self, x: &Matrix<T>) -> Result<Matrix<T>> {
        x.matmul_transpose(&self.weight)
    }

    /// Applies the predictor to a feature vector.
    pub fn predict(&self, z: &[T]) -> Result<Vec<T>> {
        match &self.predictor {
            Some(g) => g.matvec(z),
            None => Ok(z.to_vec()),
        }
    }

    /// Blocks in a fixed order: weight, predictor, head.
    pub fn blocks(&self) -> Vec<&Matrix<T>> {
        let mut b = vec![&self.weight];
        b.extend(self.predictor.as_ref());
        b.extend(self.head.as_ref());
        b
    }

    fn blocks_mut(&mut self) -> Vec<&mut Matrix<T>> {
        let mut b = vec![&mut self.weight];
        b.extend(self.predictor.as_mut());
        b.extend(self.head.as_mut());
        b
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.weight.shape() == other.weight.shape()
            && self.predictor.as_ref().map(Matrix::shape) == other.predictor.as_ref().map(Matrix::shape)
            && self.head.as_ref().map(Matrix::shape) == other.head.as_ref().map(Matrix::shape)
    }

    fn check_shape(&self, other: &Self) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::dims("encoders have different block shapes"))
        }
    }

    /// Zero-valued encoder with the same blocks.
    pub fn zeros_like(&self) -> Self {
        LinearEncoder {
            weight: Matrix::zeros(self.weight.rows(), self.weight.cols()),
            predictor: self.predictor.as_ref().map(|g| Matrix::zeros(g.rows(), g.cols())),
            head: self.head.as_ref().map(|h| Matrix::zeros(h.rows(), h.cols())),
        }
    }

    /// `self += alpha * other`, block by block.
    pub fn add_scaled(&mut self, alpha: T, other: &Self) -> Result<()> {
        self.check_shape(other)?;
        for (a, b) in self.blocks_mut().into_iter().zip(other.blocks()) {
            a.add_scaled(alpha, b)?;
        }
        Ok(())
    }

    pub fn scale_in_place(&mut self, alpha: T) {
        for b in self.blocks_mut() {
            b.scale_in_place(alpha);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.blocks().iter().all(|b| b.is_finite())
    }

    /// Squared Frobenius norm summed over blocks.
    pub fn norm_sq(&self) -> T {
        self.blocks().iter().map(|b| b.frobenius_norm_sq()).sum()
    }

    /// Unweighted mean `w_0 + (1/M) sum_k (w_k - w_0)`, summed in the given
    /// order. Taken relative to the first model so that averaging identical
    /// models returns them exactly.
    pub fn mean(models: &[&Self]) -> Result<Self> {
        Self::weighted_mean(models, &vec![T::one(); models.len()])
    }

    /// `w_0 + sum_k a_k (w_k - w_0) / sum_k a_k`, summed in the given order.
    pub fn weighted_mean(models: &[&Self], weights: &[T]) -> Result<Self> {
        if models.len() != weights.len() {
            return Err(Error::dims(format!("{} models, {} weights", models.len(), weights.len())));
        }
        let first = *models.first().ok_or_else(|| Error::Empty("no models to average".into()))?;
        let total: T = weights.iter().copied().sum();
        if !(total > T::zero()) {
            return Err(Error::invalid("averaging weights must have a positive sum"));
        }
        let mut delta = first.zeros_like();
        for (m, &a) in models.iter().zip(weights) {
            first.check_shape(m)?;
            for ((d, x), r) in delta.blocks_mut().into_iter().zip(m.blocks()).zip(first.blocks()) {
                d.add_scaled(a, &x.sub(r)?)?;
            }
        }
        delta.scale_in_place(T::one() / total);
        let mut out = first.clone();
        out.add_scaled(T::one(), &delta)?;
        Ok(out)
    }

    pub fn cast<U: Scalar>(&self) -> LinearEncoder<U> {
        LinearEncoder {
            weight: self.weight.cast(),
            predictor: self.predictor.as_ref().map(Matrix::cast),
            head: self.head.as_ref().map(Matrix::cast),
        }
    }
}
