use crate::error::{Error, Result};
use crate::linalg::{dot, norm};
use crate::Scalar;

/// Default InfoNCE temperature.
pub const DEFAULT_TEMPERATURE: f64 = 0.5;

fn check_pair<T: Scalar>(a: &[T], b: &[T]) -> Result<(T, T)> {
    if a.is_empty() {
        return Err(Error::invalid("vectors must have positive dimension"));
    }
    if a.len() != b.len() {
        return Err(Error::dims(format!("vector lengths {} and {}", a.len(), b.len())));
    }
    let (na, nb) = (norm(a), norm(b));
    if na == T::zero() || nb == T::zero() {
        return Err(Error::ZeroNorm);
    }
    Ok((na, nb))
}

/// Negative cosine similarity `-<a, b> / (|a| |b|)`.
pub fn cosine_distance<T: Scalar>(a: &[T], b: &[T]) -> Result<T> {
    let (na, nb) = check_pair(a, b)?;
    Ok(-dot(a, b) / (na * nb))
}

/// Cosine distance and its gradient with respect to `a`.
pub fn cosine_distance_grad<T: Scalar>(a: &[T], b: &[T]) -> Result<(T, Vec<T>)> {
    let (na, nb) = check_pair(a, b)?;
    let ab = dot(a, b);
    let inv = T::one() / (na * nb);
    let c = ab / (na * na);
    let g = a.iter().zip(b).map(|(&ai, &bi)| -inv * (bi - c * ai)).collect();
    Ok((-ab * inv, g))
}

/// `-log softmax_0(logits)`, stabilized by subtracting the largest logit.
pub(crate) fn neg_log_softmax_first<T: Scalar>(logits: &[T]) -> T {
    let top = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let sum: T = logits.iter().map(|&l| (l - top).exp()).sum();
    top + sum.ln() - logits[0]
}

/// Contrastive loss of `anchor` against one positive and a set of negatives,
/// with logits `-D(anchor, .) / temperature`.
pub fn infonce_loss<T: Scalar, V: AsRef<[T]>>(
    anchor: &[T],
    positive: &[T],
    negatives: &[V],
    temperature: T,
) -> Result<T> {
    if !(temperature > T::zero()) {
        return Err(Error::invalid("temperature must be positive"));
    }
    let mut logits = Vec::with_capacity(negatives.len() + 1);
    logits.push(-cosine_distance(anchor, positive)? / temperature);
    for n in negatives {
        logits.push(-cosine_distance(anchor, n.as_ref())? / temperature);
    }
    Ok(neg_log_softmax_first(&logits).max(T::zero()))
}

/// Cosine distance between a prediction and a (stop-gradient) target.
pub fn simsiam_loss<T: Scalar>(prediction: &[T], target: &[T]) -> Result<T> {
    cosine_distance(prediction, target)
}

/// Gradient of [`simsiam_loss`] with respect to the prediction only.
pub fn simsiam_grad<T: Scalar>(prediction: &[T], target: &[T]) -> Result<(T, Vec<T>)> {
    cosine_distance_grad(prediction, target)
}
