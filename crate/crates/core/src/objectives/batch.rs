//! Batch losses of the training flavors with gradients in every encoder block.
//!
//! Terms whose features have zero norm contribute nothing to either the loss
//! or the gradient; the pointwise losses in `losses` reject such input instead.

use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, norm, Matrix};
use crate::objectives::losses::{cosine_distance_grad, neg_log_softmax_first};
use crate::objectives::LinearEncoder;
use crate::Scalar;

/// Adds `g h^T` to `out`.
fn add_outer<T: Scalar>(out: &mut Matrix<T>, g: &[T], h: &[T]) {
    for (i, &gi) in g.iter().enumerate() {
        if gi != T::zero() {
            axpy(gi, h, out.row_mut(i));
        }
    }
}

/// `g^T v` for the predictor `g`, or `v` when there is none.
fn predictor_t<T: Scalar>(enc: &LinearEncoder<T>, v: &[T]) -> Result<Vec<T>> {
    match enc.predictor() {
        Some(g) => g.transpose_matvec(v),
        None => Ok(v.to_vec()),
    }
}

fn check_views<T: Scalar>(enc: &LinearEncoder<T>, a: &Matrix<T>, b: &Matrix<T>) -> Result<usize> {
    if a.rows() == 0 {
        return Err(Error::Empty("batch".into()));
    }
    if a.shape() != b.shape() || a.cols() != enc.input_dim() {
        return Err(Error::dims(format!(
            "views {:?}/{:?} for input dim {}",
            a.shape(),
            b.shape(),
            enc.input_dim()
        )));
    }
    Ok(a.rows())
}

/// InfoNCE over a batch of paired views. Anchor `s` is `w a_s`, its
/// positive `w b_s`, and its negatives the positives of the other rows.
pub fn infonce_batch<T: Scalar>(
    enc: &LinearEncoder<T>,
    first: &Matrix<T>,
    second: &Matrix<T>,
    temperature: T,
) -> Result<(T, LinearEncoder<T>)> {
    if !(temperature > T::zero()) {
        return Err(Error::invalid("temperature must be positive"));
    }
    let n = check_views(enc, first, second)?;
    let za = enc.embed_rows(first)?;
    let zb = enc.embed_rows(second)?;
    let m = enc.embedding_dim();
    let mut dza = Matrix::zeros(n, m);
    let mut dzb = Matrix::zeros(n, m);
    let mut loss = T::zero();
    let inv_t = T::one() / temperature;

    for s in 0..n {
        let anchor = za.row(s);
        if norm(anchor) == T::zero() {
            continue;
        }
        // candidate 0 is the positive, then the other rows in index order
        let order: Vec<usize> = std::iter::once(s).chain((0..n).filter(|&t| t != s)).collect();
        let mut logits = Vec::with_capacity(n);
        let mut grads = Vec::with_capacity(n);
        for &t in &order {
            let (dist, ga) = match cosine_distance_grad(anchor, zb.row(t)) {
                Ok(v) => v,
                Err(Error::ZeroNorm) => continue,
                Err(e) => return Err(e),
            };
            let (_, gb) = cosine_distance_grad(zb.row(t), anchor)?;
            logits.push(-dist * inv_t);
            grads.push((t, ga, gb));
        }
        if grads.first().map(|g| g.0) != Some(s) {
            continue;
        }
        loss += neg_log_softmax_first(&logits);
        let top = logits.iter().copied().fold(T::neg_infinity(), T::max);
        let exps: Vec<T> = logits.iter().map(|&l| (l - top).exp()).collect();
        let total: T = exps.iter().copied().sum();
        for (j, (t, ga, gb)) in grads.iter().enumerate() {
            // d loss / d logit_j = softmax_j - [j == 0]; d logit / d z = -(1/tau) dD/dz
            let mut coef = exps[j] / total;
            if j == 0 {
                coef -= T::one();
            }
            let c = -coef * inv_t;
            axpy(c, ga, dza.row_mut(s));
            axpy(c, gb, dzb.row_mut(*t));
        }
    }
    let inv_n = T::one() / T::of_usize(n);
    let mut g = dza.transpose().matmul(first)?;
    g.add_scaled(T::one(), &dzb.transpose().matmul(second)?)?;
    g.scale_in_place(inv_n);
    let mut grad = enc.zeros_like();
    *grad.weight_mut() = g;
    Ok((loss * inv_n, grad))
}

/// Symmetric negative-cosine loss `1/2 D(g z1, sg z2) + 1/2 D(g z2, sg z1)`
/// averaged over the batch.
pub fn simsiam_batch<T: Scalar>(
    enc: &LinearEncoder<T>,
    first: &Matrix<T>,
    second: &Matrix<T>,
) -> Result<(T, LinearEncoder<T>)> {
    let n = check_views(enc, first, second)?;
    let z1 = enc.embed_rows(first)?;
    let z2 = enc.embed_rows(second)?;
    let mut grad = enc.zeros_like();
    let mut loss = T::zero();
    let half = T::of(0.5);
    for s in 0..n {
        for (z, target, x) in [(z1.row(s), z2.row(s), first.row(s)), (z2.row(s), z1.row(s), second.row(s))] {
            let p = enc.predict(z)?;
            let (dist, gp) = match cosine_distance_grad(&p, target) {
                Ok(v) => v,
                Err(Error::ZeroNorm) => continue,
                Err(e) => return Err(e),
            };
            loss += half * dist;
            let gp: Vec<T> = gp.into_iter().map(|v| v * half).collect();
            add_outer(grad.weight_mut(), &predictor_t(enc, &gp)?, x);
            if let Some(gg) = grad.predictor_mut() {
                add_outer(gg, &gp, z);
            }
        }
    }
    let inv_n = T::one() / T::of_usize(n);
    grad.scale_in_place(inv_n);
    Ok((loss * inv_n, grad))
}

/// Mean cross-entropy of a linear softmax head on the features of `x`.
pub fn softmax_batch<T: Scalar>(
    enc: &LinearEncoder<T>,
    x: &Matrix<T>,
    labels: &[usize],
) -> Result<(T, LinearEncoder<T>)> {
    let head = enc
        .head()
        .ok_or_else(|| Error::invalid("supervised training needs an encoder with a head"))?;
    let n = x.rows();
    if n == 0 {
        return Err(Error::Empty("batch".into()));
    }
    if labels.len() != n || x.cols() != enc.input_dim() {
        return Err(Error::dims("batch rows, labels and input dim disagree"));
    }
    let c = head.rows();
    let z = enc.embed_rows(x)?;
    let mut grad = enc.zeros_like();
    let mut loss = T::zero();
    for s in 0..n {
        let y = labels[s];
        if y >= c {
            return Err(Error::invalid(format!("label {y} outside head with {c} classes")));
        }
        let zs = z.row(s);
        let logits = head.matvec(zs)?;
        let top = logits.iter().copied().fold(T::neg_infinity(), T::max);
        let exps: Vec<T> = logits.iter().map(|&l| (l - top).exp()).collect();
        let total: T = exps.iter().copied().sum();
        loss += top + total.ln() - logits[y];
        let mut dl: Vec<T> = exps.iter().map(|&e| e / total).collect();
        dl[y] -= T::one();
        let dz = head.transpose_matvec(&dl)?;
        add_outer(grad.weight_mut(), &dz, x.row(s));
        add_outer(grad.head_mut().expect("zeros_like keeps the head"), &dl, zs);
    }
    let inv_n = T::one() / T::of_usize(n);
    grad.scale_in_place(inv_n);
    Ok((loss * inv_n, grad))
}

/// Feature-alignment regularizer
/// `lambda * (1/2 D(g w x+, z_g) + 1/2 D(g w x, z_g))` averaged over the
/// batch, where `z_g` (row `s` of `global_features`) is held constant.
pub fn alignment_regularizer<T: Scalar>(
    enc: &LinearEncoder<T>,
    global_features: &Matrix<T>,
    clean: &Matrix<T>,
    augmented: &Matrix<T>,
    lambda: T,
) -> Result<(T, LinearEncoder<T>)> {
    let n = check_views(enc, clean, augmented)?;
    if global_features.shape() != (n, enc.embedding_dim()) {
        return Err(Error::dims("global features must have one row per sample"));
    }
    let zc = enc.embed_rows(clean)?;
    let za = enc.embed_rows(augmented)?;
    let mut grad = enc.zeros_like();
    let mut loss = T::zero();
    let w = T::of(0.5) * lambda;
    for s in 0..n {
        let target = global_features.row(s);
        for (z, x) in [(za.row(s), augmented.row(s)), (zc.row(s), clean.row(s))] {
            let p = enc.predict(z)?;
            let (dist, gp) = match cosine_distance_grad(&p, target) {
                Ok(v) => v,
                Err(Error::ZeroNorm) => continue,
                Err(e) => return Err(e),
            };
            loss += w * dist;
            let gp: Vec<T> = gp.into_iter().map(|v| v * w).collect();
            add_outer(grad.weight_mut(), &predictor_t(enc, &gp)?, x);
            if let Some(gg) = grad.predictor_mut() {
                add_outer(gg, &gp, z);
            }
        }
    }
    let inv_n = T::one() / T::of_usize(n);
    grad.scale_in_place(inv_n);
    Ok((loss * inv_n, grad))
}

/// Mean cosine distance between rows of `a` and `b`, skipping rows where
/// either feature vector is zero. Returns `None` if every row was skipped.
pub fn mean_cosine_distance<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Result<Option<T>> {
    if a.shape() != b.shape() {
        return Err(Error::dims(format!("feature shapes {:?} and {:?}", a.shape(), b.shape())));
    }
    let mut acc = T::zero();
    let mut count = 0usize;
    for (x, y) in a.row_iter().zip(b.row_iter()) {
        let (nx, ny) = (norm(x), norm(y));
        if nx == T::zero() || ny == T::zero() {
            continue;
        }
        let c = (-dot(x, y) / (nx * ny)).max(-T::one()).min(T::one());
        acc += c;
        count += 1;
    }
    Ok((count > 0).then(|| acc / T::of_usize(count)))
}
