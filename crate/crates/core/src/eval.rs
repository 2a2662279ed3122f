//! Downstream evaluation: linear probes on frozen features, cluster-wise
//! probes for FeatARC, weight distances and feature alignment.

use serde::{Deserialize, Serialize};

use crate::datagen::LocalDataset;
use crate::error::{Error, Result};
use crate::featarc::ClusterState;
use crate::linalg::{dot, Matrix};
use crate::objectives::{mean_cosine_distance, LinearEncoder};
use crate::rng::{stream, stream_rng};
use crate::Scalar;

/// Gradient norm at which the probe head counts as converged.
pub const PROBE_GRAD_TOL: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeConfig {
    /// Cap on full-batch gradient steps.
    pub epochs: usize,
    /// Step size as a fraction of `1/L`, `L` the smoothness bound of the
    /// cross-entropy in the head.
    pub learning_rate: f64,
    /// Scale features to unit norm before training the head.
    pub normalize: bool,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            epochs: 500,
            learning_rate: 1.0,
            normalize: false,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    GradientNorm,
    EpochCap,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub top1_accuracy: f64,
    /// `None` for classes absent from the test split.
    pub per_class_accuracy: Vec<Option<f64>>,
    pub num_train: usize,
    pub num_test: usize,
    pub epochs_run: usize,
    pub stop: StopReason,
}

/// Features with a trailing constant 1 for the bias, in f64.
fn design<T: Scalar>(enc: &LinearEncoder<T>, ds: &LocalDataset<T>, normalize: bool) -> Result<Matrix<f64>> {
    let z = enc.embed_rows(ds.samples())?;
    let m = z.cols();
    let mut u = Matrix::zeros(z.rows(), m + 1);
    for (i, row) in z.row_iter().enumerate() {
        let out = u.row_mut(i);
        for (o, &v) in out.iter_mut().zip(row) {
            *o = v.as_f64();
        }
        if normalize {
            let n = dot(&out[..m], &out[..m]).sqrt();
            if n > 0.0 {
                out[..m].iter_mut().for_each(|v| *v /= n);
            }
        }
        out[m] = 1.0;
    }
    Ok(u)
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Trains a multinomial logistic head (with bias) on frozen features by
/// full-batch gradient descent and reports top-1 accuracy on `test`.
pub fn linear_probe<T: Scalar>(
    encoder: &LinearEncoder<T>,
    train: &LocalDataset<T>,
    test: &LocalDataset<T>,
    cfg: &ProbeConfig,
) -> Result<ProbeResult> {
    if train.is_empty() || test.is_empty() {
        return Err(Error::Empty("linear probe needs non-empty train and test splits".into()));
    }
    if train.dim() != encoder.input_dim() || test.dim() != encoder.input_dim() {
        return Err(Error::dims("probe data and encoder dimensions differ"));
    }
    let c = train.num_classes().max(test.num_classes());
    let u = design(encoder, train, cfg.normalize)?;
    let (n, p) = u.shape();
    let mut rng = stream_rng(cfg.seed, &[stream::PROBE]);
    let mut head = Matrix::<f64>::random_normal(c, p, 0.01, &mut rng);

    let mean_sq = u.frobenius_norm_sq() / n as f64;
    let step = cfg.learning_rate / (0.5 * mean_sq);
    let labels = train.labels();
    let mut stop = StopReason::EpochCap;
    let mut epochs_run = 0;
    let mut grad = Matrix::zeros(c, p);
    let mut probs = vec![0.0; c];
    for _ in 0..cfg.epochs {
        grad.scale_in_place(0.0);
        for (s, x) in u.row_iter().enumerate() {
            for (k, pk) in probs.iter_mut().enumerate() {
                *pk = dot(head.row(k), x);
            }
            let top = probs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for pk in probs.iter_mut() {
                *pk = (*pk - top).exp();
                total += *pk;
            }
            for (k, &pk) in probs.iter().enumerate() {
                let coef = pk / total - if k == labels[s] { 1.0 } else { 0.0 };
                crate::linalg::axpy(coef, x, grad.row_mut(k));
            }
        }
        grad.scale_in_place(1.0 / n as f64);
        if grad.frobenius_norm() <= PROBE_GRAD_TOL {
            stop = StopReason::GradientNorm;
            break;
        }
        head.add_scaled(-step, &grad)?;
        epochs_run += 1;
        if !head.is_finite() {
            return Err(Error::NumericalDivergence {
                source_id: None,
                detail: "linear probe head became non-finite".into(),
            });
        }
    }

    let v = design(encoder, test, cfg.normalize)?;
    let mut correct = vec![0usize; c];
    let mut seen = vec![0usize; c];
    for (x, &y) in v.row_iter().zip(test.labels()) {
        let logits: Vec<f64> = head.row_iter().map(|h| dot(h, x)).collect();
        seen[y] += 1;
        if argmax(&logits) == y {
            correct[y] += 1;
        }
    }
    Ok(ProbeResult {
        top1_accuracy: correct.iter().sum::<usize>() as f64 / test.len() as f64,
        per_class_accuracy: correct
            .iter()
            .zip(&seen)
            .map(|(&k, &s)| (s > 0).then(|| k as f64 / s as f64))
            .collect(),
        num_train: n,
        num_test: test.len(),
        epochs_run,
        stop,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterProbe {
    pub mean_accuracy: f64,
    pub per_source: Vec<ProbeResult>,
}

/// Probes each source with the model of the cluster it is assigned to and
/// averages the accuracies. `splits[i]` is source i's (train, test) pair.
pub fn probe_featarc<T: Scalar>(
    state: &ClusterState<T>,
    splits: &[(LocalDataset<T>, LocalDataset<T>)],
    cfg: &ProbeConfig,
) -> Result<ClusterProbe> {
    if splits.len() != state.assignments.len() {
        return Err(Error::dims(format!(
            "{} splits for {} sources",
            splits.len(),
            state.assignments.len()
        )));
    }
    let per_source = splits
        .iter()
        .zip(&state.assignments)
        .map(|((train, test), &j)| {
            let model = state
                .cluster_models
                .get(j)
                .ok_or_else(|| Error::invalid(format!("assignment {j} outside the cluster list")))?;
            linear_probe(model, train, test, cfg)
        })
        .collect::<Result<Vec<_>>>()?;
    let mean_accuracy = per_source.iter().map(|r| r.top1_accuracy).sum::<f64>() / per_source.len().max(1) as f64;
    Ok(ClusterProbe {
        mean_accuracy,
        per_source,
    })
}

/// Sum over blocks (weight, predictor, head) of the Frobenius norm of the
/// difference.
pub fn weight_distance<T: Scalar>(a: &LinearEncoder<T>, b: &LinearEncoder<T>) -> Result<T> {
    if !a.same_shape(b) {
        return Err(Error::dims("encoders have different block shapes"));
    }
    a.blocks()
        .into_iter()
        .zip(b.blocks())
        .map(|(x, y)| Ok(x.sub(y)?.frobenius_norm()))
        .sum()
}

/// Mean cosine distance between the features of `a` and `b` over the
/// dataset, skipping samples either maps to zero.
pub fn feature_alignment_score<T: Scalar>(a: &LinearEncoder<T>, b: &LinearEncoder<T>, dataset: &LocalDataset<T>) -> Result<T> {
    let za = a.embed_rows(dataset.samples())?;
    let zb = b.embed_rows(dataset.samples())?;
    mean_cosine_distance(&za, &zb)?.ok_or(Error::ZeroNorm)
}
