use rand::seq::SliceRandom;
use rand::Rng;

use crate::datagen::LocalDataset;
use crate::error::{Error, Result};
use crate::fedsim::config::{FedConfig, Flavor, GradientMode};
use crate::linalg::Matrix;
use crate::objectives::{
    alignment_regularizer, draw_views, infonce_batch, linear_ssl_gradient, linear_ssl_loss_expected,
    linear_ssl_views_loss_grad, simsiam_batch, softmax_batch, LinearEncoder,
};
use crate::Scalar;

/// Mini-batches drawn from reshuffled epochs. The permutation is drawn
/// lazily, so a run that never asks for a batch consumes no randomness.
pub struct BatchSampler {
    n: usize,
    order: Vec<usize>,
    pos: usize,
}

impl BatchSampler {
    pub fn new(n: usize) -> Self {
        BatchSampler { n, order: Vec::new(), pos: 0 }
    }

    /// Next batch of at most `size` indices; the last batch of an epoch may
    /// be short.
    pub fn next_batch<R: Rng + ?Sized>(&mut self, size: usize, rng: &mut R) -> Vec<usize> {
        if self.pos >= self.order.len() {
            self.order = (0..self.n).collect();
            self.order.shuffle(rng);
            self.pos = 0;
        }
        let end = (self.pos + size).min(self.order.len());
        let batch = self.order[self.pos..end].to_vec();
        self.pos = end;
        batch
    }
}

/// Feature-alignment term of a regularized local update: features of the
/// frozen `global` model are the targets.
#[derive(Clone, Copy)]
pub struct Regularizer<'a, T> {
    pub global: &'a LinearEncoder<T>,
    pub lambda: T,
}

/// Result of a local update: the trained model and the mean training loss
/// over its steps (`None` when no step ran).
#[derive(Clone, Debug)]
pub struct LocalOutcome<T> {
    pub model: LinearEncoder<T>,
    pub mean_loss: Option<T>,
}

fn rows_of<T: Scalar>(x: &Matrix<T>, idx: &[usize]) -> Matrix<T> {
    let mut out = Matrix::zeros(idx.len(), x.cols());
    for (r, &i) in idx.iter().enumerate() {
        out.row_mut(r).copy_from_slice(x.row(i));
    }
    out
}

fn weight_only<T: Scalar>(model: &LinearEncoder<T>, g: Matrix<T>) -> LinearEncoder<T> {
    let mut grad = model.zeros_like();
    *grad.weight_mut() = g;
    grad
}

fn divergence(source: usize, step: usize, what: &str) -> Error {
    Error::NumericalDivergence {
        source_id: Some(source),
        detail: format!("{what} became non-finite at local step {step}"),
    }
}

/// Runs `steps` gradient steps from `model`, optionally with the alignment
/// regularizer. Shared by plain and regularized local updates: with no
/// regularizer the two consume identical randomness.
pub fn local_update_with<T: Scalar, R: Rng + ?Sized>(
    model: &LinearEncoder<T>,
    dataset: &LocalDataset<T>,
    steps: usize,
    cfg: &FedConfig,
    reg: Option<Regularizer<'_, T>>,
    rng: &mut R,
) -> Result<LocalOutcome<T>> {
    let mut w = model.clone();
    if steps == 0 {
        return Ok(LocalOutcome { model: w, mean_loss: None });
    }
    if dataset.is_empty() {
        return Err(Error::Empty(format!("source {} has no samples", dataset.source_id())));
    }
    if dataset.dim() != model.input_dim() {
        return Err(Error::dims(format!(
            "source {} has dimension {}, model expects {}",
            dataset.source_id(),
            dataset.dim(),
            model.input_dim()
        )));
    }
    let id = dataset.source_id();
    let lr = T::of(cfg.learning_rate);
    let temperature = T::of(cfg.temperature);
    let x = dataset.samples();
    let expected = cfg.gradient_mode == GradientMode::Expected;
    let mut sampler = BatchSampler::new(dataset.len());
    let mut total = T::zero();

    for step in 0..steps {
        let needs_batch = !expected || reg.is_some();
        let (batch, idx) = if needs_batch {
            let idx = sampler.next_batch(cfg.batch_size, rng);
            (rows_of(x, &idx), idx)
        } else {
            (Matrix::zeros(0, 0), Vec::new())
        };
        // views are only drawn for flavors that augment
        let views = match cfg.flavor {
            Flavor::SupervisedSoftmax => None,
            _ if needs_batch => Some(draw_views(&batch, rng)),
            _ => None,
        };

        let (mut loss, mut grad) = match (cfg.flavor, expected) {
            (Flavor::LinearSsl, true) => {
                let cov = dataset.second_moment()?;
                let l = linear_ssl_loss_expected(&w, cov)?;
                (l, weight_only(&w, linear_ssl_gradient(&w, cov)?))
            }
            (Flavor::LinearSsl, false) => {
                let (a, b) = views.as_ref().expect("stochastic mode draws views");
                let (l, g) = linear_ssl_views_loss_grad(&w, a, b)?;
                (l, weight_only(&w, g))
            }
            (Flavor::Infonce, _) => {
                let (a, b) = views.as_ref().expect("views drawn");
                infonce_batch(&w, a, b, temperature)?
            }
            (Flavor::Simsiam, _) => {
                let (a, b) = views.as_ref().expect("views drawn");
                simsiam_batch(&w, a, b)?
            }
            (Flavor::SupervisedSoftmax, _) => {
                let labels: Vec<usize> = idx.iter().map(|&i| dataset.labels()[i]).collect();
                softmax_batch(&w, &batch, &labels)?
            }
        };

        if let Some(r) = reg {
            let targets = r.global.embed_rows(&batch)?;
            let augmented = views.as_ref().map_or(&batch, |v| &v.0);
            let (l, g) = alignment_regularizer(&w, &targets, &batch, augmented, r.lambda)?;
            loss += l;
            grad.add_scaled(T::one(), &g)?;
        }

        if !loss.is_finite() {
            return Err(divergence(id, step, "loss"));
        }
        total += loss;
        w.add_scaled(-lr, &grad)?;
        if !w.is_finite() {
            return Err(divergence(id, step, "model"));
        }
    }
    Ok(LocalOutcome {
        model: w,
        mean_loss: Some(total / T::of_usize(steps)),
    })
}

/// Plain local training of one source.
pub fn local_update<T: Scalar, R: Rng + ?Sized>(
    model: &LinearEncoder<T>,
    dataset: &LocalDataset<T>,
    steps: usize,
    cfg: &FedConfig,
    rng: &mut R,
) -> Result<LinearEncoder<T>> {
    Ok(local_update_with(model, dataset, steps, cfg, None, rng)?.model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fedsim::config::LocalBudget;
    use crate::rng::stream_rng;

    fn cfg(flavor: Flavor, mode: GradientMode) -> FedConfig {
        FedConfig {
            flavor,
            gradient_mode: mode,
            learning_rate: 0.05,
            batch_size: 4,
            local_budget: LocalBudget::Steps(1),
            embedding_dim: 2,
            ..FedConfig::default()
        }
    }

    fn data(seed: u64) -> LocalDataset<f64> {
        let mut rng = stream_rng(seed, &[]);
        let x = Matrix::random_normal(10, 3, 1.0, &mut rng);
        let labels = (0..10).map(|i| i % 3).collect();
        LocalDataset::new(x, labels, 3, 4).unwrap()
    }

    #[test]
    fn sampler_covers_every_index_per_epoch() {
        let mut rng = stream_rng(1, &[]);
        let mut s = BatchSampler::new(10);
        let mut seen: Vec<usize> = (0..3).flat_map(|_| s.next_batch(4, &mut rng)).collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..10).collect::<Vec<_>>());
        assert_eq!(s.next_batch(4, &mut rng).len(), 4);
    }

    #[test]
    fn zero_steps_is_identity() {
        let ds = data(2);
        let m = LinearEncoder::random(2, 3, &mut stream_rng(3, &[])).unwrap();
        for flavor in [Flavor::LinearSsl, Flavor::Infonce, Flavor::Simsiam] {
            let out = local_update(&m, &ds, 0, &cfg(flavor, GradientMode::Stochastic), &mut stream_rng(4, &[])).unwrap();
            assert_eq!(out, m);
        }
    }

    #[test]
    fn single_expected_step_by_hand() {
        // X = diag(2, 1), w = [[1, 0], [0, 0.5]]
        let x = Matrix::from_rows(&[[2.0f64.sqrt(), 0.0], [0.0, 1.0]]).unwrap();
        let ds = LocalDataset::new(x.scale(2.0f64.sqrt()), vec![0, 0], 1, 0).unwrap();
        let w = LinearEncoder::new(Matrix::from_rows(&[[1.0, 0.0], [0.0, 0.5]]).unwrap()).unwrap();
        let c = FedConfig { learning_rate: 0.1, ..cfg(Flavor::LinearSsl, GradientMode::Expected) };
        let out = local_update(&w, &ds, 1, &c, &mut stream_rng(0, &[])).unwrap();
        // grad = -2 w X + 2 w w^T w = [[-4+2, 0], [0, -1+0.25]]
        let want = [[1.0 + 0.1 * 2.0, 0.0], [0.0, 0.5 + 0.1 * 0.75]];
        for i in 0..2 {
            for j in 0..2 {
                assert!((out.weight()[(i, j)] - want[i][j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn deterministic_given_rng_stream() {
        let ds = data(5);
        let m = LinearEncoder::random(2, 3, &mut stream_rng(6, &[])).unwrap();
        for flavor in [Flavor::LinearSsl, Flavor::Infonce, Flavor::Simsiam] {
            let c = cfg(flavor, GradientMode::Stochastic);
            let a = local_update(&m, &ds, 7, &c, &mut stream_rng(9, &[])).unwrap();
            let b = local_update(&m, &ds, 7, &c, &mut stream_rng(9, &[])).unwrap();
            assert_eq!(a, b);
            assert_ne!(a, m);
        }
    }

    #[test]
    fn supervised_step_trains_head() {
        let ds = data(7);
        let mut rng = stream_rng(8, &[]);
        let m = LinearEncoder::random(2, 3, &mut rng)
            .unwrap()
            .with_head(Matrix::random_normal(3, 2, 0.5, &mut rng))
            .unwrap();
        let c = cfg(Flavor::SupervisedSoftmax, GradientMode::Stochastic);
        let out = local_update_with(&m, &ds, 20, &c, None, &mut stream_rng(1, &[])).unwrap();
        assert!(out.mean_loss.unwrap().is_finite());
        assert_ne!(out.model.head(), m.head());
    }

    #[test]
    fn divergence_names_source() {
        let ds = data(9);
        let m = LinearEncoder::random(2, 3, &mut stream_rng(1, &[])).unwrap();
        let c = FedConfig { learning_rate: 1e6, ..cfg(Flavor::LinearSsl, GradientMode::Expected) };
        match local_update(&m, &ds, 50, &c, &mut stream_rng(0, &[])) {
            Err(Error::NumericalDivergence { source_id: Some(4), .. }) => {}
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
