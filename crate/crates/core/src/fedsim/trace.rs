use std::fmt;
use std::io::Write;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::datagen::LocalDataset;
use crate::error::{Error, Result};
use crate::fedsim::config::{FedConfig, Flavor};
use crate::linalg::Matrix;
use crate::objectives::{draw_views, infonce_batch, linear_ssl_loss_expected, simsiam_batch, softmax_batch, LinearEncoder};
use crate::rng::{stream, stream_rng};
use crate::spectral::{principal_angle, ssl_minimizer_from_samples};
use crate::Scalar;

/// Per-round metrics. Fields after `wall_time_secs` are only filled by the
/// algorithms that produce them.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub participants: Vec<usize>,
    pub mean_local_loss: Option<f64>,
    pub global_loss: f64,
    pub principal_angle: Option<f64>,
    pub wall_time_secs: f64,

    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node_losses: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_pairwise_distance: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_pairwise_distance: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node_angles: Option<Vec<f64>>,

    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub assignments: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cluster_sizes: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_alignment: Option<Vec<Option<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cluster_angles: Option<Vec<f64>>,
}

impl RoundRecord {
    /// Equality of the fields shared by every algorithm, ignoring wall time.
    /// Floats are compared bitwise.
    pub fn core_eq(&self, other: &Self) -> bool {
        fn bits(x: Option<f64>) -> Option<u64> {
            x.map(f64::to_bits)
        }
        self.round == other.round
            && self.participants == other.participants
            && bits(self.mean_local_loss) == bits(other.mean_local_loss)
            && self.global_loss.to_bits() == other.global_loss.to_bits()
            && bits(self.principal_angle) == bits(other.principal_angle)
    }
}

/// Round records and the final models of a run.
#[derive(Clone, Debug)]
pub struct TrainingTrace<T> {
    pub records: Vec<RoundRecord>,
    pub final_models: Vec<LinearEncoder<T>>,
}

impl<T: Scalar> TrainingTrace<T> {
    /// One JSON object per line.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut w, r)?;
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn last(&self) -> Option<&RoundRecord> {
        self.records.last()
    }

    /// Core fields of every record and every final model agree bitwise.
    pub fn core_eq(&self, other: &Self) -> bool {
        self.records.len() == other.records.len()
            && self.records.iter().zip(&other.records).all(|(a, b)| a.core_eq(b))
            && self.final_models == other.final_models
    }
}

/// A run that stopped early, with the trace recorded up to the failure.
#[derive(Debug)]
pub struct Aborted<T> {
    pub error: Error,
    pub trace: TrainingTrace<T>,
}

impl<T> fmt::Display for Aborted<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "run aborted after {} rounds: {}", self.trace.records.len(), self.error)
    }
}

impl<T: fmt::Debug> std::error::Error for Aborted<T> {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

impl<T> Aborted<T> {
    pub fn new(error: Error, records: Vec<RoundRecord>) -> Self {
        Aborted {
            error,
            trace: TrainingTrace {
                records,
                final_models: Vec::new(),
            },
        }
    }
}

pub type RunResult<T, S = TrainingTrace<T>> = std::result::Result<S, Aborted<T>>;

/// Samples per source used to estimate the loss of the sampled flavors.
pub const EVAL_SUBSET: usize = 256;

struct EvalSet<T> {
    clean: Matrix<T>,
    first: Matrix<T>,
    second: Matrix<T>,
    labels: Vec<usize>,
}

/// Fixed evaluation data of a run: sample-count weights, one frozen subset
/// with views per source, and the linear oracle on the union of samples.
pub struct Evaluator<'a, T> {
    sources: &'a [LocalDataset<T>],
    flavor: Flavor,
    temperature: T,
    weights: Vec<f64>,
    sets: Vec<Option<EvalSet<T>>>,
    oracle: Option<LinearEncoder<T>>,
}

impl<'a, T: Scalar> Evaluator<'a, T> {
    pub fn new(sources: &'a [LocalDataset<T>], cfg: &FedConfig) -> Result<Self> {
        let total: usize = sources.iter().map(LocalDataset::len).sum();
        if total == 0 {
            return Err(Error::Empty("sources hold no samples".into()));
        }
        let weights = sources.iter().map(|s| s.len() as f64 / total as f64).collect();
        let sets = sources
            .iter()
            .enumerate()
            .map(|(k, ds)| {
                if cfg.flavor.is_linear() || ds.is_empty() {
                    return None;
                }
                let mut rng = stream_rng(cfg.seed, &[stream::EVAL, k as u64]);
                let take = ds.len().min(EVAL_SUBSET);
                let mut idx = index::sample(&mut rng, ds.len(), take).into_vec();
                idx.sort_unstable();
                let sub = ds.subset(&idx).expect("indices are in range");
                let (first, second) = draw_views(sub.samples(), &mut rng);
                Some(EvalSet {
                    clean: sub.samples().clone(),
                    first,
                    second,
                    labels: sub.labels().to_vec(),
                })
            })
            .collect();
        let oracle = if cfg.flavor.is_linear() {
            let union = LocalDataset::concat(sources)?;
            let m = cfg.embedding_dim.min(union.dim());
            Some(ssl_minimizer_from_samples(union.samples(), m)?)
        } else {
            None
        };
        Ok(Evaluator {
            sources,
            flavor: cfg.flavor,
            temperature: T::of(cfg.temperature),
            weights,
            sets,
            oracle,
        })
    }

    /// Share `n_k / N` of each source.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn oracle(&self) -> Option<&LinearEncoder<T>> {
        self.oracle.as_ref()
    }

    /// Loss of `model` on source `k`: exact expected loss for the linear
    /// flavor, otherwise the flavor's loss on the frozen subset.
    pub fn source_loss(&self, model: &LinearEncoder<T>, k: usize) -> Result<f64> {
        let ds = &self.sources[k];
        if ds.is_empty() {
            return Ok(0.0);
        }
        let loss = match (self.flavor, &self.sets[k]) {
            (Flavor::LinearSsl, _) => linear_ssl_loss_expected(model, ds.second_moment()?)?,
            (Flavor::Infonce, Some(s)) => infonce_batch(model, &s.first, &s.second, self.temperature)?.0,
            (Flavor::Simsiam, Some(s)) => simsiam_batch(model, &s.first, &s.second)?.0,
            (Flavor::SupervisedSoftmax, Some(s)) => softmax_batch(model, &s.clean, &s.labels)?.0,
            _ => unreachable!("evaluation subsets exist for every non-empty source"),
        };
        Ok(loss.as_f64())
    }

    /// `sum_k (n_k/N) loss(model_for(k), D_k)`, summed in source order.
    pub fn global_loss<'m>(&self, model_for: impl Fn(usize) -> &'m LinearEncoder<T>) -> Result<f64>
    where
        T: 'm,
    {
        let mut total = 0.0;
        for k in 0..self.sources.len() {
            total += self.weights[k] * self.source_loss(model_for(k), k)?;
        }
        Ok(total)
    }

    /// Largest principal angle to the oracle span (linear flavor only).
    pub fn angle(&self, model: &LinearEncoder<T>) -> Result<Option<f64>> {
        match &self.oracle {
            Some(o) => Ok(Some(principal_angle(model.weight(), o.weight())?.as_f64())),
            None => Ok(None),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsonl_has_one_line_per_round() {
        let trace: TrainingTrace<f64> = TrainingTrace {
            records: (0..3)
                .map(|r| RoundRecord {
                    round: r,
                    global_loss: -1.0,
                    ..RoundRecord::default()
                })
                .collect(),
            final_models: Vec::new(),
        };
        let mut buf = Vec::new();
        trace.write_jsonl(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 3);
        let back: RoundRecord = serde_json::from_str(text.lines().nth(2).unwrap()).unwrap();
        assert_eq!(back.round, 2);
        assert!(!text.contains("assignments"));
    }

    #[test]
    fn core_eq_ignores_wall_time() {
        let a = RoundRecord {
            global_loss: 1.5,
            wall_time_secs: 1.0,
            ..RoundRecord::default()
        };
        let b = RoundRecord {
            wall_time_secs: 2.0,
            node_losses: Some(vec![1.0]),
            ..a.clone()
        };
        assert!(a.core_eq(&b));
        let c = RoundRecord { global_loss: 1.5000000001, ..a.clone() };
        assert!(!a.core_eq(&c));
    }
}
