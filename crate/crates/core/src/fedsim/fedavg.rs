use std::time::Instant;

use rand::seq::index;

use crate::datagen::LocalDataset;
use crate::error::{Error, Result};
use crate::fedsim::config::{Aggregation, FedConfig, Flavor};
use crate::fedsim::local::{local_update_with, LocalOutcome};
use crate::fedsim::trace::{Aborted, Evaluator, RoundRecord, RunResult, TrainingTrace};
use crate::linalg::Matrix;
use crate::objectives::LinearEncoder;
use crate::rng::{stream, stream_rng, SimRng};
use crate::Scalar;

/// Shared round-0 model: weight entries from N(0, 1/d), then an identity
/// predictor when enabled, then an `c x m` head with N(0, 1/m) entries for
/// the supervised flavor.
pub fn init_model<T: Scalar>(d: usize, num_classes: usize, cfg: &FedConfig) -> Result<LinearEncoder<T>> {
    let mut rng = stream_rng(cfg.seed, &[stream::INIT, 0]);
    let m = cfg.embedding_dim;
    let mut model = LinearEncoder::random(m, d, &mut rng)?;
    if cfg.predictor {
        model = model.with_predictor(Matrix::identity(m))?;
    }
    if cfg.flavor == Flavor::SupervisedSoftmax {
        let std = T::one() / T::of_usize(m).sqrt();
        model = model.with_head(Matrix::random_normal(num_classes.max(1), m, std, &mut rng))?;
    }
    Ok(model)
}

/// Sorted ids of the `ceil(rho K)` sources taking part in `round`.
pub fn sample_participants(num_sources: usize, cfg: &FedConfig, round: usize) -> Vec<usize> {
    let m = cfg.participants_per_round(num_sources);
    if m >= num_sources {
        return (0..num_sources).collect();
    }
    let mut rng = stream_rng(cfg.seed, &[stream::PARTICIPANTS, round as u64]);
    let mut ids = index::sample(&mut rng, num_sources, m).into_vec();
    ids.sort_unstable();
    ids
}

/// RNG of source `k`'s local work in `round`.
pub fn local_rng(cfg: &FedConfig, source: usize, round: usize) -> SimRng {
    stream_rng(cfg.seed, &[stream::LOCAL, source as u64, round as u64])
}

/// Common input dimension and class count of the sources.
pub(crate) fn check_sources<T: Scalar>(sources: &[LocalDataset<T>]) -> Result<(usize, usize)> {
    let first = sources.first().ok_or_else(|| Error::Empty("no sources".into()))?;
    let d = first.dim();
    if let Some(bad) = sources.iter().find(|s| s.dim() != d) {
        return Err(Error::dims(format!("source {} has dimension {}, expected {d}", bad.source_id(), bad.dim())));
    }
    let c = sources.iter().map(LocalDataset::num_classes).max().unwrap_or(1);
    Ok((d, c))
}

/// Aggregates returned models of `members` (ascending ids) by the configured rule.
pub(crate) fn aggregate<T: Scalar>(
    models: &[&LinearEncoder<T>],
    members: &[usize],
    sources: &[LocalDataset<T>],
    rule: Aggregation,
) -> Result<LinearEncoder<T>> {
    match rule {
        Aggregation::Unweighted => LinearEncoder::mean(models),
        Aggregation::Weighted => {
            let w: Vec<T> = members.iter().map(|&k| T::of_usize(sources[k].len())).collect();
            LinearEncoder::weighted_mean(models, &w)
        }
    }
}

/// Mean of the participants' mean step losses, in participant order.
pub(crate) fn mean_of_losses<T: Scalar>(outcomes: &[LocalOutcome<T>]) -> Option<f64> {
    let losses: Vec<f64> = outcomes.iter().filter_map(|o| o.mean_loss.map(Scalar::as_f64)).collect();
    (!losses.is_empty()).then(|| losses.iter().sum::<f64>() / losses.len() as f64)
}

pub(crate) struct RoundOutput<T> {
    pub model: LinearEncoder<T>,
    pub participants: Vec<usize>,
    pub mean_local_loss: Option<f64>,
}

pub(crate) fn fedavg_round_detailed<T: Scalar>(
    global: &LinearEncoder<T>,
    sources: &[LocalDataset<T>],
    cfg: &FedConfig,
    round: usize,
) -> Result<RoundOutput<T>> {
    if sources.is_empty() {
        return Err(Error::Empty("no sources".into()));
    }
    let participants = sample_participants(sources.len(), cfg, round);
    let mut outcomes = Vec::with_capacity(participants.len());
    for &k in &participants {
        let ds = &sources[k];
        let mut rng = local_rng(cfg, k, round);
        let out = local_update_with(global, ds, cfg.local_steps(ds.len()), cfg, None, &mut rng)
            .map_err(|e| e.with_source(k))?;
        outcomes.push(out);
    }
    let refs: Vec<&LinearEncoder<T>> = outcomes.iter().map(|o| &o.model).collect();
    let model = aggregate(&refs, &participants, sources, cfg.aggregation)?;
    Ok(RoundOutput {
        mean_local_loss: mean_of_losses(&outcomes),
        model,
        participants,
    })
}

/// One FedAvg round: sampled sources train from the broadcast `global` and
/// the server averages what they return.
pub fn fedavg_round<T: Scalar>(
    global: &LinearEncoder<T>,
    sources: &[LocalDataset<T>],
    cfg: &FedConfig,
    round: usize,
) -> Result<LinearEncoder<T>> {
    Ok(fedavg_round_detailed(global, sources, cfg, round)?.model)
}

/// `T` FedAvg rounds from the seeded initialization.
pub fn run_fedavg<T: Scalar>(sources: &[LocalDataset<T>], cfg: &FedConfig) -> RunResult<T> {
    let mut records = Vec::with_capacity(cfg.rounds);
    let setup = || -> Result<_> {
        cfg.validate(sources.len())?;
        let (d, c) = check_sources(sources)?;
        Ok((init_model::<T>(d, c, cfg)?, Evaluator::new(sources, cfg)?))
    };
    let (mut global, eval) = setup().map_err(|e| Aborted::new(e, Vec::new()))?;
    for round in 0..cfg.rounds {
        let start = Instant::now();
        let step = || -> Result<(RoundOutput<T>, f64, Option<f64>)> {
            let out = fedavg_round_detailed(&global, sources, cfg, round)?;
            let loss = eval.global_loss(|_| &out.model)?;
            let angle = eval.angle(&out.model)?;
            Ok((out, loss, angle))
        };
        let (out, global_loss, principal_angle) = match step() {
            Ok(v) => v,
            Err(e) => return Err(Aborted::new(e, records)),
        };
        records.push(RoundRecord {
            round,
            participants: out.participants,
            mean_local_loss: out.mean_local_loss,
            global_loss,
            principal_angle,
            wall_time_secs: start.elapsed().as_secs_f64(),
            ..RoundRecord::default()
        });
        log::debug!("fedavg round {round}: loss {global_loss:.6}");
        global = out.model;
    }
    Ok(TrainingTrace {
        records,
        final_models: vec![global],
    })
}

/// Centralized training: FedAvg over the single union of all sources.
pub fn run_central<T: Scalar>(sources: &[LocalDataset<T>], cfg: &FedConfig) -> RunResult<T> {
    let union = LocalDataset::concat(sources).map_err(|e| Aborted::new(e, Vec::new()))?;
    let central = FedConfig {
        participation: 1.0,
        ..cfg.clone()
    };
    run_fedavg(std::slice::from_ref(&union), &central)
}

/// Independent local training: every source keeps its own model and never
/// communicates. Records use each source's own model for its loss and
/// report per-source angles in `node_angles`.
pub fn run_local<T: Scalar>(sources: &[LocalDataset<T>], cfg: &FedConfig) -> RunResult<T> {
    let mut records = Vec::with_capacity(cfg.rounds);
    let setup = || -> Result<_> {
        cfg.validate(sources.len())?;
        let (d, c) = check_sources(sources)?;
        Ok((init_model::<T>(d, c, cfg)?, Evaluator::new(sources, cfg)?))
    };
    let (init, eval) = setup().map_err(|e| Aborted::new(e, Vec::new()))?;
    let mut models = vec![init; sources.len()];
    for round in 0..cfg.rounds {
        let start = Instant::now();
        let mut step = || -> Result<RoundRecord> {
            let participants = sample_participants(sources.len(), cfg, round);
            let mut outcomes = Vec::with_capacity(participants.len());
            for &k in &participants {
                let ds = &sources[k];
                let mut rng = local_rng(cfg, k, round);
                let out = local_update_with(&models[k], ds, cfg.local_steps(ds.len()), cfg, None, &mut rng)
                    .map_err(|e| e.with_source(k))?;
                outcomes.push(out);
            }
            let mean_local_loss = mean_of_losses(&outcomes);
            for (&k, o) in participants.iter().zip(outcomes) {
                models[k] = o.model;
            }
            let node_losses = (0..sources.len())
                .map(|k| eval.source_loss(&models[k], k))
                .collect::<Result<Vec<_>>>()?;
            let node_angles = models.iter().map(|m| eval.angle(m)).collect::<Result<Option<Vec<_>>>>()?;
            Ok(RoundRecord {
                round,
                participants,
                mean_local_loss,
                global_loss: eval.global_loss(|k| &models[k])?,
                principal_angle: None,
                node_losses: Some(node_losses),
                node_angles,
                ..RoundRecord::default()
            })
        };
        match step() {
            Ok(mut r) => {
                r.wall_time_secs = start.elapsed().as_secs_f64();
                records.push(r);
            }
            Err(e) => return Err(Aborted::new(e, records)),
        }
    }
    Ok(TrainingTrace {
        records,
        final_models: models,
    })
}
