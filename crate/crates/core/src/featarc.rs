//! FeatARC: clustered aggregation by feature alignment, with local updates
//! regularized toward the features of the assigned cluster model.

use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::datagen::LocalDataset;
use crate::error::{Error, Result};
use crate::fedsim::{
    aggregate, check_sources, init_model, local_rng, local_update_with, mean_of_losses, sample_participants, Aborted,
    Evaluator, FedConfig, LocalOutcome, Regularizer, RoundRecord, TrainingTrace,
};
use crate::linalg::Matrix;
use crate::objectives::{mean_cosine_distance, LinearEncoder};
use crate::Scalar;

/// Default weight of the alignment regularizer.
pub const DEFAULT_ALIGNMENT_WEIGHT: f64 = 1.0;
/// Default number of cluster models.
pub const DEFAULT_NUM_CLUSTERS: usize = 2;

/// How cluster and local models are initialized.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClusterInit {
    /// Every cluster and local model starts from the shared seeded model.
    #[default]
    Shared,
    /// Every source first runs one local update from the shared model;
    /// clusters start from those local models, picked farthest-first by
    /// feature alignment starting with source 0.
    Farthest,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatArcConfig {
    pub fed: FedConfig,
    pub num_clusters: usize,
    pub alignment_weight: f64,
    #[serde(default)]
    pub init: ClusterInit,
    /// Fixed assignments overriding the argmin rule.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pin_assignments: Option<Vec<usize>>,
}

impl FeatArcConfig {
    pub fn new(fed: FedConfig) -> Self {
        FeatArcConfig {
            fed,
            num_clusters: DEFAULT_NUM_CLUSTERS,
            alignment_weight: DEFAULT_ALIGNMENT_WEIGHT,
            init: ClusterInit::Shared,
            pin_assignments: None,
        }
    }

    pub fn validate(&self, num_sources: usize) -> Result<()> {
        self.fed.validate(num_sources)?;
        if self.num_clusters == 0 || self.num_clusters > num_sources {
            return Err(Error::invalid(format!(
                "num_clusters {} must be in [1, {num_sources}]",
                self.num_clusters
            )));
        }
        if !(self.alignment_weight >= 0.0) || !self.alignment_weight.is_finite() {
            return Err(Error::invalid("alignment_weight must be finite and non-negative"));
        }
        if let Some(pin) = &self.pin_assignments {
            if pin.len() != num_sources {
                return Err(Error::invalid(format!("pin_assignments has {} entries, expected {num_sources}", pin.len())));
            }
            if let Some(bad) = pin.iter().find(|&&j| j >= self.num_clusters) {
                return Err(Error::invalid(format!("pinned cluster {bad} >= num_clusters")));
            }
        }
        Ok(())
    }
}

/// Cluster models, each source's latest local model and its assignment.
#[derive(Clone, Debug, PartialEq)]
pub struct ClusterState<T> {
    pub cluster_models: Vec<LinearEncoder<T>>,
    pub local_models: Vec<LinearEncoder<T>>,
    pub assignments: Vec<usize>,
    pub round: usize,
}

impl<T: Scalar> ClusterState<T> {
    /// Every cluster and local model starts from `init`; all sources are
    /// assigned to cluster 0.
    pub fn uniform(init: &LinearEncoder<T>, num_clusters: usize, num_sources: usize) -> Self {
        ClusterState {
            cluster_models: vec![init.clone(); num_clusters],
            local_models: vec![init.clone(); num_sources],
            assignments: vec![0; num_sources],
            round: 0,
        }
    }

    fn check(&self, num_sources: usize) -> Result<()> {
        let c = self.cluster_models.len();
        if c == 0 || self.local_models.len() != num_sources || self.assignments.len() != num_sources {
            return Err(Error::dims(format!(
                "state holds {c} clusters, {} local models, {} assignments for {num_sources} sources",
                self.local_models.len(),
                self.assignments.len()
            )));
        }
        if self.assignments.iter().any(|&j| j >= c) {
            return Err(Error::invalid("assignment outside the cluster list"));
        }
        Ok(())
    }
}

/// Alignment of one source against every cluster: mean cosine distance
/// between cluster features and the source's local features on its data.
/// Entries where every sample has a zero feature are 0 and flagged.
pub fn alignment_row<T: Scalar>(
    local: &LinearEncoder<T>,
    clusters: &[LinearEncoder<T>],
    dataset: &LocalDataset<T>,
) -> Result<(Vec<T>, Vec<usize>)> {
    let own = local.embed_rows(dataset.samples())?;
    let mut row = Vec::with_capacity(clusters.len());
    let mut skipped = Vec::new();
    for (j, c) in clusters.iter().enumerate() {
        match mean_cosine_distance(&c.embed_rows(dataset.samples())?, &own)? {
            Some(v) => row.push(v),
            None => {
                row.push(T::zero());
                skipped.push(j);
            }
        }
    }
    Ok((row, skipped))
}

/// `K x C` alignment matrix with the list of degenerate `(source, cluster)`
/// entries.
#[derive(Clone, Debug, PartialEq)]
pub struct Alignment<T> {
    pub values: Matrix<T>,
    pub degenerate: Vec<(usize, usize)>,
}

pub fn alignment_matrix<T: Scalar>(state: &ClusterState<T>, sources: &[LocalDataset<T>]) -> Result<Alignment<T>> {
    state.check(sources.len())?;
    let c = state.cluster_models.len();
    let mut values = Matrix::zeros(sources.len(), c);
    let mut degenerate = Vec::new();
    for (i, ds) in sources.iter().enumerate() {
        let (row, skipped) = alignment_row(&state.local_models[i], &state.cluster_models, ds)?;
        values.row_mut(i).copy_from_slice(&row);
        degenerate.extend(skipped.into_iter().map(|j| (i, j)));
    }
    for &(i, j) in &degenerate {
        log::warn!("alignment of source {i} with cluster {j}: every feature vanished");
    }
    Ok(Alignment { values, degenerate })
}

/// Lowest-index argmin of a row.
fn argmin<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate() {
        if v < row[best] {
            best = j;
        }
    }
    best
}

/// Per-source argmin over clusters (ties to the lowest index), unless
/// `pin` fixes the assignments.
pub fn assign_clusters<T: Scalar>(a: &Matrix<T>, pin: Option<&[usize]>) -> Vec<usize> {
    match pin {
        Some(p) => p.to_vec(),
        None => a.row_iter().map(argmin).collect(),
    }
}

/// Local training from cluster model `theta` with the alignment
/// regularizer toward `theta`'s frozen features. With `lambda = 0` this is
/// the plain local update.
pub fn local_update_far<T: Scalar, R: Rng + ?Sized>(
    theta: &LinearEncoder<T>,
    dataset: &LocalDataset<T>,
    steps: usize,
    cfg: &FedConfig,
    lambda: T,
    rng: &mut R,
) -> Result<LocalOutcome<T>> {
    if !(lambda >= T::zero()) {
        return Err(Error::invalid("alignment weight must be non-negative"));
    }
    let reg = (lambda > T::zero()).then_some(Regularizer { global: theta, lambda });
    local_update_with(theta, dataset, steps, cfg, reg, rng)
}

/// Round key of the warm-up local update used by [`ClusterInit::Farthest`].
const WARMUP_ROUND: u64 = u64::MAX;

/// Initial state for `cfg.init` from the shared model `init`. Sources start
/// in cluster 0, or in their pinned cluster.
pub fn initial_state<T: Scalar>(
    init: &LinearEncoder<T>,
    sources: &[LocalDataset<T>],
    cfg: &FeatArcConfig,
) -> Result<ClusterState<T>> {
    cfg.validate(sources.len())?;
    let mut state = initial_models(init, sources, cfg)?;
    if let Some(pin) = &cfg.pin_assignments {
        state.assignments = pin.clone();
    }
    Ok(state)
}

fn initial_models<T: Scalar>(
    init: &LinearEncoder<T>,
    sources: &[LocalDataset<T>],
    cfg: &FeatArcConfig,
) -> Result<ClusterState<T>> {
    let (c, k) = (cfg.num_clusters, sources.len());
    if cfg.init == ClusterInit::Shared {
        return Ok(ClusterState::uniform(init, c, k));
    }
    let fed = &cfg.fed;
    let lambda = T::of(cfg.alignment_weight);
    let mut local = Vec::with_capacity(k);
    for (i, ds) in sources.iter().enumerate() {
        let mut rng = crate::rng::stream_rng(fed.seed, &[crate::rng::stream::LOCAL, i as u64, WARMUP_ROUND]);
        let out = local_update_far(init, ds, fed.local_steps(ds.len()), fed, lambda, &mut rng)
            .map_err(|e| e.with_source(i))?;
        local.push(out.model);
    }
    // distance of source i to the closest chosen cluster; larger is farther
    let mut chosen = vec![0usize];
    let mut nearest: Vec<T> = vec![T::infinity(); k];
    while chosen.len() < c {
        let last = &local[*chosen.last().expect("non-empty")];
        for (i, ds) in sources.iter().enumerate() {
            let (row, _) = alignment_row(&local[i], std::slice::from_ref(last), ds)?;
            nearest[i] = nearest[i].min(row[0]);
        }
        let mut best: Option<usize> = None;
        for i in (0..k).filter(|i| !chosen.contains(i)) {
            if best.is_none_or(|b| nearest[i] > nearest[b]) {
                best = Some(i);
            }
        }
        chosen.push(best.expect("num_clusters <= num_sources"));
    }
    Ok(ClusterState {
        cluster_models: chosen.iter().map(|&i| local[i].clone()).collect(),
        local_models: local,
        assignments: vec![0; k],
        round: 0,
    })
}

/// What happened in one round, for the trace.
#[derive(Clone, Debug, PartialEq)]
pub struct RoundSummary {
    pub participants: Vec<usize>,
    pub cluster_sizes: Vec<usize>,
    /// Alignment with the chosen cluster, for participants.
    pub mean_alignment: Vec<Option<f64>>,
    pub mean_local_loss: Option<f64>,
}

pub(crate) fn featarc_round_detailed<T: Scalar>(
    state: &ClusterState<T>,
    sources: &[LocalDataset<T>],
    cfg: &FeatArcConfig,
    round: usize,
) -> Result<(ClusterState<T>, RoundSummary)> {
    state.check(sources.len())?;
    let fed = &cfg.fed;
    let c = state.cluster_models.len();
    let participants = sample_participants(sources.len(), fed, round);
    let mut next = state.clone();
    let mut mean_alignment = vec![None; sources.len()];
    let mut outcomes = Vec::with_capacity(participants.len());
    for &i in &participants {
        let ds = &sources[i];
        let (row, _) = alignment_row(&state.local_models[i], &state.cluster_models, ds)?;
        let j = match &cfg.pin_assignments {
            Some(p) => p[i],
            None => argmin(&row),
        };
        mean_alignment[i] = Some(row[j].as_f64());
        next.assignments[i] = j;
        let mut rng = local_rng(fed, i, round);
        let steps = fed.local_steps(ds.len());
        let out = local_update_far(&state.cluster_models[j], ds, steps, fed, T::of(cfg.alignment_weight), &mut rng)
            .map_err(|e| e.with_source(i))?;
        outcomes.push(out);
    }
    let mut cluster_sizes = vec![0; c];
    for j in 0..c {
        let members: Vec<usize> = participants.iter().copied().filter(|&i| next.assignments[i] == j).collect();
        cluster_sizes[j] = members.len();
        if members.is_empty() {
            continue;
        }
        let models: Vec<&LinearEncoder<T>> = participants
            .iter()
            .zip(&outcomes)
            .filter(|(&i, _)| next.assignments[i] == j)
            .map(|(_, o)| &o.model)
            .collect();
        next.cluster_models[j] = aggregate(&models, &members, sources, fed.aggregation)?;
    }
    let mean_local_loss = mean_of_losses(&outcomes);
    for (&i, o) in participants.iter().zip(outcomes) {
        next.local_models[i] = o.model;
    }
    next.round = round + 1;
    Ok((
        next,
        RoundSummary {
            participants,
            cluster_sizes,
            mean_alignment,
            mean_local_loss,
        },
    ))
}

/// One FeatARC round: participants pick the best-aligned cluster, train
/// from it, and each cluster becomes the mean of its members' models.
/// Clusters nobody joined keep their model.
pub fn featarc_round<T: Scalar>(
    state: &ClusterState<T>,
    sources: &[LocalDataset<T>],
    cfg: &FeatArcConfig,
    round: usize,
) -> Result<ClusterState<T>> {
    Ok(featarc_round_detailed(state, sources, cfg, round)?.0)
}

/// Index of the cluster with most members (lowest index on ties).
fn largest_cluster(sizes: &[usize]) -> usize {
    let mut best = 0;
    for (j, &s) in sizes.iter().enumerate() {
        if s > sizes[best] {
            best = j;
        }
    }
    best
}

/// `T` rounds from the initialization chosen by `cfg.init`. The trace's
/// `principal_angle` is that of the largest cluster; final models are the
/// cluster models.
pub fn run_featarc<T: Scalar>(
    sources: &[LocalDataset<T>],
    cfg: &FeatArcConfig,
) -> std::result::Result<(TrainingTrace<T>, ClusterState<T>), Aborted<T>> {
    let fed = &cfg.fed;
    let mut records = Vec::with_capacity(fed.rounds);
    let setup = || -> Result<_> {
        cfg.validate(sources.len())?;
        let (d, c) = check_sources(sources)?;
        let init = init_model::<T>(d, c, fed)?;
        Ok((initial_state(&init, sources, cfg)?, Evaluator::new(sources, fed)?))
    };
    let (mut state, eval) = setup().map_err(|e| Aborted::new(e, Vec::new()))?;
    for round in 0..fed.rounds {
        let start = Instant::now();
        let step = || -> Result<(ClusterState<T>, RoundRecord)> {
            let (next, summary) = featarc_round_detailed(&state, sources, cfg, round)?;
            let global_loss = eval.global_loss(|k| &next.cluster_models[next.assignments[k]])?;
            let cluster_angles = next
                .cluster_models
                .iter()
                .map(|m| eval.angle(m))
                .collect::<Result<Option<Vec<_>>>>()?;
            let principal_angle = cluster_angles
                .as_ref()
                .map(|a| a[largest_cluster(&summary.cluster_sizes)]);
            let record = RoundRecord {
                round,
                participants: summary.participants,
                mean_local_loss: summary.mean_local_loss,
                global_loss,
                principal_angle,
                assignments: Some(next.assignments.clone()),
                cluster_sizes: Some(summary.cluster_sizes),
                mean_alignment: Some(summary.mean_alignment),
                cluster_angles,
                ..RoundRecord::default()
            };
            Ok((next, record))
        };
        match step() {
            Ok((next, mut r)) => {
                r.wall_time_secs = start.elapsed().as_secs_f64();
                records.push(r);
                state = next;
            }
            Err(e) => return Err(Aborted::new(e, records)),
        }
    }
    Ok((
        TrainingTrace {
            records,
            final_models: state.cluster_models.clone(),
        },
        state,
    ))
}
