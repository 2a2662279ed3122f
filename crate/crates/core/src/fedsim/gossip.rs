use std::time::Instant;

use crate::datagen::LocalDataset;
use crate::error::{Error, Result};
use crate::eval::weight_distance;
use crate::fedsim::config::FedConfig;
use crate::fedsim::fedavg::{check_sources, init_model, local_rng, mean_of_losses, sample_participants};
use crate::fedsim::local::local_update_with;
use crate::fedsim::topology::Topology;
use crate::fedsim::trace::{Aborted, Evaluator, RoundRecord, RunResult, TrainingTrace};
use crate::objectives::LinearEncoder;
use crate::Scalar;

/// `w_i <- sum_j P_ij w_j` with Metropolis weights, evaluated as
/// `r + sum_j P_ij (w_j - r)` over ascending `j`, where `r` is the model of
/// the first neighbour (or self) with nonzero weight. Rows of `P` sum to one,
/// so this is the same average; nodes whose neighbourhood already agrees
/// keep their model exactly.
pub fn metropolis_mix<T: Scalar>(models: &[LinearEncoder<T>], topology: &Topology) -> Result<Vec<LinearEncoder<T>>> {
    if models.len() != topology.num_nodes() {
        return Err(Error::dims(format!(
            "{} models for a {}-node topology",
            models.len(),
            topology.num_nodes()
        )));
    }
    let p = topology.metropolis();
    p.iter()
        .map(|row| {
            let refs: Vec<&LinearEncoder<T>> = row
                .iter()
                .enumerate()
                .filter(|(_, &w)| w != 0.0)
                .map(|(j, _)| &models[j])
                .collect();
            let weights: Vec<T> = row.iter().filter(|&&w| w != 0.0).map(|&w| T::of(w)).collect();
            LinearEncoder::weighted_mean(&refs, &weights)
        })
        .collect()
}

pub(crate) struct GossipOutput<T> {
    pub models: Vec<LinearEncoder<T>>,
    pub participants: Vec<usize>,
    pub mean_local_loss: Option<f64>,
}

pub(crate) fn gossip_round_detailed<T: Scalar>(
    models: &[LinearEncoder<T>],
    topology: &Topology,
    sources: &[LocalDataset<T>],
    cfg: &FedConfig,
    round: usize,
) -> Result<GossipOutput<T>> {
    let k = topology.num_nodes();
    if models.len() != k || sources.len() != k {
        return Err(Error::dims(format!(
            "{} models and {} sources for a {k}-node topology",
            models.len(),
            sources.len()
        )));
    }
    let participants = sample_participants(k, cfg, round);
    let mut trained = models.to_vec();
    let mut outcomes = Vec::with_capacity(participants.len());
    for &i in &participants {
        let ds = &sources[i];
        let mut rng = local_rng(cfg, i, round);
        let out = local_update_with(&models[i], ds, cfg.local_steps(ds.len()), cfg, None, &mut rng)
            .map_err(|e| e.with_source(i))?;
        outcomes.push(out);
    }
    let mean_local_loss = mean_of_losses(&outcomes);
    for (&i, o) in participants.iter().zip(outcomes) {
        trained[i] = o.model;
    }
    Ok(GossipOutput {
        models: metropolis_mix(&trained, topology)?,
        participants,
        mean_local_loss,
    })
}

/// One gossip round: participating nodes train locally, then every node
/// averages with its neighbours.
pub fn gossip_round<T: Scalar>(
    models: &[LinearEncoder<T>],
    topology: &Topology,
    sources: &[LocalDataset<T>],
    cfg: &FedConfig,
    round: usize,
) -> Result<Vec<LinearEncoder<T>>> {
    Ok(gossip_round_detailed(models, topology, sources, cfg, round)?.models)
}

/// Mean and max of `weight_distance` over all node pairs.
pub fn pairwise_distances<T: Scalar>(models: &[LinearEncoder<T>]) -> Result<(f64, f64)> {
    let mut sum = 0.0;
    let mut max = 0.0f64;
    let mut pairs = 0usize;
    for i in 0..models.len() {
        for j in i + 1..models.len() {
            let d = weight_distance(&models[i], &models[j])?.as_f64();
            sum += d;
            max = max.max(d);
            pairs += 1;
        }
    }
    Ok((if pairs > 0 { sum / pairs as f64 } else { 0.0 }, max))
}

/// `T` gossip rounds from the shared initialization. `principal_angle` is
/// measured on the average of the node models.
pub fn run_decentralized<T: Scalar>(
    sources: &[LocalDataset<T>],
    topology: &Topology,
    cfg: &FedConfig,
) -> RunResult<T> {
    let mut records = Vec::with_capacity(cfg.rounds);
    let setup = || -> Result<_> {
        cfg.validate(sources.len())?;
        if topology.num_nodes() != sources.len() {
            return Err(Error::invalid(format!(
                "topology has {} nodes but there are {} sources",
                topology.num_nodes(),
                sources.len()
            )));
        }
        let (d, c) = check_sources(sources)?;
        Ok((init_model::<T>(d, c, cfg)?, Evaluator::new(sources, cfg)?))
    };
    let (init, eval) = setup().map_err(|e| Aborted::new(e, Vec::new()))?;
    let mut models = vec![init; sources.len()];
    for round in 0..cfg.rounds {
        let start = Instant::now();
        let step = || -> Result<(GossipOutput<T>, RoundRecord)> {
            let out = gossip_round_detailed(&models, topology, sources, cfg, round)?;
            let node_losses = (0..sources.len())
                .map(|k| eval.source_loss(&out.models[k], k))
                .collect::<Result<Vec<_>>>()?;
            let (mean_d, max_d) = pairwise_distances(&out.models)?;
            let refs: Vec<&LinearEncoder<T>> = out.models.iter().collect();
            let average = LinearEncoder::mean(&refs)?;
            let node_angles = out.models.iter().map(|m| eval.angle(m)).collect::<Result<Option<Vec<_>>>>()?;
            let record = RoundRecord {
                round,
                participants: out.participants.clone(),
                mean_local_loss: out.mean_local_loss,
                global_loss: eval.global_loss(|k| &out.models[k])?,
                principal_angle: eval.angle(&average)?,
                node_losses: Some(node_losses),
                mean_pairwise_distance: Some(mean_d),
                max_pairwise_distance: Some(max_d),
                node_angles,
                ..RoundRecord::default()
            };
            Ok((out, record))
        };
        match step() {
            Ok((out, mut r)) => {
                r.wall_time_secs = start.elapsed().as_secs_f64();
                records.push(r);
                models = out.models;
            }
            Err(e) => return Err(Aborted::new(e, records)),
        }
    }
    Ok(TrainingTrace {
        records,
        final_models: models,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fedsim::config::LocalBudget;
    use crate::fedsim::fedavg::run_fedavg;
    use crate::fedsim::topology::{build_topology, TopologyKind};
    use crate::linalg::Matrix;
    use crate::rng::stream_rng;

    fn sources(k: usize, seed: u64) -> Vec<LocalDataset<f64>> {
        (0..k)
            .map(|i| {
                let x = Matrix::random_normal(8, 4, 1.0, &mut stream_rng(seed, &[i as u64]));
                LocalDataset::new(x, vec![0; 8], 1, i).unwrap()
            })
            .collect()
    }

    fn distinct_models(k: usize, seed: u64) -> Vec<LinearEncoder<f64>> {
        (0..k)
            .map(|i| LinearEncoder::random(2, 4, &mut stream_rng(seed, &[i as u64])).unwrap())
            .collect()
    }

    #[test]
    fn star_round_by_hand() {
        let topo = build_topology(TopologyKind::Star, 3, 0.0, 0).unwrap();
        let scalar = |v: f64| LinearEncoder::new(Matrix::from_rows(&[[v]]).unwrap()).unwrap();
        let models = vec![scalar(3.0), scalar(6.0), scalar(9.0)];
        let mixed = metropolis_mix(&models, &topo).unwrap();
        let third = 1.0 / 3.0;
        let want = [third * 3.0 + third * 6.0 + third * 9.0, third * 3.0 + (1.0 - third) * 6.0, third * 3.0 + (1.0 - third) * 9.0];
        for (m, w) in mixed.iter().zip(want) {
            assert!((m.weight()[(0, 0)] - w).abs() <= 1e-12);
        }
        assert!((mixed[1].weight()[(0, 0)] - 5.0).abs() <= 1e-12);
    }

    #[test]
    fn complete_graph_gives_uniform_average() {
        let topo = build_topology(TopologyKind::Complete, 4, 0.0, 0).unwrap();
        let models = distinct_models(4, 1);
        let mixed = metropolis_mix(&models, &topo).unwrap();
        let refs: Vec<_> = models.iter().collect();
        let mean = LinearEncoder::mean(&refs).unwrap();
        for m in &mixed {
            assert!(m.weight().sub(mean.weight()).unwrap().max_abs() <= 1e-15);
        }
    }

    #[test]
    fn zero_step_gossip_reaches_initial_mean() {
        let cfg = FedConfig { local_budget: LocalBudget::Steps(0), embedding_dim: 2, ..FedConfig::default() };
        let data = sources(6, 2);
        for kind in [TopologyKind::Star, TopologyKind::Cycle, TopologyKind::BinaryTree, TopologyKind::RandomGraph] {
            let topo = build_topology(kind, 6, 0.5, 3).unwrap();
            let mut models = distinct_models(6, 4);
            let refs: Vec<_> = models.iter().collect();
            let mean0 = LinearEncoder::mean(&refs).unwrap();
            let mut last = pairwise_distances(&models).unwrap().1;
            for round in 0..300 {
                models = gossip_round(&models, &topo, &data, &cfg, round).unwrap();
                let (_, max_d) = pairwise_distances(&models).unwrap();
                assert!(max_d <= last + 1e-15, "{kind:?} round {round}");
                last = max_d;
            }
            assert!(last < 1e-6, "{kind:?}: {last}");
            let refs: Vec<_> = models.iter().collect();
            let mean = LinearEncoder::mean(&refs).unwrap();
            assert!(mean.weight().sub(mean0.weight()).unwrap().max_abs() <= 1e-10);
        }
    }

    #[test]
    fn two_node_complete_graph_equals_fedavg() {
        let data = sources(2, 5);
        let cfg = FedConfig { rounds: 5, embedding_dim: 2, batch_size: 3, learning_rate: 0.02, ..FedConfig::default() };
        let topo = build_topology(TopologyKind::Complete, 2, 0.0, 0).unwrap();
        let g = run_decentralized(&data, &topo, &cfg).unwrap();
        let f = run_fedavg(&data, &cfg).unwrap();
        for (a, b) in g.records.iter().zip(&f.records) {
            assert!(a.core_eq(b), "round {}", a.round);
        }
        assert_eq!(g.final_models[0], f.final_models[0]);
        assert_eq!(g.final_models[1], f.final_models[0]);
    }

    #[test]
    fn topology_size_must_match() {
        let data = sources(3, 6);
        let topo = build_topology(TopologyKind::Cycle, 4, 0.0, 0).unwrap();
        assert!(run_decentralized(&data, &topo, &FedConfig::default()).is_err());
    }
}
