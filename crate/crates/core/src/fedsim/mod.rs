//! Decentralized training: FedAvg with local-update budgets and partial
//! participation, gossip averaging over fixed topologies, and the local and
//! centralized baselines.
//!
//! Every source's randomness comes from its own stream keyed by
//! `(seed, source, round)` and aggregation sums in ascending source order,
//! so results do not depend on the order sources are processed in.

mod config;
mod fedavg;
mod gossip;
mod local;
mod topology;
mod trace;

pub use config::{Aggregation, FedConfig, Flavor, GradientMode, LocalBudget};
pub use fedavg::{fedavg_round, init_model, local_rng, run_central, run_fedavg, run_local, sample_participants};
pub(crate) use fedavg::{aggregate, check_sources, mean_of_losses};
pub use gossip::{gossip_round, metropolis_mix, pairwise_distances, run_decentralized};
pub use local::{local_update, local_update_with, BatchSampler, LocalOutcome, Regularizer};
pub use topology::{build_topology, Topology, TopologyKind};
pub use trace::{Aborted, Evaluator, RoundRecord, RunResult, TrainingTrace, EVAL_SUBSET};
