use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objectives::DEFAULT_TEMPERATURE;

/// Training objective run by every source.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Flavor {
    LinearSsl,
    Infonce,
    Simsiam,
    SupervisedSoftmax,
}

impl Flavor {
    pub fn is_linear(self) -> bool {
        self == Flavor::LinearSsl
    }
}

/// How the linear SSL gradient is formed. `Expected` uses the exact
/// expectation over augmentations on the full local second moment;
/// `Stochastic` draws a mini-batch and two noisy views per sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GradientMode {
    Expected,
    Stochastic,
}

/// Work done by a source between two aggregations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LocalBudget {
    /// `ceil(n / batch_size) * E` steps.
    Epochs(usize),
    Steps(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Aggregation {
    /// `(1/M) sum_k w_k` over the participants.
    Unweighted,
    /// Participants weighted by local sample count.
    Weighted,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FedConfig {
    pub rounds: usize,
    pub local_budget: LocalBudget,
    pub participation: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub flavor: Flavor,
    pub gradient_mode: GradientMode,
    pub embedding_dim: usize,
    pub temperature: f64,
    /// Adds a learnable `m x m` predictor, initialised to the identity.
    pub predictor: bool,
    pub aggregation: Aggregation,
    pub seed: u64,
}

impl Default for FedConfig {
    fn default() -> Self {
        FedConfig {
            rounds: 50,
            local_budget: LocalBudget::Epochs(1),
            participation: 1.0,
            learning_rate: 0.01,
            batch_size: 64,
            flavor: Flavor::LinearSsl,
            gradient_mode: GradientMode::Stochastic,
            embedding_dim: 10,
            temperature: DEFAULT_TEMPERATURE,
            predictor: false,
            aggregation: Aggregation::Unweighted,
            seed: 0,
        }
    }
}

impl FedConfig {
    pub fn validate(&self, num_sources: usize) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::invalid("rounds must be at least 1"));
        }
        if !(self.participation > 0.0 && self.participation <= 1.0) {
            return Err(Error::invalid(format!("participation {} must be in (0, 1]", self.participation)));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::invalid(format!("learning_rate {} must be positive", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be at least 1"));
        }
        if self.embedding_dim == 0 {
            return Err(Error::invalid("embedding_dim must be at least 1"));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::invalid("temperature must be positive"));
        }
        if self.gradient_mode == GradientMode::Expected && !self.flavor.is_linear() {
            return Err(Error::invalid("expected-gradient mode is only defined for the linear-ssl flavor"));
        }
        if num_sources == 0 {
            return Err(Error::Empty("no sources".into()));
        }
        if self.participants_per_round(num_sources) == 0 {
            return Err(Error::invalid("participation selects no source"));
        }
        Ok(())
    }

    /// `ceil(rho * K)`, capped at `K`.
    pub fn participants_per_round(&self, num_sources: usize) -> usize {
        let m = (self.participation * num_sources as f64 - 1e-9).ceil();
        (m.max(0.0) as usize).min(num_sources)
    }

    /// Local steps for a source holding `n` samples.
    pub fn local_steps(&self, n: usize) -> usize {
        match self.local_budget {
            LocalBudget::Epochs(e) => n.div_ceil(self.batch_size) * e,
            LocalBudget::Steps(s) => s,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn participant_counts() {
        let mut cfg = FedConfig::default();
        assert_eq!(cfg.participants_per_round(5), 5);
        cfg.participation = 0.5;
        assert_eq!(cfg.participants_per_round(5), 3);
        cfg.participation = 0.2;
        assert_eq!(cfg.participants_per_round(5), 1);
        cfg.participation = 0.01;
        assert_eq!(cfg.participants_per_round(5), 1);
    }

    #[test]
    fn epoch_budget_rounds_up() {
        let cfg = FedConfig {
            batch_size: 64,
            local_budget: LocalBudget::Epochs(3),
            ..FedConfig::default()
        };
        assert_eq!(cfg.local_steps(100), 6);
        assert_eq!(cfg.local_steps(0), 0);
    }

    #[test]
    fn validation() {
        let ok = FedConfig::default();
        assert!(ok.validate(3).is_ok());
        assert!(FedConfig { rounds: 0, ..ok.clone() }.validate(3).is_err());
        assert!(FedConfig { participation: 0.0, ..ok.clone() }.validate(3).is_err());
        assert!(FedConfig { learning_rate: -1.0, ..ok.clone() }.validate(3).is_err());
        let bad = FedConfig {
            flavor: Flavor::Infonce,
            gradient_mode: GradientMode::Expected,
            ..ok.clone()
        };
        assert!(bad.validate(3).is_err());
        assert!(ok.validate(0).is_err());
    }
}
