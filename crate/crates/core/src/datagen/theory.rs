use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::datagen::LocalDataset;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng::{standard_normal, stream, stream_rng};
use crate::Scalar;

/// Parameters of the synthetic heterogeneous sources.
///
/// Source `k` (zero-based) has `majority_count` samples of each of classes
/// `2k` and `2k+1`, and `minority_count` samples of class `2i` for every
/// other source `i`. There are `2K` classes in total.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TheoryGenConfig {
    pub d: usize,
    pub num_sources: usize,
    pub majority_count: usize,
    pub minority_count: usize,
    pub tau_scale: f64,
    pub mu_noise: f64,
    pub seed: u64,
}

impl TheoryGenConfig {
    /// Config with `tau_scale = d^(1/5)` and `mu_noise = d^(-1/5)`.
    pub fn new(d: usize, num_sources: usize, majority_count: usize, minority_count: usize, seed: u64) -> Self {
        TheoryGenConfig {
            d,
            num_sources,
            majority_count,
            minority_count,
            tau_scale: default_tau(d),
            mu_noise: default_mu(d),
            seed,
        }
    }

    pub fn num_classes(&self) -> usize {
        2 * self.num_sources
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_sources == 0 {
            return Err(Error::invalid("num_sources must be at least 1"));
        }
        if self.d < 2 * self.num_sources {
            return Err(Error::invalid(format!(
                "d = {} is below 2K = {}",
                self.d,
                2 * self.num_sources
            )));
        }
        if self.majority_count == 0 {
            return Err(Error::invalid("majority_count must be positive"));
        }
        if !(self.tau_scale > 0.0 && self.tau_scale.is_finite()) {
            return Err(Error::invalid(format!("tau_scale = {} must be positive", self.tau_scale)));
        }
        if !(self.mu_noise >= 0.0 && self.mu_noise.is_finite()) {
            return Err(Error::invalid(format!("mu_noise = {} must be non-negative", self.mu_noise)));
        }
        Ok(())
    }
}

pub fn default_tau(d: usize) -> f64 {
    (d as f64).powf(0.2)
}

pub fn default_mu(d: usize) -> f64 {
    (d as f64).powf(-0.2)
}

/// Generates the `K` sources. Source `k` draws from its own stream, so the
/// output for one source does not depend on `K`'s other sources being built.
pub fn generate_theory_dataset<T: Scalar>(cfg: &TheoryGenConfig) -> Result<Vec<LocalDataset<T>>> {
    cfg.validate()?;
    (0..cfg.num_sources).map(|k| generate_source(cfg, k)).collect()
}

fn generate_source<T: Scalar>(cfg: &TheoryGenConfig, k: usize) -> Result<LocalDataset<T>> {
    let (d, big_k) = (cfg.d, cfg.num_sources);
    let tau = T::of(cfg.tau_scale);
    let mu = T::of(cfg.mu_noise);
    let mut rng = stream_rng(cfg.seed, &[stream::THEORY_DATA, k as u64]);

    let n = 2 * cfg.majority_count + (big_k - 1) * cfg.minority_count;
    let mut data = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);

    for (label, sign) in [(2 * k, T::one()), (2 * k + 1, -T::one())] {
        for _ in 0..cfg.majority_count {
            let mut x = vec![T::zero(); d];
            x[k] = sign;
            for i in (0..big_k).filter(|&i| i != k) {
                if rng.random::<bool>() {
                    x[i] -= tau;
                }
            }
            add_noise(&mut x, mu, &mut rng);
            data.extend_from_slice(&x);
            labels.push(label);
        }
    }
    for i in (0..big_k).filter(|&i| i != k) {
        for _ in 0..cfg.minority_count {
            let mut x = vec![T::zero(); d];
            x[i] = T::one();
            add_noise(&mut x, mu, &mut rng);
            data.extend_from_slice(&x);
            labels.push(2 * i);
        }
    }
    LocalDataset::new(Matrix::from_vec(n, d, data)?, labels, cfg.num_classes(), k)
}

/// Noise is always drawn, even with `mu = 0`, so the stream layout does not
/// depend on the noise level.
fn add_noise<T: Scalar, R: Rng + ?Sized>(x: &mut [T], mu: T, rng: &mut R) {
    for v in x.iter_mut() {
        let z: T = standard_normal(rng);
        *v += mu * z;
    }
}
