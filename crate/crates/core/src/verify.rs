//! Numerical checks of the theory-setting claims against the exact oracles.
//!
//! Each check returns a serializable report with the raw measurements and a
//! `pass` verdict, so callers can print, store or assert on it.

use serde::{Deserialize, Serialize};

use crate::datagen::{generate_theory_dataset, LocalDataset, TheoryGenConfig};
use crate::error::{Error, Result};
use crate::linalg::{random_orthogonal, Matrix};
use crate::objectives::{
    feature_correlation, linear_ssl_gradient, margin_problem_solve, min_norm_factorize, reconstruction_objective,
    LinearEncoder, MarginConfig,
};
use crate::rng::{stream, stream_rng};
use crate::spectral::{encoder_representability, local_ssl_minimizer, principal_angle, ssl_minimizer_from_samples, ssl_minimizer_oracle};
use crate::Scalar;

/// Default representability threshold for the local and global checks.
pub const REPRESENTABILITY_THRESHOLD: f64 = 0.9;

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Theorem1Config {
    pub d_grid: Vec<usize>,
    pub num_sources: usize,
    /// Defaults to `2K` when absent.
    pub embedding_dim: Option<usize>,
    pub majority_count: usize,
    pub minority_count: usize,
    pub seeds: Vec<u64>,
    /// Noise level; `None` uses `d^(-1/5)`.
    pub mu_noise: Option<f64>,
    pub threshold: f64,
    /// Thresholds only apply for `d >= threshold_min_d`.
    pub threshold_min_d: usize,
}

impl Default for Theorem1Config {
    fn default() -> Self {
        Theorem1Config {
            d_grid: vec![128, 512, 2048],
            num_sources: 3,
            embedding_dim: None,
            majority_count: 500,
            minority_count: 20,
            seeds: (0..10).collect(),
            mu_noise: None,
            threshold: REPRESENTABILITY_THRESHOLD,
            threshold_min_d: 512,
        }
    }
}

impl Theorem1Config {
    pub fn m(&self) -> usize {
        self.embedding_dim.unwrap_or(2 * self.num_sources)
    }
}

/// One `(d, seed)` instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Theorem1Cell {
    pub d: usize,
    pub seed: u64,
    /// `local[k][i]` is `r_i^k` for every `i < K`, including the owned
    /// direction `i = k`.
    pub local: Vec<Vec<f64>>,
    /// `r̄_i` for `i < K` from the minimizer of the union.
    pub global: Vec<f64>,
    /// Minimum of `r_i^k` over `k` and `i != k`.
    pub min_local: f64,
    pub min_global: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Theorem1Row {
    pub d: usize,
    pub min_local: f64,
    pub min_global: f64,
    pub median_min_local: f64,
    /// Thresholds apply at this `d` and hold for every seed.
    pub thresholds_checked: bool,
    pub thresholds_met: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Theorem1Report {
    pub config: Theorem1Config,
    pub cells: Vec<Theorem1Cell>,
    pub rows: Vec<Theorem1Row>,
    /// Median minimum local representability never decreases along `d_grid`.
    pub trend_non_decreasing: bool,
    pub thresholds_met: bool,
    pub pass: bool,
}

fn theory_config(d: usize, k: usize, majority: usize, minority: usize, mu: Option<f64>, seed: u64) -> TheoryGenConfig {
    let mut g = TheoryGenConfig::new(d, k, majority, minority, seed);
    if let Some(mu) = mu {
        g.mu_noise = mu;
    }
    g
}

/// Local and global representability of one generated instance.
pub fn theorem1_cell(cfg: &Theorem1Config, d: usize, seed: u64) -> Result<Theorem1Cell> {
    let k = cfg.num_sources;
    let m = cfg.m();
    let g = theory_config(d, k, cfg.majority_count, cfg.minority_count, cfg.mu_noise, seed);
    let sources = generate_theory_dataset::<f64>(&g)?;
    let dirs: Vec<usize> = (0..k).collect();
    let mut local = Vec::with_capacity(k);
    let mut min_local = f64::INFINITY;
    for (s, ds) in sources.iter().enumerate() {
        let r = encoder_representability(&local_ssl_minimizer(ds, m)?, &dirs)?;
        for (&i, &v) in r.directions.iter().zip(&r.values) {
            if i != s {
                min_local = min_local.min(v);
            }
        }
        local.push(r.values);
    }
    let union = LocalDataset::concat(&sources)?;
    let global = encoder_representability(&ssl_minimizer_from_samples(union.samples(), m)?, &dirs)?.values;
    let min_global = global.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(Theorem1Cell {
        d,
        seed,
        local,
        global,
        min_local,
        min_global,
    })
}

/// Local minimizers represent the directions a source barely sees, and the
/// global minimizer represents every source's direction, increasingly so as
/// `d` grows.
pub fn verify_theorem1(cfg: &Theorem1Config) -> Result<Theorem1Report> {
    if cfg.d_grid.is_empty() || cfg.seeds.is_empty() {
        return Err(Error::invalid("d_grid and seeds must be non-empty"));
    }
    if let Some(&d) = cfg.d_grid.iter().find(|&&d| d < 2 * cfg.num_sources) {
        return Err(Error::invalid(format!("d = {d} is below 2K = {}", 2 * cfg.num_sources)));
    }
    let mut cells = Vec::new();
    let mut rows = Vec::new();
    for &d in &cfg.d_grid {
        let row_cells = cfg
            .seeds
            .iter()
            .map(|&seed| theorem1_cell(cfg, d, seed))
            .collect::<Result<Vec<_>>>()?;
        let mins: Vec<f64> = row_cells.iter().map(|c| c.min_local).collect();
        let min_local = mins.iter().copied().fold(f64::INFINITY, f64::min);
        let min_global = row_cells.iter().map(|c| c.min_global).fold(f64::INFINITY, f64::min);
        let checked = d >= cfg.threshold_min_d;
        rows.push(Theorem1Row {
            d,
            min_local,
            min_global,
            median_min_local: median(&mins),
            thresholds_checked: checked,
            thresholds_met: !checked || (min_local >= cfg.threshold && min_global >= cfg.threshold),
        });
        cells.extend(row_cells);
    }
    let trend_non_decreasing = rows.windows(2).all(|w| w[1].median_min_local >= w[0].median_min_local);
    let thresholds_met = rows.iter().all(|r| r.thresholds_met);
    Ok(Theorem1Report {
        config: cfg.clone(),
        cells,
        rows,
        trend_non_decreasing,
        thresholds_met,
        pass: trend_non_decreasing && thresholds_met,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Prop1Config {
    pub d: usize,
    pub num_sources: usize,
    pub majority_count: usize,
    pub minority_count: usize,
    pub seeds: Vec<u64>,
    /// Noise level; `None` uses `d^(-1/5)`.
    pub mu_noise: Option<f64>,
    /// Required ratio of the owned correlation to the largest other one.
    pub factor: f64,
    /// Required oracle representability at the non-owned directions.
    pub ssl_threshold: f64,
    pub margin_tolerance: f64,
    pub margin_max_sweeps: usize,
}

impl Default for Prop1Config {
    fn default() -> Self {
        let margin = MarginConfig::default();
        Prop1Config {
            d: 512,
            num_sources: 3,
            majority_count: 500,
            minority_count: 20,
            seeds: (0..5).collect(),
            mu_noise: None,
            factor: 5.0,
            ssl_threshold: REPRESENTABILITY_THRESHOLD,
            margin_tolerance: margin.tolerance,
            margin_max_sweeps: margin.max_sweeps,
        }
    }
}

/// Supervised and SSL features of one source.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prop1Case {
    pub seed: u64,
    pub source: usize,
    /// `correlation[j]` at `e_j` for `j < K`.
    pub correlation: Vec<f64>,
    /// Owned correlation over the largest non-owned one (infinite for a
    /// single source).
    pub ratio: f64,
    /// Owned correlation over the sum across all `d` directions.
    pub owned_share: f64,
    /// Local oracle representability at `e_j`, `j < K`.
    pub ssl_representability: Vec<f64>,
    pub min_ssl_other: f64,
    pub margin_violation: f64,
    pub ratio_ok: bool,
    pub ssl_ok: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prop1Report {
    pub config: Prop1Config,
    pub cases: Vec<Prop1Case>,
    pub min_ratio: f64,
    pub min_ssl_other: f64,
    pub pass: bool,
}

/// The supervised margin classifier of a source concentrates its features
/// on the owned direction, while the SSL minimizer of the same data also
/// captures the other directions.
pub fn verify_prop1(cfg: &Prop1Config) -> Result<Prop1Report> {
    if cfg.seeds.is_empty() {
        return Err(Error::invalid("seeds must be non-empty"));
    }
    if cfg.num_sources == 0 {
        return Err(Error::invalid("num_sources must be at least 1"));
    }
    let k = cfg.num_sources;
    let c = 2 * k;
    let margin = MarginConfig {
        tolerance: cfg.margin_tolerance,
        max_sweeps: cfg.margin_max_sweeps,
    };
    let dirs: Vec<usize> = (0..k).collect();
    let mut cases = Vec::new();
    for &seed in &cfg.seeds {
        let g = theory_config(cfg.d, k, cfg.majority_count, cfg.minority_count, cfg.mu_noise, seed);
        for (s, ds) in generate_theory_dataset::<f64>(&g)?.iter().enumerate() {
            let sol = margin_problem_solve(ds, c, margin).map_err(|e| match e {
                Error::InfeasibleOrUnconverged(msg) => {
                    Error::InfeasibleOrUnconverged(format!("source {s}, seed {seed}: {msg}"))
                }
                other => other,
            })?;
            let pair = min_norm_factorize(&sol.w_tilde, c)?;
            let correlation = dirs.iter().map(|&j| feature_correlation(&pair, j)).collect::<Result<Vec<_>>>()?;
            let other = dirs.iter().filter(|&&j| j != s).map(|&j| correlation[j]).fold(0.0, f64::max);
            let ratio = if other > 0.0 { correlation[s] / other } else { f64::INFINITY };
            let total: f64 = (0..cfg.d).map(|j| feature_correlation(&pair, j)).sum::<Result<f64>>()?;
            let ssl = encoder_representability(&local_ssl_minimizer(ds, c)?, &dirs)?.values;
            let min_ssl_other = dirs.iter().filter(|&&j| j != s).map(|&j| ssl[j]).fold(f64::INFINITY, f64::min);
            let owned_share = correlation[s] / total;
            cases.push(Prop1Case {
                seed,
                source: s,
                ratio_ok: ratio >= cfg.factor,
                ssl_ok: min_ssl_other >= cfg.ssl_threshold,
                correlation,
                ratio,
                owned_share,
                ssl_representability: ssl,
                min_ssl_other,
                margin_violation: sol.margin_violation,
            });
        }
    }
    let min_ratio = cases.iter().map(|c| c.ratio).fold(f64::INFINITY, f64::min);
    let min_ssl_other = cases.iter().map(|c| c.min_ssl_other).fold(f64::INFINITY, f64::min);
    Ok(Prop1Report {
        pass: cases.iter().all(|c| c.ratio_ok && c.ssl_ok),
        config: cfg.clone(),
        cases,
        min_ratio,
        min_ssl_other,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EquivalenceConfig {
    pub d: usize,
    pub m: usize,
    pub steps: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub angle_tolerance: f64,
    pub gap_tolerance: f64,
}

impl Default for EquivalenceConfig {
    fn default() -> Self {
        EquivalenceConfig {
            d: 32,
            m: 4,
            steps: 20_000,
            learning_rate: 0.1,
            seed: 0,
            angle_tolerance: 1e-2,
            gap_tolerance: 1e-6,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceReport {
    pub config: EquivalenceConfig,
    pub principal_angle: f64,
    /// `|X - w^T w|_F^2` at the trained weight.
    pub objective: f64,
    pub oracle_objective: f64,
    /// `(objective - oracle_objective) / oracle_objective`, with the
    /// denominator floored at `1e-12 |X|_F^2`.
    pub relative_gap: f64,
    pub pass: bool,
}

/// Per-coordinate scale of the generated samples: `0.8^i`.
const SPECTRUM_DECAY: f64 = 0.8;

/// Second moment of `4d` Gaussian samples with scales `0.8^i` along the
/// axes of a random rotation.
pub fn random_psd_instance(d: usize, seed: u64) -> Result<Matrix<f64>> {
    if d == 0 {
        return Err(Error::invalid("d must be positive"));
    }
    let mut rng = stream_rng(seed, &[stream::THEORY_DATA, d as u64]);
    let q: Matrix<f64> = random_orthogonal(d, &mut rng);
    let n = 4 * d;
    let mut z = Matrix::random_normal(n, d, 1.0, &mut rng);
    for r in 0..n {
        let mut scale = 1.0;
        for v in z.row_mut(r) {
            *v *= scale;
            scale *= SPECTRUM_DECAY;
        }
    }
    let samples = z.matmul(&q)?;
    let mut x = samples.row_outer_sum();
    x.scale_in_place(1.0 / n as f64);
    Ok(x)
}

/// Plain gradient descent on the expected linear SSL loss from a seeded
/// `N(0, 1/d)` start.
pub fn train_expected_gd<T: Scalar>(x: &Matrix<T>, m: usize, steps: usize, learning_rate: f64, seed: u64) -> Result<LinearEncoder<T>> {
    let d = x.rows();
    let mut enc = LinearEncoder::random(m, d, &mut stream_rng(seed, &[stream::INIT, 0]))?;
    let lr = T::of(learning_rate);
    for step in 0..steps {
        let g = linear_ssl_gradient(&enc, x)?;
        enc.weight_mut().add_scaled(-lr, &g)?;
        if !enc.is_finite() {
            return Err(Error::NumericalDivergence {
                source_id: None,
                detail: format!("weights became non-finite at step {}", step + 1),
            });
        }
    }
    Ok(enc)
}

/// [`verify_equivalence`] on a given covariance.
pub fn verify_equivalence_on<T: Scalar>(x: &Matrix<T>, cfg: &EquivalenceConfig) -> Result<EquivalenceReport> {
    x.ensure_symmetric(1e-10)?;
    let oracle = ssl_minimizer_oracle(x, cfg.m)?;
    let trained = train_expected_gd(x, cfg.m, cfg.steps, cfg.learning_rate, cfg.seed)?;
    let angle = principal_angle(trained.weight(), oracle.weight())?.as_f64();
    let objective = reconstruction_objective(&trained, x)?.as_f64();
    let oracle_objective = reconstruction_objective(&oracle, x)?.as_f64();
    let floor = 1e-12 * x.frobenius_norm_sq().as_f64();
    let relative_gap = (objective - oracle_objective) / oracle_objective.max(floor).max(f64::MIN_POSITIVE);
    Ok(EquivalenceReport {
        config: cfg.clone(),
        principal_angle: angle,
        objective,
        oracle_objective,
        relative_gap,
        pass: angle <= cfg.angle_tolerance && relative_gap <= cfg.gap_tolerance,
    })
}

/// Gradient descent on the linear SSL objective recovers the top-`m`
/// eigenspace of a random PSD instance.
pub fn verify_equivalence(cfg: &EquivalenceConfig) -> Result<EquivalenceReport> {
    if cfg.m == 0 || cfg.m > cfg.d {
        return Err(Error::invalid(format!("m = {} must be in [1, {}]", cfg.m, cfg.d)));
    }
    verify_equivalence_on(&random_psd_instance(cfg.d, cfg.seed)?, cfg)
}
