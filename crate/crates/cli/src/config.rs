//! Experiment configuration: one TOML file per run.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use decssl::datagen::{default_mu, default_tau, TheoryGenConfig};
use decssl::featarc::{ClusterInit, FeatArcConfig, DEFAULT_ALIGNMENT_WEIGHT, DEFAULT_NUM_CLUSTERS};
use decssl::fedsim::{Aggregation, FedConfig, Flavor, GradientMode, LocalBudget, TopologyKind};
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

/// Environment variable holding the root for relative output directories.
pub const OUTPUT_ROOT_ENV: &str = "DECSSL_OUTPUT_ROOT";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub master_seed: u64,
    pub data: DataSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub output: OutputSection,
}

/// Where the per-source datasets come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case")]
pub enum DataSection {
    Theory(TheoryData),
    Csv(CsvData),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TheoryData {
    pub d: usize,
    pub num_sources: usize,
    pub majority_count: usize,
    pub minority_count: usize,
    /// Defaults to `d^(1/5)`.
    pub tau_scale: Option<f64>,
    /// Defaults to `d^(-1/5)`.
    pub mu_noise: Option<f64>,
    #[serde(default)]
    pub input_shift: bool,
    /// Pool the generated samples and split them again.
    pub partition: Option<PartitionSection>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvData {
    /// Rows `label,x_1,...,x_d`. Relative paths are resolved against the
    /// config file's directory.
    pub path: PathBuf,
    pub partition: PartitionSection,
    #[serde(default)]
    pub input_shift: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PartitionKind {
    Dirichlet,
    Skewness,
    FeatureCluster,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionSection {
    pub scheme: PartitionKind,
    pub num_sources: usize,
    /// `alpha` for Dirichlet, `beta` for skewness; unused by feature clusters.
    pub parameter: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Fedavg,
    Gossip,
    Featarc,
    Local,
    Central,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub algorithm: Algorithm,
    pub rounds: usize,
    pub local_budget: LocalBudget,
    pub participation: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub flavor: Flavor,
    pub gradient_mode: GradientMode,
    /// Defaults to twice the number of sources.
    pub embedding_dim: Option<usize>,
    pub temperature: f64,
    pub predictor: bool,
    pub aggregation: Aggregation,
    pub featarc: Option<FeatArcSection>,
    pub gossip: Option<GossipSection>,
}

impl Default for TrainSection {
    fn default() -> Self {
        let fed = FedConfig::default();
        TrainSection {
            algorithm: Algorithm::Fedavg,
            rounds: fed.rounds,
            local_budget: fed.local_budget,
            participation: fed.participation,
            learning_rate: fed.learning_rate,
            batch_size: fed.batch_size,
            flavor: fed.flavor,
            gradient_mode: fed.gradient_mode,
            embedding_dim: None,
            temperature: fed.temperature,
            predictor: fed.predictor,
            aggregation: fed.aggregation,
            featarc: None,
            gossip: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatArcSection {
    pub num_clusters: usize,
    pub alignment_weight: f64,
    pub init: ClusterInit,
    pub pin_assignments: Option<Vec<usize>>,
}

impl Default for FeatArcSection {
    fn default() -> Self {
        FeatArcSection {
            num_clusters: DEFAULT_NUM_CLUSTERS,
            alignment_weight: DEFAULT_ALIGNMENT_WEIGHT,
            init: ClusterInit::default(),
            pin_assignments: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GossipSection {
    pub topology: TopologyKind,
    #[serde(default = "default_edge_probability")]
    pub edge_probability: f64,
}

fn default_edge_probability() -> f64 {
    0.7
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    GlobalLoss,
    PrincipalAngle,
    Representability,
    Heterogeneity,
    Probe,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub metrics: Vec<Metric>,
    /// Share of every source held out for the probe.
    pub test_fraction: f64,
    pub probe_epochs: usize,
    pub probe_learning_rate: f64,
    pub probe_normalize: bool,
}

impl Default for EvalSection {
    fn default() -> Self {
        let probe = decssl::eval::ProbeConfig::default();
        EvalSection {
            metrics: vec![
                Metric::GlobalLoss,
                Metric::PrincipalAngle,
                Metric::Representability,
                Metric::Heterogeneity,
                Metric::Probe,
            ],
            test_fraction: 0.2,
            probe_epochs: probe.epochs,
            probe_learning_rate: probe.learning_rate,
            probe_normalize: probe.normalize,
        }
    }
}

impl EvalSection {
    pub fn wants(&self, m: Metric) -> bool {
        self.metrics.contains(&m)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Format {
    Jsonl,
    Csv,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    /// Relative directories are placed under `$DECSSL_OUTPUT_ROOT` when set.
    pub dir: PathBuf,
    pub formats: Vec<Format>,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            dir: PathBuf::from("runs/experiment"),
            formats: vec![Format::Jsonl, Format::Csv],
        }
    }
}

impl ExperimentConfig {
    /// Parses TOML; unknown keys are rejected by name.
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    /// Reads, resolves relative data paths and validates a config file.
    pub fn load(path: &Path) -> Result<Self> {
        Self::load_with(path, &[])
    }

    /// [`load`](Self::load) with `key.path=value` overrides applied before
    /// parsing. Values are TOML; anything that does not parse is a string.
    pub fn load_with(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut table: Table = text.parse().with_context(|| format!("parsing {}", path.display()))?;
        for o in overrides {
            let (key, raw) = o.split_once('=').ok_or_else(|| anyhow!("--set {o:?}: expected key.path=value"))?;
            set_path(&mut table, key.trim(), parse_value(raw.trim())).with_context(|| format!("--set {o:?}"))?;
        }
        let mut cfg: Self = Value::Table(table)
            .try_into()
            .with_context(|| format!("parsing {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve(base);
        cfg.validate()?;
        Ok(cfg)
    }

    /// Fills every default in place and makes the CSV path absolute with
    /// respect to `base`.
    pub fn resolve(&mut self, base: &Path) {
        match &mut self.data {
            DataSection::Theory(t) => {
                t.tau_scale.get_or_insert(default_tau(t.d));
                t.mu_noise.get_or_insert(default_mu(t.d));
            }
            DataSection::Csv(c) => {
                if c.path.is_relative() {
                    c.path = base.join(&c.path);
                }
            }
        }
        let k = self.num_sources();
        let train = &mut self.train;
        train.embedding_dim.get_or_insert(2 * k);
        if train.algorithm == Algorithm::Featarc && train.featarc.is_none() {
            train.featarc = Some(FeatArcSection::default());
        }
    }

    pub fn num_sources(&self) -> usize {
        match &self.data {
            DataSection::Theory(t) => t.partition.as_ref().map_or(t.num_sources, |p| p.num_sources),
            DataSection::Csv(c) => c.partition.num_sources,
        }
    }

    pub fn theory(&self) -> Option<TheoryGenConfig> {
        match &self.data {
            DataSection::Theory(t) => Some(TheoryGenConfig {
                d: t.d,
                num_sources: t.num_sources,
                majority_count: t.majority_count,
                minority_count: t.minority_count,
                tau_scale: t.tau_scale.unwrap_or_else(|| default_tau(t.d)),
                mu_noise: t.mu_noise.unwrap_or_else(|| default_mu(t.d)),
                seed: self.master_seed,
            }),
            DataSection::Csv(_) => None,
        }
    }

    pub fn fed_config(&self) -> FedConfig {
        let t = &self.train;
        FedConfig {
            rounds: t.rounds,
            local_budget: t.local_budget,
            participation: t.participation,
            learning_rate: t.learning_rate,
            batch_size: t.batch_size,
            flavor: t.flavor,
            gradient_mode: t.gradient_mode,
            embedding_dim: t.embedding_dim.unwrap_or(2 * self.num_sources()),
            temperature: t.temperature,
            predictor: t.predictor,
            aggregation: t.aggregation,
            seed: self.master_seed,
        }
    }

    pub fn featarc_config(&self) -> FeatArcConfig {
        let f = self.train.featarc.clone().unwrap_or_default();
        FeatArcConfig {
            fed: self.fed_config(),
            num_clusters: f.num_clusters,
            alignment_weight: f.alignment_weight,
            init: f.init,
            pin_assignments: f.pin_assignments,
        }
    }

    /// Checks everything that can be checked without touching data files.
    /// Messages start with the offending field.
    pub fn validate(&self) -> Result<()> {
        match &self.data {
            DataSection::Theory(t) => {
                self.theory().expect("theory data").validate().context("data")?;
                if let Some(p) = &t.partition {
                    validate_partition(p)?;
                }
            }
            DataSection::Csv(c) => validate_partition(&c.partition)?,
        }
        let k = self.num_sources();
        let train = &self.train;
        if train.featarc.is_some() && train.algorithm != Algorithm::Featarc {
            bail!("train.featarc: only allowed with algorithm = \"featarc\"");
        }
        match (&train.gossip, train.algorithm) {
            (None, Algorithm::Gossip) => bail!("train.gossip: required with algorithm = \"gossip\""),
            (Some(_), a) if a != Algorithm::Gossip => bail!("train.gossip: only allowed with algorithm = \"gossip\""),
            (Some(g), _) if !(0.0..=1.0).contains(&g.edge_probability) => {
                bail!("train.gossip.edge_probability: {} outside [0, 1]", g.edge_probability)
            }
            _ => {}
        }
        if train.algorithm == Algorithm::Featarc {
            self.featarc_config().validate(k).context("train.featarc")?;
        } else {
            self.fed_config().validate(k).context("train")?;
        }
        let e = &self.eval;
        if !(e.test_fraction > 0.0 && e.test_fraction < 1.0) {
            bail!("eval.test_fraction: {} must lie in (0, 1)", e.test_fraction);
        }
        if !(e.probe_learning_rate > 0.0 && e.probe_learning_rate.is_finite()) {
            bail!("eval.probe_learning_rate: {} must be positive", e.probe_learning_rate);
        }
        if self.output.dir.as_os_str().is_empty() {
            bail!("output.dir: must not be empty");
        }
        Ok(())
    }

    /// TOML with every default written out.
    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    /// `output.dir`, placed under `root` when relative.
    pub fn output_dir(&self, root: Option<&Path>) -> PathBuf {
        match root {
            Some(r) if self.output.dir.is_relative() => r.join(&self.output.dir),
            _ => self.output.dir.clone(),
        }
    }
}

/// Sets a dotted key path in a TOML table, creating missing tables.
pub fn set_path(table: &mut Table, path: &str, value: Value) -> Result<()> {
    let mut keys = path.split('.').peekable();
    let mut t = table;
    while let Some(key) = keys.next() {
        if key.is_empty() {
            bail!("empty key in path {path:?}");
        }
        if keys.peek().is_none() {
            t.insert(key.to_string(), value);
            return Ok(());
        }
        t = t
            .entry(key)
            .or_insert_with(|| Value::Table(Table::new()))
            .as_table_mut()
            .ok_or_else(|| anyhow!("{path:?} passes through non-table key {key:?}"))?;
    }
    bail!("empty path")
}

fn parse_value(raw: &str) -> Value {
    format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

pub fn validate_partition(p: &PartitionSection) -> Result<()> {
    if p.num_sources == 0 {
        bail!("data.partition.num_sources: must be at least 1");
    }
    match (p.scheme, p.parameter) {
        (PartitionKind::Dirichlet, Some(a)) if !(a > 0.0 && a.is_finite()) => {
            bail!("data.partition.parameter: alpha = {a} must be positive")
        }
        (PartitionKind::Skewness, Some(b)) if !(0.0..=1.0).contains(&b) => {
            bail!("data.partition.parameter: beta = {b} outside [0, 1]")
        }
        (PartitionKind::Dirichlet | PartitionKind::Skewness, None) => {
            bail!("data.partition.parameter: required for the {:?} scheme", p.scheme)
        }
        (PartitionKind::FeatureCluster, Some(_)) => {
            bail!("data.partition.parameter: not used by the feature-cluster scheme")
        }
        _ => Ok(()),
    }
}
