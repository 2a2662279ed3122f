//! data -> train -> eval for one config, writing every artifact to disk.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};
use decssl::datagen::{
    apply_input_shift, generate_theory_dataset, heterogeneity_emd, label_histogram, partition_dirichlet,
    partition_feature_clusters, partition_skewness, LocalDataset, PartitionScheme, PartitionSpec,
};
use decssl::eval::{linear_probe, ProbeConfig, ProbeResult};
use decssl::featarc::{run_featarc, ClusterState};
use decssl::fedsim::{build_topology, run_central, run_decentralized, run_fedavg, run_local, Aborted, TrainingTrace};
use decssl::rng::{stream, stream_rng};
use decssl::spectral::encoder_representability;
use decssl::{Dataset64, Encoder64, Error};
use serde::{Deserialize, Serialize};

use crate::config::{Algorithm, DataSection, ExperimentConfig, Format, Metric, PartitionKind, PartitionSection};
use crate::models::ModelFile;
use crate::Failure;

/// Per-source datasets plus how they were obtained.
pub struct Sources {
    pub datasets: Vec<Dataset64>,
    pub partition: PartitionSpec,
    pub theory: bool,
}

fn partition(labels: &[usize], data: &Dataset64, p: &PartitionSection, seed: u64) -> decssl::Result<PartitionSpec> {
    let param = p.parameter.unwrap_or_default();
    match p.scheme {
        PartitionKind::Dirichlet => partition_dirichlet(labels, p.num_sources, param, seed),
        PartitionKind::Skewness => partition_skewness(labels, p.num_sources, param, seed),
        PartitionKind::FeatureCluster => partition_feature_clusters(data.samples(), labels, p.num_sources, seed),
    }
}

/// Builds the per-source datasets described by the data section.
pub fn load_sources(cfg: &ExperimentConfig) -> Result<Sources> {
    let seed = cfg.master_seed;
    let (union, spec, theory, shift) = match &cfg.data {
        DataSection::Theory(t) => {
            let generated = generate_theory_dataset::<f64>(&cfg.theory().expect("theory data"))?;
            let union = LocalDataset::concat(&generated)?;
            let spec = match &t.partition {
                Some(p) => partition(union.labels(), &union, p, seed)?,
                None => {
                    let mut start = 0;
                    let assignments = generated
                        .iter()
                        .map(|ds| {
                            let idx: Vec<usize> = (start..start + ds.len()).collect();
                            start += ds.len();
                            idx
                        })
                        .collect();
                    PartitionSpec::from_assignments(PartitionScheme::Manual, 0.0, assignments, union.labels())?
                }
            };
            (union, spec, true, t.input_shift)
        }
        DataSection::Csv(c) => {
            let file = File::open(&c.path).with_context(|| format!("data.path: cannot open {}", c.path.display()))?;
            let union = LocalDataset::read_csv(BufReader::new(file), 0, 0)
                .with_context(|| format!("data.path: reading {}", c.path.display()))?;
            let spec = partition(union.labels(), &union, &c.partition, seed)?;
            (union, spec, false, c.input_shift)
        }
    };
    let mut datasets = spec.apply(&union)?;
    if shift {
        datasets = apply_input_shift(&datasets, seed)?;
    }
    Ok(Sources {
        datasets,
        partition: spec,
        theory,
    })
}

/// A finished (or aborted) training run.
pub enum Trained {
    /// One model shared by every source.
    Shared(TrainingTrace<f64>),
    /// Model `k` belongs to source `k`.
    PerSource(TrainingTrace<f64>),
    Clustered(TrainingTrace<f64>, ClusterState<f64>),
}

impl Trained {
    pub fn trace(&self) -> &TrainingTrace<f64> {
        match self {
            Trained::Shared(t) | Trained::PerSource(t) | Trained::Clustered(t, _) => t,
        }
    }

    /// Models to save and report, in order.
    pub fn models(&self) -> &[Encoder64] {
        match self {
            Trained::Clustered(_, s) => &s.cluster_models,
            _ => &self.trace().final_models,
        }
    }

    pub fn serving(&self) -> Serving {
        match self {
            Trained::Shared(_) => Serving::Shared,
            Trained::PerSource(_) => Serving::PerSource,
            Trained::Clustered(_, s) => Serving::Clustered(s.assignments.clone()),
        }
    }
}

/// Which saved model serves which source.
#[derive(Clone, Debug, PartialEq)]
pub enum Serving {
    Shared,
    PerSource,
    Clustered(Vec<usize>),
}

impl Serving {
    pub fn for_algorithm(algorithm: Algorithm, assignments: Option<Vec<usize>>) -> Self {
        match (algorithm, assignments) {
            (_, Some(a)) => Serving::Clustered(a),
            (Algorithm::Fedavg | Algorithm::Central, None) => Serving::Shared,
            _ => Serving::PerSource,
        }
    }

    pub fn model_index(&self, k: usize) -> usize {
        match self {
            Serving::Shared => 0,
            Serving::PerSource => k,
            Serving::Clustered(a) => a[k],
        }
    }
}

pub fn train(cfg: &ExperimentConfig, sources: &[Dataset64]) -> std::result::Result<Trained, Aborted<f64>> {
    let fed = cfg.fed_config();
    match cfg.train.algorithm {
        Algorithm::Fedavg => run_fedavg(sources, &fed).map(Trained::Shared),
        Algorithm::Central => run_central(sources, &fed).map(Trained::Shared),
        Algorithm::Local => run_local(sources, &fed).map(Trained::PerSource),
        Algorithm::Gossip => {
            let g = cfg.train.gossip.as_ref().expect("validated");
            let topo = build_topology(g.topology, sources.len(), g.edge_probability, cfg.master_seed)
                .map_err(|e| Aborted::new(e, Vec::new()))?;
            run_decentralized(sources, &topo, &fed).map(Trained::PerSource)
        }
        Algorithm::Featarc => {
            run_featarc(sources, &cfg.featarc_config()).map(|(trace, state)| Trained::Clustered(trace, state))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Representability {
    pub model: usize,
    pub directions: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeSummary {
    /// `central`: one head on the pooled splits; `per-source`: each source
    /// probes the model serving it on its own split.
    pub protocol: String,
    pub mean_accuracy: f64,
    pub results: Vec<ProbeResult>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub master_seed: u64,
    pub algorithm: Algorithm,
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub num_sources: usize,
    pub dim: usize,
    pub num_classes: usize,
    pub source_sizes: Vec<usize>,
    pub rounds_completed: usize,
    pub final_global_loss: Option<f64>,
    pub final_principal_angle: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub heterogeneity_emd: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub assignments: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub representability: Option<Vec<Representability>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub probe: Option<ProbeSummary>,
}

fn probe_config(cfg: &ExperimentConfig) -> ProbeConfig {
    ProbeConfig {
        epochs: cfg.eval.probe_epochs,
        learning_rate: cfg.eval.probe_learning_rate,
        normalize: cfg.eval.probe_normalize,
        seed: cfg.master_seed,
    }
}

/// Seeded (train, test) split of every source.
pub fn split_sources(sources: &[Dataset64], test_fraction: f64, seed: u64) -> decssl::Result<Vec<(Dataset64, Dataset64)>> {
    sources
        .iter()
        .enumerate()
        .map(|(k, ds)| ds.split(test_fraction, &mut stream_rng(seed, &[stream::SPLIT, k as u64])))
        .collect()
}

/// Linear probe of trained models. A shared model is probed once on the
/// pooled splits; otherwise every source probes the model serving it.
pub fn probe(cfg: &ExperimentConfig, sources: &[Dataset64], models: &[Encoder64], serving: &Serving) -> Result<ProbeSummary> {
    let pcfg = probe_config(cfg);
    let splits = split_sources(sources, cfg.eval.test_fraction, cfg.master_seed)?;
    if *serving == Serving::Shared {
        let (train, test): (Vec<_>, Vec<_>) = splits.into_iter().unzip();
        let r = linear_probe(&models[0], &LocalDataset::concat(&train)?, &LocalDataset::concat(&test)?, &pcfg)?;
        return Ok(ProbeSummary {
            protocol: "central".into(),
            mean_accuracy: r.top1_accuracy,
            results: vec![r],
        });
    }
    let mut results = Vec::with_capacity(splits.len());
    for (k, (train, test)) in splits.iter().enumerate() {
        if train.is_empty() || test.is_empty() {
            log::warn!("source {k} has too few samples to probe");
            continue;
        }
        let model = models
            .get(serving.model_index(k))
            .with_context(|| format!("no model for source {k}"))?;
        results.push(linear_probe(model, train, test, &pcfg)?);
    }
    let mean_accuracy = results.iter().map(|r| r.top1_accuracy).sum::<f64>() / results.len().max(1) as f64;
    Ok(ProbeSummary {
        protocol: "per-source".into(),
        mean_accuracy,
        results,
    })
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

fn rounds_csv(trace: &TrainingTrace<f64>) -> String {
    let mut s = String::from("round,global_loss,principal_angle,mean_local_loss,participants,mean_pairwise_distance,max_pairwise_distance\n");
    for r in &trace.records {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            r.round,
            r.global_loss,
            opt(r.principal_angle),
            opt(r.mean_local_loss),
            r.participants.len(),
            opt(r.mean_pairwise_distance),
            opt(r.max_pairwise_distance)
        );
    }
    s
}

fn per_source_csv(trace: &TrainingTrace<f64>) -> Option<String> {
    let first = trace.records.first()?;
    first.node_losses.as_ref()?;
    let mut s = String::from("round,source,loss,principal_angle\n");
    for r in &trace.records {
        let losses = r.node_losses.as_deref().unwrap_or_default();
        for (k, l) in losses.iter().enumerate() {
            let angle = r.node_angles.as_ref().map(|a| a[k]);
            let _ = writeln!(s, "{},{k},{l},{}", r.round, opt(angle));
        }
    }
    Some(s)
}

fn clusters_csv(trace: &TrainingTrace<f64>) -> Option<String> {
    trace.records.first()?.assignments.as_ref()?;
    let mut s = String::from("round,source,cluster,alignment\n");
    for r in &trace.records {
        let assignments = r.assignments.as_deref().unwrap_or_default();
        let alignment = r.mean_alignment.as_deref().unwrap_or_default();
        for (k, c) in assignments.iter().enumerate() {
            let _ = writeln!(s, "{},{k},{c},{}", r.round, opt(alignment.get(k).copied().flatten()));
        }
    }
    Some(s)
}

fn write_artifacts(cfg: &ExperimentConfig, dir: &Path, trace: &TrainingTrace<f64>, summary: &Summary) -> Result<()> {
    let csv = cfg.output.formats.contains(&Format::Csv);
    if cfg.output.formats.contains(&Format::Jsonl) {
        let f = File::create(dir.join("trace.jsonl")).context("creating trace.jsonl")?;
        let mut w = BufWriter::new(f);
        trace.write_jsonl(&mut w)?;
        w.flush()?;
    }
    if csv {
        let metrics = dir.join("metrics");
        fs::create_dir_all(&metrics).with_context(|| format!("creating {}", metrics.display()))?;
        write_file(&metrics, "rounds.csv", &rounds_csv(trace))?;
        if let Some(s) = per_source_csv(trace) {
            write_file(&metrics, "per_source.csv", &s)?;
        }
        if let Some(s) = clusters_csv(trace) {
            write_file(&metrics, "clusters.csv", &s)?;
        }
        if let Some(reps) = &summary.representability {
            let mut s = String::from("model,direction,value\n");
            for r in reps {
                for (d, v) in r.directions.iter().zip(&r.values) {
                    let _ = writeln!(s, "{},{d},{v}", r.model);
                }
            }
            write_file(&metrics, "representability.csv", &s)?;
        }
        if let Some(p) = &summary.probe {
            let mut s = String::from("probe,class,accuracy\n");
            for (i, r) in p.results.iter().enumerate() {
                for (c, a) in r.per_class_accuracy.iter().enumerate() {
                    let _ = writeln!(s, "{i},{c},{}", opt(*a));
                }
            }
            write_file(&metrics, "probe_per_class.csv", &s)?;
        }
    }
    let mut json = serde_json::to_string_pretty(summary)?;
    json.push('\n');
    write_file(dir, "summary.json", &json)
}

fn base_summary(cfg: &ExperimentConfig, sources: &Sources, trace: &TrainingTrace<f64>) -> Summary {
    let first = &sources.datasets[0];
    let last = trace.last();
    Summary {
        master_seed: cfg.master_seed,
        algorithm: cfg.train.algorithm,
        status: "completed".into(),
        error: None,
        num_sources: sources.datasets.len(),
        dim: first.dim(),
        num_classes: first.num_classes(),
        source_sizes: sources.datasets.iter().map(LocalDataset::len).collect(),
        rounds_completed: trace.records.len(),
        final_global_loss: last.map(|r| r.global_loss),
        final_principal_angle: last.and_then(|r| r.principal_angle),
        heterogeneity_emd: None,
        assignments: None,
        representability: None,
        probe: None,
    }
}

/// Runs one experiment and writes `resolved_config.toml`, `trace.jsonl`,
/// `summary.json`, `models.json` and `metrics/*.csv` into `dir`.
pub fn run_experiment(cfg: &ExperimentConfig, dir: &Path) -> std::result::Result<Summary, Failure> {
    cfg.validate().map_err(Failure::Config)?;
    fs::create_dir_all(dir)
        .with_context(|| format!("output.dir: cannot create {}", dir.display()))
        .map_err(Failure::Runtime)?;
    let resolved = cfg.to_toml().map_err(Failure::Runtime)?;
    write_file(dir, "resolved_config.toml", &resolved).map_err(Failure::Runtime)?;
    let sources = load_sources(cfg).map_err(Failure::Config)?;

    let trained = match train(cfg, &sources.datasets) {
        Ok(t) => t,
        Err(aborted) => {
            let diverged = matches!(aborted.error, Error::NumericalDivergence { .. });
            let mut summary = base_summary(cfg, &sources, &aborted.trace);
            summary.status = if diverged { "diverged" } else { "failed" }.into();
            summary.error = Some(aborted.error.to_string());
            write_artifacts(cfg, dir, &aborted.trace, &summary).map_err(Failure::Runtime)?;
            let err = anyhow::anyhow!("{aborted}");
            return Err(if diverged { Failure::Diverged(err) } else { Failure::Runtime(err) });
        }
    };
    let trace = trained.trace();
    let mut summary = base_summary(cfg, &sources, trace);
    let eval = &cfg.eval;
    if !eval.wants(Metric::GlobalLoss) {
        summary.final_global_loss = None;
    }
    if !eval.wants(Metric::PrincipalAngle) {
        summary.final_principal_angle = None;
    }
    if eval.wants(Metric::Heterogeneity) {
        let global: Vec<usize> = label_histogram(
            &sources.datasets.iter().flat_map(|d| d.labels().iter().copied()).collect::<Vec<_>>(),
        );
        summary.heterogeneity_emd = Some(heterogeneity_emd(&sources.partition, &global).map_err(|e| Failure::Runtime(e.into()))?);
    }
    if let Trained::Clustered(_, state) = &trained {
        summary.assignments = Some(state.assignments.clone());
    }
    if eval.wants(Metric::Representability) && sources.theory {
        let k = cfg.theory().expect("theory data").num_sources;
        let dirs: Vec<usize> = (0..k).collect();
        let reps = trained
            .models()
            .iter()
            .enumerate()
            .map(|(i, m)| {
                let r = encoder_representability(m, &dirs)?;
                Ok(Representability {
                    model: i,
                    directions: r.directions,
                    values: r.values,
                })
            })
            .collect::<decssl::Result<Vec<_>>>()
            .map_err(|e| Failure::Runtime(e.into()))?;
        summary.representability = Some(reps);
    }
    if eval.wants(Metric::Probe) {
        summary.probe = Some(probe(cfg, &sources.datasets, trained.models(), &trained.serving()).map_err(Failure::Runtime)?);
    }
    let models = ModelFile::from_models(trained.models(), summary.assignments.clone());
    write_file(dir, "models.json", &models.to_json().map_err(Failure::Runtime)?).map_err(Failure::Runtime)?;
    write_artifacts(cfg, dir, trace, &summary).map_err(Failure::Runtime)?;
    Ok(summary)
}
