//! Subcommand handlers.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use decssl::datagen::{
    generate_theory_dataset, partition_dirichlet, partition_feature_clusters, partition_skewness, LocalDataset,
    TheoryGenConfig,
};
use decssl::verify::{
    verify_equivalence, verify_prop1, verify_theorem1, EquivalenceConfig, Prop1Config, Theorem1Config,
};
use decssl::Dataset64;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::config::{ExperimentConfig, PartitionKind};
use crate::experiment::{load_sources, probe, run_experiment, Serving, Summary};
use crate::models::ModelFile;
use crate::sweep::Sweep;
use crate::{CmdResult, Failure};

fn write_csv(path: &Path, ds: &Dataset64) -> anyhow::Result<()> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(f);
    ds.write_csv(&mut w)?;
    w.flush()?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s).with_context(|| format!("writing {}", path.display()))
}

fn create_dir(dir: &Path) -> CmdResult {
    fs::create_dir_all(dir)
        .with_context(|| format!("cannot create {}", dir.display()))
        .map_err(Failure::Config)
}

/// Writes `all.csv`, `source_<k>.csv` and `generator.json` into `out`.
pub fn gen_data(cfg: &TheoryGenConfig, out: &Path) -> CmdResult {
    cfg.validate().map_err(|e| Failure::Config(e.into()))?;
    create_dir(out)?;
    let sources = generate_theory_dataset::<f64>(cfg).map_err(|e| Failure::Runtime(e.into()))?;
    let all = LocalDataset::concat(&sources).map_err(|e| Failure::Runtime(e.into()))?;
    write_csv(&out.join("all.csv"), &all)?;
    for (k, ds) in sources.iter().enumerate() {
        write_csv(&out.join(format!("source_{k}.csv")), ds)?;
    }
    write_json(&out.join("generator.json"), cfg)?;
    Ok(())
}

pub struct PartitionArgs {
    pub input: PathBuf,
    pub scheme: PartitionKind,
    pub num_sources: usize,
    pub parameter: Option<f64>,
    pub seed: u64,
    pub out: PathBuf,
}

/// Splits a labelled CSV into `source_<k>.csv` files plus `partition.json`.
/// The input file is only read.
pub fn partition(args: &PartitionArgs) -> CmdResult {
    let section = crate::config::PartitionSection {
        scheme: args.scheme,
        num_sources: args.num_sources,
        parameter: args.parameter,
    };
    crate::config::validate_partition(&section).map_err(Failure::Config)?;
    let file = File::open(&args.input)
        .with_context(|| format!("cannot open {}", args.input.display()))
        .map_err(Failure::Config)?;
    let data = LocalDataset::<f64>::read_csv(BufReader::new(file), 0, 0)
        .with_context(|| format!("reading {}", args.input.display()))
        .map_err(Failure::Config)?;
    let labels = data.labels();
    let param = args.parameter.unwrap_or_default();
    let spec = match args.scheme {
        PartitionKind::Dirichlet => partition_dirichlet(labels, args.num_sources, param, args.seed),
        PartitionKind::Skewness => partition_skewness(labels, args.num_sources, param, args.seed),
        PartitionKind::FeatureCluster => partition_feature_clusters(data.samples(), labels, args.num_sources, args.seed),
    }
    .map_err(|e| Failure::Config(e.into()))?;
    create_dir(&args.out)?;
    let parts = spec.apply(&data).map_err(|e| Failure::Runtime(e.into()))?;
    for (k, ds) in parts.iter().enumerate() {
        write_csv(&args.out.join(format!("source_{k}.csv")), ds)?;
    }
    let json = spec.to_json().map_err(|e| Failure::Runtime(e.into()))?;
    fs::write(args.out.join("partition.json"), json + "\n").context("writing partition.json")?;
    Ok(())
}

pub fn train(config: &Path, overrides: &[String], root: Option<&Path>) -> CmdResult<Summary> {
    let cfg = ExperimentConfig::load_with(config, overrides).map_err(Failure::Config)?;
    let dir = cfg.output_dir(root);
    let summary = run_experiment(&cfg, &dir)?;
    println!("{}", dir.display());
    Ok(summary)
}

/// Re-probes a finished run from its `resolved_config.toml` and
/// `models.json`, writing `probe.json` next to them.
pub fn probe_run(run_dir: &Path) -> CmdResult {
    let text = fs::read_to_string(run_dir.join("resolved_config.toml"))
        .with_context(|| format!("reading {}/resolved_config.toml", run_dir.display()))
        .map_err(Failure::Config)?;
    let cfg = ExperimentConfig::from_toml(&text).map_err(Failure::Config)?;
    let models = ModelFile::read(&run_dir.join("models.json")).map_err(Failure::Config)?;
    let encoders = models.encoders().map_err(Failure::Config)?;
    let sources = load_sources(&cfg).map_err(Failure::Config)?;
    let serving = Serving::for_algorithm(cfg.train.algorithm, models.assignments.clone());
    let result = probe(&cfg, &sources.datasets, &encoders, &serving)?;
    println!("mean accuracy {:.4} ({})", result.mean_accuracy, result.protocol);
    write_json(&run_dir.join("probe.json"), &result)?;
    Ok(())
}

fn read_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> CmdResult<T> {
    let Some(path) = path else { return Ok(T::default()) };
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(Failure::Config)?;
    toml::from_str(&text)
        .with_context(|| format!("parsing {}", path.display()))
        .map_err(Failure::Config)
}

fn report<T: Serialize>(out: Option<&Path>, value: &T, pass: bool, what: &str) -> CmdResult {
    if let Some(out) = out {
        if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
            create_dir(parent)?;
        }
        write_json(out, value)?;
    }
    if pass {
        println!("PASS {what}");
        Ok(())
    } else {
        println!("FAIL {what}");
        Err(Failure::Verdict(what.to_string()))
    }
}

pub fn verify_theorem1_cmd(config: Option<&Path>, out: Option<&Path>) -> CmdResult {
    let mut cfg: Theorem1Config = read_config(config)?;
    if cfg.embedding_dim.is_none() {
        cfg.embedding_dim = Some(cfg.m());
    }
    let r = verify_theorem1(&cfg).map_err(|e| Failure::Config(e.into()))?;
    for row in &r.rows {
        println!(
            "d={:<5} min_local={:.5} min_global={:.5} median_min_local={:.5}",
            row.d, row.min_local, row.min_global, row.median_min_local
        );
    }
    println!(
        "trend non-decreasing: {}, thresholds met: {}",
        r.trend_non_decreasing, r.thresholds_met
    );
    report(out, &r, r.pass, "theorem1")
}

pub fn verify_prop1_cmd(config: Option<&Path>, out: Option<&Path>) -> CmdResult {
    let cfg: Prop1Config = read_config(config)?;
    let r = verify_prop1(&cfg).map_err(|e| Failure::Config(e.into()))?;
    println!("min ratio {:.4} (need >= {}), min SSL representability {:.4} (need >= {})", r.min_ratio, cfg.factor, r.min_ssl_other, cfg.ssl_threshold);
    report(out, &r, r.pass, "prop1")
}

pub fn verify_equivalence_cmd(config: Option<&Path>, out: Option<&Path>) -> CmdResult {
    let cfg: EquivalenceConfig = read_config(config)?;
    let r = match verify_equivalence(&cfg) {
        Ok(r) => r,
        Err(e @ decssl::Error::NumericalDivergence { .. }) => return Err(Failure::Diverged(e.into())),
        Err(e) => return Err(Failure::Config(e.into())),
    };
    println!(
        "principal angle {:.3e} rad, relative gap {:.3e}",
        r.principal_angle, r.relative_gap
    );
    report(out, &r, r.pass, "equivalence")
}

pub fn sweep(path: &Path, root: Option<&Path>) -> CmdResult {
    let sweep = Sweep::load(path, root).map_err(Failure::Config)?;
    let results = sweep.run()?;
    println!("{}", sweep.dir.display());
    let diverged = results.iter().filter(|r| matches!(r, Err(Failure::Diverged(_)))).count();
    let failed = results.iter().filter(|r| r.is_err()).count();
    if diverged > 0 {
        Err(Failure::Diverged(anyhow!("{diverged} of {} cells diverged", results.len())))
    } else if failed > 0 {
        Err(Failure::Runtime(anyhow!("{failed} of {} cells failed", results.len())))
    } else {
        Ok(())
    }
}
