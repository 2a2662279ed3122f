//! Cartesian parameter sweeps over an experiment config.
//!
//! A sweep file is an ordinary experiment config plus a `[sweep]` table:
//!
//! ```toml
//! [sweep]
//! jobs = 2
//! axes = [
//!     { path = "data.partition.parameter", values = [0.1, 1.0] },
//!     { path = "train.algorithm", values = ["fedavg", "local"] },
//! ]
//! ```
//!
//! Every combination becomes one run in `<output.dir>/cell_NNN`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use anyhow::{anyhow, bail, Context, Result};
use serde::Deserialize;
use toml::{Table, Value};

use crate::config::{set_path, ExperimentConfig};
use crate::experiment::{run_experiment, Summary};
use crate::{CmdResult, Failure};

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Axis {
    /// Dotted key path into the experiment config.
    pub path: String,
    pub values: Vec<Value>,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub axes: Vec<Axis>,
    #[serde(default = "one")]
    pub jobs: usize,
}

fn one() -> usize {
    1
}

/// One fully resolved point of the sweep.
#[derive(Clone, Debug)]
pub struct Cell {
    pub index: usize,
    pub values: Vec<Value>,
    pub config: ExperimentConfig,
    pub dir: PathBuf,
}

/// Outcome of one cell.
pub type CellResult = std::result::Result<Summary, Failure>;

pub struct Sweep {
    pub spec: SweepSpec,
    pub cells: Vec<Cell>,
    pub dir: PathBuf,
}

/// Plain rendering of a TOML value for file names and CSV cells.
pub fn plain(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

impl Sweep {
    /// Expands and validates every cell before anything runs. Relative data
    /// paths resolve against `base`; relative output dirs go under `root`.
    pub fn parse(text: &str, base: &Path, root: Option<&Path>) -> Result<Self> {
        let mut table: Table = text.parse().context("parsing sweep file")?;
        let spec: SweepSpec = table
            .remove("sweep")
            .ok_or_else(|| anyhow!("sweep: missing [sweep] table"))?
            .try_into()
            .context("sweep")?;
        if spec.axes.is_empty() {
            bail!("sweep.axes: at least one axis is required");
        }
        if spec.jobs == 0 {
            bail!("sweep.jobs: must be at least 1");
        }
        for a in &spec.axes {
            if a.values.is_empty() {
                bail!("sweep.axes: {:?} has no values", a.path);
            }
        }

        let mut base_cfg: ExperimentConfig = Value::Table(table.clone()).try_into().context("sweep base config")?;
        base_cfg.resolve(base);
        let dir = base_cfg.output_dir(root);

        let total: usize = spec.axes.iter().map(|a| a.values.len()).product();
        let mut cells = Vec::with_capacity(total);
        for index in 0..total {
            let mut rem = index;
            let mut values = vec![Value::Boolean(false); spec.axes.len()];
            for (i, a) in spec.axes.iter().enumerate().rev() {
                values[i] = a.values[rem % a.values.len()].clone();
                rem /= a.values.len();
            }
            let mut t = table.clone();
            for (a, v) in spec.axes.iter().zip(&values) {
                set_path(&mut t, &a.path, v.clone()).with_context(|| format!("sweep.axes: {}", a.path))?;
            }
            let label = spec
                .axes
                .iter()
                .zip(&values)
                .map(|(a, v)| format!("{}={}", a.path, plain(v)))
                .collect::<Vec<_>>()
                .join(", ");
            let mut config: ExperimentConfig = Value::Table(t).try_into().with_context(|| format!("cell {index} ({label})"))?;
            config.resolve(base);
            let cell_dir = dir.join(format!("cell_{index:03}"));
            config.output.dir = cell_dir.clone();
            config.validate().with_context(|| format!("cell {index} ({label})"))?;
            cells.push(Cell {
                index,
                values,
                config,
                dir: cell_dir,
            });
        }
        Ok(Sweep { spec, cells, dir })
    }

    pub fn load(path: &Path, root: Option<&Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")), root)
    }

    /// Runs every cell on `spec.jobs` threads and writes
    /// `sweep_summary.csv`. A diverged cell does not stop the others.
    pub fn run(&self) -> CmdResult<Vec<CellResult>> {
        std::fs::create_dir_all(&self.dir).with_context(|| format!("creating {}", self.dir.display()))?;
        let next = AtomicUsize::new(0);
        let results: Mutex<Vec<Option<CellResult>>> =
            Mutex::new((0..self.cells.len()).map(|_| None).collect());
        let jobs = self.spec.jobs.min(self.cells.len());
        std::thread::scope(|s| {
            for _ in 0..jobs {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    let Some(cell) = self.cells.get(i) else { break };
                    log::info!("cell {i}: {}", cell.dir.display());
                    let r = run_experiment(&cell.config, &cell.dir);
                    if let Err(e) = &r {
                        log::warn!("cell {i}: {e}");
                    }
                    results.lock().expect("poisoned")[i] = Some(r);
                });
            }
        });
        let results: Vec<_> = results
            .into_inner()
            .expect("poisoned")
            .into_iter()
            .map(|r| r.expect("every cell ran"))
            .collect();
        std::fs::write(self.dir.join("sweep_summary.csv"), self.summary_csv(&results))
            .context("writing sweep_summary.csv")?;
        Ok(results)
    }

    pub fn summary_csv(&self, results: &[CellResult]) -> String {
        let mut s = String::from("cell");
        for a in &self.spec.axes {
            let _ = write!(s, ",{}", a.path);
        }
        s.push_str(",status,rounds_completed,final_global_loss,final_principal_angle,heterogeneity_emd,probe_accuracy,min_representability\n");
        let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        for (cell, r) in self.cells.iter().zip(results) {
            let _ = write!(s, "{}", cell.index);
            for v in &cell.values {
                let _ = write!(s, ",{}", plain(v));
            }
            let summary = match r {
                Ok(sm) => Some(sm.clone()),
                // Aborted runs still leave a summary on disk.
                Err(_) => std::fs::read_to_string(cell.dir.join("summary.json"))
                    .ok()
                    .and_then(|t| serde_json::from_str::<Summary>(&t).ok()),
            };
            match summary {
                Some(sm) => {
                    let min_rep = sm.representability.as_ref().and_then(|reps| {
                        reps.iter().flat_map(|r| r.values.iter().copied()).reduce(f64::min)
                    });
                    let _ = writeln!(
                        s,
                        ",{},{},{},{},{},{},{}",
                        sm.status,
                        sm.rounds_completed,
                        opt(sm.final_global_loss),
                        opt(sm.final_principal_angle),
                        opt(sm.heterogeneity_emd),
                        opt(sm.probe.as_ref().map(|p| p.mean_accuracy)),
                        opt(min_rep)
                    );
                }
                None => s.push_str(",failed,,,,,,\n"),
            }
        }
        s
    }
}
