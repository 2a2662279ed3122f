use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use decssl::datagen::{default_mu, default_tau, TheoryGenConfig};
use decssl_cli::commands::{self, PartitionArgs};
use decssl_cli::config::{PartitionKind, OUTPUT_ROOT_ENV};
use decssl_cli::CmdResult;

/// Simulate decentralized self-supervised learning on non-IID sources.
///
/// Exit codes: 0 success, 1 configuration or runtime error, 2 numerical
/// divergence, 3 a verification check ran and failed.
#[derive(Parser)]
#[command(name = "decssl", version)]
struct Cli {
    /// Root for relative output directories in experiment configs.
    #[arg(long, global = true, env = OUTPUT_ROOT_ENV)]
    output_root: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic theory dataset as CSV files.
    GenData {
        #[arg(long)]
        d: usize,
        #[arg(long)]
        num_sources: usize,
        #[arg(long, default_value_t = 500)]
        majority_count: usize,
        #[arg(long, default_value_t = 20)]
        minority_count: usize,
        /// Defaults to d^(1/5).
        #[arg(long)]
        tau_scale: Option<f64>,
        /// Defaults to d^(-1/5).
        #[arg(long)]
        mu_noise: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Split a labelled CSV (label,x_1,...,x_d) into sources.
    Partition {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum)]
        scheme: Scheme,
        #[arg(long)]
        num_sources: usize,
        /// alpha for dirichlet, beta for skewness.
        #[arg(long)]
        parameter: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one experiment from a TOML config.
    Train {
        config: PathBuf,
        /// Override a config field, e.g. `--set train.rounds=20`. Repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Re-run the linear probe on a finished run directory.
    Probe { run_dir: PathBuf },
    /// Run every cell of a sweep file.
    Sweep { config: PathBuf },
    /// Representability of local and global SSL minimizers on theory data.
    VerifyTheorem1 {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Supervised features versus SSL features per source.
    VerifyProp1 {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Gradient descent on the linear SSL loss against the rank-m oracle.
    VerifyEquivalence {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum Scheme {
    Dirichlet,
    Skewness,
    FeatureCluster,
}

impl From<Scheme> for PartitionKind {
    fn from(s: Scheme) -> Self {
        match s {
            Scheme::Dirichlet => PartitionKind::Dirichlet,
            Scheme::Skewness => PartitionKind::Skewness,
            Scheme::FeatureCluster => PartitionKind::FeatureCluster,
        }
    }
}

fn run(cli: Cli) -> CmdResult {
    let root = cli.output_root.as_deref();
    match cli.command {
        Command::GenData {
            d,
            num_sources,
            majority_count,
            minority_count,
            tau_scale,
            mu_noise,
            seed,
            out,
        } => {
            let cfg = TheoryGenConfig {
                d,
                num_sources,
                majority_count,
                minority_count,
                tau_scale: tau_scale.unwrap_or_else(|| default_tau(d)),
                mu_noise: mu_noise.unwrap_or_else(|| default_mu(d)),
                seed,
            };
            commands::gen_data(&cfg, &out)
        }
        Command::Partition {
            input,
            scheme,
            num_sources,
            parameter,
            seed,
            out,
        } => commands::partition(&PartitionArgs {
            input,
            scheme: scheme.into(),
            num_sources,
            parameter,
            seed,
            out,
        }),
        Command::Train { config, overrides } => commands::train(&config, &overrides, root).map(|_| ()),
        Command::Probe { run_dir } => commands::probe_run(&run_dir),
        Command::Sweep { config } => commands::sweep(&config, root),
        Command::VerifyTheorem1 { config, out } => commands::verify_theorem1_cmd(config.as_deref(), out.as_deref()),
        Command::VerifyProp1 { config, out } => commands::verify_prop1_cmd(config.as_deref(), out.as_deref()),
        Command::VerifyEquivalence { config, out } => {
            commands::verify_equivalence_cmd(config.as_deref(), out.as_deref())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
