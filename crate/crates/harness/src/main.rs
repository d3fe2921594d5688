use std::path::PathBuf;
use std::process::ExitCode;

use carn_core::checks::run_scope;
use carn_core::dataset::generate_dataset;
use carn_core::gradcheck::GradCheckConfig;
use carn_core::phantom::PhantomSpec;
use carn_harness::ablation::run_ablation;
use carn_harness::metrics::evaluate_checkpoint;
use carn_harness::train::{train, TrainOptions};
use carn_harness::{ExperimentConfig, HarnessError, Result};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "carn", version, about = "Cascade amplifier regression network: data, training and checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Per-key overrides, e.g. `--epochs 5 --loss loss_p`.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "--KEY VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::from_file(path)?,
            None => ExperimentConfig::default(),
        };
        cfg.apply_overrides(&self.overrides)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic phantom dataset.
    Generate {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 200)]
        n: usize,
        #[arg(long, default_value_t = 128)]
        height: usize,
        #[arg(long, default_value_t = 64)]
        width: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        noise: Option<f64>,
        #[arg(long)]
        ambiguity: Option<f64>,
        #[arg(long, default_value_t = 4)]
        latent_dim: usize,
        #[arg(long, default_value_t = 0.8)]
        train_fraction: f64,
    },
    /// Train one configuration.
    Train {
        /// Continue from the state in the output directory.
        #[arg(long)]
        resume: bool,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Evaluate a checkpoint on both splits of a dataset.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// Directory for metrics.csv and report.txt.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train and compare all four model/loss configurations.
    Ablation {
        #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
        seeds: Vec<u64>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Compare analytic gradients with central finite differences.
    Gradcheck {
        /// An op name, `au`, `model`, `loss`, `ops` or `all`.
        #[arg(long, default_value = "all")]
        scope: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Generate { out, n, height, width, seed, noise, ambiguity, latent_dim, train_fraction } => {
            let mut spec = PhantomSpec::for_image(height, width);
            spec.latent_dim = latent_dim;
            spec.noise_sigma = noise.unwrap_or(spec.noise_sigma);
            spec.ambiguity_prob = ambiguity.unwrap_or(spec.ambiguity_prob);
            let m = generate_dataset(&out, n, &spec, seed, train_fraction)?;
            println!("wrote {} samples ({} train, {} test) to {}", m.n, m.split.train.len(), m.split.test.len(), out.display());
        }
        Command::Train { resume, cfg } => {
            let cfg = cfg.load()?;
            let outcome = train(&cfg, TrainOptions { resume, verbose: true })?;
            print!("{}", outcome.metrics.render());
        }
        Command::Evaluate { checkpoint, dataset, out, seed } => {
            let report = evaluate_checkpoint(&checkpoint, &dataset, seed)?;
            report.write(&out)?;
            print!("{}", report.render());
        }
        Command::Ablation { seeds, cfg } => {
            let report = run_ablation(&cfg.load()?, &seeds, TrainOptions { resume: false, verbose: true })?;
            print!("{}", report.render());
        }
        Command::Gradcheck { scope, seed, tolerance } => {
            let cfg = GradCheckConfig { seed, tolerance, ..GradCheckConfig::default() };
            let reports = run_scope(&scope, &cfg).map_err(HarnessError::from)?;
            for r in &reports {
                println!("{}", r.render());
            }
            return Ok(reports.iter().all(|r| r.passed()));
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
