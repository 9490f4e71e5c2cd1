use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::info;

use aser::error::Error;
use aser::harness::{
    aggregate_runs, parse_seeds, parse_strategies, run_experiment_full, write_embeddings, write_results,
    ExperimentConfig,
};
use aser::knn_shapley::oracle::equivalence_suite;

#[derive(Parser)]
#[command(name = "aser", version, about = "Adversarial Shapley value experience replay experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the strategy grid over several seeds and write CSV results.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated strategy names.
        #[arg(long)]
        strategies: Option<String>,
        /// `a..b`, `a..=b` or a comma-separated list.
        #[arg(long)]
        seeds: Option<String>,
        /// Memory capacity.
        #[arg(long)]
        memory: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        dump_embeddings: bool,
    },
    /// Check a configuration file without running it.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Compare the fast KNN Shapley values against brute-force enumeration.
    OracleCheck {
        #[arg(long, default_value_t = 100)]
        instances: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

enum Failure {
    Config(Error),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::Parse { .. } => Failure::Config(e),
            other => Failure::Runtime(other),
        }
    }
}

fn load_config(path: &Path) -> Result<ExperimentConfig, Failure> {
    ExperimentConfig::load(path).map_err(|e| match e {
        Error::Io { .. } => Failure::Config(e),
        other => Failure::from(other),
    })
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Validate { config } => {
            let cfg = load_config(&config)?;
            cfg.validate().map_err(Failure::Config)?;
            println!("{}: ok", config.display());
        }
        Command::Run {
            config,
            strategies,
            seeds,
            memory,
            out,
            dump_embeddings,
        } => {
            let mut cfg = load_config(&config)?;
            if let Some(s) = strategies {
                cfg.strategies = parse_strategies(&s).map_err(Failure::Config)?;
            }
            if let Some(s) = seeds {
                cfg.seeds = parse_seeds(&s).map_err(Failure::Config)?;
            }
            if let Some(m) = memory {
                cfg.train.memory_capacity = m;
            }
            if let Some(dir) = out {
                cfg.output_dir = dir;
            }
            cfg.dump_embeddings |= dump_embeddings;
            cfg.validate().map_err(Failure::Config)?;

            info!(
                "running {} strategies x {} seeds",
                cfg.strategies.len(),
                cfg.seeds.len()
            );
            let output = run_experiment_full(&cfg).map_err(Failure::Runtime)?;
            let aggregates = aggregate_runs(&output.records).map_err(Failure::Runtime)?;
            write_results(&output.records, &aggregates, &cfg.output_dir, cfg.record_wall_time)
                .map_err(Failure::Runtime)?;
            if cfg.dump_embeddings {
                let files = write_embeddings(&output, &cfg.output_dir).map_err(Failure::Runtime)?;
                info!("wrote {} embedding files", files.len());
            }
            for a in &aggregates {
                let forgetting = a
                    .forgetting
                    .map(|f| format!("{:.4} +- {:.4}", f.mean, f.ci95))
                    .unwrap_or_else(|| "n/a".into());
                println!(
                    "{:<11} M={:<4} acc {:.4} +- {:.4}  forgetting {}",
                    a.strategy.as_str(),
                    a.memory_size,
                    a.accuracy.mean,
                    a.accuracy.ci95,
                    forgetting
                );
            }
            println!("results in {}", cfg.output_dir.display());
        }
        Command::OracleCheck { instances, seed } => {
            let report = equivalence_suite(seed, instances).map_err(Failure::Runtime)?;
            println!(
                "{} instances, max abs error {:.3e}",
                report.instances, report.max_abs_error
            );
            if report.max_abs_error > 1e-10 {
                return Err(Failure::Runtime(Error::InvalidArgument(format!(
                    "fast and brute-force values differ by {:.3e}",
                    report.max_abs_error
                ))));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("config error: {e}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
