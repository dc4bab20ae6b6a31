//! Command-line front end.
//!
//! Subcommands cover the full experiment lifecycle: `validate-config`
//! checks a config file, `run` trains and estimates, `tables` and `plots`
//! render a finished run, and `mia` attacks one after the fact.
//!
//! Exit codes by failure category: 2 configuration, 3 data format,
//! 4 numerical, 5 I/O, 1 anything else.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dofrank_core::experiment::{self, ExperimentConfig};
use dofrank_core::Error;

#[derive(Parser)]
#[command(
    name = "dofrank",
    version,
    about = "Attack-free privacy risk assessment for deep-model layers"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Experiment config file (TOML).
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Override the config's seed.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Override the config's training-sample cap (0 keeps all).
    #[arg(long, value_name = "N")]
    limit_train: Option<usize>,
}

impl ConfigArgs {
    fn load(&self) -> Result<ExperimentConfig, Error> {
        let mut cfg = ExperimentConfig::load(&self.config)?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(limit) = self.limit_train {
            cfg.limit_train = limit;
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct OutArgs {
    /// Run directory holding the experiment artifacts.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and run the estimator schedules.
    Run {
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Render the summary tables of a finished run.
    Tables {
        #[command(flatten)]
        out: OutArgs,
    },
    /// Write plot-ready series files for a finished run.
    Plots {
        #[command(flatten)]
        out: OutArgs,
    },
    /// Attack a finished run's checkpoint and refresh its artifacts.
    Mia {
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Check a config file and describe the run it would start.
    ValidateConfig {
        #[command(flatten)]
        config: ConfigArgs,
    },
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Config(_) => 2,
        Error::Format(_) => 3,
        Error::Numerical(_) => 4,
        Error::Io(_) => 5,
        Error::Contract(_) => 1,
    }
}

fn run(command: Command) -> Result<(), Error> {
    match command {
        Command::Run { config, out } => {
            let cfg = config.load()?;
            let manifest = experiment::run_experiment(&cfg, &out.out)?;
            if let Some(last) = manifest.epochs.last() {
                println!(
                    "run complete: {} epochs, train_acc {:.4}, test_acc {}",
                    manifest.epochs.len(),
                    last.train_accuracy,
                    last.test_accuracy
                        .map(|a| format!("{:.4}", a))
                        .unwrap_or_else(|| "n/a".to_string())
                );
            }
            for name in [
                manifest.artifacts.metrics_csv.as_deref(),
                manifest.artifacts.summary_json.as_deref(),
                manifest.artifacts.checkpoint.as_deref(),
                manifest.artifacts.attack_results_json.as_deref(),
                manifest.artifacts.correlation_json.as_deref(),
            ]
            .into_iter()
            .flatten()
            {
                println!("wrote {}", out.out.join(name).display());
            }
            Ok(())
        }
        Command::Tables { out } => {
            let manifest = experiment::load_manifest(&out.out)?;
            let text = experiment::emit_tables(&out.out, &manifest)?;
            dofrank_core::write_atomic(&out.out.join("tables.txt"), text.as_bytes())?;
            print!("{}", text);
            Ok(())
        }
        Command::Plots { out } => {
            let manifest = experiment::load_manifest(&out.out)?;
            let files = experiment::emit_plot_data(&out.out, &manifest)?;
            for f in &files {
                println!("wrote {}", f.display());
            }
            Ok(())
        }
        Command::Mia { config, out } => {
            let cfg = config.load()?;
            let results = experiment::run_mia(&cfg, &out.out)?;
            for r in &results {
                println!(
                    "{}: attack accuracy {:.2}% (epoch {})",
                    r.layer,
                    100.0 * r.test_accuracy,
                    r.best_epoch
                );
            }
            Ok(())
        }
        Command::ValidateConfig { config } => {
            let cfg = config.load()?;
            println!(
                "config ok: model {}, dataset {}, {} epochs, batch {}, seed {}",
                cfg.model, cfg.dataset.name, cfg.epochs, cfg.batch_size, cfg.seed
            );
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e);
            ExitCode::from(exit_code_for(&e))
        }
    }
}
