//! Batch driver: `train`, `eval`, `inspect` and `gen-data` subcommands over
//! the engine. Exit codes: 0 on success, 1 on usage errors, 2 on data or
//! validation errors. All randomness derives from the config seed, so
//! identical invocations produce identical output bytes.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use stam_core::config::{emit_config, load_config};
use stam_core::pgm::export_centroids;
use stam_core::report::{load_report, write_report};
use stam_core::runner::{generate_data, Engine};
use stam_core::{Result, StamError};

#[derive(Parser)]
#[command(name = "stam", version, about = "Streaming continual-learning engine")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Stream the configured schedule into the hierarchy and checkpoint it.
    Train {
        /// Run configuration file.
        #[arg(long)]
        config: PathBuf,
        /// Resume from an existing checkpoint instead of a fresh engine.
        #[arg(long)]
        checkpoint_in: Option<PathBuf>,
        /// Where to write the resulting checkpoint.
        #[arg(long)]
        checkpoint_out: PathBuf,
        /// Stop after the last stream item of this phase.
        #[arg(long)]
        until_phase: Option<u32>,
    },
    /// Evaluate a checkpointed engine and write the CSV metrics report.
    Eval {
        /// Checkpoint to evaluate.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Run configuration file; must match the checkpointed config.
        #[arg(long)]
        config: PathBuf,
        /// Output CSV path (schema `phase,metric,value`).
        #[arg(long)]
        report: PathBuf,
        /// Earlier report; adds per-phase forgetting rows against it.
        #[arg(long)]
        baseline: Option<PathBuf>,
    },
    /// Export every stored centroid as binary PGM images.
    Inspect {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Output directory for the PGM files.
        #[arg(long)]
        centroids_pgm: PathBuf,
    },
    /// Write the configured synthetic dataset as IDX files.
    GenData {
        #[arg(long)]
        config: PathBuf,
        /// Output directory for the IDX files.
        #[arg(long)]
        out: PathBuf,
    },
}

fn check_config_matches(engine: &Engine, config_path: &PathBuf) -> Result<()> {
    let file_config = load_config(config_path)?;
    if emit_config(&file_config) != emit_config(engine.config()) {
        return Err(StamError::ValidationError(
            "config file does not match the checkpoint's configuration".into(),
        ));
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train {
            config,
            checkpoint_in,
            checkpoint_out,
            until_phase,
        } => {
            let mut engine = match checkpoint_in {
                Some(path) => {
                    let engine = Engine::load(path)?;
                    check_config_matches(&engine, &config)?;
                    engine
                }
                None => Engine::new(load_config(config)?)?,
            };
            let consumed = engine.train(until_phase)?;
            engine.save(&checkpoint_out)?;
            let counts: Vec<String> = engine
                .hierarchy()
                .layers()
                .iter()
                .enumerate()
                .map(|(li, layer)| {
                    let per_unit: Vec<String> = layer
                        .units()
                        .iter()
                        .map(|u| u.len().to_string())
                        .collect();
                    format!("L{}: [{}]", li + 1, per_unit.join(", "))
                })
                .collect();
            println!(
                "trained {consumed} items (cursor {}), centroids {}",
                engine.cursor(),
                counts.join(" ")
            );
            println!("checkpoint written to {}", checkpoint_out.display());
        }
        Command::Eval {
            checkpoint,
            config,
            report,
            baseline,
        } => {
            let engine = Engine::load(checkpoint)?;
            check_config_matches(&engine, &config)?;
            let baseline_rows = match baseline {
                Some(path) => Some(load_report(path)?),
                None => None,
            };
            let metrics = engine.evaluate(baseline_rows.as_deref())?;
            let rows = metrics.rows();
            write_report(&report, &rows)?;
            println!(
                "purity {}, reconstruction mse {}",
                metrics.purity, metrics.reconstruction_mse
            );
            for (phase, acc) in &metrics.accuracy_per_phase {
                println!("phase {phase} accuracy {acc}");
            }
            for (phase, f) in &metrics.forgetting {
                println!("phase {phase} forgetting {f}");
            }
            println!("{} rows written to {}", rows.len(), report.display());
        }
        Command::Inspect {
            checkpoint,
            centroids_pgm,
        } => {
            let engine = Engine::load(checkpoint)?;
            let written = export_centroids(engine.hierarchy(), &centroids_pgm)?;
            println!("{} PGM files written to {}", written.len(), centroids_pgm.display());
        }
        Command::GenData { config, out } => {
            let config = load_config(config)?;
            let (images, labels) = generate_data(&config, &out)?;
            println!("wrote {}", images.display());
            println!("wrote {}", labels.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
