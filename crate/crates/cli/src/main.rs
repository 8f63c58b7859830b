//! `unqa`: train, evaluate, cross-evaluate, and report on unified
//! no-reference quality-assessment runs.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use unqa_core::config::RunConfig;
use unqa_core::data::{load_manifest, write_database, Registry};
use unqa_core::eval::{cross_evaluate, evaluate, evaluate_retrain, repeat_seeds};
use unqa_core::model::load_checkpoint;
use unqa_core::report::{render_eval_table, report_run};
use unqa_core::train::{load_databases, run_full_pipeline};

#[derive(Parser)]
#[command(name = "unqa", version, about = "Unified no-reference quality assessment")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full three-step training pipeline.
    Train {
        #[arg(long, env = "UNQA_CONFIG")]
        config: PathBuf,
        #[arg(long, env = "UNQA_RUN_DIR", default_value = "runs/default")]
        run_dir: PathBuf,
    },
    /// Evaluate a checkpoint under the 7:1:2 repeat protocol.
    Eval {
        #[arg(long, env = "UNQA_CONFIG")]
        config: PathBuf,
        #[arg(long, env = "UNQA_CHECKPOINT")]
        checkpoint: PathBuf,
        #[arg(long, env = "UNQA_REPEATS")]
        repeats: Option<usize>,
        /// Retrain per repeat (the paper's protocol) instead of scoring the
        /// fixed checkpoint.
        #[arg(long, env = "UNQA_RETRAIN")]
        retrain: bool,
        #[arg(long, env = "UNQA_RUN_DIR", default_value = "runs/default")]
        run_dir: PathBuf,
    },
    /// Zero-shot evaluation on held-out database manifests.
    CrossEval {
        #[arg(long, env = "UNQA_CONFIG")]
        config: PathBuf,
        #[arg(long, env = "UNQA_CHECKPOINT")]
        checkpoint: PathBuf,
        /// Manifest CSVs of the held-out databases.
        #[arg(long = "held-out", env = "UNQA_HELD_OUT", required = true, num_args = 1..)]
        held_out: Vec<PathBuf>,
    },
    /// Render tables and plots for a finished run directory.
    Report {
        #[arg(long, env = "UNQA_RUN")]
        run: PathBuf,
    },
    /// Materialize the configured synthetic databases as manifests + media.
    GenData {
        #[arg(long, env = "UNQA_CONFIG")]
        config: PathBuf,
        #[arg(long, env = "UNQA_OUT", default_value = "data")]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Train { config, run_dir } => {
            let config = RunConfig::load(&config)?;
            let state = run_full_pipeline(&config, &run_dir)?;
            println!(
                "trained: phase {:?}, checkpoint {}",
                state.phase,
                run_dir.join("final.ckpt.json").display()
            );
        }
        Command::Eval {
            config,
            checkpoint,
            repeats,
            retrain,
            run_dir,
        } => {
            let mut config = RunConfig::load(&config)?;
            if let Some(r) = repeats {
                config.repeats = r;
            }
            let registry = load_databases(&config)?;
            let seeds = repeat_seeds(&config);
            let report = if retrain {
                evaluate_retrain(&config, &registry, &run_dir, &seeds)?
            } else {
                let state = load_checkpoint(&checkpoint, &config.model)?;
                evaluate(&state, &config, &registry, &seeds)?
            };
            std::fs::create_dir_all(&run_dir)?;
            report.save(&run_dir.join("eval.json"))?;
            print!("{}", render_eval_table(&report));
        }
        Command::CrossEval {
            config,
            checkpoint,
            held_out,
        } => {
            let config = RunConfig::load(&config)?;
            let state = load_checkpoint(&checkpoint, &config.model)?;
            let training = load_databases(&config)?;
            let mut held = Registry::new();
            for path in &held_out {
                held.register(load_manifest(path)?)?;
            }
            let report = cross_evaluate(&state, &config, &training, &held)?;
            print!("{}", render_eval_table(&report));
        }
        Command::Report { run } => {
            report_run(&run)?;
            println!("report written to {}", run.join("report").display());
        }
        Command::GenData { config, out } => {
            let config = RunConfig::load(&config)?;
            let registry = load_databases(&config)?;
            std::fs::create_dir_all(&out)?;
            for db in registry.databases() {
                let manifest = write_database(db, &out)?;
                println!("wrote {}", manifest.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!(
                "{}",
                serde_json::json!({ "error": e.to_string() })
            );
            ExitCode::FAILURE
        }
    }
}
