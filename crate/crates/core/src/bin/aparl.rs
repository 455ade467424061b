//! `aparl` command-line entry point. Science parameters live in the TOML
//! config; flags only point at files.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use aparl::cli;

#[derive(Parser)]
#[command(name = "aparl", version, about = "Proficiency-aware RL training on a synthetic event-detection task")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the train and test splits.
    GenData {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one run (algorithm and seed come from the config).
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Continue from a trainer checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate a policy or trainer checkpoint on a dataset.
    Eval {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        checkpoint: PathBuf,
        /// A JSONL file, or a gen-data directory (its test split is used).
        #[arg(long)]
        data: PathBuf,
        /// Where to write the metrics as JSON.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train every algorithm on every seed and tabulate the results.
    Compare {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "0")]
        seeds: Vec<u64>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(command: Command) -> aparl::Result<()> {
    cli::init_threads()?;
    match command {
        Command::GenData { config, out } => {
            let cfg = cli::load_config(config.as_deref())?;
            let meta = cli::cmd_gen_data(&cfg, &out)?;
            println!("train: {} samples, per tier {:?}", meta.n_train, meta.tier_counts_train);
            println!("test:  {} samples, per tier {:?}", meta.n_test, meta.tier_counts_test);
        }
        Command::Train { config, data, out, resume } => {
            let cfg = cli::load_config(config.as_deref())?;
            let report = cli::cmd_train(&cfg, &data, &out, resume.as_deref())?;
            if let Some(e) = report.log.last_eval() {
                println!(
                    "{}: {} steps, F1 {:.4} (P {:.4}, R {:.4}) -> {}",
                    report.run_id,
                    report.log.steps.len(),
                    e.f1,
                    e.precision,
                    e.recall,
                    report.run_dir.display()
                );
            }
        }
        Command::Eval { config, checkpoint, data, out } => {
            let cfg = cli::load_config(config.as_deref())?;
            let row = cli::cmd_eval(&cfg, &checkpoint, &data, &out)?;
            println!(
                "F1 {:.4} (P {:.4}, R {:.4}), score {:.4}, format rate {:.4}",
                row.f1, row.precision, row.recall, row.validation_score, row.format_rate
            );
        }
        Command::Compare { config, seeds, out } => {
            let cfg = cli::load_config(config.as_deref())?;
            let cmp = cli::cmd_compare(&cfg, &seeds, &out)?;
            print!("{}", cli::render_table(&cmp.table));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(cli::exit_code(&e) as u8)
        }
    }
}

