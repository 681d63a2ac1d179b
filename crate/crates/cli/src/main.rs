//! `distreg`: generate data, train arms, evaluate and report.
//!
//! Exit codes: 0 on success, 1 for usage or configuration errors, 2 for
//! runtime failures.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use distreg::experiment::{self, ExperimentConfig, ExperimentReport};
use distreg::Error;

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

#[derive(Parser)]
#[command(name = "distreg", version, about = "Distribution-aligned imbalanced regression experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset and the training-label density.
    Generate(Common),
    /// Train one arm (--arm) or all arms.
    Train {
        #[command(flatten)]
        common: Common,
        /// Train only this arm.
        #[arg(long)]
        arm: Option<String>,
        /// Train independent arms on separate threads.
        #[arg(long)]
        parallel_arms: bool,
    },
    /// Evaluate every trained arm and write the report, tables and plot data.
    Evaluate(Common),
    /// Print the comparison table of an existing report.
    Report(Common),
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override both the data seed and the training seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig, Error> {
        Ok(ExperimentConfig::load(&self.config)?.with_overrides(self.seed, self.out.clone()))
    }
}

fn run(command: Command) -> Result<(), Error> {
    match command {
        Command::Generate(common) => {
            let cfg = common.load()?;
            let data = experiment::run_generate(&cfg)?;
            eprintln!("generated {} samples into {}", data.len(), cfg.data_dir().display());
        }
        Command::Train { common, arm, parallel_arms } => {
            let cfg = common.load()?;
            for ck in experiment::run_train(&cfg, arm.as_deref(), parallel_arms)? {
                let last = ck.train_log.last().expect("at least one epoch");
                eprintln!(
                    "trained arm {}: {} epochs, final loss {:.4} (plain {:.4}, dist {:.4})",
                    ck.arm,
                    ck.train_log.len(),
                    last.loss,
                    last.plain,
                    last.dist
                );
            }
        }
        Command::Evaluate(common) => {
            let cfg = common.load()?;
            let report = experiment::run_evaluate(&cfg)?;
            print!("{}", experiment::render_table(&report));
            eprintln!("wrote {}", cfg.report_path().display());
        }
        Command::Report(common) => {
            let cfg = common.load()?;
            let report = ExperimentReport::load(&cfg.report_path())?;
            experiment::write_tables(&cfg, &report)?;
            print!("{}", experiment::render_table(&report));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ Error::InvalidConfig(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
