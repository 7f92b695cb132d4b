//! `qsfa` experiment runner.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use qsfa::experiment::{self, ExperimentConfig, SweepTarget};
use qsfa::profiler::SweepAxis;

#[derive(Parser)]
#[command(name = "qsfa", version, about = "Slow-feature MNIST classification simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// `key = value` configuration file.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Overrides as `--key value` pairs, using the configuration keys.
    #[arg(last = true)]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Train, classify the test set and write results.csv and summary.txt.
    Run(Common),
    /// Write profile.csv and cost.csv for the configured data.
    Profile(Common),
    /// Repeat run or profile over a grid and merge the CSVs.
    Sweep {
        /// `run` or `profile`.
        #[arg(long, default_value = "run")]
        target: String,
        /// `n` (training rows) or `d` (PCA dimension).
        #[arg(long)]
        axis: String,
        /// Comma-separated grid values.
        #[arg(long)]
        grid: String,
        #[command(flatten)]
        common: Common,
    },
    /// Regenerate table rows as `pca x degree` pairs into table1.csv.
    ReproduceTable1 {
        #[arg(long, default_value = "40x2,80x2,90x2,30x3,35x3,36x3")]
        rows: String,
        #[command(flatten)]
        common: Common,
    },
    /// Print the effective configuration.
    ShowConfig(Common),
}

fn config(c: &Common) -> qsfa::Result<ExperimentConfig> {
    let mut cfg = match &c.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    cfg.apply_overrides(&c.overrides)?;
    Ok(cfg)
}

fn execute(cli: Cli) -> qsfa::Result<()> {
    match cli.command {
        Command::Run(c) => {
            let cfg = config(&c)?;
            let s = experiment::cmd_run(&cfg)?;
            print!("{}", s.to_text());
            println!("output = {}", cfg.output_dir.display());
        }
        Command::Profile(c) => {
            let cfg = config(&c)?;
            let r = experiment::cmd_profile(&cfg)?;
            print!("{}", r.to_text());
            println!("output = {}", cfg.output_dir.display());
        }
        Command::Sweep { target, axis, grid, common } => {
            let cfg = config(&common)?;
            let target = SweepTarget::parse(&target)?;
            let axis = SweepAxis::parse(&axis)?;
            let grid = experiment::parse_grid(&grid)?;
            let results = experiment::cmd_sweep(&cfg, target, axis, &grid)?;
            let failed = results
                .iter()
                .filter(|(_, r)| matches!(r, experiment::SweepResult::Failed(_)))
                .count();
            println!(
                "{} points, {failed} failed, output = {}",
                results.len(),
                cfg.output_dir.display()
            );
        }
        Command::ReproduceTable1 { rows, common } => {
            let cfg = config(&common)?;
            let rows = experiment::parse_table_rows(&rows)?;
            let out = experiment::cmd_reproduce_table1(&cfg, &rows)?;
            println!("{}", experiment::TABLE1_HEADER);
            for r in &out {
                println!("{}", r.csv_row());
            }
        }
        Command::ShowConfig(c) => print!("{}", config(&c)?.to_text()),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
