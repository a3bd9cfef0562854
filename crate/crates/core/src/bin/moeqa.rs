use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use moeqa::harness::{self, SweepAxis};
use moeqa::Result;

#[derive(Parser)]
#[command(name = "moeqa", version, about = "Mixture-of-experts extractive QA experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from an experiment config and write its run directory.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the config's output_dir.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a checkpoint on a SQuAD-style dataset.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Also write metrics.json and scores.csv here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Augment a dataset with EDA and back translation.
    Augment {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        recipe: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-layer expert load statistics and plots for a checkpoint.
    RouteStats {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one run per value of n_experts or alpha.
    Sweep {
        #[arg(long)]
        template: PathBuf,
        #[arg(long, value_parser = parse_axis)]
        axis: SweepAxis,
        /// Comma-separated, e.g. `1,2,4` or `0.05,0.1,1,2`.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_axis(s: &str) -> std::result::Result<SweepAxis, String> {
    s.parse().map_err(|e: moeqa::Error| e.to_string())
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Train { config, seed, out } => print_json(&harness::cmd_train(&config, seed, out)?),
        Command::Evaluate { checkpoint, data, out } => {
            print_json(&harness::cmd_evaluate(&checkpoint, &data, out.as_deref())?)
        }
        Command::Augment { data, recipe, out } => print_json(&harness::cmd_augment(&data, &recipe, &out)?),
        Command::RouteStats { checkpoint, data, out } => {
            print_json(&harness::cmd_route_stats(&checkpoint, &data, &out)?)
        }
        Command::Sweep {
            template,
            axis,
            values,
            out,
        } => {
            for row in harness::cmd_sweep(&template, axis, &values, out)? {
                println!(
                    "{}={} em={:.4} f1={:.4} dir={}",
                    row.axis,
                    row.value,
                    row.em,
                    row.f1,
                    row.output_dir.display()
                );
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = run(cli.command);
    if let Err(e) = &result {
        log::error!("{e}");
    }
    ExitCode::from(harness::exit_code(&result) as u8)
}
