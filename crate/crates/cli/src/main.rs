mod commands;
mod config;
mod io;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{Classify, CmdResult};

/// Multivariate gradient-boosted trees for forecasting.
#[derive(Parser, Debug)]
#[command(name = "mbt", version, about)]
struct Cli {
    /// Worker threads; 0 uses all cores.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// Increase log detail on stderr (-v info, -vv debug, -vvv trace).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit a model and write it with its loss trace.
    Train(commands::TrainArgs),
    /// Apply a model to a CSV file.
    Predict(commands::PredictArgs),
    /// Score predictions against observations.
    Evaluate(commands::EvaluateArgs),
    /// Make hierarchical forecasts aggregation-consistent.
    Reconcile(commands::ReconcileArgs),
    /// Sliding-window cross-validation with per-fold metrics.
    Cv(commands::CvArgs),
}

fn run(cli: &Cli) -> CmdResult {
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build_global()
        .runtime()?;
    match &cli.command {
        Command::Train(a) => commands::train(a),
        Command::Predict(a) => commands::predict(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Reconcile(a) => commands::reconcile(a),
        Command::Cv(a) => commands::cv(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { commands::EXIT_INPUT } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        2 => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
