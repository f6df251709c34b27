use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sixthsense::commands::{self, EvalArgs, InferArgs, PlotArgs, PreprocessArgs, ReproduceArgs, SimulateArgs, TrainArgs};

/// Self-supervised person detection from planar LiDAR: simulate, train, evaluate.
#[derive(Parser, Debug)]
#[command(name = "sixthsense", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate one simulated episode.
    Simulate(SimulateArgs),
    /// Fuse scans and build labels for every tick of an episode.
    Preprocess(PreprocessArgs),
    /// Train a model on a directory of episodes.
    Train(TrainArgs),
    /// Evaluate checkpoints against ground truth.
    Eval(EvalArgs),
    /// Run a checkpoint over an episode and write detections.
    Infer(InferArgs),
    /// Re-render plots from an evaluation directory.
    Plot(PlotArgs),
    /// Run the full synthetic experiment end to end.
    Reproduce(ReproduceArgs),
}

fn run(cli: Cli) -> sixthsense::Result<()> {
    match cli.command {
        Command::Simulate(a) => commands::simulate(&a).map(drop),
        Command::Preprocess(a) => commands::preprocess(&a).map(drop),
        Command::Train(a) => commands::train(&a).map(drop),
        Command::Eval(a) => commands::eval(&a).map(drop),
        Command::Infer(a) => commands::infer(&a).map(drop),
        Command::Plot(a) => commands::plot(&a),
        Command::Reproduce(a) => {
            let out = commands::reproduce(&a.config(), &a.out)?;
            for m in &out.models {
                let r = &m.evaluation.report;
                println!(
                    "{}: P80 {} E_o {} E_d {}",
                    m.plan.name,
                    fmt(r.p80, "%"),
                    fmt(r.mean_abs_orientation_error, " deg"),
                    fmt(r.mean_abs_distance_error, " cm")
                );
            }
            println!(
                "dummy: E_o {:.1} deg E_d {:.1} cm",
                out.dummy.mean_abs_orientation_error, out.dummy.mean_abs_distance_error
            );
            Ok(())
        }
    }
}

fn fmt(v: Option<f64>, unit: &str) -> String {
    v.map_or("n/a".into(), |v| format!("{v:.1}{unit}"))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("SIXTHSENSE_LOG", "info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
