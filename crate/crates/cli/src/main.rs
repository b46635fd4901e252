//! `atomdet` — simulate, calibrate, detect, bench, and model.

mod commands;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use commands::CliError;

#[derive(Parser)]
#[command(
    name = "atomdet",
    version,
    about = "Projection-based occupancy detection for tweezer atom arrays"
)]
struct Cli {
    /// Emit errors as JSON on the error stream.
    #[arg(long, global = true)]
    json_errors: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render synthetic fluorescence frames with known ground truth.
    Simulate(commands::SimulateArgs),
    /// Fit a calibration profile from exemplary frames.
    Calibrate(commands::CalibrateArgs),
    /// Reconstruct per-site emissions and occupancy for one frame.
    Detect(commands::DetectArgs),
    /// Time the reconstruction hot path over a range of array sizes.
    Bench(commands::BenchArgs),
    /// Evaluate the dataflow-accelerator latency model.
    Pipeline(commands::PipelineArgs),
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };

    let json_errors = cli.json_errors;
    let outcome = match cli.command {
        Command::Simulate(args) => commands::simulate(args),
        Command::Calibrate(args) => commands::calibrate(args),
        Command::Detect(args) => commands::detect(args),
        Command::Bench(args) => commands::bench(args),
        Command::Pipeline(args) => commands::pipeline(args),
    };
    if let Err(err) = outcome {
        err.report(json_errors);
        std::process::exit(err.exit_code());
    }
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Domain { .. } => 2,
        }
    }

    fn report(&self, json: bool) {
        let (stage, message) = match self {
            CliError::Usage(message) => (None, message),
            CliError::Domain { stage, message } => (stage.as_deref(), message),
        };
        if json {
            let body = serde_json::json!({
                "error": { "message": message, "stage": stage }
            });
            eprintln!("{body}");
        } else {
            eprintln!("error: {message}");
        }
    }
}
