//! `drowsy`: drowsiness timeseries extraction and analysis from face detections.
//!
//! Exit status: 0 success, 1 configuration or validation error, 2 input
//! parse error.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "drowsy", version, about = "Privacy-preserving drowsiness timeseries from face detections")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Csv,
    Jsonl,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ClassifierArg {
    Baseline,
    External,
}

#[derive(Args)]
pub struct Common {
    /// Pipeline configuration file (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Input path, `-` for standard input.
    #[arg(long = "in", value_name = "PATH")]
    input: PathBuf,
    /// Output path, `-` or omitted for standard output.
    #[arg(long = "out", value_name = "PATH")]
    output: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the per-frame pipeline over a detections stream and write the timeseries.
    Extract {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        format: Option<FormatArg>,
        #[arg(long, value_enum)]
        classifier: Option<ClassifierArg>,
        /// Command line of an external classifier process.
        #[arg(long)]
        backend_cmd: Option<String>,
        /// Emit unknown states for frames without a face instead of holding.
        #[arg(long)]
        no_hold: bool,
    },
    /// Estimate head pose from six image points:
    /// left eye, right eye, nose, mouth left, mouth right, chin (x y each).
    Pose {
        #[arg(num_args = 12, value_name = "X Y", allow_negative_numbers = true, required = true)]
        coords: Vec<f64>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Image width and height for the default camera.
        #[arg(long, num_args = 2, value_names = ["W", "H"])]
        image_size: Option<Vec<u32>>,
        /// Treat the chin as extrapolated from the other five points.
        #[arg(long)]
        derived_chin: bool,
    },
    /// Detect blinks, prolonged closures, yawns and nods in a timeseries.
    Events {
        #[command(flatten)]
        common: Common,
        /// Timeseries format; inferred from the file extension if omitted.
        #[arg(long, value_enum)]
        format: Option<FormatArg>,
    },
    /// Windowed statistics over a timeseries.
    Stats {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        format: Option<FormatArg>,
        #[arg(long, default_value_t = 60_000)]
        window_ms: u64,
        /// Defaults to the window length.
        #[arg(long)]
        stride_ms: Option<u64>,
    },
    /// Generate a detections stream and its ground truth from a scenario file.
    Synth {
        /// Scenario file (JSON).
        #[arg(long = "in", value_name = "PATH")]
        input: PathBuf,
        /// Detections output.
        #[arg(long = "out", value_name = "PATH")]
        output: PathBuf,
        /// Ground-truth output.
        #[arg(long, value_name = "PATH")]
        truth: Option<PathBuf>,
        /// Overrides the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Print a model comparison table from JSON lines of {model_name, accuracy, loss}.
    Report {
        #[arg(long = "in", value_name = "PATH")]
        input: PathBuf,
    },
    /// Score a classifier on a labeled PGM manifest (90/10 split).
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum)]
        classifier: Option<ClassifierArg>,
        #[arg(long)]
        backend_cmd: Option<String>,
    },
    /// Serve the built-in classifier over the line-delimited classifier protocol.
    ServeBaseline,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Extract {
            common,
            format,
            classifier,
            backend_cmd,
            no_hold,
        } => commands::extract(&common, format, classifier, backend_cmd, no_hold),
        Command::Pose {
            coords,
            config,
            image_size,
            derived_chin,
        } => commands::pose(&coords, config.as_deref(), image_size, derived_chin),
        Command::Events { common, format } => commands::events(&common, format),
        Command::Stats {
            common,
            format,
            window_ms,
            stride_ms,
        } => commands::stats(&common, format, window_ms, stride_ms.unwrap_or(window_ms)),
        Command::Synth {
            input,
            output,
            truth,
            seed,
        } => commands::synth(&input, &output, truth.as_deref(), seed),
        Command::Report { input } => commands::report(&input),
        Command::Evaluate {
            common,
            seed,
            classifier,
            backend_cmd,
        } => commands::evaluate(&common, seed, classifier, backend_cmd),
        Command::ServeBaseline => commands::serve_baseline(),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("drowsy: {e}");
            ExitCode::from(e.code())
        }
    }
}
