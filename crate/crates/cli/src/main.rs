use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fvv_cli::commands::{cmd_decode, cmd_encode, cmd_metrics, cmd_render, cmd_synth, Common};
use fvv_cli::Result;

#[derive(Parser)]
#[command(name = "fvv", version, about = "Streaming free-viewpoint video codec for Gaussian-splat scenes")]
struct Cli {
    #[command(flatten)]
    common: CommonArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// `key = value` config file (synth keys for `synth`, training keys otherwise).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Training hyperparameter preset.
    #[arg(long, global = true, value_parser = ["a", "b"])]
    preset: Option<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Limit the number of frames generated, encoded or measured.
    #[arg(long, global = true)]
    frames: Option<usize>,
    /// Write PSNR and rate charts next to the metrics CSV.
    #[arg(long, global = true)]
    plots: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene bundle.
    Synth {
        #[arg(long)]
        out: PathBuf,
    },
    /// Train and write a stream: frame-0 cloud plus one packet per frame.
    Encode {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Reconstruct one frame's cloud.
    Decode {
        #[arg(long)]
        stream: PathBuf,
        #[arg(long)]
        frame: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render one frame from a stream camera to PNG.
    Render {
        #[arg(long)]
        stream: PathBuf,
        #[arg(long)]
        frame: usize,
        /// Training view index or `test` (default: test view if present).
        #[arg(long)]
        camera: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-frame quality, size and timing of a decoded stream as CSV.
    Metrics {
        #[arg(long)]
        stream: PathBuf,
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<()> {
    let c = cli.common;
    let common = Common { config: c.config, preset: c.preset, seed: c.seed, frames: c.frames, plots: c.plots };
    match cli.command {
        Command::Synth { out } => cmd_synth(&common, &out),
        Command::Encode { scene, out } => cmd_encode(&common, &scene, &out),
        Command::Decode { stream, frame, out } => cmd_decode(&stream, frame, &out),
        Command::Render { stream, frame, camera, out } => cmd_render(&stream, frame, camera.as_deref(), &out),
        Command::Metrics { stream, scene, out } => cmd_metrics(&common, &stream, &scene, &out).map(|_| ()),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error[{}]: {msg}", e.class());
            ExitCode::from(2)
        }
    }
}
