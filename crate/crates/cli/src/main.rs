//! Command-line driver: each processing stage as a subcommand, plus a
//! `pipeline` command chaining them, all driven by one JSON configuration.
//!
//! Exit codes: 0 on success, 2 when the configuration or an input fails
//! validation, 1 when a stage fails mid-run.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use stereo_cdi::pipeline::{
    read_config, run_pipeline, stage_depth, stage_disparity, stage_preprocess, stage_rectify,
    stage_retrieve, stage_simulate, write_config, PipelineConfig,
};
use stereo_cdi::Result;

#[derive(Parser)]
#[command(
    name = "stereo-cdi",
    version,
    about = "Stereo lensless imaging toolkit: simulates dual-angle acquisitions, retrieves \
             real-space views, and reconstructs metric depth from their parallax"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Options shared by every stage-running subcommand.
#[derive(Args)]
struct StageArgs {
    /// JSON pipeline configuration; without it, the built-in amplitude
    /// protocol is used.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Overrides the configuration's top-level random seed.
    #[arg(long)]
    seed: Option<u64>,

    /// Overrides the configuration's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl StageArgs {
    fn effective_config(&self) -> Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(path) => read_config(path)?,
            None => PipelineConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.out_dir = out.clone();
        }
        Ok(cfg)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    /// Opaque sample, composite-detector acquisition, 19-degree protocol.
    Amplitude,
    /// Semi-transparent sample, direct views, 12-degree protocol.
    Phase,
}

#[derive(Args)]
struct ConfigArgs {
    /// Which protocol preset to write.
    #[arg(long, value_enum, default_value_t = ModeArg::Amplitude)]
    mode: ModeArg,

    /// Where to write the configuration file.
    #[arg(long)]
    path: PathBuf,

    /// Seed to store in the written configuration.
    #[arg(long)]
    seed: Option<u64>,

    /// Output directory to store in the written configuration.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Draw the two-plane sample and record the simulated acquisition.
    Simulate(StageArgs),
    /// Recombine exposures and isolate the per-view patterns.
    Preprocess(StageArgs),
    /// Invert the patterns into real-space views and register them.
    Retrieve(StageArgs),
    /// Row-align the two views from edge correspondences (phase arm).
    Rectify(StageArgs),
    /// Block-match the views into left/right disparity maps.
    Disparity(StageArgs),
    /// Triangulate disparities into a cloud and build surfaces.
    Depth(StageArgs),
    /// Run every stage in order and write the artifact manifest.
    Pipeline(StageArgs),
    /// Write a protocol preset as a configuration file to edit.
    Config(ConfigArgs),
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Pipeline(args) => {
            let cfg = args.effective_config()?;
            let summary = run_pipeline(&cfg)?;
            println!("stages completed: {}", summary.stages.join(", "));
            println!(
                "manifest {} lists {} files",
                summary.manifest_path.display(),
                summary.file_count
            );
            Ok(())
        }
        Command::Config(args) => {
            let mut cfg = match args.mode {
                ModeArg::Amplitude => PipelineConfig::amplitude_defaults(),
                ModeArg::Phase => PipelineConfig::phase_defaults(),
            };
            if let Some(seed) = args.seed {
                cfg.seed = seed;
            }
            if let Some(out) = args.out {
                cfg.out_dir = out;
            }
            cfg.validate()?;
            write_config(&args.path, &cfg)?;
            println!("wrote configuration to {}", args.path.display());
            Ok(())
        }
        Command::Simulate(args) => run_stage(&args, "simulate", stage_simulate),
        Command::Preprocess(args) => run_stage(&args, "preprocess", stage_preprocess),
        Command::Retrieve(args) => run_stage(&args, "retrieve", stage_retrieve),
        Command::Rectify(args) => run_stage(&args, "rectify", stage_rectify),
        Command::Disparity(args) => run_stage(&args, "disparity", stage_disparity),
        Command::Depth(args) => run_stage(&args, "depth", stage_depth),
    }
}

fn run_stage(
    args: &StageArgs,
    name: &'static str,
    stage: fn(&PipelineConfig) -> Result<()>,
) -> Result<()> {
    let cfg = args.effective_config()?;
    stage(&cfg).map_err(|e| e.in_stage(name))?;
    println!("stage {name} completed; artifacts under {}", cfg.out_dir.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
