//! `shelfalign`: product detection and planogram compliance from the command line.
//!
//! Exit codes: 0 on success, 1 on internal failure, 2 on invalid input or usage.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{open_unit, positive, RunConfig};

#[derive(Debug)]
pub enum CliError {
    /// Bad arguments or unreadable, malformed input.
    Input(String),
    Internal(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) => 2,
            CliError::Internal(_) => 1,
        }
    }

    pub fn internal(e: impl std::fmt::Display) -> Self {
        CliError::Internal(e.to_string())
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Input(m) | CliError::Internal(m) => f.write_str(m),
        }
    }
}

impl From<shelfalign::Error> for CliError {
    fn from(e: shelfalign::Error) -> Self {
        match e {
            shelfalign::Error::Constraint(_) => CliError::Internal(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "shelfalign", version, about = "Shelf product detection and planogram compliance")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Detect products once at full strictness and write detections.json.
    Detect(DetectArgs),
    /// Run the iterative compliance search against a reference planogram.
    Comply(ComplyArgs),
    /// Score predictions against ground truth and write metrics.json.
    Eval(EvalArgs),
    /// Generate a synthetic shelf with ground truth and model images.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
struct ConfigArgs {
    /// JSON run configuration.
    #[arg(long, env = "SHELFALIGN_CONFIG")]
    config: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PipelineArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Factor applied to alpha after each iteration.
    #[arg(long, value_parser = open_unit)]
    alpha_decay: Option<f64>,
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
    max_iters: Option<u32>,
    /// Vote kernel standard deviation in pixels.
    #[arg(long, value_parser = positive)]
    sigma: Option<f64>,
    /// Non-maximum suppression IoU threshold.
    #[arg(long, value_parser = open_unit)]
    iou_thresh: Option<f64>,
    #[arg(long, overrides_with = "no_overlay")]
    overlay: bool,
    #[arg(long, overrides_with = "overlay")]
    no_overlay: bool,
    /// Write vote matrices as PNG files under <out>/votes.
    #[arg(long)]
    dump_votes: bool,
}

impl PipelineArgs {
    fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut c = RunConfig::load(self.config.config.as_deref())?;
        if let Some(v) = self.alpha_decay {
            c.search.alpha_decay = v;
        }
        if let Some(v) = self.max_iters {
            c.search.max_iterations = v as usize;
        }
        if let Some(v) = self.sigma {
            c.search.sigma = v;
        }
        if let Some(v) = self.iou_thresh {
            c.search.nms_overlap = v;
        }
        if self.overlay {
            c.overlay = true;
        }
        if self.no_overlay {
            c.overlay = false;
        }
        if self.dump_votes {
            c.dump_votes = true;
        }
        c.search.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Args)]
struct DetectArgs {
    #[arg(long)]
    shelf: PathBuf,
    /// Reference planogram; restricts detection to its products.
    #[arg(long)]
    planogram: Option<PathBuf>,
    /// Directory of model images named <id>.png or <id>.jpg.
    #[arg(long)]
    models_dir: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    pipeline: PipelineArgs,
}

#[derive(Debug, Args)]
struct ComplyArgs {
    #[arg(long)]
    shelf: PathBuf,
    #[arg(long)]
    planogram: PathBuf,
    /// Model directory for planogram entries without an image path.
    #[arg(long)]
    models_dir: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    pipeline: PipelineArgs,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Ground-truth file; repeat once per shelf.
    #[arg(long, required = true)]
    gt: Vec<PathBuf>,
    /// Prediction for the ground truth at the same position: a comply report,
    /// a detections file, or a ground-truth file.
    #[arg(long, required = true)]
    pred: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// IoU a detection must exceed to match a ground-truth box.
    #[arg(long, value_parser = open_unit)]
    iou_thresh: Option<f64>,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    /// Shelf layout and perturbations as JSON; defaults to a five-product layout.
    #[arg(long, conflicts_with = "scenario")]
    spec: Option<PathBuf>,
    /// Benchmark scenario: compliant, foreign_insert, removed_item or empty_gap.
    #[arg(long)]
    scenario: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    config: ConfigArgs,
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Detect(a) => {
            let config = a.pipeline.resolve()?;
            commands::detect(&a.shelf, a.planogram.as_deref(), a.models_dir.as_deref(), &a.out, &config)
        }
        Command::Comply(a) => {
            let config = a.pipeline.resolve()?;
            commands::comply(&a.shelf, &a.planogram, a.models_dir.as_deref(), &a.out, &config)
        }
        Command::Eval(a) => {
            let mut config = RunConfig::load(a.config.config.as_deref())?;
            if let Some(v) = a.iou_thresh {
                config.eval_iou = v;
            }
            commands::eval(&a.gt, &a.pred, &a.out, &config)
        }
        Command::Synth(a) => {
            let mut config = RunConfig::load(a.config.config.as_deref())?;
            if let Some(s) = a.seed {
                config.seed = s;
            }
            commands::synth(a.spec.as_deref(), a.scenario.as_deref(), a.seed.is_some(), &a.out, &config)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("shelfalign: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
