//! Command-line interface: configuration handling, content-addressed run
//! directories, pipeline commands, sweeps and static reports.

mod config;
mod pipeline;
mod report;
mod runs;
mod sweep;

use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

pub use self::config::{
    content_hash, extract_overrides, parse_value, set_dotted, DataConfig, EncoderSection, Paths, RunConfig,
    SweepConfig, OUT_ENV,
};
pub use self::pipeline::{comparison_rows, read_aggregate, ComparisonRow, DistillSummary, Pipeline, SplitArg, TaskArg};
pub use self::report::{bar_plot, line_plot, report};
pub use self::runs::{read_stage_manifest, ProducedFile, Stage, StageManifest, CONFIG_SNAPSHOT, FILES_MANIFEST};
pub use self::sweep::{sweep, variant_dirs, SweepKind, SweepRow, SWEEP_SUMMARY};
use crate::error::Result;

#[derive(Debug, Parser)]
#[command(
    name = "tinydistill",
    version,
    about = "Desk-scale distillation of masked-image-modeling encoders",
    after_help = "Any configuration value can be overridden with a dotted flag, e.g. \
                  --distill.lambda_recon=0.5 or --encoder.student.dim 16. \
                  TINYDISTILL_OUT overrides paths.output_root."
)]
pub struct Cli {
    /// JSON configuration file (partial files are merged over the defaults).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Recompute stages even when a completed run directory exists.
    #[arg(long, global = true)]
    pub force: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write synthetic speckle phantoms and a split manifest.
    Generate,
    /// Pretrain the teacher and record gradient traces and features.
    PretrainTeacher,
    /// Select a coreset from teacher features and traces.
    Curate,
    /// Distil the student on the coreset.
    Distill,
    /// Train a probe or segmentation head on the student and evaluate it.
    Adapt {
        #[arg(long, value_enum)]
        task: TaskArg,
        /// Also adapt a randomly initialised student and report deltas.
        #[arg(long)]
        compare_vanilla: bool,
    },
    /// Re-evaluate a trained head on a split.
    Evaluate {
        #[arg(long, value_enum)]
        task: TaskArg,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        /// Evaluate the from-scratch student's head instead.
        #[arg(long)]
        vanilla: bool,
    },
    /// Write plots and a Markdown summary for completed runs.
    Report {
        /// A run directory or a directory of runs (default: output root).
        dir: Option<PathBuf>,
    },
    /// Run an ablation, subset-size or strategy sweep.
    Sweep {
        #[arg(long, value_enum)]
        kind: SweepKind,
    },
    /// Print the effective configuration as JSON.
    ShowConfig,
}

/// Parses `args` (without the program name), runs the command and prints
/// the produced artifact location.
pub fn run(args: Vec<String>) -> Result<()> {
    let (rest, overrides) = extract_overrides(args)?;
    let cli = match Cli::try_parse_from(std::iter::once("tinydistill".to_string()).chain(rest)) {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return Ok(());
        }
        Err(e) => return Err(crate::Error::Config(e.to_string())),
    };
    let cfg = RunConfig::load(cli.config.as_deref(), &overrides)?;
    let p = Pipeline::new(cfg, cli.force)?;
    match cli.command {
        Command::Generate => println!("{}", p.generate()?.display()),
        Command::PretrainTeacher => println!("{}", p.pretrain_teacher()?.dir.display()),
        Command::Curate => println!("{}", p.curate()?.dir.display()),
        Command::Distill => println!("{}", p.distill()?.dir.display()),
        Command::Adapt { task, compare_vanilla } => {
            let (stage, r, vanilla) = p.adapt(task, compare_vanilla)?;
            match vanilla {
                Some(v) => println!(
                    "{}\t{} {:.4} (vanilla {:.4}, delta {:+.4})",
                    stage.dir.display(),
                    r.task.metric(),
                    r.aggregate,
                    v.aggregate,
                    r.aggregate - v.aggregate
                ),
                None => println!("{}\t{} {:.4}", stage.dir.display(), r.task.metric(), r.aggregate),
            }
        }
        Command::Evaluate { task, split, vanilla } => {
            let (path, r) = p.evaluate(task, split.into(), vanilla)?;
            println!("{}\t{} {:.4}", path.display(), r.task.metric(), r.aggregate);
        }
        Command::Report { dir } => {
            let dir = dir.unwrap_or_else(|| p.cfg.paths.output_root.clone());
            println!("{}", report(&dir)?.display());
        }
        Command::Sweep { kind } => println!("{}", sweep(&p.cfg, kind, p.force)?.dir.display()),
        Command::ShowConfig => println!("{}", p.cfg.to_json()),
    }
    Ok(())
}
