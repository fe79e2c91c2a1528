//! `autolabel` command: one subcommand per pipeline stage, all driven by a
//! single JSON configuration.

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use autolabel::pipeline::{self, ModelKind, PipelineConfig, Split};
use autolabel::{Error, Result};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "autolabel",
    version,
    about = "Self-supervised 3D auto-labeling with a GP teacher and distilled student"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Pipeline configuration (JSON). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the root seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the scene directory.
    #[arg(long, global = true)]
    scenes: Option<PathBuf>,
    /// Overrides the work directory.
    #[arg(long, global = true)]
    workdir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic scenes with ground truth.
    Synth {
        #[arg(long, default_value = "train")]
        split: String,
        /// Number of scenes; defaults to the configured count for the split.
        #[arg(long)]
        count: Option<usize>,
    },
    /// Propose objects in 3D and write unlabeled 2D annotations.
    Autolabel {
        #[arg(long, default_value = "train")]
        split: String,
    },
    /// Label a subset of training proposals from ground truth.
    SimulateHandLabels,
    /// Train the GP teacher on hand labels.
    TrainTeacher {
        /// Hand-label file; defaults to the work directory copy.
        #[arg(long)]
        hand_labels: Option<PathBuf>,
    },
    /// Write teacher soft labels for every training proposal.
    Label {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Distill the soft labels into the student.
    TrainStudent {
        /// Overrides the distillation loss (sse, kl, mse, mae, ce).
        #[arg(long)]
        loss: Option<String>,
    },
    /// Score detection and classification on the held-out scenes.
    Eval {
        #[arg(long, default_value = "student")]
        model: String,
    },
    /// Print the effective configuration.
    ShowConfig,
}

fn load_config(common: &Common) -> Result<PipelineConfig> {
    let mut cfg = match &common.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(dir) = &common.scenes {
        cfg.paths.scenes_dir = dir.clone();
    }
    if let Some(dir) = &common.workdir {
        cfg.paths.work_dir = dir.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = load_config(&cli.common)?;
    match cli.command {
        Command::Synth { split, count } => {
            let split: Split = split.parse()?;
            let n = count.unwrap_or(match split {
                Split::Train => cfg.train_scenes,
                Split::Test => cfg.test_scenes,
            });
            let ids = pipeline::synth_scenes(&cfg, split, n)?;
            println!(
                "wrote {} {} scenes to {}",
                ids.len(),
                split.name(),
                cfg.scene_dir(split).display()
            );
        }
        Command::Autolabel { split } => {
            let split: Split = split.parse()?;
            let n = pipeline::autolabel(&cfg, split)?;
            println!("wrote {n} annotations to {}", cfg.annotations_path(split).display());
        }
        Command::SimulateHandLabels => {
            let n = pipeline::simulate_hand_labels(&cfg)?;
            println!("wrote {n} hand labels to {}", cfg.hand_labels_path().display());
        }
        Command::TrainTeacher { hand_labels } => {
            let path = hand_labels.unwrap_or_else(|| cfg.hand_labels_path());
            let s = pipeline::train_teacher_stage(&cfg, &path)?;
            println!(
                "trained teacher on {} thumbnails, ELBO {:.3} -> {:.3}; checkpoint {}",
                s.examples,
                s.first,
                s.last,
                cfg.teacher_path().display()
            );
        }
        Command::Label { checkpoint } => {
            let path = checkpoint.unwrap_or_else(|| cfg.teacher_path());
            let n = pipeline::label_stage(&cfg, &path)?;
            println!("wrote {n} soft labels to {}", cfg.soft_labels_path().display());
        }
        Command::TrainStudent { loss } => {
            if let Some(kind) = loss {
                cfg.distill.loss_kind = kind.parse()?;
            }
            let s = pipeline::train_student_stage(&cfg)?;
            println!(
                "trained student on {} soft labels, loss {:.5} -> {:.5}; checkpoint {}",
                s.examples,
                s.first,
                s.last,
                cfg.student_path().display()
            );
        }
        Command::Eval { model } => {
            let model: ModelKind = model.parse()?;
            let report = pipeline::eval_stage(&cfg, model)?;
            print!("{}", report.render_table());
            let cal = &report.extensions.calibration;
            println!("ECE {:.3} over {} matched detections", cal.ece, cal.matched);
            println!("report {}", cfg.report_path(model).display());
        }
        Command::ShowConfig => {
            let text = serde_json::to_string_pretty(&cfg).map_err(Error::from)?;
            // A closed pipe (e.g. `| head`) is not an error worth reporting.
            let _ = writeln!(std::io::stdout(), "{text}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
