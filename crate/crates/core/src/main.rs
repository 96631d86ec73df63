use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use kplift::config::Config;
use kplift::pipeline::{self, EvaluateInputs, LiftStage, RunManifest};
use kplift::Result;

#[derive(Parser)]
#[command(name = "kplift", version, about = "Lift 2D keypoint motion to multi-view and 3D")]
struct Cli {
    /// TOML configuration; defaults to the desk preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads for parallel stages.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum StageArg {
    Sds,
    Sampling,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with a train/test camera split.
    Simulate,
    /// Train the single-view denoiser.
    TrainSv {
        #[arg(long)]
        dataset: PathBuf,
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Train the multi-view denoiser.
    TrainMv {
        #[arg(long)]
        dataset: PathBuf,
        /// Single-view checkpoint to initialize from, or multi-view one to resume.
        #[arg(long)]
        from: Option<PathBuf>,
    },
    /// Lift a single-view sequence to a multi-view bundle.
    Lift {
        #[arg(long)]
        motion: PathBuf,
        #[arg(long)]
        camera: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum)]
        stage: Option<StageArg>,
        /// Left and right hip indices, e.g. `11,12`.
        #[arg(long, value_parser = parse_pair)]
        hips: Option<(usize, usize)>,
        #[arg(long)]
        object_canonical: Option<PathBuf>,
    },
    /// Triangulate a bundle (and fit the object pose when present).
    Reconstruct {
        #[arg(long)]
        bundle: PathBuf,
    },
    /// Fit a mesh pose to a sequence of silhouette masks.
    FitObjectMask {
        #[arg(long)]
        mesh: PathBuf,
        /// Camera file providing the intrinsics.
        #[arg(long)]
        camera: PathBuf,
        /// Mask files in frame order.
        #[arg(long = "mask", required = true)]
        masks: Vec<PathBuf>,
    },
    /// Score predictions against ground truth.
    Evaluate {
        #[arg(long, required = true)]
        pred: Vec<PathBuf>,
        #[arg(long, required = true)]
        gt: Vec<PathBuf>,
        #[arg(long)]
        pred_object: Vec<PathBuf>,
        #[arg(long)]
        gt_object: Vec<PathBuf>,
        #[arg(long, value_parser = parse_pair)]
        hips: Option<(usize, usize)>,
    },
}

fn parse_pair(s: &str) -> std::result::Result<(usize, usize), String> {
    let (a, b) = s.split_once(',').ok_or("expected two comma-separated indices")?;
    let p = |v: &str| v.trim().parse::<usize>().map_err(|e| e.to_string());
    Ok((p(a)?, p(b)?))
}

fn load_config(cli: &Cli) -> Result<Config> {
    let mut cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(t) = cli.threads {
        cfg.threads = t;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn summary(m: &RunManifest, out: &Path) {
    println!("{}: {} artifacts in {}", m.command, m.artifacts.len(), out.display());
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    let out = &cli.out;
    match &cli.command {
        Command::Simulate => summary(&pipeline::simulate(&cfg, out)?, out),
        Command::TrainSv { dataset, resume } => {
            let r = pipeline::train_sv(&cfg, dataset, resume.as_deref(), out)?;
            summary(&r.manifest, out);
            if let Some(l) = r.losses.last() {
                println!("final loss {l:.6}, best checkpoint at step {}", r.best_step);
            }
        }
        Command::TrainMv { dataset, from } => {
            let r = pipeline::train_mv(&cfg, dataset, from.as_deref(), out)?;
            summary(&r.manifest, out);
            if let Some(l) = r.losses.last() {
                println!("final loss {l:.6}, best checkpoint at step {}", r.best_step);
            }
        }
        Command::Lift {
            motion,
            camera,
            checkpoint,
            stage,
            hips,
            object_canonical,
        } => {
            let stage = stage.map(|s| match s {
                StageArg::Sds => LiftStage::Sds,
                StageArg::Sampling => LiftStage::Sampling,
            });
            let m = pipeline::lift(&cfg, motion, camera, checkpoint, stage, *hips, object_canonical.as_deref(), out)?;
            summary(&m, out);
        }
        Command::Reconstruct { bundle } => summary(&pipeline::reconstruct(&cfg, bundle, out)?, out),
        Command::FitObjectMask { mesh, camera, masks } => {
            summary(&pipeline::fit_object_mask(&cfg, mesh, masks, camera, out)?, out)
        }
        Command::Evaluate {
            pred,
            gt,
            pred_object,
            gt_object,
            hips,
        } => {
            let inputs = EvaluateInputs {
                pred: pred.clone(),
                gt: gt.clone(),
                pred_object: pred_object.clone(),
                gt_object: gt_object.clone(),
                hips: *hips,
            };
            let report = pipeline::evaluate(&cfg, &inputs, out)?;
            print!("{}", report.to_csv());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
