use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use trajseg_cli::{cmd_eval, cmd_gen_data, cmd_gradcheck, cmd_infer, cmd_infer_all, cmd_train, Globals};
use trajseg_core::gradcheck_suite::MODULES;
use trajseg_core::model::Stage;

#[derive(Parser)]
#[command(name = "trajseg", version, about = "Trajectory-aware video reasoning segmentation")]
struct Cli {
    /// Directory every other path is relative to.
    #[arg(long, global = true, default_value = ".")]
    root: PathBuf,
    /// Run configuration (key = value lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads; falls back to TRAJSEG_THREADS, then the config.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic train/val/stills dataset.
    GenData {
        /// Replace an existing non-empty dataset directory.
        #[arg(long)]
        force: bool,
    },
    /// Train stage 1 (stills) or stage 2 (videos).
    Train {
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
        stage: u8,
        /// Starting checkpoint (stage 2 defaults to the stage-1 checkpoint if present).
        #[arg(long)]
        init: Option<PathBuf>,
    },
    /// Segment a video from a text instruction.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        /// A video directory, or with --all a split directory of videos.
        #[arg(long)]
        video: PathBuf,
        /// Defaults to a grounding prompt built from the video's manifest.
        #[arg(long)]
        instruction: Option<String>,
        /// Number of uniformly sampled key frames.
        #[arg(long)]
        kf: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        all: bool,
    },
    /// Score predicted masks against ground truth.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Where report.csv and report.txt go; defaults to --pred.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference gradient checks for one module.
    Gradcheck {
        #[arg(long, value_parser = module_name)]
        module: String,
        /// Scale analytic gradients by 1.5 (negative control).
        #[arg(long, hide = true)]
        corrupt_gradients: bool,
    },
}

fn module_name(s: &str) -> Result<String, String> {
    if s == "all" || MODULES.contains(&s) {
        Ok(s.to_string())
    } else {
        Err(format!("expected one of {} or all", MODULES.join(", ")))
    }
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    let g = Globals {
        root: cli.root,
        config: cli.config,
        threads: cli.threads,
        seed: cli.seed,
    };
    match cli.cmd {
        Command::GenData { force } => {
            let s = cmd_gen_data(&g, force)?;
            let counts: Vec<String> = s.counts.iter().map(|(n, c)| format!("{c} {n}")).collect();
            println!("wrote {} (seed {}) to {}", counts.join(", "), s.seed, s.dir.display());
        }
        Command::Train { stage, init } => {
            let stage = if stage == 1 { Stage::One } else { Stage::Two };
            let s = cmd_train(&g, stage, init.as_deref(), |line| eprintln!("{line}"))?;
            if let Some(p) = &s.resumed_from {
                println!("started from {}", p.display());
            }
            println!(
                "{} steps, final loss {}; checkpoint {}, loss curve {}",
                s.steps,
                s.final_loss.map_or("n/a".into(), |l| format!("{l:.4}")),
                s.checkpoint.display(),
                s.curve.display()
            );
        }
        Command::Infer {
            checkpoint,
            video,
            instruction,
            kf,
            out,
            all,
        } => {
            if all {
                if instruction.is_some() {
                    anyhow::bail!("--instruction cannot be combined with --all");
                }
                let done = cmd_infer_all(&g, &checkpoint, &video, kf, &out)?;
                println!("segmented {} videos into {}", done.len(), g.path(&out).display());
            } else {
                let s = cmd_infer(&g, &checkpoint, &video, instruction.as_deref(), kf, &out)?;
                println!("response: {}", s.response);
                println!(
                    "{} frames, key frames {:?}, target present in {}; masks in {}",
                    s.frames,
                    s.key_frames,
                    s.present,
                    s.out.display()
                );
            }
        }
        Command::Eval { pred, gt, out } => {
            let s = cmd_eval(&g, &pred, &gt, out.as_deref())?;
            print!("{}", s.table);
        }
        Command::Gradcheck {
            module,
            corrupt_gradients,
        } => {
            let s = cmd_gradcheck(&module, corrupt_gradients)?;
            print!("{}", s.table);
            println!("{} checks, {} failed", s.checks, s.failed);
            if s.failed > 0 {
                return Ok(ExitCode::FAILURE);
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
