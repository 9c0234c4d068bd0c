use std::path::{Path, PathBuf};
use std::process::ExitCode;

use car::commands::{self, Observation};
use car::config::Config;
use car::error::{CarError, Result};
use car::obj::write_obj;
use clap::{Args, Parser, Subcommand};

/// Coarse-to-fine clothed avatar reconstruction from front and back normal maps.
#[derive(Parser, Debug)]
#[command(name = "car", version)]
struct Cli {
    /// JSON configuration (see `car config-template`).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides every seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for parallel stages.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, short, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset.
    GenData,
    /// Train the canonical implicit model.
    TrainCanonical {
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Train the hyper-network on posed templates.
    TrainHypernet {
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Canonical inference, warp to pose, and normal refinement.
    Reconstruct(ReconstructArgs),
    /// Compare a predicted mesh with a ground-truth mesh.
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
    },
    /// Warp a canonical mesh into a pose.
    Repose {
        #[arg(long)]
        canonical: PathBuf,
        #[arg(long)]
        template: PathBuf,
        #[arg(long)]
        pose: PathBuf,
    },
    /// Print the default configuration.
    ConfigTemplate,
}

#[derive(Args, Debug)]
struct ReconstructArgs {
    /// Canonical model checkpoint.
    #[arg(long)]
    canonical: PathBuf,
    /// Hyper-network checkpoint; geometric initialisation without it.
    #[arg(long)]
    hypernet: Option<PathBuf>,
    #[arg(long, conflicts_with_all = ["front", "back", "template"])]
    dataset: Option<PathBuf>,
    #[arg(long)]
    subject: Option<usize>,
    /// Pose index with --dataset.
    #[arg(long = "pose-index", requires = "dataset")]
    pose_index: Option<usize>,
    #[arg(long, requires_all = ["back", "template", "pose"])]
    front: Option<PathBuf>,
    #[arg(long)]
    back: Option<PathBuf>,
    /// Template OBJ with its JSON sidecar next to it.
    #[arg(long)]
    template: Option<PathBuf>,
    /// Pose JSON with the loose-file inputs.
    #[arg(long)]
    pose: Option<PathBuf>,
}

fn out_dir(out: &Option<PathBuf>) -> &Path {
    out.as_deref().unwrap_or(Path::new("."))
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CarError::input(e.to_string()))?;
    }
    let mut cfg = Config::load(cli.config.as_deref())?;
    if let Some(s) = cli.seed {
        cfg = cfg.with_seed(s);
    }
    let seed = cli.seed.unwrap_or(0);
    let out = out_dir(&cli.out);
    match cli.command {
        Command::GenData => commands::gen_data(&cfg, out),
        Command::TrainCanonical { dataset } => {
            let p = commands::train_canonical(&cfg, &dataset, out)?;
            log::info!("wrote {}", p.display());
            Ok(())
        }
        Command::TrainHypernet { dataset } => {
            let p = commands::train_hypernet(&cfg, &dataset, out)?;
            log::info!("wrote {}", p.display());
            Ok(())
        }
        Command::Reconstruct(a) => {
            let obs = match (&a.dataset, &a.front) {
                (Some(d), _) => Observation::from_dataset(d, a.subject.unwrap_or(0), a.pose_index.unwrap_or(0))?,
                (None, Some(front)) => Observation::from_files(
                    front,
                    a.back.as_deref().expect("clap requires --back"),
                    a.template.as_deref().expect("clap requires --template"),
                    a.pose.as_deref().expect("clap requires --pose"),
                    cfg.reconstruct.frame_half_extent,
                )?,
                (None, None) => return Err(CarError::input("reconstruct needs --dataset or --front/--back/--template/--pose")),
            };
            let o = commands::reconstruct(&cfg, &obs, &a.canonical, a.hypernet.as_deref(), out)?;
            log::info!("wrote {}", o.refined.display());
            Ok(())
        }
        Command::Evaluate { pred, gt } => {
            let report = commands::evaluate(&cfg, &pred, &gt, seed)?;
            if let Some(dir) = &cli.out {
                std::fs::create_dir_all(dir).map_err(|e| CarError::io(dir, e))?;
                commands::write_metrics(&dir.join("metrics.json"), &report)?;
            }
            println!("{}", serde_json::to_string(&report).expect("report serializes"));
            Ok(())
        }
        Command::Repose { canonical, template, pose } => {
            let mesh = commands::repose(&canonical, &template, &pose)?;
            std::fs::create_dir_all(out).map_err(|e| CarError::io(out, e))?;
            write_obj(&out.join("reposed.obj"), &mesh)
        }
        Command::ConfigTemplate => {
            let text = serde_json::to_string_pretty(&Config::template()).expect("template serializes");
            match &cli.out {
                Some(dir) => {
                    std::fs::create_dir_all(dir).map_err(|e| CarError::io(dir, e))?;
                    let p = dir.join("config.json");
                    std::fs::write(&p, text + "\n").map_err(|e| CarError::io(&p, e))
                }
                None => {
                    println!("{text}");
                    Ok(())
                }
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = if cli.verbose { "debug" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
