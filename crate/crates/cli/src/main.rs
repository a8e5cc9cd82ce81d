//! `viewpatch`: sample viewpoints, optimize a patch, evaluate, report.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use viewpatch::pipeline::{Pipeline, Resume, RunConfig};
use viewpatch::Error;

#[derive(Parser)]
#[command(name = "viewpatch", version, about = "Multi-view adversarial patch pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory shared by all stages.
    #[arg(long)]
    out: PathBuf,
    /// Override the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the configured worker count (0 = one per core).
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate, filter and split candidate viewpoints.
    Sample(Common),
    /// Run the single-view baseline and the texture and opacity stages.
    Optimize {
        #[command(flatten)]
        common: Common,
        /// Start from the existing stage-1 checkpoint.
        #[arg(long)]
        resume_stage2: bool,
    },
    /// Compute ASR rows, the opacity sweep and navigation metrics.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Evaluate the unpatched scene only.
        #[arg(long)]
        clean_only: bool,
        /// Force the opacity sweep on.
        #[arg(long, conflicts_with = "no_opacity_sweep")]
        opacity_sweep: bool,
        /// Force the opacity sweep off.
        #[arg(long)]
        no_opacity_sweep: bool,
    },
    /// Write plain-text and JSON summaries of the evaluation.
    Report(Common),
    /// All stages in order.
    Run(Common),
}

enum Failure {
    Config(String),
    Precondition(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_config() {
            Failure::Config(e.to_string())
        } else {
            Failure::Precondition(e.to_string())
        }
    }
}

fn load(common: &Common, tweak: impl FnOnce(&mut RunConfig)) -> Result<Pipeline, Failure> {
    let text = fs::read_to_string(&common.config)
        .map_err(|e| Failure::Config(format!("{}: {e}", common.config.display())))?;
    let mut config = RunConfig::from_toml(&text)?;
    if let Some(s) = common.seed {
        config.seed = s;
    }
    if let Some(w) = common.workers {
        config.workers = w;
    }
    tweak(&mut config);
    let base = common.config.parent().unwrap_or(Path::new("."));
    let pipeline = Pipeline::new(config, base)?;
    let workers = pipeline.config().workers;
    if workers > 0 {
        // Fails only when a pool already exists, which is harmless here.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(workers).build_global();
    }
    log::info!("config hash {}", pipeline.stamp().config_hash);
    Ok(pipeline)
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Sample(c) => {
            let p = load(&c, |_| {})?;
            let s = p.sample(&c.out)?;
            println!(
                "{} candidates, {} retained, {} train, {} test",
                s.n_candidates,
                s.retained.len(),
                s.train.len(),
                s.test.len()
            );
        }
        Command::Optimize { common, resume_stage2 } => {
            let p = load(&common, |_| {})?;
            let resume = if resume_stage2 { Resume::Stage2 } else { Resume::Start };
            p.optimize(&common.out, resume)?;
            println!("checkpoints written to {}", common.out.display());
        }
        Command::Evaluate {
            common,
            clean_only,
            opacity_sweep,
            no_opacity_sweep,
        } => {
            let p = load(&common, |c| {
                if opacity_sweep {
                    c.evaluation.opacity_sweep = true;
                }
                if no_opacity_sweep {
                    c.evaluation.opacity_sweep = false;
                }
            })?;
            let r = p.evaluate(&common.out, clean_only)?;
            print!("{}", r.to_text());
        }
        Command::Report(c) => {
            let p = load(&c, |_| {})?;
            print!("{}", p.report(&c.out)?.to_text());
        }
        Command::Run(c) => {
            let p = load(&c, |_| {})?;
            p.sample(&c.out)?;
            p.optimize(&c.out, Resume::Start)?;
            p.evaluate(&c.out, false)?;
            print!("{}", p.report(&c.out)?.to_text());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("configuration error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Precondition(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(3)
        }
    }
}
