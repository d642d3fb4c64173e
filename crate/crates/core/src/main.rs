use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use sdm_core::harness::{cmd_eval, cmd_generate, cmd_sweep, cmd_train, Overrides, RunConfig};
use sdm_core::Result;

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

/// Rumor-source detection on hypergraphs.
#[derive(Parser)]
#[command(name = "sdm", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate cascades on a hypergraph and write a dataset directory.
    Generate(Common),
    /// Train on a dataset directory and write a checkpoint and log.
    Train(Common),
    /// Score the held-out cascades of a training run.
    Eval(Common),
    /// Generate, train and evaluate over a coverage × interval grid.
    Sweep(Common),
}

#[derive(Args)]
struct Common {
    /// JSON config file; command-line flags take precedence over it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Root seed for every random stream.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (files in it are never overwritten).
    #[arg(long)]
    out: PathBuf,
    /// Also score the Jordan-center baseline.
    #[arg(long)]
    baseline: bool,
    /// Decision threshold on source scores.
    #[arg(long)]
    threshold: Option<f64>,
    /// Worker threads.
    #[arg(long)]
    jobs: Option<usize>,
    /// Dataset directory (train, eval).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Training run directory (eval).
    #[arg(long)]
    run: Option<PathBuf>,
}

fn run(cli: Cli) -> Result<()> {
    let (common, which) = match cli.command {
        Command::Generate(c) => (c, "generate"),
        Command::Train(c) => (c, "train"),
        Command::Eval(c) => (c, "eval"),
        Command::Sweep(c) => (c, "sweep"),
    };
    let overrides = Overrides {
        seed: common.seed,
        threshold: common.threshold,
        baseline: common.baseline,
        jobs: common.jobs,
        data: common.data,
        run: common.run,
    };
    let cfg = RunConfig::load(common.config.as_deref(), &overrides)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .expect("thread pool");
    let out = common.out;
    pool.install(|| match which {
        "generate" => cmd_generate(&cfg, &out).map(drop),
        "train" => cmd_train(&cfg, &out).map(drop),
        "eval" => {
            let report = cmd_eval(&cfg, &out)?;
            for a in &report.aggregates {
                println!(
                    "{}: F {:.4} ± {:.4}, AUC {:.4}, ACC {:.4} over {} cascades",
                    a.method, a.f_score.mean, a.f_score.std, a.auc.mean, a.acc.mean, a.count
                );
            }
            Ok(())
        }
        _ => cmd_sweep(&cfg, &out).map(drop),
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SDM_LOG", "info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
