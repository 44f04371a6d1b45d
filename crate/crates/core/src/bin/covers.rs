use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use covers_core::harness::{self, Method, RunConfig};

#[derive(Parser)]
#[command(name = "covers", about = "Continual RL with symmetric policy assignment")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every seed of a run config.
    Run {
        /// JSON run config; defaults apply to missing fields.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Overrides the config's seed list, e.g. `--seeds 0,1,2`.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        /// Overrides the config's method.
        #[arg(long)]
        method: Option<Method>,
    },
    /// Summarize a run directory and write summary.json.
    Score { dir: PathBuf },
    /// Write an SVG of reward curves and assignments for one or more runs.
    Plot {
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
        /// Defaults to `<first dir>/plot.svg`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    match real_main(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn real_main(cli: Cli) -> covers_core::Result<()> {
    match cli.command {
        Command::Run { config, out, seeds, method } => {
            let mut cfg = match config {
                Some(p) => RunConfig::load(&p)?,
                None => RunConfig::default(),
            };
            if let Some(s) = seeds {
                cfg.seeds = s;
            }
            if let Some(m) = method {
                cfg.method = m;
            }
            for r in harness::run(&cfg, &out)? {
                println!("seed {}: {} episodes, {} policies", r.seed, r.episodes, r.policies);
            }
        }
        Command::Score { dir } => {
            print!("{}", harness::render_summary(&harness::score(&dir)?));
        }
        Command::Plot { dirs, out } => {
            let out = out.unwrap_or_else(|| dirs[0].join("plot.svg"));
            let refs: Vec<&std::path::Path> = dirs.iter().map(PathBuf::as_path).collect();
            harness::plot(&refs, &out)?;
            println!("wrote {}", out.display());
        }
    }
    Ok(())
}
