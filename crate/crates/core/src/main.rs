use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use bcdist::config::ExperimentConfig;
use bcdist::pipeline::{DepthSummary, Pipeline, ProviderKind};
use bcdist::Result;

/// Distance reconstruction from boundary wave data.
#[derive(Parser)]
#[command(name = "bcdist", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (TOML). Overrides --preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Preset::Desk)]
    preset: Preset,
    /// Content-addressed cache for datasets and operators.
    #[arg(long, global = true, default_value = ".bcdist-cache")]
    cache: PathBuf,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory (defaults to the one in the configuration).
    #[arg(long, global = true)]
    output: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Desk,
    Paper,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the Neumann-to-Dirichlet dataset.
    Simulate,
    /// Assemble the connecting operator from the dataset.
    Assemble,
    /// Estimate distance profiles.
    Distances {
        /// 1: first overlap, 2: half volume.
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
        method: Option<u8>,
        /// Use closed-form volumes instead of the data (unit speed only).
        #[arg(long)]
        exact_provider: bool,
    },
    /// Distance profiles from closed-form volumes on a fine radius grid.
    OracleDistances {
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
        method: Option<u8>,
    },
    /// Synthesize the control wave for one window and compare it with the indicator.
    Diagnose {
        /// Window such as `0.25` or `0.25|cone(0,0.3)`.
        #[arg(long)]
        tau: String,
        /// Write every n-th mesh node.
        #[arg(long, default_value_t = 2)]
        stride: usize,
    },
}

fn print_summaries(summaries: &[DepthSummary]) {
    println!(
        "{:>8} {:>8} {:>14} {:>14} {:>6} {:>6} {:>6}",
        "s", "entries", "max rel err", "mean rel err", "edge", "unbr", "failed"
    );
    for s in summaries {
        println!(
            "{:>8.4} {:>8} {:>14.4e} {:>14.4e} {:>6} {:>6} {:>6}",
            s.s, s.entries, s.max_rel_error, s.mean_rel_error, s.edge_interpolated, s.not_bracketed, s.failed
        );
    }
}

fn run(cli: Cli) -> Result<()> {
    let config = match &cli.common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::preset(match cli.common.preset {
            Preset::Desk => "desk",
            Preset::Paper => "paper",
        })?,
    };
    if let Some(n) = cli.common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| bcdist::Error::Config(format!("cannot start {n} threads: {e}")))?;
    }
    let out = cli.common.output.clone().unwrap_or_else(|| config.output_dir.clone());
    let default_method = config.distance.method;
    let pipeline = Pipeline::new(config, &cli.common.cache)?;
    log::info!("configuration hash {}", pipeline.config_hash());

    match cli.command {
        Command::Simulate => {
            let ds = pipeline.ensure_dataset()?;
            println!("dataset {} ({})", ds.path.display(), if ds.cache_hit { "cached" } else { "simulated" });
            println!("sha256 {}", ds.hash);
        }
        Command::Assemble => {
            let (op, art) = pipeline.ensure_operator()?;
            let r = op.symmetry_report();
            println!("operator {} ({})", art.path.display(), if art.cache_hit { "cached" } else { "assembled" });
            println!("basis functions {}", op.len());
            println!("coordinate asymmetry {:.3e}", r.coordinate_asymmetry);
            println!("weighted asymmetry {:.3e}", r.weighted_asymmetry);
            println!("weighted min eigenvalue {:.3e}", r.weighted_min_eigenvalue);
        }
        Command::Distances { method, exact_provider } => {
            let kind = if exact_provider { ProviderKind::Exact } else { ProviderKind::Estimated };
            let run = pipeline.run_distances(kind, method.unwrap_or(default_method), &out)?;
            print_summaries(&run.summaries);
            println!("wrote {} files to {}", run.files.len(), out.display());
        }
        Command::OracleDistances { method } => {
            let run = pipeline.run_distances(ProviderKind::Oracle, method.unwrap_or(default_method), &out)?;
            print_summaries(&run.summaries);
            println!("wrote {} files to {}", run.files.len(), out.display());
        }
        Command::Diagnose { tau, stride } => {
            let d = pipeline.diagnose(&tau, &out, stride)?;
            println!("tau {}", d.tau);
            println!("m_hat {:.6}", d.m_hat);
            if let Some(v) = d.exact_volume {
                println!("exact volume {v:.6}");
            }
            println!("(u, 1_M) {:.6}", d.indicator_pairing);
            println!("relative misfit {:.4}", d.relative_misfit);
            println!("energy outside M {:.4}", d.outside_energy);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
