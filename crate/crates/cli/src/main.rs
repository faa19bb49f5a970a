use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use liqsolve_cli::{cmd_quantize, cmd_simulate, cmd_solve, cmd_stats, CliError, PathInput};

#[derive(Parser)]
#[command(name = "liqsolve", version, about = "Optimal liquidation solver and backtester")]
struct Cli {
    /// Maximum number of worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build an optimal quantizer of the standard normal law.
    Quantize {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Solve the value and policy grids.
    Solve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the optimal policy and the benchmarks along price paths.
    Simulate {
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// Quotes CSV (`timestamp,bid,ask` or `timestamp,price`).
        #[arg(long, conflicts_with = "gen")]
        paths: Option<PathBuf>,
        /// Number of simulated paths (defaults to `paths` in the config).
        #[arg(long)]
        gen: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// Also write the price paths.
        #[arg(long)]
        paths_out: Option<PathBuf>,
    },
    /// Summarize execution records.
    Stats {
        #[arg(long)]
        records: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 50)]
        bins: usize,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(t) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    match cli.command {
        Command::Quantize { n, out } => cmd_quantize(n, &out),
        Command::Solve { config, out } => cmd_solve(&config, &out),
        Command::Simulate {
            grid,
            config,
            paths,
            gen,
            seed,
            out,
            paths_out,
        } => {
            let input = match (paths, gen) {
                (Some(p), _) => PathInput::File(p),
                (None, Some(q)) => PathInput::Generate(q),
                (None, None) => PathInput::FromConfig,
            };
            cmd_simulate(&grid, &config, &input, seed, &out, paths_out.as_deref())
        }
        Command::Stats { records, out, bins } => cmd_stats(&records, &out, bins).map(|_| ()),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error\t{}\t{msg}", e.kind());
            ExitCode::FAILURE
        }
    }
}
