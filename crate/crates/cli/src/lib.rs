//! Pipeline commands behind the `liqsolve` binary.

pub mod config;

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use liqsolve::grid::{self, GridError, ValuePolicyGrid};
use liqsolve::quantizer::{self, QuantizeError, CACHE_DIR_ENV};
use liqsolve::simulator::{self, SimError, Session};
use liqsolve::solver::{self, SolverConfig, SolverError};
use liqsolve::stats::{self, Report, StatsError};
use thiserror::Error;

pub use config::{parse_config, ConfigError, RunConfig};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Config { path: PathBuf, source: ConfigError },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Quantizer(#[from] QuantizeError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Simulation(#[from] SimError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error("{0}")]
    Mismatch(String),
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    /// Short category used in the one-line error report.
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config { .. } => "config",
            CliError::Io { .. } => "io",
            CliError::Quantizer(_) => "quantizer",
            CliError::Grid(_) => "grid",
            CliError::Solver(_) => "solver",
            CliError::Simulation(_) => "simulation",
            CliError::Stats(_) => "stats",
            CliError::Mismatch(_) => "mismatch",
            CliError::Usage(_) => "usage",
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(io_err(path))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(io_err(path))
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse_config(&text).map_err(|source| CliError::Config {
        path: path.to_path_buf(),
        source,
    })
}

/// Quantizer cache directory: environment, then config, then the current
/// directory.
pub fn quant_dir(cfg: &RunConfig) -> PathBuf {
    std::env::var_os(CACHE_DIR_ENV)
        .map(PathBuf::from)
        .or_else(|| cfg.quant_dir.clone())
        .unwrap_or_else(|| PathBuf::from("."))
}

pub fn solver_config(cfg: &RunConfig) -> Result<SolverConfig> {
    let dir = quant_dir(cfg);
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    Ok(SolverConfig {
        spec: cfg.spec,
        params: cfg.params,
        quantizer: quantizer::load_or_build(&dir, cfg.quant_points)?,
        trade_points: cfg.trade_points,
    })
}

pub fn cmd_quantize(n: usize, out: &Path) -> Result<()> {
    let g = quantizer::build(n, quantizer::DEFAULT_TOL, quantizer::DEFAULT_MAX_ITER)?;
    let mut w = create(out)?;
    g.write_to(&mut w).and_then(|_| w.flush()).map_err(io_err(out))
}

pub fn cmd_solve(config: &Path, out: &Path) -> Result<()> {
    let cfg = load_config(config)?;
    let grid = solver::solve(&solver_config(&cfg)?)?;
    let mut w = create(out)?;
    grid.write_to(&mut w).and_then(|_| w.flush()).map_err(io_err(out))
}

/// Where simulated prices come from.
#[derive(Debug, Clone, PartialEq)]
pub enum PathInput {
    /// Read quotes from a CSV file.
    File(PathBuf),
    /// Simulate this many paths.
    Generate(usize),
    /// Simulate the number of paths in the config.
    FromConfig,
}

pub fn cmd_simulate(
    grid_path: &Path,
    config: &Path,
    input: &PathInput,
    seed: Option<u64>,
    out: &Path,
    paths_out: Option<&Path>,
) -> Result<()> {
    let cfg = load_config(config)?;
    let expected = grid::param_hash(&cfg.spec, &cfg.params);
    let found = grid::read_hash(open(grid_path)?)?;
    if found != expected {
        return Err(CliError::Mismatch(format!(
            "{} was solved with different parameters than {} (hash {found} vs {expected})",
            grid_path.display(),
            config.display()
        )));
    }
    let grid = ValuePolicyGrid::read_from(open(grid_path)?)?;
    let seed = seed.unwrap_or(cfg.seed);
    let m = cfg.spec.m;
    let paths = match input {
        PathInput::File(p) => {
            let seconds = cfg.session_seconds.ok_or_else(|| {
                CliError::Usage("reading quotes needs 'session_seconds' in the config".into())
            })?;
            let start = cfg.session_start.as_deref().and_then(simulator::parse_timestamp);
            vec![simulator::load_paths(open(p)?, m, Session { start, seconds })?]
        }
        PathInput::Generate(q) => simulator::gen_paths(*q, seed, &cfg.params, cfg.initial.price, m),
        PathInput::FromConfig => simulator::gen_paths(cfg.paths, seed, &cfg.params, cfg.initial.price, m),
    };
    if let Some(po) = paths_out {
        let mut w = create(po)?;
        simulator::write_paths(&paths, cfg.params.horizon, &mut w)?;
        w.flush().map_err(io_err(po))?;
    }
    let records = simulator::execute_all(&grid, &paths, cfg.initial)?;
    let mut w = create(out)?;
    simulator::write_records(&records, &mut w)?;
    w.flush().map_err(io_err(out))
}

/// Writes the report to `out` and, next to it, per-strategy performance
/// histograms (`<out>.<strategy>.hist.csv`) and trade count histograms
/// (`<out>.<strategy>.trades.csv`).
pub fn cmd_stats(records: &Path, out: &Path, bins: usize) -> Result<Vec<PathBuf>> {
    let rows = simulator::read_records(open(records)?)?;
    let report = Report::from_rows(&rows)?;
    fs::write(out, report.render()).map_err(io_err(out))?;
    let mut written = vec![out.to_path_buf()];
    for s in [
        simulator::Strategy::Naive,
        simulator::Strategy::Uniform,
        simulator::Strategy::Optimal,
    ] {
        let mine: Vec<_> = rows.iter().filter(|r| r.strategy == s).collect();
        let perf: Vec<f64> = mine.iter().map(|r| r.performance).collect();
        let counts: Vec<usize> = mine.iter().map(|r| r.num_trades).collect();
        let base = out.as_os_str().to_string_lossy();
        let hist = PathBuf::from(format!("{base}.{}.hist.csv", s.as_str()));
        fs::write(&hist, stats::histogram_csv(&stats::histogram(&perf, bins))).map_err(io_err(&hist))?;
        let trades = PathBuf::from(format!("{base}.{}.trades.csv", s.as_str()));
        fs::write(&trades, stats::trade_count_csv(&stats::trade_count_histogram(&counts)))
            .map_err(io_err(&trades))?;
        written.push(hist);
        written.push(trades);
    }
    Ok(written)
}
