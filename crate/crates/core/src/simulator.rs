//! Price paths (simulated or read from quotes) and execution of the optimal
//! policy and the two benchmark schedules along them.

use std::io::{Read, Write};

use chrono::{DateTime, NaiveDateTime, Utc};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::grid::ValuePolicyGrid;
use crate::market_model::{MarketParams, State};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("price file line {line}: {reason}")]
    BadRow { line: u64, reason: String },
    #[error("price file: {0}")]
    Format(String),
    #[error("no observation at or before the session start")]
    NoObservationBeforeStart,
    #[error("no observation inside the session window")]
    EmptyWindow,
    #[error("path {id} does not match the grid: {reason}")]
    Mismatch { id: u64, reason: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, SimError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PathSource {
    Simulated,
    Ingested,
}

/// Prices at the solver dates `t_0..t_m`.
#[derive(Debug, Clone, PartialEq)]
pub struct PricePath {
    pub id: u64,
    pub prices: Vec<f64>,
    pub source: PathSource,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Strategy {
    Naive,
    Uniform,
    Optimal,
}

impl Strategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Naive => "naive",
            Strategy::Uniform => "uniform",
            Strategy::Optimal => "optimal",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "naive" => Some(Strategy::Naive),
            "uniform" => Some(Strategy::Uniform),
            "optimal" => Some(Strategy::Optimal),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Trade {
    pub step: usize,
    pub time: f64,
    /// Shares traded, negative for a sale.
    pub shares: f64,
    /// Executed impact multiplier `f(e, theta)`.
    pub multiplier: f64,
    /// Change of cash including the fee.
    pub cash_delta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExecutionRecord {
    pub path_id: u64,
    pub strategy: Strategy,
    pub trades: Vec<Trade>,
    pub terminal: State,
    /// Fee-adjusted liquidation value at the horizon over initial wealth.
    pub performance: f64,
    /// Utility of the performance ratio.
    pub utility: f64,
    pub defaulted: bool,
}

/// Initial portfolio `(X_0, Y_0, P_0)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Portfolio {
    pub cash: f64,
    pub shares: f64,
    pub price: f64,
}

impl Portfolio {
    pub fn wealth(&self) -> f64 {
        self.cash + self.shares * self.price
    }
}

/// Uniform in the open interval `(0, 1)`.
fn open_unit(rng: &mut ChaCha8Rng) -> f64 {
    ((rng.next_u64() >> 11) as f64 + 0.5) / (1u64 << 53) as f64
}

/// Exact geometric Brownian motion sampling on `m` steps of `T / m`. Path
/// `k` draws from stream `k` of a ChaCha8 generator seeded with `seed`.
pub fn gen_paths(q: usize, seed: u64, params: &MarketParams, p0: f64, m: usize) -> Vec<PricePath> {
    let h = params.horizon / m as f64;
    let drift = (params.drift - 0.5 * params.volatility * params.volatility) * h;
    let vol = params.volatility * h.sqrt();
    let normal = Normal::standard();
    (0..q as u64)
        .into_par_iter()
        .map(|id| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(id);
            let mut prices = Vec::with_capacity(m + 1);
            let mut p = p0;
            prices.push(p);
            for _ in 0..m {
                let xi = normal.inverse_cdf(open_unit(&mut rng));
                p *= (drift + vol * xi).exp();
                prices.push(p);
            }
            PricePath {
                id,
                prices,
                source: PathSource::Simulated,
            }
        })
        .collect()
}

/// `path_id,step,time,price`.
pub fn write_paths(paths: &[PricePath], horizon: f64, out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["path_id", "step", "time", "price"])?;
    for path in paths {
        let m = path.prices.len() - 1;
        for (i, p) in path.prices.iter().enumerate() {
            let t = horizon * i as f64 / m as f64;
            w.write_record([
                path.id.to_string(),
                i.to_string(),
                format!("{t:.16e}"),
                format!("{p:.16e}"),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Physical clock window mapped onto `[0, T]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Session {
    /// Defaults to the first observation.
    pub start: Option<DateTime<Utc>>,
    pub seconds: f64,
}

pub fn parse_timestamp(s: &str) -> Option<DateTime<Utc>> {
    let s = s.trim();
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Some(t.with_timezone(&Utc));
    }
    ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f"]
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
        .map(|t| t.and_utc())
}

/// Reads quotes (`timestamp,bid,ask` or `timestamp,price`) and samples the
/// last observation at or before each of the `m + 1` dates.
pub fn load_paths(input: impl Read, m: usize, session: Session) -> Result<PricePath> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_ascii_lowercase).collect();
    let quoted = match header.iter().map(String::as_str).collect::<Vec<_>>()[..] {
        ["timestamp", "bid", "ask"] => true,
        ["timestamp", "price"] => false,
        _ => {
            return Err(SimError::Format(format!(
                "expected header 'timestamp,bid,ask' or 'timestamp,price', got '{}'",
                header.join(",")
            )))
        }
    };
    let mut obs: Vec<(DateTime<Utc>, f64)> = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let bad = |reason: String| SimError::BadRow { line, reason };
        let t = parse_timestamp(&rec[0]).ok_or_else(|| bad(format!("bad timestamp '{}'", &rec[0])))?;
        let num = |k: usize| -> Result<f64> {
            let v: f64 = rec[k].parse().map_err(|_| bad(format!("bad number '{}'", &rec[k])))?;
            if v > 0.0 && v.is_finite() {
                Ok(v)
            } else {
                Err(bad(format!("non-positive price {v}")))
            }
        };
        let price = if quoted {
            0.5 * (num(1)? + num(2)?)
        } else {
            num(1)?
        };
        if let Some(&(prev, _)) = obs.last() {
            if t < prev {
                return Err(bad("timestamps are not sorted".into()));
            }
        }
        obs.push((t, price));
    }
    let start = match session.start.or(obs.first().map(|o| o.0)) {
        Some(s) => s,
        None => return Err(SimError::EmptyWindow),
    };
    let end = start + chrono::Duration::nanoseconds((session.seconds * 1e9).round() as i64);
    if !obs.iter().any(|&(t, _)| t >= start && t <= end) {
        return Err(SimError::EmptyWindow);
    }
    let mut prices = Vec::with_capacity(m + 1);
    let mut k = 0usize;
    for i in 0..=m {
        let at = start
            + chrono::Duration::nanoseconds((session.seconds * 1e9 * i as f64 / m as f64).round() as i64);
        while k < obs.len() && obs[k].0 <= at {
            k += 1;
        }
        if k == 0 {
            return Err(SimError::NoObservationBeforeStart);
        }
        prices.push(obs[k - 1].1);
    }
    Ok(PricePath {
        id: 0,
        prices,
        source: PathSource::Ingested,
    })
}

fn apply(params: &MarketParams, s: &State, e: f64, step: usize, time: f64) -> (State, Trade) {
    let next = params.transact(s, e);
    let multiplier = if e == 0.0 { 1.0 } else { params.impact_unchecked(e, s.theta) };
    let trade = Trade {
        step,
        time,
        shares: e,
        multiplier,
        cash_delta: next.x - s.x,
    };
    (next, trade)
}

fn finish(
    params: &MarketParams,
    path_id: u64,
    strategy: Strategy,
    trades: Vec<Trade>,
    terminal: State,
    w0: f64,
    defaulted: bool,
) -> ExecutionRecord {
    let performance = params.liquidation_value_eps(&terminal).max(0.0) / w0;
    ExecutionRecord {
        path_id,
        strategy,
        trades,
        terminal,
        performance,
        utility: params.utility_unchecked(performance),
        defaulted,
    }
}

/// Sells the remaining shares at the horizon when that beats keeping the
/// cash alone.
fn liquidate(params: &MarketParams, s: State, m: usize, trades: &mut Vec<Trade>) -> State {
    if s.y > 0.0 && params.liquidation_value(&s) - params.fee >= s.x {
        let (next, t) = apply(params, &s, -s.y, m, s.t);
        trades.push(t);
        next
    } else {
        s
    }
}

/// Follows the grid policy: at each date, the trade stored at the node
/// closest to the current state in the slice of the current lag, clamped to
/// the exact admissible interval.
pub fn execute_optimal(grid: &ValuePolicyGrid, path: &PricePath, init: Portfolio) -> Result<ExecutionRecord> {
    let spec = grid.spec();
    let params = grid.params();
    let m = spec.m;
    if path.prices.len() != m + 1 {
        return Err(SimError::Mismatch {
            id: path.id,
            reason: format!("{} prices for {} steps", path.prices.len(), m),
        });
    }
    let h = spec.h();
    let w0 = init.wealth();
    let mut trades = Vec::new();
    let mut lag_steps = 0usize;
    let mut s = State {
        t: 0.0,
        x: init.cash,
        y: init.shares,
        p: path.prices[0],
        theta: 0.0,
    };
    for i in 0..=m {
        s.t = spec.time(i);
        s.p = path.prices[i];
        s.theta = lag_steps as f64 * h;
        if !params.in_solvency(&s).in_closure() {
            return Ok(finish(params, path.id, Strategy::Optimal, trades, s, w0, true));
        }
        let j = lag_steps.min(i);
        let node = grid.mask(j).nearest(spec.nearest_node(s.x, s.y, s.p));
        let e = grid.trade(i, j, node);
        let e = match params.admissible_interval(&s) {
            Some(iv) if e != 0.0 && e.is_finite() => iv.clamp(e),
            _ => 0.0,
        };
        if e != 0.0 {
            let (next, t) = apply(params, &s, e, i, s.t);
            trades.push(t);
            s = next;
            lag_steps = 0;
        }
        lag_steps += 1;
    }
    let s = liquidate(params, s, m, &mut trades);
    Ok(finish(params, path.id, Strategy::Optimal, trades, s, w0, false))
}

/// One block sale of `Y_0` at the horizon, with lag `T`.
pub fn execute_naive(params: &MarketParams, path: &PricePath, init: Portfolio) -> ExecutionRecord {
    let m = path.prices.len() - 1;
    let s = State {
        t: params.horizon,
        x: init.cash,
        y: init.shares,
        p: path.prices[m],
        theta: params.horizon,
    };
    let mut trades = Vec::new();
    let s = if s.y > 0.0 {
        let (next, t) = apply(params, &s, -s.y, m, s.t);
        trades.push(t);
        next
    } else {
        s
    };
    finish(params, path.id, Strategy::Naive, trades, s, init.wealth(), false)
}

/// Sales of `Y_0 / m` at `t_1..t_m`, the last one taking what is left.
pub fn execute_uniform(params: &MarketParams, path: &PricePath, init: Portfolio) -> ExecutionRecord {
    let m = path.prices.len() - 1;
    let h = params.horizon / m as f64;
    let lot = init.shares / m as f64;
    let mut s = State {
        t: 0.0,
        x: init.cash,
        y: init.shares,
        p: path.prices[0],
        theta: 0.0,
    };
    let mut trades = Vec::with_capacity(m);
    for i in 1..=m {
        s.t = if i == m { params.horizon } else { h * i as f64 };
        s.p = path.prices[i];
        s.theta = h;
        let e = if i == m { -s.y } else { -lot.min(s.y) };
        let (next, t) = apply(params, &s, e, i, s.t);
        trades.push(t);
        s = next;
    }
    finish(params, path.id, Strategy::Uniform, trades, s, init.wealth(), false)
}

/// Runs the three strategies on every path. Records come out sorted by
/// path id, then strategy.
pub fn execute_all(grid: &ValuePolicyGrid, paths: &[PricePath], init: Portfolio) -> Result<Vec<ExecutionRecord>> {
    let params = grid.params();
    let per_path: Vec<Result<[ExecutionRecord; 3]>> = paths
        .par_iter()
        .map(|p| {
            Ok([
                execute_naive(params, p, init),
                execute_uniform(params, p, init),
                execute_optimal(grid, p, init)?,
            ])
        })
        .collect();
    let mut out = Vec::with_capacity(3 * paths.len());
    for r in per_path {
        out.extend(r?);
    }
    Ok(out)
}

pub const RECORD_HEADER: [&str; 6] = ["path_id", "strategy", "performance", "utility", "num_trades", "defaulted"];

/// `path_id,strategy,performance,utility,num_trades,defaulted`.
pub fn write_records(records: &[ExecutionRecord], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RECORD_HEADER)?;
    for r in records {
        w.write_record([
            r.path_id.to_string(),
            r.strategy.as_str().to_string(),
            format!("{:.16e}", r.performance),
            format!("{:.16e}", r.utility),
            r.trades.len().to_string(),
            r.defaulted.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// One row of the records file.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecordRow {
    pub path_id: u64,
    pub strategy: Strategy,
    pub performance: f64,
    pub utility: f64,
    pub num_trades: usize,
    pub defaulted: bool,
}

impl From<&ExecutionRecord> for RecordRow {
    fn from(r: &ExecutionRecord) -> Self {
        RecordRow {
            path_id: r.path_id,
            strategy: r.strategy,
            performance: r.performance,
            utility: r.utility,
            num_trades: r.trades.len(),
            defaulted: r.defaulted,
        }
    }
}

pub fn read_records(input: impl Read) -> Result<Vec<RecordRow>> {
    let mut rdr = csv::Reader::from_reader(input);
    if rdr.headers()?.iter().ne(RECORD_HEADER) {
        return Err(SimError::Format(format!("expected header '{}'", RECORD_HEADER.join(","))));
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let bad = |what: &str, v: &str| SimError::BadRow {
            line,
            reason: format!("bad {what} '{v}'"),
        };
        out.push(RecordRow {
            path_id: rec[0].parse().map_err(|_| bad("path id", &rec[0]))?,
            strategy: Strategy::parse(&rec[1]).ok_or_else(|| bad("strategy", &rec[1]))?,
            performance: rec[2].parse().map_err(|_| bad("performance", &rec[2]))?,
            utility: rec[3].parse().map_err(|_| bad("utility", &rec[3]))?,
            num_trades: rec[4].parse().map_err(|_| bad("trade count", &rec[4]))?,
            defaulted: rec[5].parse().map_err(|_| bad("flag", &rec[5]))?,
        });
    }
    Ok(out)
}
