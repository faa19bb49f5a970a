//! `key = value` run configuration.

use std::collections::HashMap;
use std::path::PathBuf;

use liqsolve::grid::GridSpec;
use liqsolve::market_model::{MarketParams, ModelError};
use liqsolve::simulator::Portfolio;
use liqsolve::solver::DEFAULT_TRADE_POINTS;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected 'key = value'")]
    Syntax { line: usize },
    #[error("line {line}: unknown key '{key}'")]
    Unknown { key: String, line: usize },
    #[error("key '{key}' set twice, on lines {first} and {second}")]
    Duplicate { key: String, first: usize, second: usize },
    #[error("missing required key '{key}'")]
    Missing { key: &'static str },
    #[error("line {line}: key '{key}': cannot parse '{value}'")]
    Value { key: &'static str, line: usize, value: String },
    #[error("line {line}: key '{key}': {reason}")]
    Range { key: &'static str, line: usize, reason: String },
}

const REQUIRED: [&str; 22] = [
    "maturity", "lambda", "beta", "gamma", "kappa_a", "kappa_b", "epsilon", "drift", "sigma", "x0", "y0", "p0",
    "x_min", "x_max", "y_min", "y_max", "p_min", "p_max", "m", "n", "quant_points", "paths",
];
const OPTIONAL: [&str; 5] = ["trade_points", "seed", "quant_dir", "session_seconds", "session_start"];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub params: MarketParams,
    pub spec: GridSpec,
    pub initial: Portfolio,
    /// Quantizer size `N`.
    pub quant_points: usize,
    /// Number of simulated paths `Q`.
    pub paths: usize,
    /// Candidate trades `M` in the static supremum.
    pub trade_points: usize,
    pub seed: u64,
    pub quant_dir: Option<PathBuf>,
    pub session_seconds: Option<f64>,
    pub session_start: Option<String>,
}

/// Numbers may be written as a fraction `a/b`, handy for maturities.
fn number(s: &str) -> Option<f64> {
    match s.split_once('/') {
        Some((a, b)) => Some(a.trim().parse::<f64>().ok()? / b.trim().parse::<f64>().ok()?),
        None => s.parse().ok(),
    }
    .filter(|v: &f64| v.is_finite())
}

struct Entries<'a> {
    map: HashMap<&'a str, (usize, &'a str)>,
}

impl<'a> Entries<'a> {
    fn line(&self, key: &str) -> usize {
        self.map.get(key).map_or(0, |e| e.0)
    }

    fn raw(&self, key: &'static str) -> Result<(usize, &'a str), ConfigError> {
        self.map.get(key).copied().ok_or(ConfigError::Missing { key })
    }

    fn f64(&self, key: &'static str) -> Result<f64, ConfigError> {
        let (line, v) = self.raw(key)?;
        number(v).ok_or_else(|| ConfigError::Value {
            key,
            line,
            value: v.to_string(),
        })
    }

    fn usize(&self, key: &'static str) -> Result<usize, ConfigError> {
        let (line, v) = self.raw(key)?;
        v.parse().map_err(|_| ConfigError::Value {
            key,
            line,
            value: v.to_string(),
        })
    }

    fn range(&self, key: &'static str, reason: impl Into<String>) -> ConfigError {
        ConfigError::Range {
            key,
            line: self.line(key),
            reason: reason.into(),
        }
    }
}

pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let mut map: HashMap<&str, (usize, &str)> = HashMap::new();
    for (k, raw) in text.lines().enumerate() {
        let line = k + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let (key, value) = body.split_once('=').ok_or(ConfigError::Syntax { line })?;
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() || value.is_empty() {
            return Err(ConfigError::Syntax { line });
        }
        if !REQUIRED.contains(&key) && !OPTIONAL.contains(&key) {
            return Err(ConfigError::Unknown {
                key: key.to_string(),
                line,
            });
        }
        if let Some(&(first, _)) = map.get(key) {
            return Err(ConfigError::Duplicate {
                key: key.to_string(),
                first,
                second: line,
            });
        }
        map.insert(key, (line, value));
    }
    let e = Entries { map };
    let params = MarketParams {
        horizon: e.f64("maturity")?,
        drift: e.f64("drift")?,
        volatility: e.f64("sigma")?,
        impact: e.f64("lambda")?,
        impact_exponent: e.f64("beta")?,
        ask: e.f64("kappa_a")?,
        bid: e.f64("kappa_b")?,
        fee: e.f64("epsilon")?,
        gamma: e.f64("gamma")?,
    };
    if let Err(ModelError::InvalidParam { name, reason }) = params.validate() {
        let key = match name {
            "horizon" => "maturity",
            "drift" => "drift",
            "volatility" => "sigma",
            "impact" => "lambda",
            "impact_exponent" => "beta",
            "ask" => "kappa_a",
            "bid" => "kappa_b",
            "fee" => "epsilon",
            _ => "gamma",
        };
        return Err(e.range(key, reason));
    }
    let spec = GridSpec {
        m: e.usize("m")?,
        n: e.usize("n")?,
        horizon: params.horizon,
        x_min: e.f64("x_min")?,
        x_max: e.f64("x_max")?,
        y_min: e.f64("y_min")?,
        y_max: e.f64("y_max")?,
        p_min: e.f64("p_min")?,
        p_max: e.f64("p_max")?,
    };
    for key in ["m", "n"] {
        if e.usize(key)? < 1 {
            return Err(e.range(key, "must be >= 1"));
        }
    }
    if spec.x_min >= spec.x_max {
        return Err(e.range("x_max", "must exceed x_min"));
    }
    if spec.y_min < 0.0 {
        return Err(e.range("y_min", "must be >= 0"));
    }
    if spec.y_min >= spec.y_max {
        return Err(e.range("y_max", "must exceed y_min"));
    }
    if spec.p_min < 0.0 {
        return Err(e.range("p_min", "must be >= 0"));
    }
    if spec.p_min >= spec.p_max {
        return Err(e.range("p_max", "must exceed p_min"));
    }
    let initial = Portfolio {
        cash: e.f64("x0")?,
        shares: e.f64("y0")?,
        price: e.f64("p0")?,
    };
    if initial.shares < 0.0 {
        return Err(e.range("y0", "must be >= 0"));
    }
    if initial.price <= 0.0 {
        return Err(e.range("p0", "must be > 0"));
    }
    if initial.cash < params.fee && initial.shares == 0.0 {
        return Err(e.range("x0", "initial state is not solvent"));
    }
    if initial.wealth() <= 0.0 {
        return Err(e.range("x0", "initial wealth must be positive"));
    }
    let quant_points = e.usize("quant_points")?;
    if quant_points < 1 {
        return Err(e.range("quant_points", "must be >= 1"));
    }
    let paths = e.usize("paths")?;
    if paths < 1 {
        return Err(e.range("paths", "must be >= 1"));
    }
    let trade_points = if e.map.contains_key("trade_points") {
        e.usize("trade_points")?
    } else {
        DEFAULT_TRADE_POINTS
    };
    if trade_points < 2 {
        return Err(e.range("trade_points", "must be >= 2"));
    }
    let seed = match e.map.get("seed") {
        Some(&(line, v)) => v.parse().map_err(|_| ConfigError::Value {
            key: "seed",
            line,
            value: v.to_string(),
        })?,
        None => 0,
    };
    let session_seconds = match e.map.contains_key("session_seconds") {
        true => {
            let s = e.f64("session_seconds")?;
            if s <= 0.0 {
                return Err(e.range("session_seconds", "must be > 0"));
            }
            Some(s)
        }
        false => None,
    };
    if let Some(&(line, v)) = e.map.get("session_start") {
        if liqsolve::simulator::parse_timestamp(v).is_none() {
            return Err(ConfigError::Value {
                key: "session_start",
                line,
                value: v.to_string(),
            });
        }
    }
    Ok(RunConfig {
        params,
        spec,
        initial,
        quant_points,
        paths,
        trade_points,
        seed,
        quant_dir: e.map.get("quant_dir").map(|v| PathBuf::from(v.1)),
        session_seconds,
        session_start: e.map.get("session_start").map(|v| v.1.to_string()),
    })
}
