//! Descriptive statistics of strategy performance and the comparison report.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::simulator::{RecordRow, Strategy};

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("need at least {need} values, got {got}")]
    TooFew { need: usize, got: usize },
    #[error("level {0} outside (0, 1)")]
    BadLevel(f64),
    #[error("path sets differ between strategies: {0}")]
    Mismatch(String),
    #[error("no records for strategy {0}")]
    MissingStrategy(&'static str),
}

pub type Result<T> = std::result::Result<T, StatsError>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StrategyStats {
    /// Mean utility.
    pub mean_utility: f64,
    /// Mean performance.
    pub mean: f64,
    /// Population standard deviation.
    pub std_dev: f64,
    /// `None` when the series is constant.
    pub skewness: Option<f64>,
    pub kurtosis: Option<f64>,
    pub count: usize,
}

/// Moments of a performance series and mean of its `gamma`-utility.
pub fn summarize(series: &[f64], gamma: f64) -> Result<StrategyStats> {
    let utils: Vec<f64> = series.iter().map(|&l| if l > 0.0 { l.powf(gamma) } else { 0.0 }).collect();
    summarize_with_utility(series, &utils)
}

/// Same as [`summarize`] with the utilities supplied.
pub fn summarize_with_utility(series: &[f64], utilities: &[f64]) -> Result<StrategyStats> {
    let q = series.len();
    if q < 2 {
        return Err(StatsError::TooFew { need: 2, got: q });
    }
    let n = q as f64;
    let mean = series.iter().sum::<f64>() / n;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for &v in series {
        let d = v - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    let (m2, m3, m4) = (m2 / n, m3 / n, m4 / n);
    let std_dev = m2.sqrt();
    let (skewness, kurtosis) = if m2 > 0.0 {
        (Some(m3 / (m2 * std_dev)), Some(m4 / (m2 * m2)))
    } else {
        (None, None)
    };
    Ok(StrategyStats {
        mean_utility: utilities.iter().sum::<f64>() / utilities.len() as f64,
        mean,
        std_dev,
        skewness,
        kurtosis,
        count: q,
    })
}

/// `sup { x : #{L > x} / Q >= q }`, which is the `(Q - ceil(q Q) + 1)`-th
/// smallest sample.
pub fn var(series: &[f64], q: f64) -> Result<f64> {
    if series.is_empty() {
        return Err(StatsError::TooFew { need: 1, got: 0 });
    }
    if !(q > 0.0 && q < 1.0) {
        return Err(StatsError::BadLevel(q));
    }
    let mut sorted = series.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    // guard against q * Q landing a hair above an integer
    let k = ((q * n as f64) - 1e-9).ceil().max(1.0) as usize;
    Ok(sorted[n - k.min(n)])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Comparison {
    pub wins: usize,
    pub paths: usize,
    /// Fraction of paths where the optimal strategy strictly beats both
    /// benchmarks.
    pub winning: f64,
    pub relative_utility: f64,
    pub relative_performance: f64,
    pub utility_sharpe: f64,
    pub performance_sharpe: f64,
}

/// Compares path-aligned `(path_id, performance)` series.
pub fn compare(opt: &[(u64, f64)], naive: &[(u64, f64)], uniform: &[(u64, f64)], gamma: f64) -> Result<Comparison> {
    let u = |s: &[(u64, f64)]| -> Vec<f64> { s.iter().map(|&(_, l)| if l > 0.0 { l.powf(gamma) } else { 0.0 }).collect() };
    compare_with_utility(opt, naive, uniform, &u(opt), &u(naive), &u(uniform))
}

fn compare_with_utility(
    opt: &[(u64, f64)],
    naive: &[(u64, f64)],
    uniform: &[(u64, f64)],
    u_opt: &[f64],
    u_naive: &[f64],
    u_uniform: &[f64],
) -> Result<Comparison> {
    let ids = |s: &[(u64, f64)]| -> Vec<u64> { s.iter().map(|p| p.0).collect() };
    if ids(opt) != ids(naive) || ids(opt) != ids(uniform) {
        return Err(StatsError::Mismatch(format!(
            "{} optimal, {} naive, {} uniform paths or different ids",
            opt.len(),
            naive.len(),
            uniform.len()
        )));
    }
    let perf = |s: &[(u64, f64)]| -> Vec<f64> { s.iter().map(|p| p.1).collect() };
    let so = summarize_with_utility(&perf(opt), u_opt)?;
    let sn = summarize_with_utility(&perf(naive), u_naive)?;
    let su = summarize_with_utility(&perf(uniform), u_uniform)?;
    let wins = opt
        .iter()
        .zip(naive)
        .zip(uniform)
        .filter(|((o, n), u)| o.1 > n.1.max(u.1))
        .count();
    let best_v = sn.mean_utility.max(su.mean_utility);
    let best_l = sn.mean.max(su.mean);
    Ok(Comparison {
        wins,
        paths: opt.len(),
        winning: wins as f64 / opt.len() as f64,
        relative_utility: (so.mean_utility - best_v) / so.mean_utility,
        relative_performance: (so.mean - best_l) / so.mean,
        utility_sharpe: (so.mean_utility - best_v) / so.std_dev,
        performance_sharpe: (so.mean - best_l) / so.std_dev,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bin {
    pub left: f64,
    pub right: f64,
    pub count: usize,
}

/// Equal-width bins over `[min, max]`, each right-open except the last.
pub fn histogram(series: &[f64], bins: usize) -> Vec<Bin> {
    let bins = bins.max(1);
    if series.is_empty() {
        return Vec::new();
    }
    let lo = series.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = series.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = (hi - lo) / bins as f64;
    let mut out: Vec<Bin> = (0..bins)
        .map(|k| Bin {
            left: lo + width * k as f64,
            right: if k + 1 == bins { hi } else { lo + width * (k + 1) as f64 },
            count: 0,
        })
        .collect();
    for &v in series {
        let k = if width > 0.0 {
            (((v - lo) / width).floor() as usize).min(bins - 1)
        } else {
            0
        };
        out[k].count += 1;
    }
    out
}

/// `(number of trades, number of records)` for every count between the
/// smallest and the largest observed.
pub fn trade_count_histogram(counts: &[usize]) -> Vec<(usize, usize)> {
    let (Some(&lo), Some(&hi)) = (counts.iter().min(), counts.iter().max()) else {
        return Vec::new();
    };
    let mut out: Vec<(usize, usize)> = (lo..=hi).map(|k| (k, 0)).collect();
    for &c in counts {
        out[c - lo].1 += 1;
    }
    out
}

pub fn histogram_csv(bins: &[Bin]) -> String {
    let mut s = String::from("bin_left,bin_right,count\n");
    for b in bins {
        let _ = writeln!(s, "{:.16e},{:.16e},{}", b.left, b.right, b.count);
    }
    s
}

pub fn trade_count_csv(counts: &[(usize, usize)]) -> String {
    let mut s = String::from("num_trades,count\n");
    for (k, c) in counts {
        let _ = writeln!(s, "{k},{c}");
    }
    s
}

/// Moments per strategy, comparison metrics and value at risk.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub naive: StrategyStats,
    pub uniform: StrategyStats,
    pub optimal: StrategyStats,
    pub comparison: Comparison,
    /// `(level, naive, uniform, optimal)`.
    pub var: Vec<(f64, f64, f64, f64)>,
}

pub const VAR_LEVELS: [f64; 2] = [0.95, 0.90];

struct Series {
    perf: Vec<(u64, f64)>,
    util: Vec<f64>,
}

impl Report {
    pub fn from_rows(rows: &[RecordRow]) -> Result<Self> {
        let mut by: BTreeMap<Strategy, BTreeMap<u64, (f64, f64)>> = BTreeMap::new();
        for r in rows {
            let prev = by
                .entry(r.strategy)
                .or_default()
                .insert(r.path_id, (r.performance, r.utility));
            if prev.is_some() {
                return Err(StatsError::Mismatch(format!(
                    "path {} appears twice for {}",
                    r.path_id,
                    r.strategy.as_str()
                )));
            }
        }
        let take = |s: Strategy| -> Result<Series> {
            let m = by.get(&s).ok_or(StatsError::MissingStrategy(s.as_str()))?;
            Ok(Series {
                perf: m.iter().map(|(&id, &(l, _))| (id, l)).collect(),
                util: m.values().map(|v| v.1).collect(),
            })
        };
        let (n, u, o) = (take(Strategy::Naive)?, take(Strategy::Uniform)?, take(Strategy::Optimal)?);
        let values = |s: &Series| -> Vec<f64> { s.perf.iter().map(|p| p.1).collect() };
        let comparison = compare_with_utility(&o.perf, &n.perf, &u.perf, &o.util, &n.util, &u.util)?;
        let mut var_rows = Vec::new();
        for q in VAR_LEVELS {
            var_rows.push((q, var(&values(&n), q)?, var(&values(&u), q)?, var(&values(&o), q)?));
        }
        Ok(Report {
            naive: summarize_with_utility(&values(&n), &n.util)?,
            uniform: summarize_with_utility(&values(&u), &u.util)?,
            optimal: summarize_with_utility(&values(&o), &o.util)?,
            comparison,
            var: var_rows,
        })
    }

    /// Comma-separated text, one block per table.
    pub fn render(&self) -> String {
        let f = |v: Option<f64>| v.map_or("NA".to_string(), |x| format!("{x:.6}"));
        let mut s = String::new();
        s.push_str("Strategy,Utility,Mean,Standard Dev.,Skewness,Kurtosis\n");
        for (name, st) in [("Naive", &self.naive), ("Uniform", &self.uniform), ("Optimal", &self.optimal)] {
            let _ = writeln!(
                s,
                "{name},{:.6},{:.6},{:.6},{},{}",
                st.mean_utility,
                st.mean,
                st.std_dev,
                f(st.skewness),
                f(st.kurtosis)
            );
        }
        s.push('\n');
        s.push_str("Quantity,Value\n");
        let c = &self.comparison;
        let _ = writeln!(s, "Winning percentage,{:.2}%", 100.0 * c.winning);
        let _ = writeln!(s, "Relative Optimal Utility,{:.6}", c.relative_utility);
        let _ = writeln!(s, "Relative Optimal Performance,{:.6}", c.relative_performance);
        let _ = writeln!(s, "Utility Sharpe Ratio,{:.6}", c.utility_sharpe);
        let _ = writeln!(s, "Performance Sharpe Ratio,{:.6}", c.performance_sharpe);
        for &(q, n, u, o) in &self.var {
            let pct = (q * 100.0).round();
            for (name, v) in [("Naive", n), ("Uniform", u), ("Optimal", o)] {
                let _ = writeln!(s, "VaR {pct}% {name} Strategy,{v:.6}");
            }
        }
        s
    }
}
