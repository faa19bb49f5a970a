//! Explicit backward scheme for the impulse control problem, and an
//! independent fixed-point iteration over optimal stopping problems used as
//! an oracle on small grids.

use rayon::prelude::*;
use thiserror::Error;

use crate::grid::{GridError, GridSpec, Slice, ValuePolicyGrid};
use crate::market_model::{MarketParams, State};
use crate::quantizer::QuantGrid;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("oracle did not converge after {iterations} iterations (sup-norm change {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },
}

pub type Result<T> = std::result::Result<T, SolverError>;

pub const DEFAULT_TRADE_POINTS: usize = 20;
pub const ORACLE_TOL: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct SolverConfig {
    pub spec: GridSpec,
    pub params: MarketParams,
    pub quantizer: QuantGrid,
    /// Number of candidate trades in the static supremum.
    pub trade_points: usize,
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trade_points < 2 {
            return Err(SolverError::InvalidConfig("need at least 2 trade points".into()));
        }
        if self.quantizer.is_empty() {
            return Err(SolverError::InvalidConfig("empty quantizer".into()));
        }
        self.spec.validate()?;
        self.params.validate().map_err(GridError::from)?;
        Ok(())
    }

    /// Multiplicative price moves `exp((b - sigma^2/2) h + sigma sqrt(h) u_k)`.
    fn price_factors(&self) -> Vec<f64> {
        let h = self.spec.h();
        let (b, s) = (self.params.drift, self.params.volatility);
        self.quantizer
            .points()
            .iter()
            .map(|u| ((b - 0.5 * s * s) * h + s * h.sqrt() * u).exp())
            .collect()
    }
}

/// Best candidate trade and its value, or `None` when the admissible set is
/// empty.
///
/// Candidates are `M` equally spaced points on the admissible interval, plus
/// zero when it lies inside. Ties go to the smallest `|e|`, then to the
/// smaller `e`.
pub fn sup_over_trades(
    params: &MarketParams,
    trade_points: usize,
    z: &State,
    mut value_after: impl FnMut(&State) -> f64,
) -> Option<(f64, f64)> {
    let iv = params.admissible_interval(z)?;
    let mut best: Option<(f64, f64)> = None;
    let mut consider = |e: f64| {
        let v = value_after(&params.transact(z, e));
        let better = match best {
            None => true,
            Some((bv, be)) => v > bv || (v == bv && (e.abs(), e) < (be.abs(), be)),
        };
        if better {
            best = Some((v, e));
        }
    };
    let k = trade_points.max(2) - 1;
    for c in 0..=k {
        let e = if c == k {
            iv.hi
        } else {
            iv.lo + (iv.hi - iv.lo) * c as f64 / k as f64
        };
        consider(e);
    }
    if iv.lo < 0.0 && 0.0 < iv.hi {
        consider(0.0);
    }
    best
}

/// Quantized expectation of slice `(i_next, j_next)` one step ahead of
/// `(x, y, p)`.
pub fn expectation_step(
    grid: &ValuePolicyGrid,
    i_next: usize,
    j_next: usize,
    quantizer: &QuantGrid,
    factors: &[f64],
    x: f64,
    y: f64,
    p: f64,
) -> f64 {
    factors
        .iter()
        .zip(quantizer.weights())
        .map(|(g, w)| w * grid.interpolate(i_next, j_next, x, y, p * g))
        .sum()
}

fn terminal_slice(cfg: &SolverConfig, grid: &ValuePolicyGrid, j: usize, trades: bool) -> Slice {
    let spec = grid.spec();
    let params = &cfg.params;
    let theta = spec.lag(j);
    let mask = grid.mask(j);
    let (value, trade) = (0..spec.node_count())
        .into_par_iter()
        .map(|idx| {
            if !mask.is_active(idx) {
                return (f64::NAN, f64::NAN);
            }
            let (x, y, p) = spec.node(idx);
            if j == 0 {
                return (params.utility_unchecked(x), 0.0);
            }
            let z = State::at(x, y, p, theta);
            let stay = params.utility_unchecked(params.liquidation_value_eps(&z));
            if !trades {
                return (stay, 0.0);
            }
            // with zero lag after the trade, the liquidation value is the cash
            let best = sup_over_trades(params, cfg.trade_points, &z, |s| {
                params.utility_unchecked(s.x)
            });
            match best {
                Some((v, e)) if v > stay => (v, e),
                _ => (stay, 0.0),
            }
        })
        .unzip();
    Slice { value, trade }
}

/// One `(i, j)` layer: continuation value from `next`, intervention value
/// from slice `(i, 0)` of `interv` when given.
fn layer(
    cfg: &SolverConfig,
    factors: &[f64],
    next: &ValuePolicyGrid,
    interv: Option<&ValuePolicyGrid>,
    i: usize,
    j: usize,
) -> Slice {
    let spec = next.spec();
    let params = &cfg.params;
    let theta = spec.lag(j);
    let mask = next.mask(j);
    let (value, trade) = (0..spec.node_count())
        .into_par_iter()
        .map(|idx| {
            if !mask.is_active(idx) {
                return (f64::NAN, f64::NAN);
            }
            let (x, y, p) = spec.node(idx);
            let cont = expectation_step(next, i + 1, j + 1, &cfg.quantizer, factors, x, y, p);
            let Some(src) = interv else {
                return (cont, 0.0);
            };
            let z = State::at(x, y, p, theta);
            let best = sup_over_trades(params, cfg.trade_points, &z, |s| {
                src.interpolate(i, 0, s.x, s.y, s.p)
            });
            match best {
                Some((v, e)) if v > cont => (v, e),
                _ => (cont, 0.0),
            }
        })
        .unzip();
    Slice { value, trade }
}

/// Fills the `i = m` slices.
pub fn terminal_layer(cfg: &SolverConfig, grid: &mut ValuePolicyGrid) {
    let m = grid.spec().m;
    for j in 0..=m {
        let sl = terminal_slice(cfg, grid, j, true);
        grid.set_slice(m, j, sl);
    }
}

/// Fills the time-`i` slices from the time-`(i+1)` ones. The zero-lag slice
/// is finished first since the trade branch of the others reads it.
pub fn backward_step(cfg: &SolverConfig, grid: &mut ValuePolicyGrid, i: usize) {
    let factors = cfg.price_factors();
    let sl = layer(cfg, &factors, grid, None, i, 0);
    grid.set_slice(i, 0, sl);
    for j in 1..=i {
        let sl = layer(cfg, &factors, grid, Some(grid), i, j);
        grid.set_slice(i, j, sl);
    }
}

pub fn solve(cfg: &SolverConfig) -> Result<ValuePolicyGrid> {
    cfg.validate()?;
    let mut grid = ValuePolicyGrid::build(cfg.spec, cfg.params)?;
    terminal_layer(cfg, &mut grid);
    for i in (0..cfg.spec.m).rev() {
        backward_step(cfg, &mut grid, i);
    }
    Ok(grid)
}

#[derive(Debug, Clone)]
pub struct OracleRun {
    pub grid: ValuePolicyGrid,
    pub iterations: usize,
    /// Sup-norm change of the last iteration.
    pub residual: f64,
    /// Largest pointwise decrease between consecutive iterates (nonpositive
    /// when the iterates are nondecreasing).
    pub max_decrease: f64,
}

/// Iterates `v^{n+1} = max(E[v^{n+1}(next)], H v^n)` starting from the
/// no-trade value, intervention allowed at every lag including zero.
pub fn iterated_scheme_oracle(cfg: &SolverConfig, n_iter: usize) -> Result<OracleRun> {
    cfg.validate()?;
    let factors = cfg.price_factors();
    let spec = cfg.spec;
    let sweep = |prev: Option<&ValuePolicyGrid>| -> Result<ValuePolicyGrid> {
        let mut g = ValuePolicyGrid::build(spec, cfg.params)?;
        for j in 0..=spec.m {
            let sl = terminal_slice(cfg, &g, j, prev.is_some());
            g.set_slice(spec.m, j, sl);
        }
        for i in (0..spec.m).rev() {
            for j in 0..=i {
                let sl = layer(cfg, &factors, &g, prev, i, j);
                g.set_slice(i, j, sl);
            }
        }
        Ok(g)
    };
    let mut current = sweep(None)?;
    let mut residual = f64::INFINITY;
    let mut max_decrease = f64::NEG_INFINITY;
    for n in 1..=n_iter {
        let next = sweep(Some(&current))?;
        let (change, decrease) = compare(&current, &next);
        residual = change;
        max_decrease = max_decrease.max(decrease);
        current = next;
        if residual < ORACLE_TOL {
            return Ok(OracleRun {
                grid: current,
                iterations: n,
                residual,
                max_decrease,
            });
        }
    }
    if n_iter == 0 {
        return Ok(OracleRun {
            grid: current,
            iterations: 0,
            residual,
            max_decrease,
        });
    }
    Err(SolverError::NotConverged {
        iterations: n_iter,
        residual,
    })
}

/// Sup-norm of `b - a` over active nodes and the largest `a - b`.
fn compare(a: &ValuePolicyGrid, b: &ValuePolicyGrid) -> (f64, f64) {
    let m = a.spec().m;
    let mut diff = 0.0f64;
    let mut decrease = f64::NEG_INFINITY;
    for i in 0..=m {
        for j in 0..=i {
            for (u, v) in a.slice(i, j).value.iter().zip(&b.slice(i, j).value) {
                if u.is_nan() {
                    continue;
                }
                diff = diff.max((v - u).abs());
                decrease = decrease.max(u - v);
            }
        }
    }
    (diff, decrease)
}
