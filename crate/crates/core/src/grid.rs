//! Regular grids in time, lag and state, with value and policy storage.
//!
//! Slices are indexed by the time index `i` and the lag index `j <= i` (lag
//! `theta_j = j h`). Every slice stores a dense `(n+1)^3` array of values and
//! trades; nodes outside the solvency closure hold `NaN`.

use std::io::{BufRead, Write};

use rayon::prelude::*;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::market_model::{MarketParams, ModelError, State};

#[derive(Debug, Error)]
pub enum GridError {
    #[error("invalid grid: {0}")]
    InvalidSpec(String),
    #[error("no active node at lag index {0}")]
    NoActiveNodes(usize),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("grid file line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("grid file: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, GridError>;

/// Localized box and step counts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    /// Number of time steps.
    pub m: usize,
    /// Number of space steps per axis.
    pub n: usize,
    pub horizon: f64,
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub p_min: f64,
    pub p_max: f64,
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |s: &str| Err(GridError::InvalidSpec(s.to_string()));
        if self.m < 1 || self.n < 1 {
            return bad("m and n must be at least 1");
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return bad("horizon must be positive");
        }
        if !(self.x_min < self.x_max) || !self.x_min.is_finite() || !self.x_max.is_finite() {
            return bad("need x_min < x_max");
        }
        if !(0.0 <= self.y_min && self.y_min < self.y_max && self.y_max.is_finite()) {
            return bad("need 0 <= y_min < y_max");
        }
        if !(0.0 <= self.p_min && self.p_min < self.p_max && self.p_max.is_finite()) {
            return bad("need 0 <= p_min < p_max");
        }
        Ok(())
    }

    pub fn h(&self) -> f64 {
        self.horizon / self.m as f64
    }

    pub fn time(&self, i: usize) -> f64 {
        if i == self.m {
            self.horizon
        } else {
            i as f64 * self.h()
        }
    }

    pub fn lag(&self, j: usize) -> f64 {
        self.time(j)
    }

    /// Nodes per axis.
    pub fn axis_len(&self) -> usize {
        self.n + 1
    }

    pub fn node_count(&self) -> usize {
        self.axis_len().pow(3)
    }

    /// Number of `(i, j)` slices, `(m+1)(m+2)/2`.
    pub fn slice_count(&self) -> usize {
        (self.m + 1) * (self.m + 2) / 2
    }

    pub fn slice_offset(&self, i: usize, j: usize) -> usize {
        debug_assert!(j <= i && i <= self.m);
        i * (i + 1) / 2 + j
    }

    pub fn x_node(&self, ix: usize) -> f64 {
        axis_node(self.x_min, self.x_max, self.n, ix)
    }

    pub fn y_node(&self, iy: usize) -> f64 {
        axis_node(self.y_min, self.y_max, self.n, iy)
    }

    pub fn p_node(&self, ip: usize) -> f64 {
        axis_node(self.p_min, self.p_max, self.n, ip)
    }

    pub fn index(&self, ix: usize, iy: usize, ip: usize) -> usize {
        let k = self.axis_len();
        (ix * k + iy) * k + ip
    }

    pub fn unindex(&self, idx: usize) -> (usize, usize, usize) {
        let k = self.axis_len();
        (idx / (k * k), (idx / k) % k, idx % k)
    }

    pub fn node(&self, idx: usize) -> (f64, f64, f64) {
        let (ix, iy, ip) = self.unindex(idx);
        (self.x_node(ix), self.y_node(iy), self.p_node(ip))
    }

    /// Per-axis clamp followed by rounding to the closest node.
    pub fn nearest_node(&self, x: f64, y: f64, p: f64) -> usize {
        let r = |v: f64, lo: f64, hi: f64| {
            let s = ((v - lo) / (hi - lo) * self.n as f64).clamp(0.0, self.n as f64);
            s.round() as usize
        };
        self.index(
            r(x, self.x_min, self.x_max),
            r(y, self.y_min, self.y_max),
            r(p, self.p_min, self.p_max),
        )
    }

    fn contains(&self, x: f64, y: f64, p: f64) -> bool {
        (self.x_min..=self.x_max).contains(&x)
            && (self.y_min..=self.y_max).contains(&y)
            && (self.p_min..=self.p_max).contains(&p)
    }
}

fn axis_node(lo: f64, hi: f64, n: usize, k: usize) -> f64 {
    if k == n {
        hi
    } else {
        lo + (hi - lo) * k as f64 / n as f64
    }
}

/// Active nodes for one lag and, for every node, the nearest active node.
#[derive(Debug, Clone)]
pub struct LagMask {
    active: Vec<bool>,
    nearest: Vec<usize>,
    count: usize,
}

impl LagMask {
    fn build(spec: &GridSpec, params: &MarketParams, theta: f64) -> Self {
        let active: Vec<bool> = (0..spec.node_count())
            .into_par_iter()
            .map(|idx| {
                let (x, y, p) = spec.node(idx);
                params.in_solvency(&State::at(x, y, p, theta)).in_closure()
            })
            .collect();
        let count = active.iter().filter(|&&a| a).count();
        let nearest = if count == 0 {
            Vec::new()
        } else {
            (0..active.len())
                .into_par_iter()
                .map(|idx| {
                    if active[idx] {
                        idx
                    } else {
                        nearest_active(spec, &active, idx)
                    }
                })
                .collect()
        };
        LagMask {
            active,
            nearest,
            count,
        }
    }

    pub fn is_active(&self, idx: usize) -> bool {
        self.active[idx]
    }

    pub fn active_count(&self) -> usize {
        self.count
    }

    /// Closest active node in index space, ties to the lowest linear index.
    pub fn nearest(&self, idx: usize) -> usize {
        self.nearest[idx]
    }
}

/// Expanding Chebyshev shells around `idx` until no farther shell can hold a
/// closer active node.
fn nearest_active(spec: &GridSpec, active: &[bool], idx: usize) -> usize {
    let n = spec.n as i64;
    let (cx, cy, cp) = spec.unindex(idx);
    let (cx, cy, cp) = (cx as i64, cy as i64, cp as i64);
    let mut best: Option<(i64, usize)> = None;
    for r in 1..=n {
        for dx in -r..=r {
            for dy in -r..=r {
                for dp in -r..=r {
                    if dx.abs().max(dy.abs()).max(dp.abs()) != r {
                        continue;
                    }
                    let (x, y, p) = (cx + dx, cy + dy, cp + dp);
                    if x < 0 || y < 0 || p < 0 || x > n || y > n || p > n {
                        continue;
                    }
                    let k = spec.index(x as usize, y as usize, p as usize);
                    if !active[k] {
                        continue;
                    }
                    let d2 = dx * dx + dy * dy + dp * dp;
                    if best.map_or(true, |(bd, bk)| (d2, k) < (bd, bk)) {
                        best = Some((d2, k));
                    }
                }
            }
        }
        if let Some((d2, k)) = best {
            if d2 < (r + 1) * (r + 1) {
                return k;
            }
        }
    }
    best.expect("mask has an active node").1
}

/// Values and trades at one `(i, j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Slice {
    pub value: Vec<f64>,
    pub trade: Vec<f64>,
}

impl Slice {
    fn outside(len: usize) -> Self {
        Slice {
            value: vec![f64::NAN; len],
            trade: vec![f64::NAN; len],
        }
    }
}

#[derive(Debug, Clone)]
pub struct ValuePolicyGrid {
    spec: GridSpec,
    params: MarketParams,
    masks: Vec<LagMask>,
    slices: Vec<Slice>,
}

impl ValuePolicyGrid {
    /// Empty grid with activity masks for every lag. All values start as
    /// outside markers.
    pub fn build(spec: GridSpec, params: MarketParams) -> Result<Self> {
        spec.validate()?;
        params.validate()?;
        if (spec.horizon - params.horizon).abs() > 1e-12 * params.horizon {
            return Err(GridError::InvalidSpec(format!(
                "grid horizon {} differs from market horizon {}",
                spec.horizon, params.horizon
            )));
        }
        let masks: Vec<LagMask> = (0..=spec.m)
            .map(|j| LagMask::build(&spec, &params, spec.lag(j)))
            .collect();
        if let Some(j) = masks.iter().position(|mk| mk.count == 0) {
            return Err(GridError::NoActiveNodes(j));
        }
        let slices = vec![Slice::outside(spec.node_count()); spec.slice_count()];
        Ok(ValuePolicyGrid {
            spec,
            params,
            masks,
            slices,
        })
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn params(&self) -> &MarketParams {
        &self.params
    }

    pub fn mask(&self, j: usize) -> &LagMask {
        &self.masks[j]
    }

    pub fn slice(&self, i: usize, j: usize) -> &Slice {
        &self.slices[self.spec.slice_offset(i, j)]
    }

    /// Replaces a slice. Inactive nodes are forced to the outside marker.
    pub fn set_slice(&mut self, i: usize, j: usize, mut slice: Slice) {
        let mask = &self.masks[j];
        assert_eq!(slice.value.len(), self.spec.node_count());
        assert_eq!(slice.trade.len(), self.spec.node_count());
        for idx in 0..slice.value.len() {
            if !mask.active[idx] {
                slice.value[idx] = f64::NAN;
                slice.trade[idx] = f64::NAN;
            }
        }
        let off = self.spec.slice_offset(i, j);
        self.slices[off] = slice;
    }

    pub fn value(&self, i: usize, j: usize, idx: usize) -> f64 {
        self.slice(i, j).value[idx]
    }

    pub fn trade(&self, i: usize, j: usize, idx: usize) -> f64 {
        self.slice(i, j).trade[idx]
    }

    /// Value of slice `(i, j)` at an arbitrary point.
    ///
    /// Inside the box: trilinear over the enclosing cell. When some corners
    /// carrying weight are inactive, the remaining corners are renormalized
    /// and each one is rescaled by the growth factor `(w / w_c)^gamma`
    /// (`w = x + y p`) so that the result stays below the frictionless bound.
    /// Outside the box: value at the closest node, rescaled the same way.
    pub fn interpolate(&self, i: usize, j: usize, x: f64, y: f64, p: f64) -> f64 {
        let values = &self.slice(i, j).value;
        let mask = &self.masks[j];
        if !self.spec.contains(x, y, p) {
            let idx = mask.nearest(self.spec.nearest_node(x, y, p));
            return self.scaled(values[idx], idx, x + y * p);
        }
        let s = &self.spec;
        let n = s.n;
        let locate = |v: f64, lo: f64, hi: f64| -> (usize, f64) {
            let t = (v - lo) / (hi - lo) * n as f64;
            let k = (t.floor() as usize).min(n - 1);
            (k, (t - k as f64).clamp(0.0, 1.0))
        };
        let (kx, tx) = locate(x, s.x_min, s.x_max);
        let (ky, ty) = locate(y, s.y_min, s.y_max);
        let (kp, tp) = locate(p, s.p_min, s.p_max);
        let mut all = 0.0;
        let mut full = true;
        let mut wsum = 0.0;
        let mut partial = 0.0;
        let w = x + y * p;
        for c in 0..8 {
            let (bx, by, bp) = (c >> 2 & 1, c >> 1 & 1, c & 1);
            let weight = if bx == 1 { tx } else { 1.0 - tx }
                * if by == 1 { ty } else { 1.0 - ty }
                * if bp == 1 { tp } else { 1.0 - tp };
            if weight == 0.0 {
                continue;
            }
            let idx = s.index(kx + bx, ky + by, kp + bp);
            if mask.active[idx] {
                all += weight * values[idx];
                wsum += weight;
                partial += weight * self.scaled(values[idx], idx, w);
            } else {
                full = false;
            }
        }
        if full {
            all
        } else if wsum > 0.0 {
            partial / wsum
        } else {
            let idx = mask.nearest(s.nearest_node(x, y, p));
            self.scaled(values[idx], idx, w)
        }
    }

    fn scaled(&self, v: f64, idx: usize, w: f64) -> f64 {
        let (xc, yc, pc) = self.spec.node(idx);
        let wc = xc + yc * pc;
        if wc <= 0.0 {
            v
        } else if w <= 0.0 {
            0.0
        } else {
            v * (w / wc).powf(self.params.gamma)
        }
    }

    /// Writes the text grid format.
    pub fn write_to(&self, mut out: impl Write) -> std::io::Result<()> {
        let s = &self.spec;
        let (dims, params) = header_lines(s, &self.params);
        writeln!(out, "liqgrid v1")?;
        writeln!(out, "{dims}")?;
        writeln!(out, "{params}")?;
        writeln!(out, "hash {}", param_hash(s, &self.params))?;
        let k = s.axis_len();
        for i in 0..=s.m {
            for j in 0..=i {
                let sl = self.slice(i, j);
                for ix in 0..k {
                    for iy in 0..k {
                        for ip in 0..k {
                            let idx = s.index(ix, iy, ip);
                            if self.masks[j].active[idx] {
                                writeln!(
                                    out,
                                    "{i} {j} {ix} {iy} {ip} {:.16e} {:.16e}",
                                    sl.value[idx], sl.trade[idx]
                                )?;
                            } else {
                                writeln!(out, "{i} {j} {ix} {iy} {ip} NA NA")?;
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Reads the text grid format. Activity masks are recomputed from the
    /// echoed parameters and must agree with the `NA` markers.
    pub fn read_from(input: impl BufRead) -> Result<Self> {
        let mut lines = input.lines().enumerate().map(|(k, l)| (k + 1, l));
        let mut next = |what: &str| -> Result<(usize, String)> {
            match lines.next() {
                Some((k, Ok(l))) => Ok((k, l)),
                Some((_, Err(e))) => Err(e.into()),
                None => Err(GridError::Parse {
                    line: 0,
                    reason: format!("missing {what}"),
                }),
            }
        };
        let (ln, magic) = next("header")?;
        if magic.trim() != "liqgrid v1" {
            return Err(parse_err(ln, "expected 'liqgrid v1'"));
        }
        let (ln, dims) = next("dimensions")?;
        let spec = parse_dims(&dims).map_err(|r| parse_err(ln, &r))?;
        let (ln, pline) = next("parameters")?;
        let params = parse_params(&pline).map_err(|r| parse_err(ln, &r))?;
        let (ln, hline) = next("hash")?;
        if hline.strip_prefix("hash ") != Some(param_hash(&spec, &params).as_str()) {
            return Err(parse_err(ln, "parameter hash does not match the header"));
        }
        let mut grid = ValuePolicyGrid::build(spec, params)?;
        let k = spec.axis_len();
        for i in 0..=spec.m {
            for j in 0..=i {
                let mut sl = Slice::outside(spec.node_count());
                for ix in 0..k {
                    for iy in 0..k {
                        for ip in 0..k {
                            let (ln, rec) = next("record")?;
                            let f: Vec<&str> = rec.split(' ').collect();
                            if f.len() != 7 {
                                return Err(parse_err(ln, "expected 7 fields"));
                            }
                            let want = [i, j, ix, iy, ip];
                            for (a, b) in f[..5].iter().zip(want) {
                                if a.parse::<usize>().ok() != Some(b) {
                                    return Err(parse_err(
                                        ln,
                                        &format!("expected indices {i} {j} {ix} {iy} {ip}"),
                                    ));
                                }
                            }
                            let idx = spec.index(ix, iy, ip);
                            let active = grid.masks[j].active[idx];
                            match (f[5], f[6], active) {
                                ("NA", "NA", false) => {}
                                ("NA", _, true) | (_, "NA", true) => {
                                    return Err(parse_err(ln, "active node marked NA"))
                                }
                                (_, _, false) => {
                                    return Err(parse_err(ln, "inactive node carries a value"))
                                }
                                (v, t, true) => {
                                    sl.value[idx] = parse_f64(v).map_err(|r| parse_err(ln, &r))?;
                                    sl.trade[idx] = parse_f64(t).map_err(|r| parse_err(ln, &r))?;
                                }
                            }
                        }
                    }
                }
                grid.set_slice(i, j, sl);
            }
        }
        if let Some((ln, _)) = lines.find(|(_, l)| !matches!(l, Ok(s) if s.trim().is_empty())) {
            return Err(parse_err(ln, "trailing data"));
        }
        Ok(grid)
    }
}

fn header_lines(s: &GridSpec, q: &MarketParams) -> (String, String) {
    let dims = format!(
        "m={} n={} T={:.16e} x=[{:.16e},{:.16e}] y=[{:.16e},{:.16e}] p=[{:.16e},{:.16e}]",
        s.m, s.n, s.horizon, s.x_min, s.x_max, s.y_min, s.y_max, s.p_min, s.p_max
    );
    let params = format!(
        "params T={:.16e} b={:.16e} sigma={:.16e} lambda={:.16e} beta={:.16e} \
         kappa_a={:.16e} kappa_b={:.16e} epsilon={:.16e} gamma={:.16e}",
        q.horizon, q.drift, q.volatility, q.impact, q.impact_exponent, q.ask, q.bid, q.fee, q.gamma
    );
    (dims, params)
}

/// SHA-256 of the dimension and parameter header lines, in hex.
pub fn param_hash(spec: &GridSpec, params: &MarketParams) -> String {
    let (dims, p) = header_lines(spec, params);
    let digest = Sha256::digest(format!("{dims}\n{p}\n").as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Reads only the header of a grid file and returns its parameter hash.
pub fn read_hash(input: impl BufRead) -> Result<String> {
    let line = input.lines().nth(3).transpose()?.unwrap_or_default();
    line.strip_prefix("hash ")
        .map(str::to_string)
        .ok_or_else(|| parse_err(4, "expected 'hash <hex>'"))
}

fn parse_err(line: usize, reason: &str) -> GridError {
    GridError::Parse {
        line,
        reason: reason.to_string(),
    }
}

fn parse_f64(s: &str) -> std::result::Result<f64, String> {
    s.parse::<f64>().map_err(|_| format!("bad number '{s}'"))
}

fn fields(line: &str) -> std::collections::HashMap<&str, &str> {
    line.split_whitespace()
        .filter_map(|tok| tok.split_once('='))
        .collect()
}

fn field<'a>(map: &std::collections::HashMap<&str, &'a str>, key: &str) -> std::result::Result<&'a str, String> {
    map.get(key).copied().ok_or_else(|| format!("missing '{key}'"))
}

fn range(s: &str) -> std::result::Result<(f64, f64), String> {
    let inner = s
        .strip_prefix('[')
        .and_then(|r| r.strip_suffix(']'))
        .ok_or_else(|| format!("bad range '{s}'"))?;
    let (a, b) = inner.split_once(',').ok_or_else(|| format!("bad range '{s}'"))?;
    Ok((parse_f64(a)?, parse_f64(b)?))
}

fn parse_dims(line: &str) -> std::result::Result<GridSpec, String> {
    let f = fields(line);
    let int = |k: &str| -> std::result::Result<usize, String> {
        let v = field(&f, k)?;
        v.parse().map_err(|_| format!("bad integer '{v}'"))
    };
    let (x_min, x_max) = range(field(&f, "x")?)?;
    let (y_min, y_max) = range(field(&f, "y")?)?;
    let (p_min, p_max) = range(field(&f, "p")?)?;
    Ok(GridSpec {
        m: int("m")?,
        n: int("n")?,
        horizon: parse_f64(field(&f, "T")?)?,
        x_min,
        x_max,
        y_min,
        y_max,
        p_min,
        p_max,
    })
}

fn parse_params(line: &str) -> std::result::Result<MarketParams, String> {
    if !line.starts_with("params ") {
        return Err("expected parameter line".into());
    }
    let f = fields(line);
    let g = |k: &str| parse_f64(field(&f, k)?);
    Ok(MarketParams {
        horizon: g("T")?,
        drift: g("b")?,
        volatility: g("sigma")?,
        impact: g("lambda")?,
        impact_exponent: g("beta")?,
        ask: g("kappa_a")?,
        bid: g("kappa_b")?,
        fee: g("epsilon")?,
        gamma: g("gamma")?,
    })
}
