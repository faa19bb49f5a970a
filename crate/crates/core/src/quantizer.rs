//! Quadratic optimal quantization of the standard normal law by Lloyd's
//! fixed-point iteration, with a plain-text on-disk cache.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::erf::erfc;
use thiserror::Error;

/// Environment variable naming the grid cache directory.
pub const CACHE_DIR_ENV: &str = "LIQSOLVE_QUANT_DIR";

pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITER: usize = 200_000;

#[derive(Debug, Error)]
pub enum QuantizeError {
    #[error("quantizer size must be >= 1")]
    EmptyGrid,
    #[error("Lloyd iteration did not converge after {iterations} iterations (residual {residual:e})")]
    NotConverged {
        iterations: usize,
        residual: f64,
        last: Box<QuantGrid>,
    },
    #[error("cache file {path}: {reason}")]
    BadCache { path: PathBuf, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// An `N`-point quantizer of `N(0, 1)`: support points and cell probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantGrid {
    points: Vec<f64>,
    weights: Vec<f64>,
    distortion: f64,
}

impl QuantGrid {
    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Quadratic distortion `E|U - proj(U)|^2`.
    pub fn distortion(&self) -> f64 {
        self.distortion
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Quantized expectation `sum_k pi_k g(u_k)`.
    pub fn expectation(&self, mut g: impl FnMut(f64) -> f64) -> f64 {
        self.points
            .iter()
            .zip(&self.weights)
            .map(|(&u, &w)| w * g(u))
            .sum()
    }

    fn from_points(points: Vec<f64>) -> Self {
        let bounds = cell_bounds(&points);
        let weights = bounds.windows(2).map(|c| mass(c[0], c[1])).collect();
        let distortion = distortion(&points, &bounds);
        QuantGrid {
            points,
            weights,
            distortion,
        }
    }

    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "N {}", self.len())?;
        for (u, p) in self.points.iter().zip(&self.weights) {
            writeln!(w, "{u:.16e} {p:.16e}")?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let mut f = std::io::BufWriter::new(fs::File::create(path)?);
        self.write_to(&mut f)?;
        f.flush()
    }

    /// Reads a cache file. Weights are taken from the file; the distortion
    /// is recomputed from the points.
    pub fn load(path: &Path) -> Result<Self, QuantizeError> {
        let bad = |reason: String| QuantizeError::BadCache {
            path: path.to_path_buf(),
            reason,
        };
        let reader = BufReader::new(fs::File::open(path)?);
        let mut lines = reader.lines();
        let header = lines.next().ok_or_else(|| bad("empty file".into()))??;
        let n: usize = header
            .strip_prefix("N ")
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| bad(format!("bad header {header:?}")))?;
        let mut points = Vec::with_capacity(n);
        let mut weights = Vec::with_capacity(n);
        for (k, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let mut it = line.split_whitespace();
            let parse = |s: Option<&str>| s.and_then(|s| s.parse::<f64>().ok());
            match (parse(it.next()), parse(it.next()), it.next()) {
                (Some(u), Some(p), None) => {
                    points.push(u);
                    weights.push(p);
                }
                _ => return Err(bad(format!("line {}: expected `u p`", k + 2))),
            }
        }
        if points.len() != n || n == 0 {
            return Err(bad(format!("expected {n} points, found {}", points.len())));
        }
        if points.windows(2).any(|w| w[0] >= w[1]) {
            return Err(bad("points not strictly increasing".into()));
        }
        let total: f64 = weights.iter().sum();
        if weights.iter().any(|&w| w <= 0.0) || (total - 1.0).abs() > 1e-12 {
            return Err(bad(format!("weights must be positive and sum to 1 (sum {total})")));
        }
        let bounds = cell_bounds(&points);
        let distortion = distortion(&points, &bounds);
        Ok(QuantGrid {
            points,
            weights,
            distortion,
        })
    }
}

/// Result of a Lloyd run together with the distortion after every iterate
/// (the first entry is the distortion of the initial grid).
#[derive(Debug, Clone)]
pub struct LloydRun {
    pub grid: QuantGrid,
    pub history: Vec<f64>,
    pub iterations: usize,
}

/// Builds the `n`-point optimal quantizer.
pub fn build(n: usize, tol: f64, max_iter: usize) -> Result<QuantGrid, QuantizeError> {
    run_lloyd(n, tol, max_iter, false).map(|run| run.grid)
}

/// Same as [`build`] but also records the distortion of every iterate.
pub fn lloyd(n: usize, tol: f64, max_iter: usize) -> Result<LloydRun, QuantizeError> {
    run_lloyd(n, tol, max_iter, true)
}

fn run_lloyd(n: usize, tol: f64, max_iter: usize, record: bool) -> Result<LloydRun, QuantizeError> {
    if n == 0 {
        return Err(QuantizeError::EmptyGrid);
    }
    let normal = Normal::standard();
    let mut points: Vec<f64> = (1..=n)
        .map(|k| normal.inverse_cdf((k as f64 - 0.5) / n as f64))
        .collect();
    symmetrize(&mut points);
    let mut history = Vec::new();
    let mut masses = vec![0.0; n];
    let mut centroids = vec![0.0; n];
    let mut residual = f64::INFINITY;
    for iter in 1..=max_iter {
        let bounds = cell_bounds(&points);
        for k in 0..n {
            masses[k] = mass(bounds[k], bounds[k + 1]);
            centroids[k] = (pdf(bounds[k]) - pdf(bounds[k + 1])) / masses[k];
        }
        if record {
            history.push(distortion_with(&points, &bounds, &masses, &centroids));
        }
        residual = 0.0;
        for (u, &c) in points.iter_mut().zip(&centroids) {
            residual = f64::max(residual, (c - *u).abs());
            *u = c;
        }
        symmetrize(&mut points);
        if residual < tol {
            let grid = QuantGrid::from_points(points);
            if record {
                history.push(grid.distortion);
            }
            return Ok(LloydRun {
                grid,
                history,
                iterations: iter,
            });
        }
    }
    Err(QuantizeError::NotConverged {
        iterations: max_iter,
        residual,
        last: Box::new(QuantGrid::from_points(points)),
    })
}

/// Loads `dir/normal_<n>.txt` or builds and stores it.
pub fn load_or_build(dir: &Path, n: usize) -> Result<QuantGrid, QuantizeError> {
    let path = cache_path(dir, n);
    if path.exists() {
        let grid = QuantGrid::load(&path)?;
        if grid.len() != n {
            return Err(QuantizeError::BadCache {
                path,
                reason: format!("holds {} points, wanted {n}", grid.len()),
            });
        }
        return Ok(grid);
    }
    let grid = build(n, DEFAULT_TOL, DEFAULT_MAX_ITER)?;
    fs::create_dir_all(dir)?;
    grid.save(&path)?;
    Ok(grid)
}

pub fn cache_path(dir: &Path, n: usize) -> PathBuf {
    dir.join(format!("normal_{n}.txt"))
}

fn symmetrize(points: &mut [f64]) {
    let n = points.len();
    for k in 0..n / 2 {
        let a = 0.5 * (points[n - 1 - k] - points[k]);
        points[k] = -a;
        points[n - 1 - k] = a;
    }
    if n % 2 == 1 {
        points[n / 2] = 0.0;
    }
}

/// Voronoi cell boundaries `[-inf, m_1, ..., m_{N-1}, +inf]`.
fn cell_bounds(points: &[f64]) -> Vec<f64> {
    let mut b = Vec::with_capacity(points.len() + 1);
    b.push(f64::NEG_INFINITY);
    b.extend(points.windows(2).map(|w| 0.5 * (w[0] + w[1])));
    b.push(f64::INFINITY);
    b
}

fn pdf(x: f64) -> f64 {
    if x.is_infinite() {
        0.0
    } else {
        (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
    }
}

/// Upper tail `P(U > x)`.
fn upper_tail(x: f64) -> f64 {
    if x == f64::INFINITY {
        0.0
    } else if x == f64::NEG_INFINITY {
        1.0
    } else {
        0.5 * erfc(x / std::f64::consts::SQRT_2)
    }
}

/// `P(a < U < b)` evaluated on whichever tail keeps precision.
fn mass(a: f64, b: f64) -> f64 {
    if a >= 0.0 {
        upper_tail(a) - upper_tail(b)
    } else if b <= 0.0 {
        upper_tail(-b) - upper_tail(-a)
    } else {
        1.0 - upper_tail(b) - upper_tail(-a)
    }
}

fn centroid(a: f64, b: f64) -> f64 {
    (pdf(a) - pdf(b)) / mass(a, b)
}

fn distortion(points: &[f64], bounds: &[f64]) -> f64 {
    let masses: Vec<f64> = bounds.windows(2).map(|c| mass(c[0], c[1])).collect();
    let centroids: Vec<f64> = bounds.windows(2).map(|c| centroid(c[0], c[1])).collect();
    distortion_with(points, bounds, &masses, &centroids)
}

/// `sum_k E[(U - u_k)^2; U in cell k]` as the within-cell variance of each
/// cell plus the squared offset of `u_k` from the cell mean.
fn distortion_with(points: &[f64], bounds: &[f64], masses: &[f64], centroids: &[f64]) -> f64 {
    points
        .iter()
        .enumerate()
        .map(|(k, &u)| {
            let (a, b, m0, c) = (bounds[k], bounds[k + 1], masses[k], centroids[k]);
            let var = if b - a < 1.0 {
                // narrow cell: the closed form cancels badly, integrate directly
                let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
                GAUSS_LEGENDRE_8
                    .iter()
                    .map(|&(t, w)| {
                        let x = mid + half * t;
                        w * (x - c) * (x - c) * pdf(x)
                    })
                    .sum::<f64>()
                    * half
            } else {
                let edge = |x: f64| if x.is_infinite() { 0.0 } else { (x - c) * pdf(x) };
                m0 + edge(a) - edge(b)
            };
            var.max(0.0) + m0 * (u - c) * (u - c)
        })
        .sum()
}

const GAUSS_LEGENDRE_8: [(f64, f64); 8] = [
    (-0.960_289_856_497_536_2, 0.101_228_536_290_376_26),
    (-0.796_666_477_413_626_7, 0.222_381_034_453_374_48),
    (-0.525_532_409_916_329, 0.313_706_645_877_887_3),
    (-0.183_434_642_495_649_8, 0.362_683_783_378_362),
    (0.183_434_642_495_649_8, 0.362_683_783_378_362),
    (0.525_532_409_916_329, 0.313_706_645_877_887_3),
    (0.796_666_477_413_626_7, 0.222_381_034_453_374_48),
    (0.960_289_856_497_536_2, 0.101_228_536_290_376_26),
];
