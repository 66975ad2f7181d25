//! k-nearest-neighbor entropy and mutual information estimators.
//!
//! Differential entropy uses the Kozachenko–Leonenko estimator with Euclidean
//! neighborhoods; mutual information uses the first KSG estimator with
//! max-norm neighborhoods. Neighbor search is brute force, parallel over
//! query points.

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::rng::{purpose, substream};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{digamma, ln_gamma};
use std::f64::consts::{LN_2, PI};

/// `N` points of dimension `d`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Points {
    dim: usize,
    data: Vec<f64>,
}

impl Points {
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 || data.len() % dim != 0 {
            return Err(Error::Dimension(format!(
                "{} values do not form points of dimension {dim}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Contract("points must be finite".into()));
        }
        Ok(Points { dim, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::Dimension("rows have different lengths".into()));
        }
        Points::new(dim, rows.concat())
    }

    /// One-dimensional points.
    pub fn scalar(values: Vec<f64>) -> Result<Self> {
        Points::new(1, values)
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    fn has_duplicates(&self) -> bool {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.sort_by(|&a, &b| {
            self.row(a)
                .iter()
                .zip(self.row(b))
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        idx.windows(2).any(|w| self.row(w[0]) == self.row(w[1]))
    }

    /// Largest per-dimension range.
    fn spread(&self) -> f64 {
        (0..self.dim)
            .map(|j| {
                let col = self.data.iter().skip(j).step_by(self.dim);
                let (lo, hi) = col.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                    (lo.min(v), hi.max(v))
                });
                hi - lo
            })
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KnnConfig {
    pub k: usize,
    /// Standard deviation of the tie-breaking jitter, relative to the data spread.
    pub jitter: f64,
    pub seed: u64,
    #[serde(skip)]
    pub exec: Execution,
}

impl Default for KnnConfig {
    fn default() -> Self {
        KnnConfig {
            k: 3,
            jitter: 1e-10,
            seed: 0,
            exec: Execution::Parallel,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Quantity {
    Entropy,
    MutualInformation,
}

impl std::fmt::Display for Quantity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Quantity::Entropy => "entropy",
            Quantity::MutualInformation => "mutual_information",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InfoEstimate {
    pub quantity: Quantity,
    pub nats: f64,
    pub bits: f64,
    pub k: usize,
    pub n: usize,
}

impl InfoEstimate {
    fn new(quantity: Quantity, nats: f64, k: usize, n: usize) -> Self {
        InfoEstimate {
            quantity,
            nats,
            bits: nats / LN_2,
            k,
            n,
        }
    }
}

/// Log-volume of the `d`-dimensional Euclidean unit ball.
pub fn ln_unit_ball_volume(d: usize) -> f64 {
    let h = d as f64 / 2.0;
    h * PI.ln() - ln_gamma(h + 1.0)
}

/// Adds jitter to every coordinate if any two points coincide.
fn tie_break(p: &Points, cfg: &KnnConfig, stream: u64) -> Result<Points> {
    if !p.has_duplicates() {
        return Ok(p.clone());
    }
    let spread = p.spread();
    let sd = cfg.jitter * spread;
    if sd <= 0.0 {
        return Err(Error::Contract(format!(
            "all {} points are identical (or jitter = {}); k-NN estimates are undefined, \
             use a positive jitter scale on non-constant data",
            p.len(),
            cfg.jitter
        )));
    }
    let mut rng = substream(cfg.seed, &[purpose::JITTER, stream]);
    let data = p
        .data
        .iter()
        .map(|&v| {
            let z: f64 = StandardNormal.sample(&mut rng);
            v + sd * z
        })
        .collect();
    Points::new(p.dim, data)
}

fn euclid_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn max_norm(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// The `k`-th smallest of `dist(i, j)` over `j ≠ i`.
fn kth_neighbor<F: Fn(usize) -> f64>(n: usize, i: usize, k: usize, dist: F) -> f64 {
    let mut best: Vec<f64> = Vec::with_capacity(k + 1);
    for j in (0..n).filter(|&j| j != i) {
        let d = dist(j);
        if best.len() < k || d < best[k - 1] {
            let pos = best.partition_point(|&b| b <= d);
            best.insert(pos, d);
            best.truncate(k);
        }
    }
    best[k - 1]
}

fn check_k(n: usize, k: usize) -> Result<()> {
    if k == 0 || n <= k {
        return Err(Error::Contract(format!("k-NN estimation needs N > k ≥ 1 (N = {n}, k = {k})")));
    }
    Ok(())
}

/// Kozachenko–Leonenko differential entropy (nats):
/// `ψ(N) − ψ(k) + ln V_d + (d/N) Σ ln r_i`, with `r_i` the Euclidean distance
/// from point `i` to its `k`-th neighbor.
pub fn knn_entropy(x: &Points, cfg: &KnnConfig) -> Result<InfoEstimate> {
    let n = x.len();
    check_k(n, cfg.k)?;
    let x = tie_break(x, cfg, 0)?;
    let d = x.dim();
    let log_r: Vec<f64> = cfg.exec.map(n, |i| {
        let r2 = kth_neighbor(n, i, cfg.k, |j| euclid_sq(x.row(i), x.row(j)));
        0.5 * r2.ln()
    });
    let mean_log_r = log_r.iter().sum::<f64>() / n as f64;
    let h = digamma(n as f64) - digamma(cfg.k as f64) + ln_unit_ball_volume(d) + d as f64 * mean_log_r;
    if !h.is_finite() {
        return Err(Error::Contract(
            "coincident neighbors left a zero distance; increase the jitter scale".into(),
        ));
    }
    Ok(InfoEstimate::new(Quantity::Entropy, h, cfg.k, n))
}

/// KSG mutual information (first estimator), nats:
/// `ψ(k) + ψ(N) − ⟨ψ(n_x + 1) + ψ(n_y + 1)⟩`.
pub fn knn_mutual_information(x: &Points, y: &Points, cfg: &KnnConfig) -> Result<InfoEstimate> {
    let n = x.len();
    if y.len() != n {
        return Err(Error::Dimension(format!("{n} X samples vs {} Y samples", y.len())));
    }
    check_k(n, cfg.k)?;
    let x = tie_break(x, cfg, 1)?;
    let y = tie_break(y, cfg, 2)?;
    let terms: Vec<f64> = cfg.exec.map(n, |i| {
        let (xi, yi) = (x.row(i), y.row(i));
        let eps = kth_neighbor(n, i, cfg.k, |j| max_norm(xi, x.row(j)).max(max_norm(yi, y.row(j))));
        let mut nx = 0usize;
        let mut ny = 0usize;
        for j in (0..n).filter(|&j| j != i) {
            if max_norm(xi, x.row(j)) < eps {
                nx += 1;
            }
            if max_norm(yi, y.row(j)) < eps {
                ny += 1;
            }
        }
        digamma(nx as f64 + 1.0) + digamma(ny as f64 + 1.0)
    });
    let mean = terms.iter().sum::<f64>() / n as f64;
    let mi = digamma(cfg.k as f64) + digamma(n as f64) - mean;
    Ok(InfoEstimate::new(Quantity::MutualInformation, mi, cfg.k, n))
}
