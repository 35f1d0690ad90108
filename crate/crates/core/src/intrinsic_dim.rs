//! Nearest-neighbor intrinsic dimension estimation.
//!
//! For a query point the estimate is `log 2 / (log r_k − log r_⌈k/2⌉)`,
//! where `r_j` is the distance to its j-th nearest neighbor. The reported
//! value is the median over a seeded sample of query points.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::bandwidth::BandwidthPrior;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::seed;
use crate::stats::median;

/// Smallest sample the estimator accepts.
pub const MIN_POINTS: usize = 8;
/// Default cap on the number of query points.
pub const DEFAULT_QUERIES: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionEstimate {
    pub d_hat_raw: f64,
    pub d_hat_rounded: u32,
    pub k_used: usize,
    pub n_query_points: usize,
    pub per_query_values: Vec<f64>,
    /// Queries dropped because a radius was zero or the two radii coincided.
    pub skipped_queries: usize,
}

/// Sorted distances from row `i` to every other row, ties by row index.
fn sorted_neighbor_distances(x: &DMatrix<f64>, i: usize) -> Vec<(f64, usize)> {
    let mut out: Vec<(f64, usize)> = (0..x.nrows())
        .filter(|&j| j != i)
        .map(|j| {
            let s: f64 = (0..x.ncols()).map(|c| (x[(i, c)] - x[(j, c)]).powi(2)).sum();
            (s.sqrt(), j)
        })
        .collect();
    out.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    out
}

/// Distance from row `query_idx` to its k-th nearest other row.
pub fn knn_radius(x: &DMatrix<f64>, query_idx: usize, k: usize) -> Result<f64> {
    let n = x.nrows();
    if query_idx >= n {
        return Err(Error::invalid(format!("query index {query_idx} out of range for n = {n}")));
    }
    if k == 0 || k > n.saturating_sub(1) {
        return Err(Error::invalid(format!("k = {k} must lie in 1..={}", n.saturating_sub(1))));
    }
    let r = sorted_neighbor_distances(x, query_idx)[k - 1].0;
    if r == 0.0 {
        return Err(Error::Degenerate(format!(
            "row {query_idx} has {k} or more duplicates; radius is zero"
        )));
    }
    Ok(r)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DimensionConfig {
    /// Neighbor count; `⌈√n⌉` when absent.
    pub k: Option<usize>,
    /// Number of query points; `min(n, 100)` when absent.
    pub n_queries: Option<usize>,
    /// Use only the first row as query.
    pub single_query: bool,
    pub seed: u64,
}

pub fn default_k(n: usize) -> usize {
    ((n as f64).sqrt().ceil() as usize).max(2)
}

pub fn estimate_dimension(
    x: &DMatrix<f64>,
    k: Option<usize>,
    n_queries: usize,
    seed: u64,
) -> Result<DimensionEstimate> {
    estimate_dimension_with(
        x,
        &DimensionConfig {
            k,
            n_queries: Some(n_queries),
            single_query: false,
            seed,
        },
    )
}

pub fn estimate_dimension_with(x: &DMatrix<f64>, cfg: &DimensionConfig) -> Result<DimensionEstimate> {
    let n = x.nrows();
    if n < MIN_POINTS {
        return Err(Error::invalid(format!("need at least {MIN_POINTS} points, got {n}")));
    }
    let k = cfg.k.unwrap_or_else(|| default_k(n));
    if k < 2 || k > n - 1 {
        return Err(Error::invalid(format!("k = {k} must lie in 2..={} for n = {n}", n - 1)));
    }
    let half = k.div_ceil(2);

    let queries: Vec<usize> = if cfg.single_query {
        vec![0]
    } else {
        let m = cfg.n_queries.unwrap_or(DEFAULT_QUERIES).clamp(1, n);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut seed::rng(seed::derive(cfg.seed, &[seed::stream::DIMENSION])));
        perm.truncate(m);
        perm
    };

    let mut values = Vec::with_capacity(queries.len());
    let mut skipped = 0usize;
    for &q in &queries {
        let d = sorted_neighbor_distances(x, q);
        let (rk, rh) = (d[k - 1].0, d[half - 1].0);
        let gap = (rk / rh).ln();
        if rh == 0.0 || !(gap > 0.0) {
            log::warn!("dimension query at row {q} skipped (r_k = {rk}, r_half = {rh})");
            skipped += 1;
            continue;
        }
        values.push(std::f64::consts::LN_2 / gap);
    }
    if values.is_empty() {
        return Err(Error::Degenerate(format!(
            "all {} dimension queries hit duplicate points",
            queries.len()
        )));
    }
    let d_hat_raw = median(&values);
    Ok(DimensionEstimate {
        d_hat_raw,
        d_hat_rounded: (d_hat_raw.round() as u32).max(1),
        k_used: k,
        n_query_points: values.len(),
        per_query_values: values,
        skipped_queries: skipped,
    })
}

/// Bandwidth prior with `d` set to the rounded dimension estimate of `ds`.
pub fn empirical_bayes_prior(
    ds: &Dataset,
    a0: f64,
    b0: f64,
    n_queries: usize,
    seed: u64,
) -> Result<BandwidthPrior> {
    let est = estimate_dimension(ds.predictors(), None, n_queries, seed)?;
    BandwidthPrior::new(a0, b0, est.d_hat_rounded)
}
