//! Truncated Bayes estimator: the posterior mean of `clamp(f, −τ, τ)`,
//! approximated by averaging truncated function draws over retained
//! bandwidth draws.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::bandwidth::{run_chain, BandwidthChain, BandwidthPrior, McmcConfig};
use crate::dataset::{empirical_norm, Dataset, EmpiricalNorm};
use crate::error::{Error, Result};
use crate::kernel::{fit_gp_with_sq, sq_dist_matrix};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TruncationLevel(f64);

impl TruncationLevel {
    pub fn new(tau: f64) -> Result<Self> {
        if tau > 0.0 && !tau.is_nan() {
            Ok(Self(tau))
        } else {
            Err(Error::invalid(format!("truncation level must be positive, got {tau}")))
        }
    }

    /// `2 · max |y|`, or 1 when every response is zero.
    pub fn from_responses(y: &DVector<f64>) -> Self {
        let m = y.amax();
        Self(if m > 0.0 { 2.0 * m } else { 1.0 })
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

pub fn truncate(v: f64, tau: f64) -> f64 {
    v.max(-tau).min(tau)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimatorConfig {
    pub draws_per_a: usize,
    pub thin: usize,
    pub seed: u64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            draws_per_a: 1,
            thin: 10,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainSummary {
    pub mean_a: f64,
    pub sd_a: f64,
    pub accept_rate: f64,
    pub n_draws: usize,
}

impl From<&BandwidthChain> for ChainSummary {
    fn from(c: &BandwidthChain) -> Self {
        Self {
            mean_a: c.mean_a(),
            sd_a: c.sd_a(),
            accept_rate: c.accept_rate,
            n_draws: c.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    #[serde(rename = "estimate_train")]
    pub estimate_at_train: Vec<f64>,
    #[serde(rename = "estimate_query")]
    pub estimate_at_query: Vec<f64>,
    pub n_function_draws: usize,
    pub chain: ChainSummary,
    pub tau: TruncationLevel,
    /// Selected or plugged-in prior dimension, when one applies.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub prior_dim: Option<u32>,
    /// Predictors were produced by a transductive embedding.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub transductive: bool,
}

impl FitResult {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

pub fn estimate(
    ds: &Dataset,
    chain: &BandwidthChain,
    query_x: &DMatrix<f64>,
    tau: TruncationLevel,
    cfg: &EstimatorConfig,
) -> Result<FitResult> {
    estimate_inspect(ds, chain, query_x, tau, cfg, &mut |_| {})
}

/// [`estimate`], handing every raw (untruncated) joint draw over
/// train ∪ query rows to `on_sample` before it is truncated.
pub fn estimate_inspect(
    ds: &Dataset,
    chain: &BandwidthChain,
    query_x: &DMatrix<f64>,
    tau: TruncationLevel,
    cfg: &EstimatorConfig,
    on_sample: &mut dyn FnMut(&DVector<f64>),
) -> Result<FitResult> {
    if chain.is_empty() {
        return Err(Error::invalid("bandwidth chain is empty"));
    }
    if query_x.nrows() > 0 && query_x.ncols() != ds.dim() {
        return Err(Error::DimensionMismatch {
            expected: ds.dim(),
            found: query_x.ncols(),
        });
    }
    if cfg.draws_per_a == 0 || cfg.thin == 0 {
        return Err(Error::invalid("draws_per_a and thin must be positive"));
    }
    let n = ds.n();
    let q = query_x.nrows();
    let joint = if q > 0 {
        let mut m = DMatrix::zeros(n + q, ds.dim());
        m.rows_mut(0, n).copy_from(ds.predictors());
        m.rows_mut(n, q).copy_from(query_x);
        m
    } else {
        ds.predictors().clone()
    };
    let sq = sq_dist_matrix(ds.predictors());
    let tau_v = tau.value();

    let mut sum = DVector::zeros(n + q);
    let mut count = 0usize;
    for (j, idx) in (0..chain.len()).step_by(cfg.thin).enumerate() {
        let a = chain.draws_a[idx];
        let noise = chain.draws_noise_var[idx];
        let wrap = |e| Error::FitAtBandwidth { a, source: Box::new(e) };
        let gp = fit_gp_with_sq(ds, &sq, a, noise, 0.0).map_err(wrap)?;
        let sampler = gp.sampler(&joint).map_err(wrap)?;
        let mut rng = seed::rng(seed::derive(cfg.seed, &[seed::stream::ESTIMATE, j as u64]));
        for _ in 0..cfg.draws_per_a {
            let draw = sampler.draw(&mut rng);
            on_sample(&draw);
            for (s, v) in sum.iter_mut().zip(draw.iter()) {
                *s += truncate(*v, tau_v);
            }
            count += 1;
        }
    }
    sum /= count as f64;
    // rounding in the average can step one ulp past tau
    sum.apply(|v| *v = v.clamp(-tau_v, tau_v));
    Ok(FitResult {
        estimate_at_train: sum.rows(0, n).iter().copied().collect(),
        estimate_at_query: sum.rows(n, q).iter().copied().collect(),
        n_function_draws: count,
        chain: ChainSummary::from(chain),
        tau,
        prior_dim: None,
        transductive: false,
    })
}

/// Runs the bandwidth chain on `ds` and then the truncated estimator.
pub fn fit_truncated(
    ds: &Dataset,
    prior: &BandwidthPrior,
    mcmc: &McmcConfig,
    query_x: &DMatrix<f64>,
    tau: Option<TruncationLevel>,
    cfg: &EstimatorConfig,
) -> Result<FitResult> {
    let chain = run_chain(ds, prior, mcmc)?;
    let tau = tau.unwrap_or_else(|| TruncationLevel::from_responses(ds.responses()));
    let mut fit = estimate(ds, &chain, query_x, tau, cfg)?;
    fit.prior_dim = Some(prior.d);
    Ok(fit)
}

/// `‖f̂ − truth‖_n` over the training rows.
pub fn evaluate(fit: &FitResult, truth_at_points: &[f64]) -> Result<EmpiricalNorm> {
    empirical_norm(&fit.estimate_at_train, truth_at_points)
}

/// Same norm over the query rows.
pub fn evaluate_query(fit: &FitResult, truth_at_points: &[f64]) -> Result<EmpiricalNorm> {
    empirical_norm(&fit.estimate_at_query, truth_at_points)
}
