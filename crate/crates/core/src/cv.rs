//! Holdout selection of the prior dimension.
//!
//! For each candidate `k = 1..=d_max` a truncated estimator with prior
//! `A^k ~ Gamma(a0, b0)` is fitted on the training part of a random split and
//! scored by its mean squared prediction error on the held-out part. The
//! smallest score wins, ties going to the smaller `k`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::bandwidth::{BandwidthPrior, McmcConfig};
use crate::dataset::{split, Dataset, SplitIndices};
use crate::error::{Error, Result};
use crate::estimator::{fit_truncated, EstimatorConfig, FitResult, TruncationLevel};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CvConfig {
    pub d_max: u32,
    pub test_fraction: f64,
    pub mcmc: McmcConfig,
    /// `2 max|y|` of the training part when absent.
    pub tau: Option<TruncationLevel>,
    pub a0: f64,
    pub b0: f64,
    pub estimator: EstimatorConfig,
    /// Number of random splits whose scores are averaged.
    pub n_splits: usize,
    /// Also refit the selected dimension on all rows.
    pub refit_all: bool,
    pub seed: u64,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self {
            d_max: 20,
            test_fraction: 0.5,
            mcmc: McmcConfig::default(),
            tau: None,
            a0: 1.0,
            b0: 1.0,
            estimator: EstimatorConfig::default(),
            n_splits: 1,
            refit_all: false,
            seed: 0,
        }
    }
}

impl CvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_max == 0 {
            return Err(Error::invalid("d_max must be at least 1"));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::invalid(format!(
                "test fraction must lie in (0, 1), got {}",
                self.test_fraction
            )));
        }
        if self.n_splits == 0 {
            return Err(Error::invalid("n_splits must be at least 1"));
        }
        self.mcmc.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateFailure {
    pub dim: u32,
    pub split: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    /// Entry `k − 1` scores candidate `k`; failed candidates score `+∞`.
    #[serde(rename = "mspe")]
    pub mspe_per_dim: Vec<f64>,
    pub selected_dim: u32,
    /// Selected candidate fitted on the training part of the first split,
    /// with estimates at its test rows.
    pub final_fit: FitResult,
    pub split: SplitIndices,
    pub failures: Vec<CandidateFailure>,
    /// Selected dimension refitted on every row, when requested.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub refit: Option<FitResult>,
}

impl CvResult {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

pub fn mspe(estimates: &[f64], test_y: &[f64]) -> Result<f64> {
    if estimates.len() != test_y.len() {
        return Err(Error::DimensionMismatch {
            expected: test_y.len(),
            found: estimates.len(),
        });
    }
    if estimates.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(estimates
        .iter()
        .zip(test_y)
        .map(|(e, y)| (e - y).powi(2))
        .sum::<f64>()
        / estimates.len() as f64)
}

/// Index of the smallest entry, first one on ties.
pub fn argmin_first(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x < v[best] {
            best = i;
        }
    }
    best
}

/// Fits the estimator for candidate dimension `dim` on `train` and predicts at `query_x`.
pub trait CandidateFitter {
    fn fit(&self, train: &Dataset, query_x: &DMatrix<f64>, dim: u32, seed: u64) -> Result<FitResult>;
}

/// The truncated GP estimator under prior `A^dim ~ Gamma(a0, b0)`.
#[derive(Debug, Clone)]
pub struct TruncatedGpCandidates {
    pub a0: f64,
    pub b0: f64,
    pub mcmc: McmcConfig,
    pub tau: Option<TruncationLevel>,
    pub estimator: EstimatorConfig,
}

impl TruncatedGpCandidates {
    pub fn from_config(cfg: &CvConfig) -> Self {
        Self {
            a0: cfg.a0,
            b0: cfg.b0,
            mcmc: cfg.mcmc.clone(),
            tau: cfg.tau,
            estimator: cfg.estimator,
        }
    }
}

impl CandidateFitter for TruncatedGpCandidates {
    fn fit(&self, train: &Dataset, query_x: &DMatrix<f64>, dim: u32, seed: u64) -> Result<FitResult> {
        let prior = BandwidthPrior::new(self.a0, self.b0, dim)?;
        let mcmc = McmcConfig {
            seed,
            ..self.mcmc.clone()
        };
        let est = EstimatorConfig {
            seed: seed::derive(seed, &[seed::stream::ESTIMATE]),
            ..self.estimator
        };
        fit_truncated(train, &prior, &mcmc, query_x, self.tau, &est)
    }
}

pub fn cross_validate(ds: &Dataset, cfg: &CvConfig) -> Result<CvResult> {
    cross_validate_with(ds, cfg, &TruncatedGpCandidates::from_config(cfg))
}

pub fn cross_validate_with(ds: &Dataset, cfg: &CvConfig, fitter: &dyn CandidateFitter) -> Result<CvResult> {
    cfg.validate()?;
    let d_max = cfg.d_max as usize;
    let mut totals = vec![0.0; d_max];
    let mut failures = Vec::new();
    let mut first: Option<(SplitIndices, Vec<Option<FitResult>>)> = None;

    for r in 0..cfg.n_splits {
        let sp = split(ds, cfg.test_fraction, seed::derive(cfg.seed, &[seed::stream::SPLIT, r as u64]))?;
        if sp.train_idx.len() < 2 || sp.test_idx.is_empty() {
            return Err(Error::invalid(format!(
                "split of n = {} leaves {} training and {} test rows",
                ds.n(),
                sp.train_idx.len(),
                sp.test_idx.len()
            )));
        }
        let train = ds.subset(&sp.train_idx)?;
        let test = ds.subset(&sp.test_idx)?;
        let test_y = test.responses().as_slice();
        let mut fits = Vec::with_capacity(d_max);
        for k in 1..=cfg.d_max {
            let s = seed::derive(cfg.seed, &[seed::stream::CANDIDATE, r as u64, k as u64]);
            let scored = fitter
                .fit(&train, test.predictors(), k, s)
                .and_then(|fit| Ok((mspe(&fit.estimate_at_query, test_y)?, fit)));
            match scored {
                Ok((score, fit)) => {
                    totals[k as usize - 1] += score;
                    fits.push(Some(fit));
                }
                Err(e) => {
                    log::warn!("candidate d = {k} failed on split {r}: {e}");
                    failures.push(CandidateFailure {
                        dim: k,
                        split: r,
                        message: e.to_string(),
                    });
                    totals[k as usize - 1] = f64::INFINITY;
                    fits.push(None);
                }
            }
        }
        if first.is_none() {
            first = Some((sp, fits));
        }
    }

    let mspe_per_dim: Vec<f64> = totals.iter().map(|t| t / cfg.n_splits as f64).collect();
    if mspe_per_dim.iter().all(|v| v.is_infinite()) {
        return Err(Error::Degenerate(format!("all {d_max} candidate dimensions failed")));
    }
    let best = argmin_first(&mspe_per_dim);
    let (split_used, mut fits) = first.expect("n_splits >= 1");
    let final_fit = match fits[best].take() {
        Some(f) => f,
        // selected candidate failed on the first split only
        None => {
            let train = ds.subset(&split_used.train_idx)?;
            let test = ds.subset(&split_used.test_idx)?;
            let s = seed::derive(cfg.seed, &[seed::stream::CANDIDATE, 0, best as u64 + 1]);
            fitter.fit(&train, test.predictors(), best as u32 + 1, s)?
        }
    };
    let refit = if cfg.refit_all {
        let none = DMatrix::zeros(0, ds.dim());
        let s = seed::derive(cfg.seed, &[seed::stream::CANDIDATE, u64::MAX, best as u64 + 1]);
        Some(fitter.fit(ds, &none, best as u32 + 1, s)?)
    } else {
        None
    };
    Ok(CvResult {
        mspe_per_dim,
        selected_dim: best as u32 + 1,
        final_fit,
        split: split_used,
        failures,
        refit,
    })
}
