//! Named regression models behind a common trait.
//!
//! | name         | prior dimension                 | predictors          |
//! |--------------|---------------------------------|---------------------|
//! | `gp-eb`      | rounded kNN dimension estimate  | ambient             |
//! | `gp-fixed-d` | `fixed_dim`                     | ambient             |
//! | `2gp`        | `fixed_dim`                     | Laplacian eigenmap  |
//! | `cv`         | holdout-selected in `1..=d_max` | ambient             |

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::bandwidth::{BandwidthPrior, McmcConfig};
use crate::cv::{cross_validate, CandidateFitter, CvConfig, TruncatedGpCandidates};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::estimator::{fit_truncated, EstimatorConfig, FitResult, TruncationLevel};
use crate::intrinsic_dim::{estimate_dimension, DEFAULT_QUERIES};
use crate::seed;
use crate::two_stage::{two_stage_predict, EigenmapConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSettings {
    pub a0: f64,
    pub b0: f64,
    pub mcmc: McmcConfig,
    pub estimator: EstimatorConfig,
    pub tau: Option<TruncationLevel>,
    /// Prior dimension for `gp-fixed-d` and `2gp`.
    pub fixed_dim: u32,
    /// Query points for the dimension estimate of `gp-eb`.
    pub dim_queries: usize,
    pub eigenmap: EigenmapConfig,
    pub d_max: u32,
    pub test_fraction: f64,
}

impl Default for ModelSettings {
    fn default() -> Self {
        Self {
            a0: 1.0,
            b0: 1.0,
            mcmc: McmcConfig::default(),
            estimator: EstimatorConfig::default(),
            tau: None,
            fixed_dim: 1,
            dim_queries: DEFAULT_QUERIES,
            eigenmap: EigenmapConfig::default(),
            d_max: 20,
            test_fraction: 0.5,
        }
    }
}

impl ModelSettings {
    /// Chain and estimator configuration for a fit seeded by `seed`.
    pub fn seeded(&self, seed: u64) -> (McmcConfig, EstimatorConfig) {
        let mcmc = McmcConfig {
            seed: seed::derive(seed, &[seed::stream::CHAIN]),
            ..self.mcmc.clone()
        };
        let est = EstimatorConfig {
            seed: seed::derive(seed, &[seed::stream::ESTIMATE]),
            ..self.estimator
        };
        (mcmc, est)
    }

    fn fit_with_dim(&self, train: &Dataset, query_x: &DMatrix<f64>, dim: u32, seed: u64) -> Result<FitResult> {
        let prior = BandwidthPrior::new(self.a0, self.b0, dim)?;
        let (mcmc, est) = self.seeded(seed);
        fit_truncated(train, &prior, &mcmc, query_x, self.tau, &est)
    }
}

pub trait RegressionModel {
    fn name(&self) -> &'static str;
    /// Fits on `train` and returns estimates at the training rows and at `query_x`.
    fn fit_predict(&self, train: &Dataset, query_x: &DMatrix<f64>, seed: u64) -> Result<FitResult>;
}

pub struct EmpiricalBayesGp(pub ModelSettings);
pub struct FixedDimGp(pub ModelSettings);
pub struct TwoStageGp(pub ModelSettings);
pub struct CvGp(pub ModelSettings);

impl RegressionModel for EmpiricalBayesGp {
    fn name(&self) -> &'static str {
        "gp-eb"
    }

    fn fit_predict(&self, train: &Dataset, query_x: &DMatrix<f64>, seed: u64) -> Result<FitResult> {
        let d = estimate_dimension(train.predictors(), None, self.0.dim_queries, seed)?.d_hat_rounded;
        self.0.fit_with_dim(train, query_x, d, seed)
    }
}

impl RegressionModel for FixedDimGp {
    fn name(&self) -> &'static str {
        "gp-fixed-d"
    }

    fn fit_predict(&self, train: &Dataset, query_x: &DMatrix<f64>, seed: u64) -> Result<FitResult> {
        self.0.fit_with_dim(train, query_x, self.0.fixed_dim, seed)
    }
}

impl RegressionModel for TwoStageGp {
    fn name(&self) -> &'static str {
        "2gp"
    }

    fn fit_predict(&self, train: &Dataset, query_x: &DMatrix<f64>, seed: u64) -> Result<FitResult> {
        let prior = BandwidthPrior::new(self.0.a0, self.0.b0, self.0.fixed_dim)?;
        let (mcmc, est) = self.0.seeded(seed);
        let emap = EigenmapConfig {
            seed: seed::derive(seed, &[seed::stream::EMBEDDING]),
            ..self.0.eigenmap
        };
        let (mut fit, _) = two_stage_predict(train, query_x, &emap, &prior, &mcmc, self.0.tau, &est)?;
        fit.prior_dim = Some(self.0.fixed_dim);
        Ok(fit)
    }
}

impl RegressionModel for CvGp {
    fn name(&self) -> &'static str {
        "cv"
    }

    /// Selects the dimension on a holdout split of `train`, then refits on all of `train`.
    fn fit_predict(&self, train: &Dataset, query_x: &DMatrix<f64>, seed: u64) -> Result<FitResult> {
        let s = &self.0;
        let cfg = CvConfig {
            d_max: s.d_max,
            test_fraction: s.test_fraction,
            mcmc: s.mcmc.clone(),
            tau: s.tau,
            a0: s.a0,
            b0: s.b0,
            estimator: s.estimator,
            n_splits: 1,
            refit_all: false,
            seed,
        };
        let selected = cross_validate(train, &cfg)?.selected_dim;
        let candidates = TruncatedGpCandidates::from_config(&cfg);
        candidates.fit(train, query_x, selected, seed::derive(seed, &[seed::stream::CANDIDATE]))
    }
}

pub struct ModelRegistry {
    models: BTreeMap<&'static str, Box<dyn RegressionModel>>,
}

impl ModelRegistry {
    pub fn empty() -> Self {
        Self {
            models: BTreeMap::new(),
        }
    }

    pub fn builtin(settings: &ModelSettings) -> Self {
        let mut r = Self::empty();
        r.register(Box::new(EmpiricalBayesGp(settings.clone())));
        r.register(Box::new(FixedDimGp(settings.clone())));
        r.register(Box::new(TwoStageGp(settings.clone())));
        r.register(Box::new(CvGp(settings.clone())));
        r
    }

    /// Adds `model`, replacing any model of the same name.
    pub fn register(&mut self, model: Box<dyn RegressionModel>) {
        self.models.insert(model.name(), model);
    }

    pub fn get(&self, name: &str) -> Result<&dyn RegressionModel> {
        self.models.get(name).map(|m| m.as_ref()).ok_or_else(|| {
            Error::invalid(format!(
                "unknown model '{name}' (available: {})",
                self.names().join(", ")
            ))
        })
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.models.keys().copied().collect()
    }
}
