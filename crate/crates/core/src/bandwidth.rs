//! Hierarchical bandwidth prior `A^d ~ Gamma(a0, b0)` and a random-walk
//! Metropolis–Hastings sampler for the inverse bandwidth.
//!
//! The latent function is integrated out analytically, so the chain targets
//! `log p(A) + log N(y; 0, K^A + σ² I)` on `log A` (plus, optionally, an
//! inverse-Gamma step on `log σ²`).

use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::dataset::{format_f64, Dataset};
use crate::error::{Error, Result};
use crate::kernel::MarginalLikelihood;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandwidthPrior {
    pub a0: f64,
    pub b0: f64,
    pub d: u32,
}

impl BandwidthPrior {
    pub fn new(a0: f64, b0: f64, d: u32) -> Result<Self> {
        if !(a0 > 0.0 && a0.is_finite() && b0 > 0.0 && b0.is_finite()) {
            return Err(Error::invalid(format!("gamma hyperparameters must be positive, got ({a0}, {b0})")));
        }
        if d == 0 {
            return Err(Error::invalid("prior dimension exponent must be at least 1"));
        }
        Ok(Self { a0, b0, d })
    }

    pub fn log_density(&self, a: f64) -> Result<f64> {
        log_prior_density_a(self, a)
    }
}

impl Default for BandwidthPrior {
    fn default() -> Self {
        Self { a0: 1.0, b0: 1.0, d: 1 }
    }
}

/// Log density of `A` when `A^d ~ Gamma(shape a0, rate b0)`.
pub fn log_prior_density_a(prior: &BandwidthPrior, a: f64) -> Result<f64> {
    if !(a > 0.0) || !a.is_finite() {
        return Err(Error::invalid(format!("bandwidth must be positive, got {a}")));
    }
    let d = f64::from(prior.d);
    Ok((d * prior.a0 - 1.0) * a.ln() - prior.b0 * a.powf(d) + d.ln() + prior.a0 * prior.b0.ln()
        - ln_gamma(prior.a0))
}

/// Inverse-Gamma(shape, rate) prior on σ².
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoisePrior {
    pub shape: f64,
    pub rate: f64,
}

impl Default for NoisePrior {
    fn default() -> Self {
        Self { shape: 1.0, rate: 1.0 }
    }
}

impl NoisePrior {
    fn log_density(&self, v: f64) -> f64 {
        self.shape * self.rate.ln() - ln_gamma(self.shape) - (self.shape + 1.0) * v.ln() - self.rate / v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct McmcConfig {
    pub n_iter: usize,
    pub burn_in: usize,
    /// Random-walk scale on `log A` (and `log σ²`).
    pub proposal_sd: f64,
    /// Tune `proposal_sd` during burn-in toward 25–40% acceptance.
    pub adapt: bool,
    pub infer_noise: bool,
    /// σ² when not inferred.
    pub noise_var: f64,
    pub noise_prior: Option<NoisePrior>,
    pub seed: u64,
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self {
            n_iter: 10_000,
            burn_in: 5_000,
            proposal_sd: 0.3,
            adapt: true,
            infer_noise: false,
            noise_var: 0.01,
            noise_prior: None,
            seed: 0,
        }
    }
}

impl McmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_iter == 0 || self.burn_in >= self.n_iter {
            return Err(Error::invalid(format!(
                "need 0 <= burn_in < n_iter, got burn_in = {}, n_iter = {}",
                self.burn_in, self.n_iter
            )));
        }
        if !(self.proposal_sd > 0.0 && self.proposal_sd.is_finite()) {
            return Err(Error::invalid("proposal_sd must be positive"));
        }
        if !self.infer_noise && !(self.noise_var > 0.0 && self.noise_var.is_finite()) {
            return Err(Error::invalid("fixed noise variance must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandwidthChain {
    pub draws_a: Vec<f64>,
    pub draws_noise_var: Vec<f64>,
    pub accepted: Vec<bool>,
    pub log_marglik_trace: Vec<f64>,
    /// Fraction of accepted bandwidth moves after burn-in.
    pub accept_rate: f64,
    pub burn_in: usize,
    pub final_proposal_sd: f64,
}

impl BandwidthChain {
    pub fn len(&self) -> usize {
        self.draws_a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws_a.is_empty()
    }

    pub fn mean_a(&self) -> f64 {
        self.draws_a.iter().sum::<f64>() / self.len() as f64
    }

    pub fn sd_a(&self) -> f64 {
        let m = self.mean_a();
        let n = self.len() as f64;
        (self.draws_a.iter().map(|a| (a - m).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt()
    }

    /// CSV `iter,a,noise_var,log_marglik,accepted` over post-burn-in iterations.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
        let mut body = String::from("iter,a,noise_var,log_marglik,accepted\n");
        for i in 0..self.len() {
            body.push_str(&format!(
                "{},{},{},{},{}\n",
                self.burn_in + i,
                format_f64(self.draws_a[i]),
                format_f64(self.draws_noise_var[i]),
                format_f64(self.log_marglik_trace[i]),
                u8::from(self.accepted[i])
            ));
        }
        f.write_all(body.as_bytes()).map_err(|e| Error::io(path, e))
    }
}

/// Likelihood term of the chain's target, as a function of `(a, σ²)`.
pub trait ChainTarget {
    fn log_likelihood(&mut self, a: f64, noise_var: f64) -> Result<f64>;
}

/// GP marginal likelihood of a dataset.
pub struct GpMarginalTarget<'a> {
    inner: MarginalLikelihood<'a>,
}

impl<'a> GpMarginalTarget<'a> {
    pub fn new(ds: &'a Dataset) -> Self {
        Self {
            inner: MarginalLikelihood::new(ds),
        }
    }
}

impl ChainTarget for GpMarginalTarget<'_> {
    fn log_likelihood(&mut self, a: f64, noise_var: f64) -> Result<f64> {
        self.inner.eval(a, noise_var)
    }
}

/// Flat likelihood: the chain samples the prior. Used to validate the sampler.
pub struct PriorOnly;

impl ChainTarget for PriorOnly {
    fn log_likelihood(&mut self, _a: f64, _noise_var: f64) -> Result<f64> {
        Ok(0.0)
    }
}

/// `1 / median pairwise distance` over the rows of `ds`.
pub fn median_heuristic(ds: &Dataset) -> Result<f64> {
    let x = ds.predictors();
    let n = ds.n();
    let mut dists = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            let s: f64 = (0..x.ncols()).map(|k| (x[(i, k)] - x[(j, k)]).powi(2)).sum();
            dists.push(s.sqrt());
        }
    }
    dists.retain(|d| *d > 0.0);
    if dists.is_empty() {
        return Err(Error::Degenerate("all predictor rows coincide".into()));
    }
    dists.sort_by(|a, b| a.total_cmp(b));
    let m = dists.len();
    let med = if m % 2 == 1 {
        dists[m / 2]
    } else {
        0.5 * (dists[m / 2 - 1] + dists[m / 2])
    };
    Ok(1.0 / med)
}

pub fn run_chain(ds: &Dataset, prior: &BandwidthPrior, cfg: &McmcConfig) -> Result<BandwidthChain> {
    if ds.n() < 2 {
        return Err(Error::Degenerate(format!("need at least 2 observations, got {}", ds.n())));
    }
    let init_a = median_heuristic(ds)?;
    let init_noise = if cfg.infer_noise {
        let y = ds.responses();
        let mean = y.mean();
        let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / y.len() as f64;
        (0.1 * var).max(1e-6)
    } else {
        cfg.noise_var
    };
    run_chain_with(&mut GpMarginalTarget::new(ds), prior, cfg, init_a, init_noise)
}

/// Chain over an arbitrary likelihood with the bandwidth prior attached.
pub fn run_chain_with<T: ChainTarget + ?Sized>(
    target: &mut T,
    prior: &BandwidthPrior,
    cfg: &McmcConfig,
    init_a: f64,
    init_noise: f64,
) -> Result<BandwidthChain> {
    cfg.validate()?;
    let noise_prior = cfg.noise_prior.unwrap_or_default();
    let mut rng = seed::rng(cfg.seed);

    // log posterior in (log a, log σ²) coordinates, Jacobians included
    let log_prior_a = |a: f64| -> Result<f64> { Ok(prior.log_density(a)? + a.ln()) };
    let log_prior_noise = |v: f64| noise_prior.log_density(v) + v.ln();

    let mut a = init_a;
    let mut noise = init_noise;
    let mut loglik = target
        .log_likelihood(a, noise)
        .map_err(|e| Error::FitAtBandwidth { a, source: Box::new(e) })?;
    let mut lp_a = log_prior_a(a)?;
    let mut lp_noise = log_prior_noise(noise);

    let keep = cfg.n_iter - cfg.burn_in;
    let mut chain = BandwidthChain {
        draws_a: Vec::with_capacity(keep),
        draws_noise_var: Vec::with_capacity(keep),
        accepted: Vec::with_capacity(keep),
        log_marglik_trace: Vec::with_capacity(keep),
        accept_rate: 0.0,
        burn_in: cfg.burn_in,
        final_proposal_sd: cfg.proposal_sd,
    };

    const WINDOW: usize = 50;
    let mut sd_a = cfg.proposal_sd;
    let mut sd_noise = cfg.proposal_sd;
    let (mut win_acc_a, mut win_acc_noise) = (0usize, 0usize);
    let mut kept_accepts = 0usize;
    let mut failures = 0usize;

    for iter in 0..cfg.n_iter {
        let z: f64 = rng.sample(StandardNormal);
        let prop_a = (a.ln() + sd_a * z).exp();
        let u: f64 = rng.random();
        let mut accepted = false;
        if prop_a > 0.0 && prop_a.is_finite() {
            match target.log_likelihood(prop_a, noise) {
                Ok(ll) => {
                    let lp = log_prior_a(prop_a)?;
                    if u.ln() < (ll + lp) - (loglik + lp_a) {
                        a = prop_a;
                        loglik = ll;
                        lp_a = lp;
                        accepted = true;
                    }
                }
                Err(e) if e.is_numerical() => failures += 1,
                Err(e) => return Err(e),
            }
        }
        if accepted {
            win_acc_a += 1;
        }

        if cfg.infer_noise {
            let z: f64 = rng.sample(StandardNormal);
            let prop = (noise.ln() + sd_noise * z).exp();
            let u: f64 = rng.random();
            if prop > 0.0 && prop.is_finite() {
                match target.log_likelihood(a, prop) {
                    Ok(ll) => {
                        let lp = log_prior_noise(prop);
                        if u.ln() < (ll + lp) - (loglik + lp_noise) {
                            noise = prop;
                            loglik = ll;
                            lp_noise = lp;
                            win_acc_noise += 1;
                        }
                    }
                    Err(e) if e.is_numerical() => failures += 1,
                    Err(e) => return Err(e),
                }
            }
        }

        if iter < cfg.burn_in {
            if cfg.adapt && (iter + 1) % WINDOW == 0 {
                sd_a = adapt_scale(sd_a, win_acc_a as f64 / WINDOW as f64);
                sd_noise = adapt_scale(sd_noise, win_acc_noise as f64 / WINDOW as f64);
                win_acc_a = 0;
                win_acc_noise = 0;
            }
        } else {
            if accepted {
                kept_accepts += 1;
            }
            chain.draws_a.push(a);
            chain.draws_noise_var.push(noise);
            chain.accepted.push(accepted);
            chain.log_marglik_trace.push(loglik);
        }
    }

    if failures > 0 && kept_accepts == 0 {
        return Err(Error::ChainStalled(format!(
            "no proposal accepted after burn-in; {failures} proposals failed to factorize"
        )));
    }
    chain.accept_rate = kept_accepts as f64 / keep as f64;
    chain.final_proposal_sd = sd_a;
    Ok(chain)
}

fn adapt_scale(sd: f64, rate: f64) -> f64 {
    if rate < 0.25 {
        sd * 0.8
    } else if rate > 0.40 {
        sd * 1.25
    } else {
        sd
    }
}
