//! Squared-exponential kernel, Gram matrices, and conjugate GP algebra.
//!
//! The covariance is `K^a(x, y) = exp(-a² ‖x − y‖²)` with unit prior
//! variance. Observations carry Gaussian noise with variance σ², so the
//! latent function given data and `a` is Gaussian in closed form.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};

/// First rung of the jitter ladder used when a factorization fails.
pub const JITTER_START: f64 = 1e-10;
/// Retries after the caller's jitter, each ten times the previous one.
pub const JITTER_RETRIES: usize = 5;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    a: f64,
}

impl KernelParams {
    pub fn new(a: f64) -> Result<Self> {
        if a > 0.0 && a.is_finite() {
            Ok(Self { a })
        } else {
            Err(Error::invalid(format!("inverse bandwidth must be positive and finite, got {a}")))
        }
    }

    pub fn a(&self) -> f64 {
        self.a
    }
}

pub fn kernel(a: f64, x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            found: y.len(),
        });
    }
    if !a.is_finite() || x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("kernel input"));
    }
    let r2: f64 = x.iter().zip(y).map(|(u, v)| (u - v).powi(2)).sum();
    Ok((-a * a * r2).exp())
}

/// Pairwise squared Euclidean distances between the rows of `x`.
pub fn sq_dist_matrix(x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows();
    let mut out = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let mut s = 0.0;
            for k in 0..x.ncols() {
                let d = x[(i, k)] - x[(j, k)];
                s += d * d;
            }
            out[(i, j)] = s;
            out[(j, i)] = s;
        }
    }
    out
}

/// Squared distances between rows of `x` (n) and rows of `z` (q), shape n × q.
pub fn cross_sq_dist(x: &DMatrix<f64>, z: &DMatrix<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(x.nrows(), z.nrows(), |i, j| {
        let mut s = 0.0;
        for k in 0..x.ncols() {
            let d = x[(i, k)] - z[(j, k)];
            s += d * d;
        }
        s
    })
}

pub fn kernel_from_sq(a: f64, sq: &DMatrix<f64>) -> DMatrix<f64> {
    let a2 = a * a;
    sq.map(|r2| (-a2 * r2).exp())
}

pub fn gram(a: f64, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    KernelParams::new(a)?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("gram input"));
    }
    Ok(kernel_from_sq(a, &sq_dist_matrix(x)))
}

/// Cholesky of `m + jitter·I`, escalating the jitter along the ladder on failure.
/// Returns the factor and the jitter that succeeded.
pub fn cholesky_with_jitter(m: &DMatrix<f64>, jitter: f64) -> Result<(Cholesky<f64, Dyn>, f64)> {
    let mut j = jitter.max(0.0);
    let mut tried = j;
    for _ in 0..=JITTER_RETRIES {
        tried = j;
        let mut shifted = m.clone();
        if j > 0.0 {
            for i in 0..shifted.nrows() {
                shifted[(i, i)] += j;
            }
        }
        if let Some(c) = Cholesky::new(shifted) {
            let l = c.l_dirty();
            if (0..l.nrows()).all(|i| l[(i, i)] > 0.0 && l[(i, i)].is_finite()) {
                return Ok((c, j));
            }
        }
        j = if j < JITTER_START { JITTER_START } else { j * 10.0 };
    }
    Err(Error::Factorization { jitter: tried })
}

/// A GP conditioned on training data at fixed `a` and σ².
#[derive(Debug, Clone)]
pub struct GpState {
    pub params: KernelParams,
    pub noise_var: f64,
    /// Jitter actually added beyond σ² to make the factorization succeed.
    pub jitter: f64,
    train_x: DMatrix<f64>,
    train_y: DVector<f64>,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
}

pub fn fit_gp(ds: &Dataset, a: f64, noise_var: f64, jitter: f64) -> Result<GpState> {
    let sq = sq_dist_matrix(ds.predictors());
    fit_gp_with_sq(ds, &sq, a, noise_var, jitter)
}

/// Same as [`fit_gp`] with precomputed training squared distances.
pub fn fit_gp_with_sq(
    ds: &Dataset,
    sq: &DMatrix<f64>,
    a: f64,
    noise_var: f64,
    jitter: f64,
) -> Result<GpState> {
    let params = KernelParams::new(a)?;
    if !(noise_var > 0.0 || (noise_var == 0.0 && jitter > 0.0)) || !noise_var.is_finite() {
        return Err(Error::invalid(format!(
            "noise variance plus jitter must be positive (σ² = {noise_var}, jitter = {jitter})"
        )));
    }
    let mut k = kernel_from_sq(a, sq);
    for i in 0..k.nrows() {
        k[(i, i)] += noise_var;
    }
    let (chol, jitter_used) = cholesky_with_jitter(&k, jitter)?;
    let alpha = chol.solve(ds.responses());
    Ok(GpState {
        params,
        noise_var,
        jitter: jitter_used,
        train_x: ds.predictors().clone(),
        train_y: ds.responses().clone(),
        chol,
        alpha,
    })
}

#[derive(Debug, Clone)]
pub struct Posterior {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GpState {
    pub fn alpha(&self) -> &DVector<f64> {
        &self.alpha
    }

    /// Lower-triangular factor of K + (σ² + jitter)·I.
    pub fn chol_factor(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    pub fn train_x(&self) -> &DMatrix<f64> {
        &self.train_x
    }

    pub fn train_y(&self) -> &DVector<f64> {
        &self.train_y
    }

    fn check_query(&self, query_x: &DMatrix<f64>) -> Result<()> {
        if query_x.ncols() != self.train_x.ncols() {
            return Err(Error::DimensionMismatch {
                expected: self.train_x.ncols(),
                found: query_x.ncols(),
            });
        }
        if query_x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("query points"));
        }
        Ok(())
    }

    /// Posterior mean and covariance of the latent function at `query_x`.
    pub fn posterior(&self, query_x: &DMatrix<f64>) -> Result<Posterior> {
        self.check_query(query_x)?;
        let a = self.params.a();
        let k_star = kernel_from_sq(a, &cross_sq_dist(&self.train_x, query_x));
        let mean = k_star.tr_mul(&self.alpha);
        let v = self
            .chol
            .l_dirty()
            .solve_lower_triangular(&k_star)
            .ok_or(Error::Factorization { jitter: self.jitter })?;
        let mut cov = kernel_from_sq(a, &sq_dist_matrix(query_x)) - v.tr_mul(&v);
        symmetrize(&mut cov);
        Ok(Posterior { mean, cov })
    }

    /// One joint posterior draw of the latent function at `query_x`.
    pub fn sample_posterior<R: Rng + ?Sized>(
        &self,
        query_x: &DMatrix<f64>,
        rng: &mut R,
    ) -> Result<DVector<f64>> {
        Ok(self.sampler(query_x)?.draw(rng))
    }

    pub fn sampler(&self, query_x: &DMatrix<f64>) -> Result<GaussianSampler> {
        let post = self.posterior(query_x)?;
        GaussianSampler::new(post.mean, &post.cov)
    }
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let s = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = s;
            m[(j, i)] = s;
        }
    }
}

/// Draws `mean + L z` for a fixed factor `L` of a covariance matrix.
#[derive(Debug, Clone)]
pub struct GaussianSampler {
    mean: DVector<f64>,
    factor: DMatrix<f64>,
}

impl GaussianSampler {
    /// Factors `cov` by Cholesky along the jitter ladder. If the ladder is
    /// exhausted the factor comes from an eigendecomposition with negative
    /// eigenvalues clamped to zero.
    pub fn new(mean: DVector<f64>, cov: &DMatrix<f64>) -> Result<Self> {
        if cov.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("posterior covariance"));
        }
        let factor = match cholesky_with_jitter(cov, 0.0) {
            Ok((c, _)) => c.unpack(),
            Err(_) => {
                let eig = SymmetricEigen::new(cov.clone());
                let mut f = eig.eigenvectors;
                for (j, lam) in eig.eigenvalues.iter().enumerate() {
                    let s = lam.max(0.0).sqrt();
                    f.column_mut(j).scale_mut(s);
                }
                f
            }
        };
        Ok(Self { mean, factor })
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let q = self.mean.len();
        let z = DVector::from_fn(q, |_, _| rng.sample::<f64, _>(StandardNormal));
        &self.mean + &self.factor * z
    }
}

/// log N(y; 0, K + σ² I).
pub fn log_marginal_likelihood(ds: &Dataset, a: f64, noise_var: f64) -> Result<f64> {
    MarginalLikelihood::new(ds).eval(a, noise_var)
}

/// Marginal likelihood evaluator that caches pairwise distances across calls.
#[derive(Debug, Clone)]
pub struct MarginalLikelihood<'a> {
    ds: &'a Dataset,
    sq: DMatrix<f64>,
}

impl<'a> MarginalLikelihood<'a> {
    pub fn new(ds: &'a Dataset) -> Self {
        Self {
            ds,
            sq: sq_dist_matrix(ds.predictors()),
        }
    }

    pub fn dataset(&self) -> &Dataset {
        self.ds
    }

    pub fn sq_dists(&self) -> &DMatrix<f64> {
        &self.sq
    }

    pub fn eval(&self, a: f64, noise_var: f64) -> Result<f64> {
        let gp = fit_gp_with_sq(self.ds, &self.sq, a, noise_var, 0.0)?;
        Ok(log_marglik_from_state(&gp))
    }
}

pub(crate) fn log_marglik_from_state(gp: &GpState) -> f64 {
    let n = gp.train_y.len() as f64;
    let l = gp.chol.l_dirty();
    let log_det_half: f64 = (0..l.nrows()).map(|i| l[(i, i)].ln()).sum();
    -0.5 * gp.train_y.dot(&gp.alpha) - log_det_half - 0.5 * n * LN_2PI
}
