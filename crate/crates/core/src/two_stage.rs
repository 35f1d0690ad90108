//! Laplacian eigenmap reduction followed by GP regression on the embedded
//! coordinates.
//!
//! The eigenmap is transductive: it only embeds the rows it is given. To
//! predict at new points, [`two_stage_predict`] embeds training and query rows
//! together before fitting on the training part.

use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::bandwidth::{BandwidthPrior, McmcConfig};
use crate::dataset::{write_matrix_csv, Dataset};
use crate::error::{Error, Result};
use crate::estimator::{fit_truncated, EstimatorConfig, FitResult, TruncationLevel};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum EdgeWeights {
    /// `exp(−‖x − y‖² / t)`; `t` defaults to the squared median kNN edge length.
    Heat { t: Option<f64> },
    Binary,
}

impl Default for EdgeWeights {
    fn default() -> Self {
        EdgeWeights::Heat { t: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EigenmapConfig {
    /// Graph neighbors per point; `max(5, ⌈ln n⌉)` when absent.
    pub n_neighbors: Option<usize>,
    pub d_tilde: usize,
    pub weights: EdgeWeights,
    pub seed: u64,
}

impl Default for EigenmapConfig {
    fn default() -> Self {
        Self {
            n_neighbors: None,
            d_tilde: 2,
            weights: EdgeWeights::default(),
            seed: 0,
        }
    }
}

pub fn default_neighbors(n: usize) -> usize {
    5usize.max((n as f64).ln().ceil() as usize)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    /// `n × d_tilde`; each column is a unit eigenvector scaled by `√n`.
    pub coords: DMatrix<f64>,
    /// Nontrivial eigenvalues matching the columns, ascending.
    pub eigenvalues: Vec<f64>,
    pub graph_connected: bool,
    pub n_components: usize,
    /// First unused eigenvalue minus the last used one.
    pub eigengap: f64,
}

impl Embedding {
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let header: Vec<String> = (1..=self.coords.ncols()).map(|j| format!("e{j}")).collect();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = std::io::BufWriter::new(file);
        write_matrix_csv(&mut out, &header, self.coords.nrows(), |i, j| self.coords[(i, j)])
            .map_err(|e| Error::io(path, e))
    }
}

/// Symmetric kNN weight matrix: `i ~ j` when either lists the other.
pub fn knn_graph(x: &DMatrix<f64>, k: usize, weights: EdgeWeights) -> Result<DMatrix<f64>> {
    let n = x.nrows();
    if k == 0 || k >= n {
        return Err(Error::invalid(format!("n_neighbors = {k} must lie in 1..{n}")));
    }
    let sq = crate::kernel::sq_dist_matrix(x);
    let mut adj = vec![false; n * n];
    let mut edge_sq = Vec::with_capacity(n * k);
    for i in 0..n {
        let mut order: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        order.sort_by(|&a, &b| sq[(i, a)].total_cmp(&sq[(i, b)]).then(a.cmp(&b)));
        for &j in &order[..k] {
            adj[i * n + j] = true;
            adj[j * n + i] = true;
            edge_sq.push(sq[(i, j)]);
        }
    }
    let t = match weights {
        EdgeWeights::Binary => None,
        EdgeWeights::Heat { t: Some(t) } => {
            if !(t > 0.0) || !t.is_finite() {
                return Err(Error::invalid(format!("heat bandwidth must be positive, got {t}")));
            }
            Some(t)
        }
        EdgeWeights::Heat { t: None } => {
            let med = crate::stats::median(&edge_sq.iter().map(|s| s.sqrt()).collect::<Vec<_>>());
            Some(if med > 0.0 { med * med } else { 1.0 })
        }
    };
    Ok(DMatrix::from_fn(n, n, |i, j| {
        if !adj[i * n + j] {
            0.0
        } else {
            match t {
                None => 1.0,
                Some(t) => (-sq[(i, j)] / t).exp(),
            }
        }
    }))
}

fn component_sizes(w: &DMatrix<f64>) -> Vec<usize> {
    let n = w.nrows();
    let mut seen = vec![false; n];
    let mut sizes = Vec::new();
    for start in 0..n {
        if seen[start] {
            continue;
        }
        seen[start] = true;
        let mut stack = vec![start];
        let mut size = 0;
        while let Some(i) = stack.pop() {
            size += 1;
            for j in 0..n {
                if !seen[j] && w[(i, j)] > 0.0 {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        sizes.push(size);
    }
    sizes
}

/// `I − D^{−1/2} W D^{−1/2}`.
pub fn normalized_laplacian(w: &DMatrix<f64>) -> DMatrix<f64> {
    let n = w.nrows();
    let inv_sqrt: Vec<f64> = (0..n)
        .map(|i| {
            let d: f64 = w.row(i).sum();
            if d > 0.0 {
                1.0 / d.sqrt()
            } else {
                0.0
            }
        })
        .collect();
    DMatrix::from_fn(n, n, |i, j| {
        let v = -w[(i, j)] * inv_sqrt[i] * inv_sqrt[j];
        if i == j {
            1.0 + v
        } else {
            v
        }
    })
}

pub fn laplacian_eigenmap(x: &DMatrix<f64>, cfg: &EigenmapConfig) -> Result<Embedding> {
    let n = x.nrows();
    if cfg.d_tilde == 0 {
        return Err(Error::invalid("d_tilde must be at least 1"));
    }
    if n <= cfg.d_tilde + 1 {
        return Err(Error::invalid(format!(
            "eigenmap needs n > d_tilde + 1, got n = {n}, d_tilde = {}",
            cfg.d_tilde
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("predictors"));
    }
    let k = cfg.n_neighbors.unwrap_or_else(|| default_neighbors(n).min(n - 1));
    let w = knn_graph(x, k, cfg.weights)?;
    let sizes = component_sizes(&w);
    let largest = *sizes.iter().max().expect("n > 0");
    if sizes.len() > 1 && cfg.d_tilde > largest - 1 {
        return Err(Error::DisconnectedGraph {
            largest,
            d_tilde: cfg.d_tilde,
        });
    }

    let lap = normalized_laplacian(&w);
    let eig = SymmetricEigen::new(lap);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]).then(a.cmp(&b)));

    let scale = (n as f64).sqrt();
    let mut coords = DMatrix::zeros(n, cfg.d_tilde);
    let mut eigenvalues = Vec::with_capacity(cfg.d_tilde);
    for c in 0..cfg.d_tilde {
        let idx = order[c + 1];
        let mut v: DVector<f64> = eig.eigenvectors.column(idx).into_owned();
        // sign convention: the largest-magnitude entry is positive
        let (imax, _) = v
            .iter()
            .enumerate()
            .fold((0, 0.0f64), |best, (i, x)| if x.abs() > best.1 { (i, x.abs()) } else { best });
        if v[imax] < 0.0 {
            v.neg_mut();
        }
        coords.set_column(c, &(v * scale));
        eigenvalues.push(eig.eigenvalues[idx]);
    }
    let eigengap = if cfg.d_tilde + 1 < n {
        eig.eigenvalues[order[cfg.d_tilde + 1]] - eig.eigenvalues[order[cfg.d_tilde]]
    } else {
        0.0
    };
    Ok(Embedding {
        coords,
        eigenvalues,
        graph_connected: sizes.len() == 1,
        n_components: sizes.len(),
        eigengap,
    })
}

/// Embeds the predictors of `ds` and fits the truncated GP estimator on the
/// embedded rows. Estimates are reported at the training rows only.
pub fn two_stage_fit(
    ds: &Dataset,
    emap: &EigenmapConfig,
    prior: &BandwidthPrior,
    mcmc: &McmcConfig,
    tau: Option<TruncationLevel>,
    est: &EstimatorConfig,
) -> Result<(FitResult, Embedding)> {
    let emb = laplacian_eigenmap(ds.predictors(), emap)?;
    let reduced = ds.with_predictors(emb.coords.clone())?;
    let none = DMatrix::zeros(0, emap.d_tilde);
    let mut fit = fit_truncated(&reduced, prior, mcmc, &none, tau, est)?;
    fit.transductive = true;
    Ok((fit, emb))
}

/// Joint embedding of `train` and `query_x` rows, then a fit on the
/// training part with estimates at the query part.
pub fn two_stage_predict(
    train: &Dataset,
    query_x: &DMatrix<f64>,
    emap: &EigenmapConfig,
    prior: &BandwidthPrior,
    mcmc: &McmcConfig,
    tau: Option<TruncationLevel>,
    est: &EstimatorConfig,
) -> Result<(FitResult, Embedding)> {
    if query_x.nrows() > 0 && query_x.ncols() != train.dim() {
        return Err(Error::DimensionMismatch {
            expected: train.dim(),
            found: query_x.ncols(),
        });
    }
    let n = train.n();
    let q = query_x.nrows();
    let mut joint = DMatrix::zeros(n + q, train.dim());
    joint.rows_mut(0, n).copy_from(train.predictors());
    joint.rows_mut(n, q).copy_from(query_x);
    let emb = laplacian_eigenmap(&joint, emap)?;
    let reduced = train.with_predictors(emb.coords.rows(0, n).into_owned())?;
    let query = emb.coords.rows(n, q).into_owned();
    let mut fit = fit_truncated(&reduced, prior, mcmc, &query, tau, est)?;
    fit.transductive = true;
    Ok((fit, emb))
}
