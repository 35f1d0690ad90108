//! Replicated simulation experiments and their reports.
//!
//! Tasks are registered by name:
//! - `swiss-aee`: empirical error `‖f̂ − f0‖_n` on Swiss-roll data across sample sizes.
//! - `circle-mspe`: root MSPE against `cos θ` on held-out rows of a circle
//!   surrogate, with the mean predictor as baseline.
//! - `rate-check`: error sweep plus a log-log slope against `−s/(2s + d)`.
//! - `theory-check`: convolution decay and distance equivalence on the unit circle.

use std::collections::BTreeMap;
use std::f64::consts::TAU;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::bandwidth::McmcConfig;
use crate::dataset::{empirical_norm, write_matrix_csv};
use crate::error::{Error, Result};
use crate::estimator::{evaluate, evaluate_query};
use crate::manifold_lab::{
    check_distance_equivalence, convolution_errors, convolution_operator, gen_circle_manifold, gen_swiss_roll,
    geodesic_distance_circle, required_quadrature_points, unit_circle_points, AngleSpacing, CircleManifoldConfig,
    LabeledManifoldData, SwissRollConfig,
};
use crate::registry::{ModelRegistry, ModelSettings};
use crate::seed;
use crate::stats::{least_squares, mean, sd, LineFit};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ManifoldKind {
    #[default]
    SwissRoll,
    Circle,
}

impl ManifoldKind {
    pub fn intrinsic_dim(self) -> u32 {
        match self {
            ManifoldKind::SwissRoll => 2,
            ManifoldKind::Circle => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TheoryConfig {
    /// Scales for the `I_a(cos)` decay fit.
    pub scales: Vec<f64>,
    /// Scales for the `a² |I_a(1) − 1|` constant.
    pub constant_scales: Vec<f64>,
    pub probes: usize,
    pub grid_points: usize,
}

impl Default for TheoryConfig {
    fn default() -> Self {
        Self {
            scales: vec![8.0, 16.0, 32.0, 64.0],
            constant_scales: vec![10.0, 20.0, 40.0],
            probes: 64,
            grid_points: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentSpec {
    pub task: String,
    pub sample_sizes: Vec<usize>,
    pub replicates: usize,
    pub model: String,
    pub mcmc: McmcConfig,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out_path: Option<PathBuf>,
    /// Model hyperparameters; `mcmc` above takes precedence over `settings.mcmc`.
    pub settings: ModelSettings,
    pub noise_sd: f64,
    /// 100 for the Swiss roll, 128 for the circle when absent.
    pub ambient_dim: Option<usize>,
    pub harmonics: usize,
    /// Pool size for `circle-mspe`; sample sizes are training sizes.
    pub total_points: usize,
    pub manifold: ManifoldKind,
    pub smoothness: f64,
    pub allow_partial: bool,
    pub theory: TheoryConfig,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            task: "swiss-aee".into(),
            sample_sizes: vec![50, 100, 200, 400],
            replicates: 20,
            model: "gp-eb".into(),
            mcmc: McmcConfig::default(),
            seed: 0,
            out_path: None,
            settings: ModelSettings::default(),
            noise_sd: 0.1,
            ambient_dim: None,
            harmonics: 6,
            total_points: 72,
            manifold: ManifoldKind::SwissRoll,
            smoothness: 2.0,
            allow_partial: false,
            theory: TheoryConfig::default(),
        }
    }
}

impl ExperimentSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(Error::invalid("replicates must be at least 1"));
        }
        if self.sample_sizes.is_empty() || self.sample_sizes[0] == 0 {
            return Err(Error::invalid("sample sizes must be positive and nonempty"));
        }
        if self.sample_sizes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("sample sizes must be strictly increasing"));
        }
        if !(self.noise_sd >= 0.0) {
            return Err(Error::invalid("noise sd must be nonnegative"));
        }
        if !(self.smoothness > 0.0) {
            return Err(Error::invalid("smoothness must be positive"));
        }
        self.mcmc.validate()
    }

    pub fn model_settings(&self) -> ModelSettings {
        ModelSettings {
            mcmc: self.mcmc.clone(),
            ..self.settings.clone()
        }
    }

    pub fn cell_seed(&self, n: usize, replicate: usize) -> u64 {
        seed::derive(self.seed, &[seed::stream::REPLICATE, n as u64, replicate as u64])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub n: usize,
    pub replicate: usize,
    pub seed: u64,
    pub error: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub baseline: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub n: usize,
    pub replicate: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub n: usize,
    pub count: usize,
    pub mean: f64,
    pub sd: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub baseline_mean: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateCheck {
    pub slope: f64,
    pub theory_slope: f64,
    pub d: u32,
    pub s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryReport {
    pub scales: Vec<f64>,
    pub sup_errors: Vec<f64>,
    pub decay_slope: f64,
    pub constant_scales: Vec<f64>,
    /// `a² sup|I_a(1) − 1|` at each constant scale.
    pub constants: Vec<f64>,
    pub grid_points: usize,
    pub c1_hat: f64,
    pub c2_hat: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub task: String,
    pub model: String,
    pub per_cell: Vec<CellRecord>,
    pub aggregates: Vec<Aggregate>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rate_fit: Option<LineFit>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rate: Option<RateCheck>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theory: Option<TheoryReport>,
    pub failures: Vec<CellFailure>,
    pub config_echo: ExperimentSpec,
}

pub fn theory_slope(d: u32, s: f64) -> f64 {
    -s / (2.0 * s + d as f64)
}

/// Least-squares slope of `ln error` on `ln n` next to `−s/(2s + d)`.
pub fn rate_check(errors_by_n: &[(usize, f64)], d: u32, s: f64) -> Result<RateCheck> {
    Ok(RateCheck {
        slope: log_log_fit(errors_by_n)?.slope,
        theory_slope: theory_slope(d, s),
        d,
        s,
    })
}

fn log_log_fit(errors_by_n: &[(usize, f64)]) -> Result<LineFit> {
    let mut ns: Vec<usize> = errors_by_n.iter().map(|p| p.0).collect();
    ns.sort_unstable();
    ns.dedup();
    if ns.len() < 3 {
        return Err(Error::invalid(format!(
            "rate fit needs at least 3 distinct sample sizes, got {}",
            ns.len()
        )));
    }
    if let Some((n, e)) = errors_by_n.iter().find(|p| !(p.1 > 0.0) || p.0 == 0) {
        return Err(Error::invalid(format!("rate fit needs positive errors, got {e} at n = {n}")));
    }
    let lx: Vec<f64> = errors_by_n.iter().map(|p| (p.0 as f64).ln()).collect();
    let ly: Vec<f64> = errors_by_n.iter().map(|p| p.1.ln()).collect();
    Ok(least_squares(&lx, &ly))
}

/// One row per sample size in `sizes`, over the successful cells.
pub fn aggregate(sizes: &[usize], cells: &[CellRecord]) -> Vec<Aggregate> {
    sizes
        .iter()
        .filter_map(|&n| {
            let errs: Vec<f64> = cells.iter().filter(|c| c.n == n).map(|c| c.error).collect();
            if errs.is_empty() {
                return None;
            }
            let base: Vec<f64> = cells.iter().filter(|c| c.n == n).filter_map(|c| c.baseline).collect();
            Some(Aggregate {
                n,
                count: errs.len(),
                mean: mean(&errs),
                sd: sd(&errs),
                baseline_mean: (!base.is_empty()).then(|| mean(&base)),
            })
        })
        .collect()
}

/// Error and optional baseline for one `(n, replicate)` cell.
pub type CellFn<'a> = dyn Fn(usize, usize, u64) -> Result<(f64, Option<f64>)> + 'a;

/// Runs every cell of the grid. A failing cell aborts unless `allow_partial`.
pub fn run_cells(spec: &ExperimentSpec, cell: &CellFn) -> Result<(Vec<CellRecord>, Vec<CellFailure>)> {
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for &n in &spec.sample_sizes {
        for r in 0..spec.replicates {
            let s = spec.cell_seed(n, r);
            match cell(n, r, s) {
                Ok((error, baseline)) => {
                    log::info!("cell n = {n} replicate {r}: error {error}");
                    records.push(CellRecord {
                        n,
                        replicate: r,
                        seed: s,
                        error,
                        baseline,
                    });
                }
                Err(e) if spec.allow_partial => {
                    log::warn!("cell n = {n} replicate {r} failed: {e}");
                    failures.push(CellFailure {
                        n,
                        replicate: r,
                        message: e.to_string(),
                    });
                }
                Err(e) => return Err(e),
            }
        }
    }
    Ok((records, failures))
}

/// Report for a grid of cells, with a log-log fit when at least three sizes succeed.
pub fn assemble(spec: &ExperimentSpec, cells: Vec<CellRecord>, failures: Vec<CellFailure>, d: Option<u32>) -> ExperimentReport {
    let aggregates = aggregate(&spec.sample_sizes, &cells);
    let means: Vec<(usize, f64)> = aggregates.iter().map(|a| (a.n, a.mean)).collect();
    let rate_fit = log_log_fit(&means).ok();
    let rate = d.and_then(|d| rate_check(&means, d, spec.smoothness).ok());
    ExperimentReport {
        task: spec.task.clone(),
        model: spec.model.clone(),
        per_cell: cells,
        aggregates,
        rate_fit,
        rate,
        theory: None,
        failures,
        config_echo: spec.clone(),
    }
}

pub trait ExperimentTask {
    fn name(&self) -> &'static str;
    fn run(&self, spec: &ExperimentSpec, models: &ModelRegistry) -> Result<ExperimentReport>;
}

fn manifold_data(spec: &ExperimentSpec, kind: ManifoldKind, n: usize, data_seed: u64) -> Result<LabeledManifoldData> {
    match kind {
        ManifoldKind::SwissRoll => gen_swiss_roll(&SwissRollConfig {
            n,
            ambient_dim: spec.ambient_dim.unwrap_or(100),
            noise_sd: spec.noise_sd,
            seed: data_seed,
        }),
        ManifoldKind::Circle => gen_circle_manifold(&CircleManifoldConfig {
            n,
            ambient_dim: spec.ambient_dim.unwrap_or(128),
            embedding_harmonics: spec.harmonics,
            noise_sd: spec.noise_sd,
            spacing: AngleSpacing::Uniform,
            seed: data_seed,
        }),
    }
}

/// `‖f̂ − f0‖_n` on fresh data of size `n` per cell.
fn design_error_sweep(spec: &ExperimentSpec, models: &ModelRegistry, kind: ManifoldKind) -> Result<ExperimentReport> {
    spec.validate()?;
    let model = models.get(&spec.model)?;
    let cell = |n: usize, _r: usize, s: u64| -> Result<(f64, Option<f64>)> {
        let data = manifold_data(spec, kind, n, seed::derive(s, &[seed::stream::DATA]))?;
        let none = DMatrix::zeros(0, data.dataset.dim());
        let fit = model.fit_predict(&data.dataset, &none, s)?;
        Ok((evaluate(&fit, &data.f0_at_points)?.value(), None))
    };
    let (cells, failures) = run_cells(spec, &cell)?;
    Ok(assemble(spec, cells, failures, Some(kind.intrinsic_dim())))
}

pub struct SwissAee;
pub struct CircleMspe;
pub struct RateCheckTask;
pub struct TheoryCheck;

impl ExperimentTask for SwissAee {
    fn name(&self) -> &'static str {
        "swiss-aee"
    }

    fn run(&self, spec: &ExperimentSpec, models: &ModelRegistry) -> Result<ExperimentReport> {
        design_error_sweep(spec, models, ManifoldKind::SwissRoll)
    }
}

impl ExperimentTask for RateCheckTask {
    fn name(&self) -> &'static str {
        "rate-check"
    }

    fn run(&self, spec: &ExperimentSpec, models: &ModelRegistry) -> Result<ExperimentReport> {
        design_error_sweep(spec, models, spec.manifold)
    }
}

/// Random split of `total` rows into `n_train` training rows and the rest, both sorted.
pub fn train_test_indices(total: usize, n_train: usize, split_seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut perm: Vec<usize> = (0..total).collect();
    perm.shuffle(&mut seed::rng(split_seed));
    let mut train = perm[..n_train].to_vec();
    let mut test = perm[n_train..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}

impl ExperimentTask for CircleMspe {
    fn name(&self) -> &'static str {
        "circle-mspe"
    }

    fn run(&self, spec: &ExperimentSpec, models: &ModelRegistry) -> Result<ExperimentReport> {
        spec.validate()?;
        if *spec.sample_sizes.last().expect("validated") >= spec.total_points {
            return Err(Error::invalid(format!(
                "training sizes must be below the pool size {}",
                spec.total_points
            )));
        }
        let model = models.get(&spec.model)?;
        let cell = |n: usize, _r: usize, s: u64| -> Result<(f64, Option<f64>)> {
            let pool = gen_circle_manifold(&CircleManifoldConfig {
                n: spec.total_points,
                ambient_dim: spec.ambient_dim.unwrap_or(128),
                embedding_harmonics: spec.harmonics,
                noise_sd: spec.noise_sd,
                spacing: AngleSpacing::Equal,
                seed: seed::derive(s, &[seed::stream::DATA]),
            })?;
            let (tr, te) = train_test_indices(spec.total_points, n, seed::derive(s, &[seed::stream::SPLIT]));
            let train = pool.subset(&tr)?;
            let test = pool.subset(&te)?;
            let fit = model.fit_predict(&train.dataset, test.dataset.predictors(), s)?;
            let err = evaluate_query(&fit, &test.f0_at_points)?.value();
            let mean_y = mean(train.dataset.responses().as_slice());
            let base = empirical_norm(&vec![mean_y; te.len()], &test.f0_at_points)?.value();
            Ok((err, Some(base)))
        };
        let (cells, failures) = run_cells(spec, &cell)?;
        Ok(assemble(spec, cells, failures, None))
    }
}

pub fn theory_report(cfg: &TheoryConfig) -> Result<TheoryReport> {
    let cos = |t: f64| t.cos();
    let sup_errors = convolution_errors(&cos, &cfg.scales, cfg.probes)?;
    let lx: Vec<f64> = cfg.scales.iter().map(|a| a.ln()).collect();
    let ly: Vec<f64> = sup_errors.iter().map(|e| e.ln()).collect();
    let decay_slope = least_squares(&lx, &ly).slope;
    let one = |_: f64| 1.0;
    let constants = cfg
        .constant_scales
        .iter()
        .map(|&a| Ok(a * a * convolution_operator(&one, a, required_quadrature_points(a))?.sup_error(&one, cfg.probes)))
        .collect::<Result<Vec<f64>>>()?;
    let thetas: Vec<f64> = (0..cfg.grid_points).map(|i| TAU * i as f64 / cfg.grid_points as f64).collect();
    let pts = unit_circle_points(&thetas);
    let de = check_distance_equivalence(&pts, &|i, j| geodesic_distance_circle(thetas[i], thetas[j]))?;
    Ok(TheoryReport {
        scales: cfg.scales.clone(),
        sup_errors,
        decay_slope,
        constant_scales: cfg.constant_scales.clone(),
        constants,
        grid_points: cfg.grid_points,
        c1_hat: de.c1_hat,
        c2_hat: de.c2_hat,
    })
}

impl ExperimentTask for TheoryCheck {
    fn name(&self) -> &'static str {
        "theory-check"
    }

    fn run(&self, spec: &ExperimentSpec, _models: &ModelRegistry) -> Result<ExperimentReport> {
        let theory = theory_report(&spec.theory)?;
        Ok(ExperimentReport {
            task: spec.task.clone(),
            model: String::new(),
            per_cell: Vec::new(),
            aggregates: Vec::new(),
            rate_fit: None,
            rate: None,
            theory: Some(theory),
            failures: Vec::new(),
            config_echo: spec.clone(),
        })
    }
}

pub struct TaskRegistry {
    tasks: BTreeMap<&'static str, Box<dyn ExperimentTask>>,
}

impl TaskRegistry {
    pub fn empty() -> Self {
        Self { tasks: BTreeMap::new() }
    }

    pub fn builtin() -> Self {
        let mut r = Self::empty();
        r.register(Box::new(SwissAee));
        r.register(Box::new(CircleMspe));
        r.register(Box::new(RateCheckTask));
        r.register(Box::new(TheoryCheck));
        r
    }

    pub fn register(&mut self, task: Box<dyn ExperimentTask>) {
        self.tasks.insert(task.name(), task);
    }

    pub fn get(&self, name: &str) -> Result<&dyn ExperimentTask> {
        self.tasks.get(name).map(|t| t.as_ref()).ok_or_else(|| {
            Error::invalid(format!(
                "unknown task '{name}' (available: {})",
                self.tasks.keys().copied().collect::<Vec<_>>().join(", ")
            ))
        })
    }
}

/// Runs `spec` with the built-in models and tasks, writing reports when `out_path` is set.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentReport> {
    let models = ModelRegistry::builtin(&spec.model_settings());
    let report = TaskRegistry::builtin().get(&spec.task)?.run(spec, &models)?;
    if let Some(path) = &spec.out_path {
        write_report(&report, path)?;
    }
    Ok(report)
}

fn round_sig(v: f64, digits: usize) -> f64 {
    if v == 0.0 || !v.is_finite() {
        return v;
    }
    format!("{:.*e}", digits - 1, v).parse().expect("formatted float parses")
}

fn round_value(v: &mut serde_json::Value) {
    match v {
        serde_json::Value::Number(n) if n.is_f64() => {
            let r = round_sig(n.as_f64().expect("f64"), 12);
            if let Some(m) = serde_json::Number::from_f64(r) {
                *n = m;
            }
        }
        serde_json::Value::Array(a) => a.iter_mut().for_each(round_value),
        serde_json::Value::Object(o) => o.values_mut().for_each(round_value),
        _ => {}
    }
}

/// Pretty JSON with every float rounded to 12 significant digits.
pub fn canonical_json<T: Serialize>(value: &T) -> Result<String> {
    let mut v = serde_json::to_value(value)?;
    round_value(&mut v);
    let mut s = serde_json::to_string_pretty(&v)?;
    s.push('\n');
    Ok(s)
}

pub fn text_table(report: &ExperimentReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "task {}  model {}", report.task, report.model);
    let baseline = report.aggregates.iter().any(|a| a.baseline_mean.is_some());
    if !report.aggregates.is_empty() {
        let _ = write!(s, "{:>8} {:>6} {:>12} {:>12}", "n", "reps", "mean", "sd");
        if baseline {
            let _ = write!(s, " {:>12}", "baseline");
        }
        s.push('\n');
    }
    for a in &report.aggregates {
        let _ = write!(s, "{:>8} {:>6} {:>12.6} {:>12.6}", a.n, a.count, a.mean, a.sd);
        if let Some(b) = a.baseline_mean {
            let _ = write!(s, " {b:>12.6}");
        }
        s.push('\n');
    }
    if let Some(f) = &report.rate_fit {
        let _ = writeln!(s, "log-log slope {:.4} (r² {:.4})", f.slope, f.r_squared);
    }
    if let Some(r) = &report.rate {
        let _ = writeln!(s, "theory slope {:.4} (d = {}, s = {})", r.theory_slope, r.d, r.s);
    }
    if let Some(t) = &report.theory {
        for (a, e) in t.scales.iter().zip(&t.sup_errors) {
            let _ = writeln!(s, "a = {a:>6}  sup|I_a(cos) - cos| = {e:.6e}");
        }
        let _ = writeln!(s, "decay slope {:.4}", t.decay_slope);
        for (a, c) in t.constant_scales.iter().zip(&t.constants) {
            let _ = writeln!(s, "a = {a:>6}  a^2 sup|I_a(1) - 1| = {c:.6}");
        }
        let _ = writeln!(s, "C1 {:.6}  C2 {:.6}  ({} grid points)", t.c1_hat, t.c2_hat, t.grid_points);
    }
    if !report.failures.is_empty() {
        let _ = writeln!(s, "{} failed cells", report.failures.len());
    }
    s
}

pub fn write_cells_csv(report: &ExperimentReport, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    let header: Vec<String> = ["n", "replicate", "error", "baseline"].iter().map(|s| s.to_string()).collect();
    write_matrix_csv(&mut out, &header, report.per_cell.len(), |i, j| {
        let c = &report.per_cell[i];
        match j {
            0 => c.n as f64,
            1 => c.replicate as f64,
            2 => c.error,
            _ => c.baseline.unwrap_or(f64::NAN),
        }
    })
    .map_err(|e| Error::io(path, e))
}

/// JSON at `path`, plus `<stem>.cells.csv` and `<stem>.txt` next to it.
pub fn write_report(report: &ExperimentReport, path: &Path) -> Result<()> {
    std::fs::write(path, canonical_json(report)?).map_err(|e| Error::io(path, e))?;
    let csv = path.with_extension("cells.csv");
    write_cells_csv(report, &csv)?;
    let txt = path.with_extension("txt");
    std::fs::write(&txt, text_table(report)).map_err(|e| Error::io(&txt, e))
}
