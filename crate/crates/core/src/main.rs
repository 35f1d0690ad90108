use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;
use serde_json::json;

use manigp::bandwidth::{BandwidthPrior, McmcConfig};
use manigp::bench::{canonical_json, run_experiment, text_table, ExperimentSpec};
use manigp::cv::{cross_validate, CvConfig};
use manigp::dataset::{load_csv, save_csv, Dataset};
use manigp::error::{Error, Result};
use manigp::estimator::{fit_truncated, EstimatorConfig, TruncationLevel};
use manigp::intrinsic_dim::{estimate_dimension, DEFAULT_QUERIES};
use manigp::manifold_lab::{
    gen_circle_manifold, gen_swiss_roll, AngleSpacing, CircleManifoldConfig, LabeledManifoldData, SwissRollConfig,
};
use manigp::registry::ModelSettings;
use manigp::two_stage::{two_stage_fit, EdgeWeights, EigenmapConfig};

#[derive(Parser)]
#[command(name = "manigp", version, about = "Gaussian process regression on manifolds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a labelled manifold dataset
    Generate(GenerateArgs),
    /// Fit the truncated GP estimator
    Fit(FitArgs),
    /// Estimate the intrinsic dimension of the predictors
    EstimateDim(EstimateDimArgs),
    /// Select the prior dimension by holdout validation
    Cv(CvArgs),
    /// Laplacian eigenmap followed by a GP fit on the embedding
    TwoStage(TwoStageArgs),
    /// Run a replicated experiment
    Bench(BenchArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Manifold {
    SwissRoll,
    Circle,
}

#[derive(Clone, Copy, ValueEnum)]
enum Spacing {
    Equal,
    Uniform,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, value_enum)]
    manifold: Manifold,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Ambient dimension (100 for the Swiss roll, 128 for the circle)
    #[arg(long)]
    ambient: Option<usize>,
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    /// Highest harmonic of the circle embedding
    #[arg(long, default_value_t = 6)]
    harmonics: usize,
    #[arg(long, value_enum, default_value = "equal")]
    spacing: Spacing,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Clone)]
struct ChainArgs {
    #[arg(long, default_value_t = 10_000)]
    iters: usize,
    #[arg(long, default_value_t = 5_000)]
    burnin: usize,
    #[arg(long, default_value_t = 1.0)]
    a0: f64,
    #[arg(long, default_value_t = 1.0)]
    b0: f64,
    /// Fixed noise variance (starting value with --infer-noise)
    #[arg(long, default_value_t = 0.01)]
    noise: f64,
    #[arg(long)]
    infer_noise: bool,
    #[arg(long, default_value_t = 10)]
    thin: usize,
    /// Truncation level; 2 max|y| when absent
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl ChainArgs {
    fn settings(&self) -> ModelSettings {
        ModelSettings {
            a0: self.a0,
            b0: self.b0,
            mcmc: McmcConfig {
                n_iter: self.iters,
                burn_in: self.burnin,
                infer_noise: self.infer_noise,
                noise_var: self.noise,
                ..Default::default()
            },
            estimator: EstimatorConfig {
                thin: self.thin,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    fn tau(&self) -> Result<Option<TruncationLevel>> {
        self.tau.map(TruncationLevel::new).transpose()
    }
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    train: PathBuf,
    /// Rows to predict at (CSV with the same columns as the training file)
    #[arg(long)]
    query: Option<PathBuf>,
    /// Prior dimension, or `auto` for the nearest-neighbor estimate
    #[arg(long, default_value = "auto")]
    dim: String,
    /// Standardize predictor columns before fitting
    #[arg(long)]
    standardize: bool,
    #[command(flatten)]
    chain: ChainArgs,
    /// Write post-burn-in chain draws as CSV
    #[arg(long)]
    chain_out: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EstimateDimArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_QUERIES)]
    queries: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct CvArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 20)]
    dmax: u32,
    #[arg(long, default_value_t = 0.5)]
    test_frac: f64,
    /// Average scores over this many random splits
    #[arg(long, default_value_t = 1)]
    splits: usize,
    /// Also refit the selected dimension on every row
    #[arg(long)]
    refit_all: bool,
    #[command(flatten)]
    chain: ChainArgs,
    /// Write the selected fit as JSON
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TwoStageArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long, default_value_t = 2)]
    dtilde: usize,
    /// Graph neighbors; max(5, ceil(ln n)) when absent
    #[arg(long)]
    neighbors: Option<usize>,
    /// Use 0/1 edge weights instead of the heat kernel
    #[arg(long)]
    binary: bool,
    /// Heat kernel bandwidth; squared median kNN edge when absent
    #[arg(long, conflicts_with = "binary")]
    heat_t: Option<f64>,
    /// Prior dimension for the second stage
    #[arg(long, default_value_t = 1)]
    prior_dim: u32,
    #[command(flatten)]
    chain: ChainArgs,
    /// Write the embedding coordinates as CSV
    #[arg(long)]
    embedding_out: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    task: Option<String>,
    /// JSON experiment spec; flags given here override it
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    model: Option<String>,
    /// Comma-separated sample sizes
    #[arg(long, value_delimiter = ',')]
    sample_sizes: Option<Vec<usize>>,
    #[arg(long)]
    replicates: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    burnin: Option<usize>,
    #[arg(long)]
    allow_partial: bool,
}

fn emit(json: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, json).map_err(|e| Error::io(p, e)),
        None => {
            print!("{json}");
            Ok(())
        }
    }
}

fn latent_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".latent.csv");
    PathBuf::from(s)
}

fn generate(args: &GenerateArgs) -> Result<()> {
    let (name, data): (&str, LabeledManifoldData) = match args.manifold {
        Manifold::SwissRoll => (
            "swiss-roll",
            gen_swiss_roll(&SwissRollConfig {
                n: args.n,
                ambient_dim: args.ambient.unwrap_or(100),
                noise_sd: args.noise,
                seed: args.seed,
            })?,
        ),
        Manifold::Circle => (
            "circle",
            gen_circle_manifold(&CircleManifoldConfig {
                n: args.n,
                ambient_dim: args.ambient.unwrap_or(128),
                embedding_harmonics: args.harmonics,
                noise_sd: args.noise,
                spacing: match args.spacing {
                    Spacing::Equal => AngleSpacing::Equal,
                    Spacing::Uniform => AngleSpacing::Uniform,
                },
                seed: args.seed,
            })?,
        ),
    };
    save_csv(&data.dataset, &args.out)?;
    let latent = latent_path(&args.out);
    data.write_latent_csv(&latent)?;
    let summary = json!({
        "manifold": name,
        "n": data.dataset.n(),
        "ambient_dim": data.dataset.dim(),
        "noise_sd": args.noise,
        "seed": args.seed,
        "data": args.out,
        "latent": latent,
    });
    emit(&canonical_json(&summary)?, None)
}

fn load_query(path: Option<&PathBuf>, train: &Dataset) -> Result<DMatrix<f64>> {
    match path {
        Some(p) => {
            let q = load_csv(p)?;
            if q.dim() != train.dim() {
                return Err(Error::DimensionMismatch {
                    expected: train.dim(),
                    found: q.dim(),
                });
            }
            Ok(q.predictors().clone())
        }
        None => Ok(DMatrix::zeros(0, train.dim())),
    }
}

fn fit(args: &FitArgs) -> Result<()> {
    let mut train = load_csv(&args.train)?;
    let mut query = load_query(args.query.as_ref(), &train)?;
    if args.standardize {
        if query.nrows() > 0 {
            // standardize train and query with the training column statistics
            let n = train.n();
            let mut joint = DMatrix::zeros(n + query.nrows(), train.dim());
            joint.rows_mut(0, n).copy_from(train.predictors());
            joint.rows_mut(n, query.nrows()).copy_from(&query);
            let (mu, sd) = column_stats(train.predictors());
            for mut row in joint.row_iter_mut() {
                for j in 0..row.len() {
                    row[j] = (row[j] - mu[j]) / sd[j];
                }
            }
            query = joint.rows(n, query.nrows()).into_owned();
            train = train.with_predictors(joint.rows(0, n).into_owned())?;
        } else {
            train = train.standardized();
        }
    }
    let dim = match args.dim.as_str() {
        "auto" => estimate_dimension(train.predictors(), None, DEFAULT_QUERIES, args.chain.seed)?.d_hat_rounded,
        s => s
            .parse::<u32>()
            .ok()
            .filter(|d| *d >= 1)
            .ok_or_else(|| Error::invalid(format!("--dim must be a positive integer or 'auto', got '{s}'")))?,
    };
    let settings = args.chain.settings();
    let prior = BandwidthPrior::new(settings.a0, settings.b0, dim)?;
    let (mcmc, est) = settings.seeded(args.chain.seed);
    if let Some(path) = &args.chain_out {
        let chain = manigp::bandwidth::run_chain(&train, &prior, &mcmc)?;
        chain.write_csv(path)?;
    }
    let fit = fit_truncated(&train, &prior, &mcmc, &query, args.chain.tau()?, &est)?;
    emit(&canonical_json(&fit)?, args.out.as_deref())
}

fn column_stats(x: &DMatrix<f64>) -> (Vec<f64>, Vec<f64>) {
    let n = x.nrows() as f64;
    let mu: Vec<f64> = x.column_iter().map(|c| c.sum() / n).collect();
    let sd: Vec<f64> = x
        .column_iter()
        .zip(&mu)
        .map(|(c, m)| {
            let v = (c.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt();
            if v > 0.0 {
                v
            } else {
                1.0
            }
        })
        .collect();
    (mu, sd)
}

fn estimate_dim(args: &EstimateDimArgs) -> Result<()> {
    let ds = load_csv(&args.data)?;
    let est = estimate_dimension(ds.predictors(), args.k, args.queries, args.seed)?;
    let out = json!({
        "d_hat_raw": est.d_hat_raw,
        "d_hat_rounded": est.d_hat_rounded,
        "k": est.k_used,
        "n_queries": est.n_query_points,
        "skipped_queries": est.skipped_queries,
    });
    emit(&canonical_json(&out)?, None)
}

fn cv(args: &CvArgs) -> Result<()> {
    let ds = load_csv(&args.data)?;
    let s = args.chain.settings();
    let cfg = CvConfig {
        d_max: args.dmax,
        test_fraction: args.test_frac,
        mcmc: s.mcmc,
        tau: args.chain.tau()?,
        a0: s.a0,
        b0: s.b0,
        estimator: s.estimator,
        n_splits: args.splits,
        refit_all: args.refit_all,
        seed: args.chain.seed,
    };
    let res = cross_validate(&ds, &cfg)?;
    let summary = json!({
        "mspe": res.mspe_per_dim,
        "selected_dim": res.selected_dim,
        "failures": res.failures,
    });
    emit(&canonical_json(&summary)?, None)?;
    if let Some(path) = &args.out {
        emit(&canonical_json(&res)?, Some(path))?;
    }
    Ok(())
}

fn two_stage(args: &TwoStageArgs) -> Result<()> {
    let ds = load_csv(&args.train)?;
    let weights = if args.binary {
        EdgeWeights::Binary
    } else {
        EdgeWeights::Heat { t: args.heat_t }
    };
    let emap = EigenmapConfig {
        n_neighbors: args.neighbors,
        d_tilde: args.dtilde,
        weights,
        seed: args.chain.seed,
    };
    let settings = args.chain.settings();
    let prior = BandwidthPrior::new(settings.a0, settings.b0, args.prior_dim)?;
    let (mcmc, est) = settings.seeded(args.chain.seed);
    let (fit, emb) = two_stage_fit(&ds, &emap, &prior, &mcmc, args.chain.tau()?, &est)?;
    if let Some(path) = &args.embedding_out {
        emb.write_csv(path)?;
    }
    if !emb.graph_connected {
        log::warn!("neighborhood graph has {} components", emb.n_components);
    }
    emit(&canonical_json(&fit)?, args.out.as_deref())
}

fn bench(args: &BenchArgs) -> Result<()> {
    let mut spec = match &args.spec {
        Some(p) => ExperimentSpec::load(p)?,
        None => ExperimentSpec::default(),
    };
    if let Some(t) = &args.task {
        spec.task = t.clone();
    }
    if let Some(m) = &args.model {
        spec.model = m.clone();
    }
    if let Some(s) = &args.sample_sizes {
        spec.sample_sizes = s.clone();
    }
    if let Some(r) = args.replicates {
        spec.replicates = r;
    }
    if let Some(s) = args.seed {
        spec.seed = s;
    }
    if let Some(i) = args.iters {
        spec.mcmc.n_iter = i;
    }
    if let Some(b) = args.burnin {
        spec.mcmc.burn_in = b;
    }
    if args.allow_partial {
        spec.allow_partial = true;
    }
    if let Some(o) = &args.out {
        spec.out_path = Some(o.clone());
    }
    let report = run_experiment(&spec)?;
    if spec.out_path.is_some() {
        print!("{}", text_table(&report));
        Ok(())
    } else {
        emit(&canonical_json(&report)?, None)
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Generate(a) => generate(a),
        Command::Fit(a) => fit(a),
        Command::EstimateDim(a) => estimate_dim(a),
        Command::Cv(a) => cv(a),
        Command::TwoStage(a) => two_stage(a),
        Command::Bench(a) => bench(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_numerical() {
                ExitCode::from(3)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
