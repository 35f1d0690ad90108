//! Synthetic manifold data with known geometry, plus numerical checks of
//! geometric facts on the unit circle.
//!
//! Generators:
//! - Swiss roll: `T = (U cos U, V, U sin U)` with `U ~ Unif(3π/2, 9π/2)`,
//!   `V ~ Unif(0, 20)`, lifted linearly by a Gaussian `D × 3` matrix.
//! - Circle: angles mapped into `R^D` by a random trigonometric polynomial,
//!   a stand-in for images of a rotating object.
//!
//! Checks: distance-equivalence constants between geodesic and chordal
//! distance, and the Gaussian convolution operator on the circle.

use std::f64::consts::{PI, TAU};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::{write_matrix_csv, Dataset};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledManifoldData {
    pub dataset: Dataset,
    /// True coordinates: `(U, V)` for the Swiss roll, `θ` for the circle.
    pub latent: DMatrix<f64>,
    pub f0_at_points: Vec<f64>,
}

impl LabeledManifoldData {
    /// Rows `idx`, keeping latent coordinates and truth aligned.
    pub fn subset(&self, idx: &[usize]) -> Result<Self> {
        Ok(Self {
            dataset: self.dataset.subset(idx)?,
            latent: self.latent.select_rows(idx),
            f0_at_points: idx.iter().map(|&i| self.f0_at_points[i]).collect(),
        })
    }

    /// Sidecar CSV with latent coordinates and the noiseless truth.
    pub fn write_latent_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let d = self.latent.ncols();
        let mut header: Vec<String> = if d == 2 {
            vec!["u".into(), "v".into()]
        } else {
            (1..=d).map(|j| format!("t{j}")).collect()
        };
        if d == 1 {
            header = vec!["theta".into()];
        }
        header.push("f0".into());
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = std::io::BufWriter::new(file);
        write_matrix_csv(&mut out, &header, self.latent.nrows(), |i, j| {
            if j < d {
                self.latent[(i, j)]
            } else {
                self.f0_at_points[i]
            }
        })
        .map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SwissRollConfig {
    pub n: usize,
    pub ambient_dim: usize,
    pub noise_sd: f64,
    pub seed: u64,
}

impl Default for SwissRollConfig {
    fn default() -> Self {
        Self {
            n: 200,
            ambient_dim: 100,
            noise_sd: 0.1,
            seed: 0,
        }
    }
}

pub const SWISS_U_RANGE: (f64, f64) = (1.5 * PI, 4.5 * PI);
pub const SWISS_V_RANGE: (f64, f64) = (0.0, 20.0);

/// Noiseless Swiss-roll regression function of the latent `(U, V)`.
pub fn swiss_roll_f0(u: f64, v: f64) -> f64 {
    4.0 * (u / (3.0 * PI) - (1.0 + 3.0 * PI) / 2.0).powi(2) + PI / 20.0 * v
}

pub fn gen_swiss_roll(cfg: &SwissRollConfig) -> Result<LabeledManifoldData> {
    if cfg.ambient_dim < 3 {
        return Err(Error::invalid("swiss roll needs ambient dimension >= 3"));
    }
    if cfg.n == 0 {
        return Err(Error::EmptyDataset);
    }
    if !(cfg.noise_sd >= 0.0) {
        return Err(Error::invalid("noise sd must be nonnegative"));
    }
    let mut rng = seed::rng(cfg.seed);
    let omega = DMatrix::from_fn(cfg.ambient_dim, 3, |_, _| rng.sample::<f64, _>(StandardNormal));
    let mut latent = DMatrix::zeros(cfg.n, 2);
    let mut t = DMatrix::zeros(3, cfg.n);
    for i in 0..cfg.n {
        let u = rng.random_range(SWISS_U_RANGE.0..SWISS_U_RANGE.1);
        let v = rng.random_range(SWISS_V_RANGE.0..SWISS_V_RANGE.1);
        latent[(i, 0)] = u;
        latent[(i, 1)] = v;
        t[(0, i)] = u * u.cos();
        t[(1, i)] = v;
        t[(2, i)] = u * u.sin();
    }
    let x = (&omega * &t).transpose();
    let f0: Vec<f64> = (0..cfg.n).map(|i| swiss_roll_f0(latent[(i, 0)], latent[(i, 1)])).collect();
    let y = noisy(&f0, cfg.noise_sd, &mut rng);
    Ok(LabeledManifoldData {
        dataset: Dataset::new(x, y)?.with_seed(cfg.seed),
        latent,
        f0_at_points: f0,
    })
}

fn noisy(f0: &[f64], sd: f64, rng: &mut seed::Rng) -> DVector<f64> {
    if sd == 0.0 {
        return DVector::from_column_slice(f0);
    }
    let normal = Normal::new(0.0, sd).expect("validated sd");
    DVector::from_iterator(f0.len(), f0.iter().map(|f| f + rng.sample(normal)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum AngleSpacing {
    /// `θ_i = 2π i / n`.
    #[default]
    Equal,
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CircleManifoldConfig {
    pub n: usize,
    pub ambient_dim: usize,
    /// Highest harmonic in the embedding map.
    pub embedding_harmonics: usize,
    pub noise_sd: f64,
    pub spacing: AngleSpacing,
    pub seed: u64,
}

impl Default for CircleManifoldConfig {
    fn default() -> Self {
        Self {
            n: 72,
            ambient_dim: 128,
            embedding_harmonics: 6,
            noise_sd: 0.1,
            spacing: AngleSpacing::Equal,
            seed: 0,
        }
    }
}

/// `θ ↦ Σ_h c_h cos(hθ) + s_h sin(hθ)` with Gaussian coefficient vectors of
/// equal scale per harmonic, normalized so `E‖X(θ)‖² = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct CircleEmbedding {
    cos_coef: Vec<DVector<f64>>,
    sin_coef: Vec<DVector<f64>>,
}

impl CircleEmbedding {
    pub fn random(ambient_dim: usize, harmonics: usize, rng: &mut seed::Rng) -> Self {
        let scale = 1.0 / ((harmonics * ambient_dim) as f64).sqrt();
        let mut draw = || DVector::from_fn(ambient_dim, |_, _| scale * rng.sample::<f64, _>(StandardNormal));
        let mut cos_coef = Vec::with_capacity(harmonics);
        let mut sin_coef = Vec::with_capacity(harmonics);
        for _ in 0..harmonics {
            cos_coef.push(draw());
            sin_coef.push(draw());
        }
        Self { cos_coef, sin_coef }
    }

    pub fn ambient_dim(&self) -> usize {
        self.cos_coef[0].len()
    }

    pub fn map(&self, theta: f64) -> DVector<f64> {
        let mut out = DVector::zeros(self.ambient_dim());
        for (h, (c, s)) in self.cos_coef.iter().zip(&self.sin_coef).enumerate() {
            let k = (h + 1) as f64;
            out.axpy((k * theta).cos(), c, 1.0);
            out.axpy((k * theta).sin(), s, 1.0);
        }
        out
    }

    /// Minimum image distance over grid angles at least two steps apart.
    pub fn min_separation(&self, grid: usize) -> f64 {
        let pts: Vec<DVector<f64>> = (0..grid).map(|i| self.map(TAU * i as f64 / grid as f64)).collect();
        let mut best = f64::INFINITY;
        for i in 0..grid {
            for j in (i + 2)..grid {
                if i == 0 && j == grid - 1 {
                    continue;
                }
                best = best.min((&pts[i] - &pts[j]).norm());
            }
        }
        best
    }
}

const INJECTIVITY_GRID: usize = 360;
const INJECTIVITY_RETRIES: usize = 10;

pub fn gen_circle_manifold(cfg: &CircleManifoldConfig) -> Result<LabeledManifoldData> {
    if cfg.ambient_dim < 2 {
        return Err(Error::invalid("circle embedding needs ambient dimension >= 2"));
    }
    if cfg.embedding_harmonics == 0 {
        return Err(Error::invalid("embedding needs at least one harmonic"));
    }
    if cfg.n == 0 {
        return Err(Error::EmptyDataset);
    }
    if !(cfg.noise_sd >= 0.0) {
        return Err(Error::invalid("noise sd must be nonnegative"));
    }
    let mut rng = seed::rng(cfg.seed);
    let mut embedding = None;
    for _ in 0..INJECTIVITY_RETRIES {
        let e = CircleEmbedding::random(cfg.ambient_dim, cfg.embedding_harmonics, &mut rng);
        if e.min_separation(INJECTIVITY_GRID) > 1e-6 {
            embedding = Some(e);
            break;
        }
    }
    let embedding = embedding.ok_or_else(|| {
        Error::Degenerate(format!(
            "no injective embedding found in {INJECTIVITY_RETRIES} draws"
        ))
    })?;

    let thetas: Vec<f64> = match cfg.spacing {
        AngleSpacing::Equal => (0..cfg.n).map(|i| TAU * i as f64 / cfg.n as f64).collect(),
        AngleSpacing::Uniform => (0..cfg.n).map(|_| rng.random_range(0.0..TAU)).collect(),
    };
    let mut x = DMatrix::zeros(cfg.n, cfg.ambient_dim);
    for (i, &t) in thetas.iter().enumerate() {
        x.row_mut(i).copy_from(&embedding.map(t).transpose());
    }
    let f0: Vec<f64> = thetas.iter().map(|t| t.cos()).collect();
    let y = noisy(&f0, cfg.noise_sd, &mut rng);
    Ok(LabeledManifoldData {
        dataset: Dataset::new(x, y)?.with_seed(cfg.seed),
        latent: DMatrix::from_column_slice(cfg.n, 1, &thetas),
        f0_at_points: f0,
    })
}

/// Arc length between two angles on the unit circle.
pub fn geodesic_distance_circle(theta1: f64, theta2: f64) -> f64 {
    let d = (theta1 - theta2).abs().rem_euclid(TAU);
    d.min(TAU - d)
}

/// Points `(cos θ, sin θ)` of the unit circle.
pub fn unit_circle_points(thetas: &[f64]) -> DMatrix<f64> {
    DMatrix::from_fn(thetas.len(), 2, |i, j| if j == 0 { thetas[i].cos() } else { thetas[i].sin() })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistanceEquivalence {
    /// min over pairs of geodesic / chordal distance.
    pub c1_hat: f64,
    /// max over pairs of geodesic / chordal distance.
    pub c2_hat: f64,
    pub pairs: usize,
    pub skipped: usize,
}

impl DistanceEquivalence {
    /// Geodesic distance never falls below the chord.
    pub fn isometric_lower_bound_holds(&self) -> bool {
        self.c1_hat >= 1.0 - 1e-9
    }
}

/// Extremes of `d_M(x_i, x_j) / ‖x_i − x_j‖` over all pairs of rows.
/// Coincident pairs are skipped.
pub fn check_distance_equivalence(
    points: &DMatrix<f64>,
    geodesic: &dyn Fn(usize, usize) -> f64,
) -> Result<DistanceEquivalence> {
    let n = points.nrows();
    if n < 2 {
        return Err(Error::invalid("distance equivalence needs at least two points"));
    }
    let mut out = DistanceEquivalence {
        c1_hat: f64::INFINITY,
        c2_hat: 0.0,
        pairs: 0,
        skipped: 0,
    };
    let d = points.ncols();
    for i in 0..n {
        for j in (i + 1)..n {
            let mut s = 0.0;
            for k in 0..d {
                let t = points[(i, k)] - points[(j, k)];
                s += t * t;
            }
            let chord = s.sqrt();
            if chord == 0.0 {
                out.skipped += 1;
                continue;
            }
            let r = geodesic(i, j) / chord;
            out.c1_hat = out.c1_hat.min(r);
            out.c2_hat = out.c2_hat.max(r);
            out.pairs += 1;
        }
    }
    if out.pairs == 0 {
        return Err(Error::Degenerate("every pair of points coincides".into()));
    }
    Ok(out)
}

/// Gaussian convolution operator on the unit circle,
/// `I_a(f)(θ) = (a/√(2π)) ∮ exp(−a² ‖x(θ) − x(φ)‖² / 2) f(φ) dφ`,
/// discretized by the periodic trapezoidal rule.
pub struct CircleConvolution {
    a: f64,
    nodes: Vec<f64>,
    weighted_values: Vec<f64>,
}

pub const MIN_QUADRATURE_POINTS: usize = 256;

/// Points needed to resolve a kernel of inverse width `a`.
pub fn required_quadrature_points(a: f64) -> usize {
    MIN_QUADRATURE_POINTS.max((64.0 * a).ceil() as usize)
}

pub fn convolution_operator(
    f: &dyn Fn(f64) -> f64,
    a: f64,
    quadrature_points: usize,
) -> Result<CircleConvolution> {
    if !(a >= 1.0) || !a.is_finite() {
        return Err(Error::invalid(format!("convolution needs a >= 1, got {a}")));
    }
    let needed = required_quadrature_points(a);
    if quadrature_points < needed {
        return Err(Error::QuadratureResolution {
            points: quadrature_points,
            a,
            needed,
        });
    }
    let h = TAU / quadrature_points as f64;
    let scale = a / TAU.sqrt() * h;
    let nodes: Vec<f64> = (0..quadrature_points).map(|j| h * j as f64).collect();
    let weighted_values = nodes.iter().map(|&p| scale * f(p)).collect();
    Ok(CircleConvolution {
        a,
        nodes,
        weighted_values,
    })
}

impl CircleConvolution {
    pub fn eval(&self, theta: f64) -> f64 {
        let a2 = self.a * self.a;
        self.nodes
            .iter()
            .zip(&self.weighted_values)
            .map(|(&p, &w)| {
                // ‖x(θ) − x(φ)‖² = 4 sin²((θ − φ)/2)
                let s = ((theta - p) * 0.5).sin();
                w * (-2.0 * a2 * s * s).exp()
            })
            .sum()
    }

    /// `max_θ |I_a(f)(θ) − f(θ)|` over an equally spaced probe grid.
    pub fn sup_error(&self, f: &dyn Fn(f64) -> f64, probes: usize) -> f64 {
        (0..probes)
            .map(|i| {
                let t = TAU * (i as f64 + 0.5) / probes as f64;
                (self.eval(t) - f(t)).abs()
            })
            .fold(0.0, f64::max)
    }
}

/// Sup-error of `I_a(f)` at each `a`, with quadrature resolution set by the rule above.
pub fn convolution_errors(f: &dyn Fn(f64) -> f64, scales: &[f64], probes: usize) -> Result<Vec<f64>> {
    scales
        .iter()
        .map(|&a| Ok(convolution_operator(f, a, required_quadrature_points(a))?.sup_error(f, probes)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::least_squares;

    #[test]
    fn swiss_roll_latent_ranges_and_rank() {
        let data = gen_swiss_roll(&SwissRollConfig {
            n: 300,
            seed: 4,
            ..Default::default()
        })
        .unwrap();
        for i in 0..300 {
            let (u, v) = (data.latent[(i, 0)], data.latent[(i, 1)]);
            assert!((SWISS_U_RANGE.0..=SWISS_U_RANGE.1).contains(&u));
            assert!((SWISS_V_RANGE.0..=SWISS_V_RANGE.1).contains(&v));
        }
        assert_eq!(data.dataset.dim(), 100);
        let sv = data.dataset.predictors().clone().singular_values();
        let mut s: Vec<f64> = sv.iter().copied().collect();
        s.sort_by(|a, b| b.total_cmp(a));
        assert!(s[3] <= 1e-10 * s[0], "4th singular value {}", s[3]);
    }

    #[test]
    fn swiss_roll_noiseless_and_isometry() {
        let cfg = SwissRollConfig {
            n: 40,
            ambient_dim: 10,
            noise_sd: 0.0,
            seed: 1,
        };
        let data = gen_swiss_roll(&cfg).unwrap();
        assert_eq!(data.dataset.responses().as_slice(), data.f0_at_points.as_slice());
        assert_eq!(data, gen_swiss_roll(&cfg).unwrap());

        // ‖X_i − X_j‖ = ‖Ω (T_i − T_j)‖ with the generator's Ω
        let mut rng = seed::rng(cfg.seed);
        let omega = DMatrix::from_fn(10, 3, |_, _| rng.sample::<f64, _>(StandardNormal));
        let t = |i: usize| {
            let (u, v) = (data.latent[(i, 0)], data.latent[(i, 1)]);
            DVector::from_vec(vec![u * u.cos(), v, u * u.sin()])
        };
        let x = data.dataset.predictors();
        for (i, j) in [(0usize, 1usize), (5, 17), (39, 2)] {
            let lhs = (x.row(i) - x.row(j)).norm();
            let rhs = (&omega * (t(i) - t(j))).norm();
            assert!((lhs - rhs).abs() <= 1e-10 * rhs);
        }
    }

    #[test]
    fn circle_generator_properties() {
        let data = gen_circle_manifold(&CircleManifoldConfig {
            n: 72,
            noise_sd: 0.0,
            seed: 3,
            ..Default::default()
        })
        .unwrap();
        let th = &data.latent;
        for i in 1..72 {
            assert!((th[(i, 0)] - th[(i - 1, 0)] - TAU / 72.0).abs() < 1e-12);
        }
        assert_eq!(data.dataset.responses()[0], 1.0);
        assert_eq!(data.f0_at_points[0], 1.0);
    }

    #[test]
    fn circle_embedding_is_periodic() {
        let e = CircleEmbedding::random(20, 4, &mut seed::rng(8));
        for t in [0.0, 0.3, 2.0, 5.5] {
            assert!((e.map(t) - e.map(t + TAU)).amax() < 1e-12);
        }
        assert!(e.min_separation(200) > 0.0);
    }

    #[test]
    fn geodesic_examples() {
        assert!((geodesic_distance_circle(0.0, PI) - PI).abs() < 1e-15);
        assert_eq!(geodesic_distance_circle(1.3, 1.3), 0.0);
        assert!((geodesic_distance_circle(0.1, TAU - 0.1) - 0.2).abs() < 1e-12);
        let ratio = geodesic_distance_circle(0.0, PI / 2.0) / 2f64.sqrt();
        assert!((ratio - 1.110_720_734_539_591_5).abs() < 1e-12);
    }

    #[test]
    fn distance_equivalence_single_pair_and_grid() {
        let th = [0.0, PI / 2.0];
        let pts = unit_circle_points(&th);
        let de = check_distance_equivalence(&pts, &|i, j| geodesic_distance_circle(th[i], th[j])).unwrap();
        assert!((de.c1_hat - 1.110_720_734_539_591_5).abs() < 1e-12);
        assert!((de.c2_hat - de.c1_hat).abs() < 1e-15);

        let th: Vec<f64> = (0..400).map(|i| TAU * i as f64 / 400.0).collect();
        let pts = unit_circle_points(&th);
        let de = check_distance_equivalence(&pts, &|i, j| geodesic_distance_circle(th[i], th[j])).unwrap();
        assert!(de.isometric_lower_bound_holds());
        assert!((de.c2_hat - PI / 2.0).abs() < 1e-9);

        let dup = unit_circle_points(&[0.0, 0.0, 1.0]);
        let de = check_distance_equivalence(&dup, &|_, _| 1.0).unwrap();
        assert_eq!(de.skipped, 1);
    }

    // e^{-x} I_ν(x) by its large-argument expansion; accurate to ~1e-13 for x ≥ 64.
    fn scaled_bessel(nu: f64, x: f64) -> f64 {
        let mu = 4.0 * nu * nu;
        let mut term = 1.0;
        let mut sum = 1.0;
        for k in 1..12 {
            let kf = k as f64;
            term *= -(mu - (2.0 * kf - 1.0).powi(2)) / (kf * 8.0 * x);
            sum += term;
        }
        sum / (TAU * x).sqrt()
    }

    #[test]
    fn convolution_matches_bessel_closed_form() {
        for a in [8.0, 16.0, 40.0] {
            let one = convolution_operator(&|_| 1.0, a, required_quadrature_points(a)).unwrap();
            let exact_one = a * TAU / TAU.sqrt() * scaled_bessel(0.0, a * a);
            assert!((one.eval(0.7) - exact_one).abs() < 1e-11, "a = {a}");

            let cos = convolution_operator(&|t: f64| t.cos(), a, required_quadrature_points(a)).unwrap();
            let exact = a * TAU.sqrt() * scaled_bessel(1.0, a * a) * 0.7f64.cos();
            assert!((cos.eval(0.7) - exact).abs() < 1e-11, "a = {a}");
        }
    }

    #[test]
    fn convolution_constant_and_rate() {
        let c: Vec<f64> = [10.0, 20.0, 40.0]
            .iter()
            .map(|&a| {
                let op = convolution_operator(&|_| 1.0, a, required_quadrature_points(a)).unwrap();
                a * a * op.sup_error(&|_| 1.0, 32)
            })
            .collect();
        assert!((c[1] / c[0] - 1.0).abs() < 0.1 && (c[2] / c[1] - 1.0).abs() < 0.1, "{c:?}");

        let scales = [8.0, 16.0, 32.0, 64.0];
        let errs = convolution_errors(&|t: f64| t.cos(), &scales, 64).unwrap();
        for w in errs.windows(2) {
            let ratio = w[0] / w[1];
            assert!((ratio / 4.0 - 1.0).abs() < 0.3, "ratio {ratio}");
        }
        let lx: Vec<f64> = scales.iter().map(|a| a.ln()).collect();
        let ly: Vec<f64> = errs.iter().map(|e| e.ln()).collect();
        let slope = least_squares(&lx, &ly).slope;
        assert!((slope + 2.0).abs() < 0.3, "slope {slope}");
    }

    #[test]
    fn convolution_is_linear_and_guards_resolution() {
        let a = 5.0;
        let n = required_quadrature_points(a);
        let f = |t: f64| t.sin() + 0.3;
        let g = |t: f64| (2.0 * t).cos();
        let comb = |t: f64| 2.0 * f(t) - 0.5 * g(t);
        let of = convolution_operator(&f, a, n).unwrap();
        let og = convolution_operator(&g, a, n).unwrap();
        let oc = convolution_operator(&comb, a, n).unwrap();
        for t in [0.0, 1.0, 4.0] {
            assert!((oc.eval(t) - (2.0 * of.eval(t) - 0.5 * og.eval(t))).abs() < 1e-12);
        }
        assert!(matches!(
            convolution_operator(&f, 10.0, 600),
            Err(Error::QuadratureResolution { needed: 640, .. })
        ));
        assert!(convolution_operator(&f, 0.5, 1000).is_err());
        assert!(convolution_operator(&f, 1.0, 100).is_err());
    }
}
