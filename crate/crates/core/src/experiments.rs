//! Experiment drivers: synthetic data generation and the runs behind each
//! CLI subcommand. Each driver returns an [`ExperimentReport`] whose `config`
//! echoes every parameter needed to reproduce its rows.

use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::adaptation::{
    evaluate_transfer, run_adaptation, train_log_linear_classifier, AdaptationConfig, AdaptationTrace, LabeledSpdDataset,
};
use crate::error::{Error, Result};
use crate::io::{load_dataset, ExperimentReport};
use crate::kernels::{
    gaussian_from_sq_distances, k_fold, mean_absolute_error, median_bandwidth, midpoint_levels, quantile_features,
    r2_score, sq_distance_matrix, GramMatrix, KernelRidgeModel, QuantileFeature,
};
use crate::linalg::{sym_exp, SpdMatrix, SymMatrix};
use crate::ot::{exact_discrepancy, sinkhorn_discrepancy, GroundMetric, SinkhornConfig, EXACT_SIZE_CAP};
use crate::sampling::{
    build_projection_basis, sample_haar_orthogonal, sample_vectorized_sphere, sample_wishart, sample_wishart_set,
    RngState, SamplerKind,
};
use crate::sliced::{hspdsw, log_sw_basis, mc_error_estimate, spdsw, DiscrepancyReport, EmpiricalSpdMeasure, McErrorConfig};

/// Name recorded in adaptation reports for the downstream classifier.
pub const CLASSIFIER_NAME: &str = "multinomial_logistic_regression";

/// Discrepancy selectable from the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceMetric {
    Spdsw,
    Logsw,
    Hspdsw,
    Lew,
    Les,
    Aiw,
}

impl DistanceMetric {
    pub fn name(&self) -> &'static str {
        match self {
            DistanceMetric::Spdsw => "spdsw",
            DistanceMetric::Logsw => "logsw",
            DistanceMetric::Hspdsw => "hspdsw",
            DistanceMetric::Lew => "lew",
            DistanceMetric::Les => "les",
            DistanceMetric::Aiw => "aiw",
        }
    }

    /// Whether the metric materializes an `n×m` cost matrix.
    pub fn needs_cost_matrix(&self) -> bool {
        matches!(self, DistanceMetric::Lew | DistanceMetric::Les | DistanceMetric::Aiw)
    }
}

/// Settings shared by every distance computation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceConfig {
    pub metric: DistanceMetric,
    pub projections: usize,
    pub order_p: f64,
    pub seed: u64,
    pub sampler: SamplerKind,
    pub epsilon: f64,
    pub sinkhorn_max_iter: usize,
    pub sinkhorn_threshold: f64,
    pub exact_size_cap: usize,
}

impl DistanceConfig {
    pub fn new(metric: DistanceMetric) -> Self {
        Self {
            metric,
            projections: 500,
            order_p: 2.0,
            seed: 0,
            sampler: SamplerKind::EigUniform,
            epsilon: 1.0,
            sinkhorn_max_iter: 100_000,
            sinkhorn_threshold: 1e-10,
            exact_size_cap: EXACT_SIZE_CAP,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.metric == DistanceMetric::Hspdsw && self.sampler != SamplerKind::EigUniform {
            return Err(Error::InvalidParameter(
                "hspdsw needs eigen-form directions; use the eig sampler".into(),
            ));
        }
        if self.sampler == SamplerKind::Custom {
            return Err(Error::InvalidParameter("custom directions cannot be sampled".into()));
        }
        Ok(())
    }
}

/// Dispatches to the requested estimator.
pub fn compute_distance(
    mu: &EmpiricalSpdMeasure,
    nu: &EmpiricalSpdMeasure,
    cfg: &DistanceConfig,
) -> Result<DiscrepancyReport> {
    compute_distance_with_rng(mu, nu, cfg, RngState::new(cfg.seed))
}

/// [`compute_distance`] drawing directions from `rng` instead of `cfg.seed`.
pub fn compute_distance_with_rng(
    mu: &EmpiricalSpdMeasure,
    nu: &EmpiricalSpdMeasure,
    cfg: &DistanceConfig,
    rng: RngState,
) -> Result<DiscrepancyReport> {
    cfg.validate()?;
    let d = mu.dim();
    match cfg.metric {
        DistanceMetric::Spdsw => spdsw(mu, nu, &build_projection_basis(rng, d, cfg.projections, cfg.sampler)?, cfg.order_p),
        DistanceMetric::Hspdsw => hspdsw(mu, nu, &build_projection_basis(rng, d, cfg.projections, cfg.sampler)?, cfg.order_p),
        DistanceMetric::Logsw => crate::sliced::log_sw(mu, nu, &log_sw_basis(rng, d, cfg.projections)?, cfg.order_p),
        DistanceMetric::Lew => exact_discrepancy(mu, nu, GroundMetric::LogEuclidean, cfg.order_p, cfg.exact_size_cap),
        DistanceMetric::Aiw => exact_discrepancy(mu, nu, GroundMetric::AffineInvariant, cfg.order_p, cfg.exact_size_cap),
        DistanceMetric::Les => sinkhorn_discrepancy(
            mu,
            nu,
            cfg.order_p,
            &SinkhornConfig {
                epsilon: cfg.epsilon,
                max_iter: cfg.sinkhorn_max_iter,
                threshold: cfg.sinkhorn_threshold,
                ..SinkhornConfig::default()
            },
        ),
    }
}

/// Report of a single distance computation between two files.
pub fn distance_report(cfg: &DistanceConfig, inputs: [&Path; 2], result: &DiscrepancyReport) -> ExperimentReport {
    let mut config = serde_json::to_value(cfg).expect("config serializes");
    config["inputs"] = json!([inputs[0].display().to_string(), inputs[1].display().to_string()]);
    let mut report = ExperimentReport::new("distance", config);
    report.push_row(json!({
        "estimator": result.estimator.name(),
        "value": result.value,
        "distance": result.distance(),
        "order_p": result.order_p,
        "num_projections": result.num_projections,
        "sampler": result.sampler.map(|s| s.name()),
        "seed": result.seed.map(|s| s.seed),
        "resampled_directions": result.resampled_directions,
        "converged": result.converged,
    }));
    report.timing.insert("wall_time_seconds".into(), json!(result.wall_time_seconds));
    report
}

/// `n` Wishart draws with `dof` degrees of freedom and the given scale.
pub fn wishart_measure(rng: RngState, d: usize, n: usize, dof: usize, scale: &SpdMatrix) -> Result<EmpiricalSpdMeasure> {
    EmpiricalSpdMeasure::new(sample_wishart_set(rng, d, dof, scale, n)?)
}

/// Default Wishart degrees of freedom for dimension `d`.
pub fn default_dof(d: usize) -> usize {
    2 * d
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let k = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / k;
    let my = ly.iter().sum::<f64>() / k;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Wall-time benchmark settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuntimeConfig {
    pub n_grid: Vec<usize>,
    pub d: usize,
    pub projections: usize,
    pub metrics: Vec<DistanceMetric>,
    pub repeats: usize,
    pub seed: u64,
    pub dof: usize,
    /// Configurations whose cost matrix would exceed this many bytes are skipped.
    pub max_cost_bytes: usize,
    pub epsilon: f64,
    pub sinkhorn_max_iter: usize,
}

impl RuntimeConfig {
    pub fn new() -> Self {
        let d = 20;
        Self {
            n_grid: vec![1000, 3162, 10000, 31623, 100000],
            d,
            projections: 200,
            metrics: vec![DistanceMetric::Spdsw, DistanceMetric::Logsw, DistanceMetric::Lew],
            repeats: 20,
            seed: 0,
            dof: default_dof(d),
            max_cost_bytes: 1 << 30,
            epsilon: 1.0,
            sinkhorn_max_iter: 100_000,
        }
    }
}

impl Default for RuntimeConfig {
    fn default() -> Self {
        Self::new()
    }
}

/// One timed cell of the runtime benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuntimeRow {
    pub metric: DistanceMetric,
    pub n: usize,
    pub skipped: bool,
    pub median_seconds: Option<f64>,
    pub q1_seconds: Option<f64>,
    pub q3_seconds: Option<f64>,
}

/// Times each metric on pairs of Wishart samples of growing size. The timed
/// region covers validating the raw matrices, their logarithms, the
/// directions and the discrepancy itself; data generation is excluded.
pub fn benchmark_runtime(cfg: &RuntimeConfig) -> Result<(ExperimentReport, Vec<RuntimeRow>)> {
    if cfg.repeats == 0 {
        return Err(Error::InvalidParameter("repeats must be positive".into()));
    }
    let start = Instant::now();
    let rng = RngState::new(cfg.seed);
    let scale = SpdMatrix::identity(cfg.d);
    let mut rows = Vec::new();
    for (k, &n) in cfg.n_grid.iter().enumerate() {
        let cell = rng.child(k as u64);
        let xs: Vec<DMatrix<f64>> = sample_wishart_set(cell.child(0), cfg.d, cfg.dof, &scale, n)?
            .into_iter()
            .map(|m| m.as_matrix().clone())
            .collect();
        let ys: Vec<DMatrix<f64>> = sample_wishart_set(cell.child(1), cfg.d, cfg.dof, &scale, n)?
            .into_iter()
            .map(|m| m.as_matrix().clone())
            .collect();
        for &metric in &cfg.metrics {
            let cost_bytes = n.saturating_mul(n).saturating_mul(8);
            if metric.needs_cost_matrix() && cost_bytes > cfg.max_cost_bytes {
                log::info!("skipping {} at n = {n}: cost matrix needs {cost_bytes} bytes", metric.name());
                rows.push(RuntimeRow {
                    metric,
                    n,
                    skipped: true,
                    median_seconds: None,
                    q1_seconds: None,
                    q3_seconds: None,
                });
                continue;
            }
            let dist_cfg = DistanceConfig {
                projections: cfg.projections,
                seed: cfg.seed,
                epsilon: cfg.epsilon,
                sinkhorn_max_iter: cfg.sinkhorn_max_iter,
                exact_size_cap: cfg.max_cost_bytes / 8,
                ..DistanceConfig::new(metric)
            };
            let mut times = Vec::with_capacity(cfg.repeats);
            for _ in 0..cfg.repeats {
                let (a, b) = (xs.clone(), ys.clone());
                let t0 = Instant::now();
                let mu = EmpiricalSpdMeasure::from_matrices(a)?;
                let nu = EmpiricalSpdMeasure::from_matrices(b)?;
                let r = compute_distance(&mu, &nu, &dist_cfg)?;
                std::hint::black_box(r.value);
                times.push(t0.elapsed().as_secs_f64());
            }
            times.sort_unstable_by(f64::total_cmp);
            rows.push(RuntimeRow {
                metric,
                n,
                skipped: false,
                median_seconds: Some(quantile_sorted(&times, 0.5)),
                q1_seconds: Some(quantile_sorted(&times, 0.25)),
                q3_seconds: Some(quantile_sorted(&times, 0.75)),
            });
        }
    }
    let mut report = ExperimentReport::new("benchmark_runtime", serde_json::to_value(cfg)?);
    for r in &rows {
        report.push_row(serde_json::to_value(r)?);
    }
    report.timing.insert("wall_time_seconds".into(), json!(start.elapsed().as_secs_f64()));
    Ok((report, rows))
}

/// Sample-complexity settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleComplexityConfig {
    pub dims: Vec<usize>,
    pub n_grid: Vec<usize>,
    pub repeats: usize,
    pub metrics: Vec<DistanceMetric>,
    pub projections: usize,
    pub order_p: f64,
    pub seed: u64,
    /// Wishart degrees of freedom per dimension; `None` uses `2d`.
    pub dof: Option<usize>,
    pub exact_size_cap: usize,
}

impl SampleComplexityConfig {
    pub fn new() -> Self {
        Self {
            dims: vec![2, 20],
            n_grid: vec![10, 32, 100, 316, 1000],
            repeats: 100,
            metrics: vec![DistanceMetric::Spdsw, DistanceMetric::Lew],
            projections: 200,
            order_p: 2.0,
            seed: 0,
            dof: None,
            exact_size_cap: 1 << 20,
        }
    }
}

impl Default for SampleComplexityConfig {
    fn default() -> Self {
        Self::new()
    }
}

/// Mean distance between two independent samples of one law, per `(metric, d, n)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexityPoint {
    pub metric: DistanceMetric,
    pub d: usize,
    pub n: usize,
    pub mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// Fitted log-log slope per `(metric, d)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexitySlope {
    pub metric: DistanceMetric,
    pub d: usize,
    pub slope: f64,
}

fn mean_and_ci(values: &[f64]) -> (f64, f64, f64) {
    let k = values.len() as f64;
    let mean = values.iter().sum::<f64>() / k;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0)
    } else {
        0.0
    };
    let half = 1.96 * (var / k).sqrt();
    (mean, mean - half, mean + half)
}

/// Distances (p-th roots) between independent empirical measures drawn from
/// the same Wishart law, as `n` grows.
pub fn sample_complexity(cfg: &SampleComplexityConfig) -> Result<(ExperimentReport, Vec<ComplexityPoint>, Vec<ComplexitySlope>)> {
    let start = Instant::now();
    let rng = RngState::new(cfg.seed);
    let mut points = Vec::new();
    let mut slopes = Vec::new();
    for (di, &d) in cfg.dims.iter().enumerate() {
        let dof = cfg.dof.unwrap_or_else(|| default_dof(d));
        let scale = SpdMatrix::identity(d);
        for &metric in &cfg.metrics {
            let mut means = Vec::new();
            for (ni, &n) in cfg.n_grid.iter().enumerate() {
                let mut values = Vec::with_capacity(cfg.repeats);
                for r in 0..cfg.repeats {
                    let cell = rng.child(di as u64).child(ni as u64).child(r as u64);
                    let mu = wishart_measure(cell.child(0), d, n, dof, &scale)?;
                    let nu = wishart_measure(cell.child(1), d, n, dof, &scale)?;
                    let dist_cfg = DistanceConfig {
                        projections: cfg.projections,
                        order_p: cfg.order_p,
                        exact_size_cap: cfg.exact_size_cap,
                        ..DistanceConfig::new(metric)
                    };
                    values.push(compute_distance_with_rng(&mu, &nu, &dist_cfg, cell.child(2))?.distance());
                }
                let (mean, lo, hi) = mean_and_ci(&values);
                means.push(mean);
                points.push(ComplexityPoint {
                    metric,
                    d,
                    n,
                    mean,
                    ci_low: lo,
                    ci_high: hi,
                });
            }
            let ns: Vec<f64> = cfg.n_grid.iter().map(|&n| n as f64).collect();
            slopes.push(ComplexitySlope {
                metric,
                d,
                slope: loglog_slope(&ns, &means),
            });
        }
    }
    let mut config = serde_json::to_value(cfg)?;
    config["reported_value"] = json!("distance (p-th root)");
    let mut report = ExperimentReport::new("sample_complexity", config);
    for p in &points {
        let mut row = json!({"kind": "point"});
        merge(&mut row, serde_json::to_value(p)?);
        report.push_row(row);
    }
    for s in &slopes {
        let mut row = json!({"kind": "slope"});
        merge(&mut row, serde_json::to_value(s)?);
        report.push_row(row);
    }
    report.timing.insert("wall_time_seconds".into(), json!(start.elapsed().as_secs_f64()));
    Ok((report, points, slopes))
}

fn merge(into: &mut Value, from: Value) {
    if let (Value::Object(a), Value::Object(b)) = (into, from) {
        a.extend(b);
    }
}

/// Projection-complexity settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionComplexityConfig {
    pub dims: Vec<usize>,
    pub l_grid: Vec<usize>,
    pub l_star: usize,
    pub repeats: usize,
    pub n: usize,
    pub order_p: f64,
    pub seed: u64,
    pub sampler: SamplerKind,
    pub dof: Option<usize>,
}

impl ProjectionComplexityConfig {
    pub fn new() -> Self {
        Self {
            dims: vec![2, 20],
            l_grid: vec![10, 22, 46, 100, 215, 464, 1000],
            l_star: 10_000,
            repeats: 100,
            n: 100,
            order_p: 2.0,
            seed: 0,
            sampler: SamplerKind::EigUniform,
            dof: None,
        }
    }
}

impl Default for ProjectionComplexityConfig {
    fn default() -> Self {
        Self::new()
    }
}

/// Monte Carlo error of SPDSW against an `L*`-direction reference, per
/// dimension. `μ` has identity scale, `ν` a random scale `exp(B)` with `B` a
/// unit symmetric matrix.
pub fn projection_complexity(cfg: &ProjectionComplexityConfig) -> Result<(ExperimentReport, Vec<ComplexitySlope>)> {
    let start = Instant::now();
    let rng = RngState::new(cfg.seed);
    let mut report_rows = Vec::new();
    let mut slopes = Vec::new();
    for (di, &d) in cfg.dims.iter().enumerate() {
        let cell = rng.child(di as u64);
        let dof = cfg.dof.unwrap_or_else(|| default_dof(d));
        let b = sample_vectorized_sphere(&mut cell.child(0).rng(), d)?;
        let mu = wishart_measure(cell.child(1), d, cfg.n, dof, &SpdMatrix::identity(d))?;
        let nu = wishart_measure(cell.child(2), d, cfg.n, dof, &sym_exp(&b)?)?;
        let mc = McErrorConfig {
            l_values: cfg.l_grid.clone(),
            l_star: cfg.l_star,
            repetitions: cfg.repeats,
            sampler: cfg.sampler,
        };
        let rows = mc_error_estimate(&mu, &nu, cfg.order_p, &mc, cell.child(3))?;
        let fit: Vec<_> = rows.iter().filter(|r| r.num_projections < cfg.l_star).collect();
        let slope = loglog_slope(
            &fit.iter().map(|r| r.num_projections as f64).collect::<Vec<_>>(),
            &fit.iter().map(|r| r.mean_abs_error).collect::<Vec<_>>(),
        );
        slopes.push(ComplexitySlope {
            metric: DistanceMetric::Spdsw,
            d,
            slope,
        });
        for r in rows {
            report_rows.push(json!({
                "kind": "point",
                "d": d,
                "num_projections": r.num_projections,
                "mean_abs_error": r.mean_abs_error,
                "std_error": r.std_error,
            }));
        }
        report_rows.push(json!({"kind": "slope", "d": d, "slope": slope}));
    }
    let mut report = ExperimentReport::new("projection_complexity", serde_json::to_value(cfg)?);
    for r in report_rows {
        report.push_row(r);
    }
    report.timing.insert("wall_time_seconds".into(), json!(start.elapsed().as_secs_f64()));
    Ok((report, slopes))
}

/// A random rotation `exp(Ω)` whose generator has spectral radius `angle`.
pub fn random_rotation(rng: RngState, d: usize, angle: f64) -> Result<DMatrix<f64>> {
    if angle == 0.0 || d < 2 {
        return Ok(DMatrix::identity(d, d));
    }
    let q = sample_haar_orthogonal(&mut rng.rng(), d)?;
    let mut omega = DMatrix::zeros(d, d);
    for k in (0..d - 1).step_by(2) {
        omega[(k, k + 1)] = angle;
        omega[(k + 1, k)] = -angle;
    }
    Ok((&q * omega * q.transpose()).exp())
}

/// Applies `C ↦ Rᵀ (W C W) R` with `W = exp(T/2)`, so commuting data has its
/// logarithm shifted by `T` before the rotation.
pub fn domain_shift(points: &[SpdMatrix], rotation: &DMatrix<f64>, translation_log: &SymMatrix) -> Result<Vec<SpdMatrix>> {
    let w = sym_exp(&translation_log.scaled(0.5))?;
    let w = w.as_matrix();
    points
        .iter()
        .map(|c| SpdMatrix::new(rotation.transpose() * (w * c.as_matrix() * w) * rotation))
        .collect()
}

/// Synthetic Wishart generator settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WishartSpec {
    pub d: usize,
    /// Points per class (or in total without classes).
    pub n: usize,
    pub dof: usize,
    pub classes: Option<usize>,
    /// Class `k` uses scale `(1 + k·step)·S`.
    pub class_scale_step: f64,
    pub seed: u64,
}

/// Draws a (possibly labeled) Wishart dataset; classes are listed in order.
pub fn generate_wishart(wishart: &WishartSpec, scale: &SpdMatrix) -> Result<(Vec<SpdMatrix>, Option<Vec<usize>>)> {
    let rng = RngState::new(wishart.seed);
    match wishart.classes {
        None => Ok((sample_wishart_set(rng, wishart.d, wishart.dof, scale, wishart.n)?, None)),
        Some(k) => {
            if k == 0 {
                return Err(Error::InvalidParameter("need at least one class".into()));
            }
            let mut points = Vec::with_capacity(k * wishart.n);
            let mut labels = Vec::with_capacity(k * wishart.n);
            for c in 0..k {
                let s = SpdMatrix::new(scale.as_matrix() * (1.0 + c as f64 * wishart.class_scale_step))?;
                points.extend(sample_wishart_set(rng.child(c as u64), wishart.d, wishart.dof, &s, wishart.n)?);
                labels.extend(std::iter::repeat(c).take(wishart.n));
            }
            Ok((points, Some(labels)))
        }
    }
}

/// Two-class adaptation benchmark: class scales `I` and `2I`, target equal to
/// the source under a random rotation and the log-translation `shift·I`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptationTask {
    pub d: usize,
    pub n_per_class: usize,
    pub dof: usize,
    pub rotation_angle: f64,
    pub log_shift: f64,
    pub seed: u64,
}

impl AdaptationTask {
    pub fn new(seed: u64) -> Self {
        Self {
            d: 5,
            n_per_class: 100,
            dof: 50,
            rotation_angle: 0.5,
            log_shift: std::f64::consts::LN_2,
            seed,
        }
    }

    pub fn generate(&self) -> Result<(LabeledSpdDataset, LabeledSpdDataset)> {
        let wishart = WishartSpec {
            d: self.d,
            n: self.n_per_class,
            dof: self.dof,
            classes: Some(2),
            class_scale_step: 1.0,
            seed: self.seed,
        };
        let (points, labels) = generate_wishart(&wishart, &SpdMatrix::identity(self.d))?;
        let labels = labels.expect("classes requested");
        let rng = RngState::new(self.seed).child(1000);
        let rotation = random_rotation(rng.child(0), self.d, self.rotation_angle)?;
        let translation = SymMatrix::from_diagonal(&vec![self.log_shift; self.d])?;
        let shifted = domain_shift(&points, &rotation, &translation)?;
        Ok((
            LabeledSpdDataset::new(EmpiricalSpdMeasure::new(points)?, labels.clone())?,
            LabeledSpdDataset::new(EmpiricalSpdMeasure::new(shifted)?, labels)?,
        ))
    }
}

/// Accuracies of the source-trained classifier on the target, before and
/// after adaptation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferScores {
    pub before: f64,
    pub after: f64,
}

/// Runs adaptation and, when target labels are available, scores transfer.
pub fn adapt_experiment(
    source: &LabeledSpdDataset,
    target: &EmpiricalSpdMeasure,
    target_labels: Option<&[usize]>,
    evaluate: bool,
    l2_penalty: f64,
    cfg: &AdaptationConfig,
) -> Result<(ExperimentReport, AdaptationTrace, Option<TransferScores>)> {
    let labeled_target = match (evaluate, target_labels) {
        (true, None) => return Err(Error::MissingLabels),
        (true, Some(l)) => Some(LabeledSpdDataset::new(target.clone(), l.to_vec())?),
        (false, _) => None,
    };
    let trace = run_adaptation(source, target, cfg)?;
    let scores = match &labeled_target {
        Some(t) => {
            let before = evaluate_transfer(&train_log_linear_classifier(source, l2_penalty)?, t)?;
            let after = evaluate_transfer(&train_log_linear_classifier(&trace.adapted, l2_penalty)?, t)?;
            Some(TransferScores { before, after })
        }
        None => None,
    };
    let mut config = serde_json::to_value(cfg)?;
    config["classifier"] = json!(CLASSIFIER_NAME);
    config["l2_penalty"] = json!(l2_penalty);
    let mut report = ExperimentReport::new("adapt", config);
    for (epoch, loss) in trace.losses.iter().enumerate() {
        report.push_row(json!({"kind": "epoch", "epoch": epoch, "loss": loss}));
    }
    let mut summary = json!({
        "kind": "summary",
        "initial_loss": trace.initial_loss(),
        "final_loss": trace.final_loss(),
        "epochs_run": trace.epochs_run,
        "halvings": trace.halvings,
        "final_learning_rate": trace.final_learning_rate,
        "stalled": trace.stalled,
    });
    if let Some(s) = &scores {
        summary["accuracy_before"] = json!(s.before);
        summary["accuracy_after"] = json!(s.after);
    }
    report.push_row(summary);
    report.timing.insert("wall_time_seconds".into(), json!(trace.wall_time_seconds));
    Ok((report, trace, scores))
}

/// One distribution-regression example: a target and one measure per band.
#[derive(Debug, Clone)]
pub struct RegressionSample {
    pub target: f64,
    pub bands: Vec<EmpiricalSpdMeasure>,
}

#[derive(Debug, Deserialize)]
struct ManifestEntry {
    target: f64,
    files: Vec<PathBuf>,
}

#[derive(Debug, Deserialize)]
struct Manifest {
    entries: Vec<ManifestEntry>,
}

/// Reads `{"entries": [{"target": y, "files": [band0.json, ...]}, ...]}`;
/// file paths are relative to the manifest.
pub fn load_manifest(path: &Path) -> Result<Vec<RegressionSample>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| Error::InvalidData(format!("{}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let samples = manifest
        .entries
        .into_iter()
        .map(|e| {
            let bands = e
                .files
                .iter()
                .map(|f| load_dataset(&base.join(f)).map(|d| d.measure))
                .collect::<Result<Vec<_>>>()?;
            Ok(RegressionSample { target: e.target, bands })
        })
        .collect::<Result<Vec<_>>>()?;
    check_bands(&samples)?;
    Ok(samples)
}

fn check_bands(samples: &[RegressionSample]) -> Result<()> {
    let first = samples.first().ok_or_else(|| Error::InvalidData("no regression samples".into()))?;
    for s in samples {
        if s.bands.len() != first.bands.len() {
            return Err(Error::InvalidData("every entry needs the same number of bands".into()));
        }
        for (a, b) in s.bands.iter().zip(&first.bands) {
            if a.dim() != b.dim() {
                return Err(Error::DimensionMismatch {
                    expected: b.dim(),
                    got: a.dim(),
                });
            }
        }
    }
    if first.bands.is_empty() {
        return Err(Error::InvalidData("entries list no files".into()));
    }
    Ok(())
}

/// Bandwidth selection rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bandwidth {
    Median,
    Value(f64),
}

/// Kernel ridge regression settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelRidgeConfig {
    pub projections: usize,
    pub quantiles: usize,
    pub sigma: Bandwidth,
    pub alpha: f64,
    pub folds: usize,
    pub seed: u64,
    pub sampler: SamplerKind,
}

impl KernelRidgeConfig {
    pub fn new() -> Self {
        Self {
            projections: 500,
            quantiles: 100,
            sigma: Bandwidth::Median,
            alpha: 1e-2,
            folds: 5,
            seed: 0,
            sampler: SamplerKind::EigUniform,
        }
    }
}

impl Default for KernelRidgeConfig {
    fn default() -> Self {
        Self::new()
    }
}

/// One out-of-sample prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub index: usize,
    pub fold: Option<usize>,
    pub target: f64,
    pub prediction: f64,
}

/// Features of every sample, one vector per band.
fn band_features(samples: &[RegressionSample], cfg: &KernelRidgeConfig) -> Result<Vec<Vec<QuantileFeature>>> {
    let rng = RngState::new(cfg.seed);
    let levels = midpoint_levels(cfg.quantiles);
    let n_bands = samples[0].bands.len();
    (0..n_bands)
        .map(|b| {
            let basis = build_projection_basis(rng.child(b as u64), samples[0].bands[b].dim(), cfg.projections, cfg.sampler)?;
            let measures: Vec<EmpiricalSpdMeasure> = samples.iter().map(|s| s.bands[b].clone()).collect();
            quantile_features(&measures, &basis, &levels)
        })
        .collect()
}

/// Fits on `train` and predicts `test`, both index lists into `sq` (per band
/// squared-distance matrices over all samples).
fn fit_predict(
    sq: &[DMatrix<f64>],
    targets: &[f64],
    train: &[usize],
    test: &[usize],
    cfg: &KernelRidgeConfig,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut grams = Vec::with_capacity(sq.len());
    let mut cross = DMatrix::zeros(test.len(), train.len());
    let mut sigmas = Vec::with_capacity(sq.len());
    for band in sq {
        let train_sq = band.select_rows(train).select_columns(train);
        let sigma = match cfg.sigma {
            Bandwidth::Median => median_bandwidth(&train_sq),
            Bandwidth::Value(s) => s,
        };
        sigmas.push(sigma);
        grams.push(GramMatrix {
            matrix: gaussian_from_sq_distances(&train_sq, sigma)?,
            bandwidths: vec![sigma],
        });
        cross += gaussian_from_sq_distances(&band.select_rows(test).select_columns(train), sigma)?;
    }
    let gram = crate::kernels::sum_kernels(&grams)?;
    let y: Vec<f64> = train.iter().map(|&i| targets[i]).collect();
    let model: KernelRidgeModel = crate::kernels::kernel_ridge_fit(&gram, &y, cfg.alpha)?;
    Ok((model.predict_from_gram(&cross)?, sigmas))
}

/// Distribution regression with summed per-band SPDSW Gaussian kernels.
/// Without a test set, runs K-fold cross-validation on `train`.
pub fn kernel_ridge_experiment(
    train: &[RegressionSample],
    test: Option<&[RegressionSample]>,
    cfg: &KernelRidgeConfig,
) -> Result<(ExperimentReport, Vec<Prediction>)> {
    let start = Instant::now();
    check_bands(train)?;
    let mut all: Vec<RegressionSample> = train.to_vec();
    if let Some(t) = test {
        check_bands(t)?;
        if t[0].bands.len() != train[0].bands.len() {
            return Err(Error::InvalidData("train and test band counts differ".into()));
        }
        all.extend_from_slice(t);
    }
    let features = band_features(&all, cfg)?;
    let sq: Vec<DMatrix<f64>> = features.iter().map(|f| sq_distance_matrix(f)).collect::<Result<_>>()?;
    let targets: Vec<f64> = all.iter().map(|s| s.target).collect();
    let mut report = ExperimentReport::new("kernel_ridge", serde_json::to_value(cfg)?);
    let mut predictions = Vec::new();
    match test {
        Some(t) => {
            let train_idx: Vec<usize> = (0..train.len()).collect();
            let test_idx: Vec<usize> = (train.len()..train.len() + t.len()).collect();
            let (pred, sigmas) = fit_predict(&sq, &targets, &train_idx, &test_idx, cfg)?;
            let truth: Vec<f64> = test_idx.iter().map(|&i| targets[i]).collect();
            report.push_row(json!({
                "kind": "test",
                "n_train": train.len(),
                "n_test": t.len(),
                "mae": mean_absolute_error(&truth, &pred),
                "r2": r2_score(&truth, &pred),
                "sigmas": sigmas,
            }));
            for (k, (&y, &p)) in truth.iter().zip(&pred).enumerate() {
                predictions.push(Prediction {
                    index: k,
                    fold: None,
                    target: y,
                    prediction: p,
                });
            }
        }
        None => {
            let folds = k_fold(train.len(), cfg.folds, Some(RngState::new(cfg.seed).child(u64::MAX)))?;
            let mut pooled = vec![0.0; train.len()];
            for (f, fold) in folds.iter().enumerate() {
                let (pred, sigmas) = fit_predict(&sq, &targets, &fold.train, &fold.test, cfg)?;
                let truth: Vec<f64> = fold.test.iter().map(|&i| targets[i]).collect();
                report.push_row(json!({
                    "kind": "fold",
                    "fold": f,
                    "n_train": fold.train.len(),
                    "n_test": fold.test.len(),
                    "mae": mean_absolute_error(&truth, &pred),
                    "r2": r2_score(&truth, &pred),
                    "sigmas": sigmas,
                }));
                for (&i, &p) in fold.test.iter().zip(&pred) {
                    pooled[i] = p;
                    predictions.push(Prediction {
                        index: i,
                        fold: Some(f),
                        target: targets[i],
                        prediction: p,
                    });
                }
            }
            report.push_row(json!({
                "kind": "overall",
                "mae": mean_absolute_error(&targets, &pooled),
                "r2": r2_score(&targets, &pooled),
            }));
            predictions.sort_by_key(|p| p.index);
        }
    }
    report.timing.insert("wall_time_seconds".into(), json!(start.elapsed().as_secs_f64()));
    Ok((report, predictions))
}

/// Distribution-regression benchmark: `count` measures of `n` Wishart draws
/// with scale `(1+u)·I`, target `u ~ U[0,1]`.
pub fn synthetic_regression_task(seed: u64, count: usize, n: usize, d: usize, dof: usize) -> Result<Vec<RegressionSample>> {
    use rand::Rng;
    let rng = RngState::new(seed);
    let mut u_rng = rng.child(0).rng();
    let targets: Vec<f64> = (0..count).map(|_| u_rng.random::<f64>()).collect();
    targets
        .iter()
        .enumerate()
        .map(|(k, &u)| {
            let scale = SpdMatrix::from_diagonal(&vec![1.0 + u; d])?;
            Ok(RegressionSample {
                target: u,
                bands: vec![wishart_measure(rng.child(k as u64 + 1), d, n, dof, &scale)?],
            })
        })
        .collect()
}

/// Single Wishart draw, exposed for callers that need one matrix.
pub fn wishart_matrix(rng: RngState, d: usize, dof: usize, scale: &SpdMatrix) -> Result<SpdMatrix> {
    sample_wishart(&mut rng.rng(), d, dof, scale)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_of_a_power_law() {
        let xs = [1.0, 10.0, 100.0];
        let ys: Vec<f64> = xs.iter().map(|x: &f64| 3.0 * x.powf(-0.5)).collect();
        assert!((loglog_slope(&xs, &ys) + 0.5).abs() < 1e-12);
    }

    #[test]
    fn hspdsw_rejects_fast_sampler() {
        let mut cfg = DistanceConfig::new(DistanceMetric::Hspdsw);
        cfg.sampler = SamplerKind::FastSymmetric;
        assert!(matches!(cfg.validate(), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn identity_shift_is_exact() {
        let (pts, _) = generate_wishart(
            &WishartSpec {
                d: 3,
                n: 5,
                dof: 6,
                classes: None,
                class_scale_step: 1.0,
                seed: 4,
            },
            &SpdMatrix::identity(3),
        )
        .unwrap();
        let r = random_rotation(RngState::new(1), 3, 0.0).unwrap();
        let shifted = domain_shift(&pts, &r, &SymMatrix::zeros(3)).unwrap();
        for (a, b) in pts.iter().zip(&shifted) {
            assert_eq!(a.to_row_major(), b.to_row_major());
        }
    }

    #[test]
    fn rotations_are_special_orthogonal() {
        let r = random_rotation(RngState::new(2), 4, 0.7).unwrap();
        assert!((r.transpose() * &r - DMatrix::identity(4, 4)).norm() < 1e-12);
        assert!(r.determinant() > 0.0);
    }

    #[test]
    fn classes_get_scaled() {
        let wishart = WishartSpec {
            d: 2,
            n: 3,
            dof: 4,
            classes: Some(3),
            class_scale_step: 1.0,
            seed: 0,
        };
        let (pts, labels) = generate_wishart(&wishart, &SpdMatrix::identity(2)).unwrap();
        assert_eq!(pts.len(), 9);
        assert_eq!(labels.unwrap(), vec![0, 0, 0, 1, 1, 1, 2, 2, 2]);
    }
}
