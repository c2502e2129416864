//! Command-line front end of the `spdsliced` binary.
//!
//! Exit codes: 0 success, 2 usage error, 3 invalid input data, 4 numerical
//! failure.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use crate::adaptation::{AdaptationConfig, AdaptationMode, LabeledSpdDataset, LossKind};
use crate::error::Error;
use crate::experiments::{
    adapt_experiment, benchmark_runtime, compute_distance, default_dof, distance_report, domain_shift, generate_wishart,
    kernel_ridge_experiment, load_manifest, projection_complexity, random_rotation, sample_complexity, Bandwidth,
    DistanceConfig, DistanceMetric, KernelRidgeConfig, ProjectionComplexityConfig, RuntimeConfig,
    SampleComplexityConfig, WishartSpec,
};
use crate::io::{load_dataset, save_dataset, write_atomic, ExperimentReport, ReportFormat};
use crate::linalg::{SpdMatrix, SymMatrix};
use crate::ot::EXACT_SIZE_CAP;
use crate::sampling::{RngState, SamplerKind};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

/// Exit code for a library error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidParameter(_) | Error::InstanceTooLarge { .. } | Error::BasisKind => EXIT_USAGE,
        Error::NotConverged { .. }
        | Error::IllConditioned(_)
        | Error::Overflow(_)
        | Error::DegenerateDirection(_)
        | Error::DegenerateSample
        | Error::SingularFeatures
        | Error::NonFinite => EXIT_NUMERICAL,
        _ => EXIT_DATA,
    }
}

#[derive(Debug, Parser)]
#[command(name = "spdsliced", version, about = "Sliced-Wasserstein discrepancies on SPD matrices")]
pub struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true, env = "SPDSLICED_THREADS")]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Discrepancy between two dataset files.
    Distance(DistanceArgs),
    /// Wall-time scaling of the estimators with the number of points.
    BenchmarkRuntime(RuntimeArgs),
    /// Convergence of empirical discrepancies with the sample size.
    SampleComplexity(SampleComplexityArgs),
    /// Monte Carlo error as a function of the number of projections.
    ProjectionComplexity(ProjectionComplexityArgs),
    /// Align a labeled source dataset onto a target dataset.
    Adapt(AdaptArgs),
    /// Distribution regression with sliced Gaussian kernels.
    KernelRidge(KernelRidgeArgs),
    /// Write synthetic Wishart datasets.
    GenWishart(GenWishartArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MetricArg {
    Spdsw,
    Logsw,
    Hspdsw,
    Lew,
    Les,
    Aiw,
}

impl From<MetricArg> for DistanceMetric {
    fn from(m: MetricArg) -> Self {
        match m {
            MetricArg::Spdsw => DistanceMetric::Spdsw,
            MetricArg::Logsw => DistanceMetric::Logsw,
            MetricArg::Hspdsw => DistanceMetric::Hspdsw,
            MetricArg::Lew => DistanceMetric::Lew,
            MetricArg::Les => DistanceMetric::Les,
            MetricArg::Aiw => DistanceMetric::Aiw,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SamplerArg {
    /// Haar eigenvectors with eigenvalues uniform on the sphere.
    Eig,
    /// Normalized symmetric Gaussian matrices.
    Fast,
}

impl From<SamplerArg> for SamplerKind {
    fn from(s: SamplerArg) -> Self {
        match s {
            SamplerArg::Eig => SamplerKind::EigUniform,
            SamplerArg::Fast => SamplerKind::FastSymmetric,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Json,
    Csv,
}

impl From<FormatArg> for ReportFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Json => ReportFormat::Json,
            FormatArg::Csv => ReportFormat::Csv,
        }
    }
}

#[derive(Debug, Args)]
pub struct OutputArgs {
    /// Report destination; stdout when absent.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    pub format: FormatArg,
    /// Leave wall times out so that reruns are byte-identical.
    #[arg(long)]
    pub omit_timing: bool,
}

#[derive(Debug, Args)]
pub struct DistanceArgs {
    pub x: PathBuf,
    pub y: PathBuf,
    #[arg(long, value_enum, default_value = "spdsw")]
    pub metric: MetricArg,
    #[arg(long, short = 'L', default_value_t = 500)]
    pub projections: usize,
    #[arg(long, short = 'p', default_value_t = 2.0)]
    pub order: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "eig")]
    pub sampler: SamplerArg,
    /// Entropic regularization for `les`.
    #[arg(long, default_value_t = 1.0)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 100_000)]
    pub max_iter: usize,
    #[arg(long, default_value_t = 1e-10)]
    pub threshold: f64,
    /// Largest n·m accepted by the exact solvers.
    #[arg(long, default_value_t = EXACT_SIZE_CAP)]
    pub exact_cap: usize,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Debug, Args)]
pub struct RuntimeArgs {
    #[arg(long, value_delimiter = ',', default_values_t = [1000usize, 3162, 10000, 31623, 100000])]
    pub n_grid: Vec<usize>,
    #[arg(long, default_value_t = 20)]
    pub d: usize,
    #[arg(long, short = 'L', default_value_t = 200)]
    pub projections: usize,
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [MetricArg::Spdsw, MetricArg::Logsw, MetricArg::Lew])]
    pub metrics: Vec<MetricArg>,
    #[arg(long, default_value_t = 20)]
    pub repeats: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Wishart degrees of freedom (default 2d).
    #[arg(long)]
    pub dof: Option<usize>,
    /// Skip cost-matrix metrics whose matrix would exceed this many bytes.
    #[arg(long, default_value_t = 1usize << 30)]
    pub max_cost_bytes: usize,
    #[arg(long, default_value_t = 1.0)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 100_000)]
    pub max_iter: usize,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Debug, Args)]
pub struct SampleComplexityArgs {
    #[arg(long, value_delimiter = ',', default_values_t = [2usize, 20])]
    pub dims: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = [10usize, 32, 100, 316, 1000])]
    pub n_grid: Vec<usize>,
    #[arg(long, default_value_t = 100)]
    pub repeats: usize,
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [MetricArg::Spdsw, MetricArg::Lew])]
    pub metric: Vec<MetricArg>,
    #[arg(long, short = 'L', default_value_t = 200)]
    pub projections: usize,
    #[arg(long, short = 'p', default_value_t = 2.0)]
    pub order: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub dof: Option<usize>,
    /// Largest dimension accepted in --dims.
    #[arg(long, default_value_t = 20)]
    pub max_dim: usize,
    #[arg(long, default_value_t = 1usize << 20)]
    pub exact_cap: usize,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Debug, Args)]
pub struct ProjectionComplexityArgs {
    #[arg(long = "L-grid", alias = "l-grid", value_delimiter = ',', default_values_t = [10usize, 22, 46, 100, 215, 464, 1000])]
    pub l_grid: Vec<usize>,
    #[arg(long = "L-star", alias = "l-star", default_value_t = 10_000)]
    pub l_star: usize,
    #[arg(long, default_value_t = 100)]
    pub repeats: usize,
    #[arg(long, value_delimiter = ',', default_values_t = [2usize, 20])]
    pub dims: Vec<usize>,
    /// Points per measure.
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    #[arg(long, short = 'p', default_value_t = 2.0)]
    pub order: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "eig")]
    pub sampler: SamplerArg,
    #[arg(long)]
    pub dof: Option<usize>,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Particles,
    Transform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LossArg {
    Spdsw,
    Logsw,
    Lew,
    Les,
}

impl From<LossArg> for LossKind {
    fn from(l: LossArg) -> Self {
        match l {
            LossArg::Spdsw => LossKind::Spdsw,
            LossArg::Logsw => LossKind::Logsw,
            LossArg::Lew => LossKind::LewExact,
            LossArg::Les => LossKind::LeSinkhorn,
        }
    }
}

#[derive(Debug, Args)]
pub struct AdaptArgs {
    /// Labeled source dataset.
    #[arg(long)]
    pub source: PathBuf,
    /// Target dataset; labels are only needed for evaluation.
    #[arg(long)]
    pub target: PathBuf,
    #[arg(long, value_enum, default_value = "particles")]
    pub mode: ModeArg,
    #[arg(long, value_enum, default_value = "spdsw")]
    pub loss: LossArg,
    #[arg(long, default_value_t = 500)]
    pub epochs: usize,
    /// Learning rate (default depends on mode and loss).
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, short = 'L', default_value_t = 500)]
    pub projections: usize,
    #[arg(long, value_enum, default_value = "eig")]
    pub sampler: SamplerArg,
    #[arg(long, default_value_t = 10.0)]
    pub epsilon: f64,
    #[arg(long, default_value_t = EXACT_SIZE_CAP)]
    pub exact_cap: usize,
    /// Plain fixed-step descent, without halving on increase.
    #[arg(long)]
    pub no_safeguard: bool,
    #[arg(long, default_value_t = 20)]
    pub max_halvings: usize,
    /// L2 penalty of the downstream classifier.
    #[arg(long, default_value_t = 1e-2)]
    pub l2: f64,
    /// Skip the before/after accuracy evaluation.
    #[arg(long)]
    pub no_eval: bool,
    /// Where to write the adapted source dataset.
    #[arg(long)]
    pub adapted_output: Option<PathBuf>,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Debug, Args)]
pub struct KernelRidgeArgs {
    /// Manifest `{"entries": [{"target": y, "files": [...]}]}`.
    #[arg(long)]
    pub train: PathBuf,
    /// Held-out manifest; K-fold cross-validation on --train when absent.
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[arg(long, short = 'L', default_value_t = 500)]
    pub projections: usize,
    #[arg(long, default_value_t = 100)]
    pub quantiles: usize,
    /// `median` or a positive bandwidth.
    #[arg(long, default_value = "median")]
    pub sigma: String,
    #[arg(long, default_value_t = 1e-2)]
    pub alpha: f64,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "eig")]
    pub sampler: SamplerArg,
    /// CSV file receiving one prediction per line.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Debug, Args)]
pub struct GenWishartArgs {
    #[arg(long)]
    pub d: usize,
    /// Points in total, or per class with --classes.
    #[arg(long)]
    pub n: usize,
    /// Degrees of freedom (default 2d).
    #[arg(long)]
    pub dof: Option<usize>,
    /// `identity` or a dataset file whose first matrix is the scale.
    #[arg(long, default_value = "identity")]
    pub scale: String,
    /// Number of labeled classes; class k uses scale (1 + k·step)·S.
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long, default_value_t = 1.0)]
    pub class_scale_step: f64,
    /// Also write a shifted copy simulating a domain gap.
    #[arg(long)]
    pub shift: bool,
    /// Spectral radius of the random rotation generator.
    #[arg(long, default_value_t = 0.5)]
    pub rotation_angle: f64,
    /// Log-translation `t·I` applied before the rotation.
    #[arg(long, default_value_t = std::f64::consts::LN_2)]
    pub translation: f64,
    /// Destination of the shifted copy (default: `<output stem>_shifted.json`).
    #[arg(long)]
    pub shifted_output: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, short)]
    pub output: PathBuf,
}

/// Failure of a CLI run with its exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        Self {
            code: exit_code(&e),
            message: e.to_string(),
        }
    }
}

fn usage(message: impl Into<String>) -> CliError {
    CliError {
        code: EXIT_USAGE,
        message: message.into(),
    }
}

fn emit(report: ExperimentReport, out: &OutputArgs) -> Result<(), CliError> {
    let report = if out.omit_timing { report.without_timing() } else { report };
    let format = ReportFormat::from(out.format);
    match &out.output {
        Some(path) => report.write(path, format)?,
        None => {
            let text = match format {
                ReportFormat::Json => report.to_json()? + "\n",
                ReportFormat::Csv => report.to_csv(),
            };
            std::io::stdout()
                .write_all(text.as_bytes())
                .map_err(|e| CliError::from(Error::from(e)))?;
        }
    }
    Ok(())
}

fn run_distance(a: &DistanceArgs) -> Result<(), CliError> {
    if a.sampler == SamplerArg::Fast && a.metric == MetricArg::Hspdsw {
        return Err(usage("--sampler fast cannot be combined with --metric hspdsw"));
    }
    let cfg = DistanceConfig {
        projections: a.projections,
        order_p: a.order,
        seed: a.seed,
        sampler: a.sampler.into(),
        epsilon: a.epsilon,
        sinkhorn_max_iter: a.max_iter,
        sinkhorn_threshold: a.threshold,
        exact_size_cap: a.exact_cap,
        ..DistanceConfig::new(a.metric.into())
    };
    cfg.validate()?;
    let x = load_dataset(&a.x)?;
    let y = load_dataset(&a.y)?;
    let result = compute_distance(&x.measure, &y.measure, &cfg)?;
    emit(distance_report(&cfg, [&a.x, &a.y], &result), &a.out)?;
    if result.converged == Some(false) {
        return Err(CliError {
            code: EXIT_NUMERICAL,
            message: "Sinkhorn did not reach the threshold; the report holds the last iterate".into(),
        });
    }
    Ok(())
}

fn run_runtime(a: &RuntimeArgs) -> Result<(), CliError> {
    let cfg = RuntimeConfig {
        n_grid: a.n_grid.clone(),
        d: a.d,
        projections: a.projections,
        metrics: a.metrics.iter().map(|&m| m.into()).collect(),
        repeats: a.repeats,
        seed: a.seed,
        dof: a.dof.unwrap_or_else(|| default_dof(a.d)),
        max_cost_bytes: a.max_cost_bytes,
        epsilon: a.epsilon,
        sinkhorn_max_iter: a.max_iter,
    };
    let (report, _) = benchmark_runtime(&cfg)?;
    emit(report, &a.out)
}

fn run_sample_complexity(a: &SampleComplexityArgs) -> Result<(), CliError> {
    if let Some(&d) = a.dims.iter().find(|&&d| d > a.max_dim) {
        return Err(usage(format!("dimension {d} exceeds --max-dim {}", a.max_dim)));
    }
    let cfg = SampleComplexityConfig {
        dims: a.dims.clone(),
        n_grid: a.n_grid.clone(),
        repeats: a.repeats,
        metrics: a.metric.iter().map(|&m| m.into()).collect(),
        projections: a.projections,
        order_p: a.order,
        seed: a.seed,
        dof: a.dof,
        exact_size_cap: a.exact_cap,
    };
    let (mut report, _, _) = sample_complexity(&cfg)?;
    report.config["max_dim"] = json!(a.max_dim);
    report.config["dimension_cap_raised"] = json!(a.max_dim > 20);
    emit(report, &a.out)
}

fn run_projection_complexity(a: &ProjectionComplexityArgs) -> Result<(), CliError> {
    let cfg = ProjectionComplexityConfig {
        dims: a.dims.clone(),
        l_grid: a.l_grid.clone(),
        l_star: a.l_star,
        repeats: a.repeats,
        n: a.n,
        order_p: a.order,
        seed: a.seed,
        sampler: a.sampler.into(),
        dof: a.dof,
    };
    let (report, _) = projection_complexity(&cfg)?;
    emit(report, &a.out)
}

fn run_adapt(a: &AdaptArgs) -> Result<(), CliError> {
    let mode = match a.mode {
        ModeArg::Particles => AdaptationMode::Particles,
        ModeArg::Transform => AdaptationMode::Transform,
    };
    let mut cfg = AdaptationConfig::new(mode, a.loss.into());
    cfg.epochs = a.epochs;
    if let Some(lr) = a.lr {
        cfg.learning_rate = lr;
    }
    cfg.seed = a.seed;
    cfg.num_projections = a.projections;
    cfg.sampler = a.sampler.into();
    cfg.sinkhorn_epsilon = a.epsilon;
    cfg.exact_size_cap = a.exact_cap;
    cfg.safeguard = !a.no_safeguard;
    cfg.max_halvings = a.max_halvings;

    let source = load_dataset(&a.source)?;
    let labels = source.labels.ok_or(Error::MissingLabels)?;
    let source = LabeledSpdDataset::new(source.measure, labels)?;
    let target = load_dataset(&a.target)?;
    let (report, trace, _) = adapt_experiment(
        &source,
        &target.measure,
        target.labels.as_deref(),
        !a.no_eval,
        a.l2,
        &cfg,
    )?;
    if let Some(path) = &a.adapted_output {
        save_dataset(path, trace.adapted.measure().points(), Some(trace.adapted.labels()))?;
    }
    emit(report, &a.out)
}

fn run_kernel_ridge(a: &KernelRidgeArgs) -> Result<(), CliError> {
    let sigma = if a.sigma == "median" {
        Bandwidth::Median
    } else {
        match a.sigma.parse::<f64>() {
            Ok(s) if s > 0.0 => Bandwidth::Value(s),
            _ => return Err(usage(format!("--sigma must be `median` or a positive number, got {}", a.sigma))),
        }
    };
    let cfg = KernelRidgeConfig {
        projections: a.projections,
        quantiles: a.quantiles,
        sigma,
        alpha: a.alpha,
        folds: a.folds,
        seed: a.seed,
        sampler: a.sampler.into(),
    };
    let train = load_manifest(&a.train)?;
    let test = a.test.as_deref().map(load_manifest).transpose()?;
    let (mut report, predictions) = kernel_ridge_experiment(&train, test.as_deref(), &cfg)?;
    report.config["train"] = json!(a.train.display().to_string());
    report.config["test"] = json!(a.test.as_ref().map(|p| p.display().to_string()));
    if let Some(path) = &a.predictions {
        write_atomic(path, |w| {
            writeln!(w, "index,fold,target,prediction")?;
            for p in &predictions {
                let fold = p.fold.map(|f| f.to_string()).unwrap_or_default();
                writeln!(w, "{},{},{},{}", p.index, fold, json!(p.target), json!(p.prediction))?;
            }
            Ok(())
        })?;
    }
    emit(report, &a.out)
}

fn shifted_path(output: &Path) -> PathBuf {
    let stem = output.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    output.with_file_name(format!("{stem}_shifted.json"))
}

fn run_gen_wishart(a: &GenWishartArgs) -> Result<(), CliError> {
    let dof = a.dof.unwrap_or_else(|| default_dof(a.d));
    if dof < a.d {
        return Err(usage(format!("--dof {dof} must be at least --d {}", a.d)));
    }
    let scale = if a.scale == "identity" {
        SpdMatrix::identity(a.d)
    } else {
        let data = load_dataset(Path::new(&a.scale))?;
        let s = data.measure.points()[0].clone();
        if s.dim() != a.d {
            return Err(Error::DimensionMismatch { expected: a.d, got: s.dim() }.into());
        }
        s
    };
    let wishart = WishartSpec {
        d: a.d,
        n: a.n,
        dof,
        classes: a.classes,
        class_scale_step: a.class_scale_step,
        seed: a.seed,
    };
    let (points, labels) = generate_wishart(&wishart, &scale)?;
    save_dataset(&a.output, &points, labels.as_deref())?;
    if a.shift {
        let rotation = random_rotation(RngState::new(a.seed).child(1000).child(0), a.d, a.rotation_angle)?;
        let translation = SymMatrix::from_diagonal(&vec![a.translation; a.d])?;
        let shifted = domain_shift(&points, &rotation, &translation)?;
        let path = a.shifted_output.clone().unwrap_or_else(|| shifted_path(&a.output));
        save_dataset(&path, &shifted, labels.as_deref())?;
    }
    Ok(())
}

fn configure_threads(threads: Option<usize>) -> Result<(), CliError> {
    if let Some(n) = threads {
        if n == 0 {
            return Err(usage("--threads must be positive"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| usage(format!("cannot configure thread pool: {e}")))?;
    }
    Ok(())
}

/// Executes a parsed command line.
pub fn run(cli: &Cli) -> Result<(), CliError> {
    configure_threads(cli.threads)?;
    match &cli.command {
        Command::Distance(a) => run_distance(a),
        Command::BenchmarkRuntime(a) => run_runtime(a),
        Command::SampleComplexity(a) => run_sample_complexity(a),
        Command::ProjectionComplexity(a) => run_projection_complexity(a),
        Command::Adapt(a) => run_adapt(a),
        Command::KernelRidge(a) => run_kernel_ridge(a),
        Command::GenWishart(a) => run_gen_wishart(a),
    }
}

/// Parses `args`, runs, prints errors to stderr and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match run(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}
