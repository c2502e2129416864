//! Sliced discrepancies between empirical measures of SPD matrices.
//!
//! A measure is sliced along a symmetric unit direction `A` through the
//! identity: each point `M` maps to the geodesic coordinate `⟨A, log M⟩_F`
//! (or, for the horospherical variant, to the affine-invariant Busemann
//! coordinate). The discrepancy is the average over directions of the 1D
//! Wasserstein cost between the projected point clouds. Values are reported as
//! `W_p^p` averages, i.e. the p-th power of the sliced distance.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{sym_exp, udu_decompose_matrix, vectorize_into, vectorized_len, SpdMatrix, SymMatrix};
use crate::sampling::{build_projection_basis, sample_direction, DirectionFactors, ProjectionBasis, RngState, SamplerKind};

const UNIT_NORM_TOLERANCE: f64 = 1e-10;

/// Minimum eigenvalue gap of a direction used for Busemann coordinates.
pub const DEGENERACY_GAP: f64 = 1e-9;

/// Uniformly weighted empirical measure on SPD matrices.
#[derive(Debug, Clone)]
pub struct EmpiricalSpdMeasure {
    dim: usize,
    points: Vec<SpdMatrix>,
    /// Row `i` is the isometric vectorization of `log X_i`.
    log_rows: DMatrix<f64>,
}

impl EmpiricalSpdMeasure {
    pub fn new(points: Vec<SpdMatrix>) -> Result<Self> {
        let dim = points.first().ok_or(Error::EmptyMeasure)?.dim();
        let big_d = vectorized_len(dim);
        let mut log_rows = DMatrix::zeros(points.len(), big_d);
        let mut buf = vec![0.0; big_d];
        for (i, x) in points.iter().enumerate() {
            if x.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: x.dim(),
                });
            }
            vectorize_into(x.log().as_matrix(), &mut buf);
            log_rows.row_mut(i).copy_from_slice(&buf);
        }
        Ok(Self {
            dim,
            points,
            log_rows,
        })
    }

    /// Validates raw matrices in parallel and builds the measure.
    pub fn from_matrices(matrices: Vec<DMatrix<f64>>) -> Result<Self> {
        let points = matrices
            .into_par_iter()
            .map(SpdMatrix::new)
            .collect::<Result<Vec<_>>>()?;
        Self::new(points)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[SpdMatrix] {
        &self.points
    }

    pub fn into_points(self) -> Vec<SpdMatrix> {
        self.points
    }

    /// `log_# μ` as a measure on symmetric matrices.
    pub fn log_pushforward(&self) -> EmpiricalSymMeasure {
        EmpiricalSymMeasure {
            dim: self.dim,
            points: self.points.iter().map(|x| x.log().clone()).collect(),
            rows: self.log_rows.clone(),
        }
    }

    pub(crate) fn log_rows(&self) -> &DMatrix<f64> {
        &self.log_rows
    }
}

/// Uniformly weighted empirical measure on symmetric matrices.
#[derive(Debug, Clone)]
pub struct EmpiricalSymMeasure {
    dim: usize,
    points: Vec<SymMatrix>,
    rows: DMatrix<f64>,
}

impl EmpiricalSymMeasure {
    pub fn new(points: Vec<SymMatrix>) -> Result<Self> {
        let dim = points.first().ok_or(Error::EmptyMeasure)?.dim();
        let big_d = vectorized_len(dim);
        let mut rows = DMatrix::zeros(points.len(), big_d);
        let mut buf = vec![0.0; big_d];
        for (i, x) in points.iter().enumerate() {
            if x.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: x.dim(),
                });
            }
            vectorize_into(x.as_matrix(), &mut buf);
            rows.row_mut(i).copy_from_slice(&buf);
        }
        Ok(Self { dim, points, rows })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[SymMatrix] {
        &self.points
    }

    pub(crate) fn rows(&self) -> &DMatrix<f64> {
        &self.rows
    }
}

/// 1D projection of a measure along one direction.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedMeasure {
    pub coords: Vec<f64>,
    pub sorted: Vec<f64>,
}

impl ProjectedMeasure {
    pub fn new(coords: Vec<f64>) -> Self {
        let mut sorted = coords.clone();
        sorted.sort_unstable_by(f64::total_cmp);
        Self { coords, sorted }
    }
}

/// Which discrepancy produced a report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    Spdsw,
    Logsw,
    Hspdsw,
    LewExact,
    LeSinkhorn,
    AiwExact,
}

impl Estimator {
    pub fn name(&self) -> &'static str {
        match self {
            Estimator::Spdsw => "spdsw",
            Estimator::Logsw => "logsw",
            Estimator::Hspdsw => "hspdsw",
            Estimator::LewExact => "lew_exact",
            Estimator::LeSinkhorn => "le_sinkhorn",
            Estimator::AiwExact => "aiw_exact",
        }
    }
}

/// Value and metadata of one discrepancy computation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscrepancyReport {
    /// `W_p^p`-scale value (the p-th power of the distance).
    pub value: f64,
    pub estimator: Estimator,
    pub order_p: f64,
    pub num_projections: Option<usize>,
    pub sampler: Option<SamplerKind>,
    pub seed: Option<RngState>,
    /// Degenerate horospherical directions that were redrawn.
    pub resampled_directions: usize,
    /// Sinkhorn convergence flag; `None` for other estimators.
    pub converged: Option<bool>,
    pub wall_time_seconds: f64,
}

impl DiscrepancyReport {
    /// The p-th root of the value, i.e. the distance itself.
    pub fn distance(&self) -> f64 {
        self.value.max(0.0).powf(1.0 / self.order_p)
    }
}

fn check_order(p: f64) -> Result<()> {
    if !(p >= 1.0) || !p.is_finite() {
        return Err(Error::InvalidParameter(format!("order p must be >= 1, got {p}")));
    }
    Ok(())
}

fn check_unit(a: &SymMatrix) -> Result<()> {
    let norm = a.frobenius_norm();
    if (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
        return Err(Error::NotUnitNorm(norm));
    }
    Ok(())
}

fn check_dims(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}

/// Geodesic coordinate `t^A(M) = ⟨A, log M⟩_F`.
pub fn geodesic_coordinate(a: &SymMatrix, m: &SpdMatrix) -> Result<f64> {
    check_unit(a)?;
    check_dims(a.dim(), m.dim())?;
    Ok(a.inner(m.log()))
}

/// Closest point to `M` on the Log-Euclidean geodesic `{exp(tA)}`.
pub fn geodesic_project(a: &SymMatrix, m: &SpdMatrix) -> Result<SpdMatrix> {
    let t = geodesic_coordinate(a, m)?;
    sym_exp(&a.scaled(t))
}

/// A direction diagonalized with eigenvalues in decreasing order.
#[derive(Debug, Clone)]
struct BusemannFrame {
    basis: DMatrix<f64>,
    theta: DVector<f64>,
}

impl BusemannFrame {
    fn from_factors(f: &DirectionFactors) -> Result<Self> {
        let d = f.eigenvalues.len();
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| f.eigenvalues[b].total_cmp(&f.eigenvalues[a]));
        let theta = DVector::from_iterator(d, order.iter().map(|&k| f.eigenvalues[k]));
        let mut basis = DMatrix::zeros(d, d);
        for (dst, &src) in order.iter().enumerate() {
            basis.set_column(dst, &f.eigenvectors.column(src));
        }
        for k in 1..d {
            let gap = theta[k - 1] - theta[k];
            if gap < DEGENERACY_GAP {
                return Err(Error::DegenerateDirection(gap));
            }
        }
        Ok(Self { basis, theta })
    }

    fn coordinate(&self, m: &DMatrix<f64>) -> Result<f64> {
        let rotated = self.basis.transpose() * m * &self.basis;
        let (_, diag) = udu_decompose_matrix(&rotated)?;
        Ok(-self.theta.iter().zip(diag.iter()).map(|(t, v)| t * v.ln()).sum::<f64>())
    }
}

/// Affine-invariant Busemann coordinate `−⟨Ã, log π_A(M)⟩` where `π_A` is the
/// diagonal factor of the UDU decomposition in the eigenbasis of `A` sorted
/// by decreasing eigenvalue.
pub fn busemann_coordinate_ai(a: &SymMatrix, m: &SpdMatrix) -> Result<f64> {
    check_unit(a)?;
    check_dims(a.dim(), m.dim())?;
    let eig = crate::linalg::sym_eigen(a.as_matrix());
    let frame = BusemannFrame::from_factors(&DirectionFactors {
        eigenvectors: eig.eigenvectors,
        eigenvalues: eig.eigenvalues,
    })?;
    frame.coordinate(m.as_matrix())
}

/// Calls `f(i, j, mass)` for every cell of the monotone (quantile) coupling
/// between `n` and `m` uniformly weighted sorted atoms.
pub(crate) fn for_each_quantile_cell(n: usize, m: usize, mut f: impl FnMut(usize, usize, f64)) {
    if n == m {
        let w = 1.0 / n as f64;
        for i in 0..n {
            f(i, i, w);
        }
        return;
    }
    // Breakpoints in units of 1/(n m): x_i ends at (i+1) m, y_j at (j+1) n.
    let total = (n as u64) * (m as u64);
    let scale = 1.0 / total as f64;
    let (mut i, mut j, mut cur) = (0usize, 0usize, 0u64);
    while i < n && j < m {
        let next_x = (i as u64 + 1) * m as u64;
        let next_y = (j as u64 + 1) * n as u64;
        let next = next_x.min(next_y);
        f(i, j, (next - cur) as f64 * scale);
        cur = next;
        if next_x == next {
            i += 1;
        }
        if next_y == next {
            j += 1;
        }
    }
}

#[inline]
fn cost_pow(diff: f64, p: f64) -> f64 {
    let a = diff.abs();
    if p == 2.0 {
        a * a
    } else if p == 1.0 {
        a
    } else {
        a.powf(p)
    }
}

/// `W_p^p` between two uniformly weighted 1D empirical measures given by
/// ascending samples; exact for unequal sizes via the merged quantile grid.
pub fn wasserstein_1d(x_sorted: &[f64], y_sorted: &[f64], p: f64) -> Result<f64> {
    if x_sorted.is_empty() || y_sorted.is_empty() {
        return Err(Error::EmptyMeasure);
    }
    check_order(p)?;
    Ok(wasserstein_1d_unchecked(x_sorted, y_sorted, p))
}

pub(crate) fn wasserstein_1d_unchecked(x: &[f64], y: &[f64], p: f64) -> f64 {
    let mut total = 0.0;
    for_each_quantile_cell(x.len(), y.len(), |i, j, w| {
        total += w * cost_pow(x[i] - y[j], p);
    });
    total
}

fn sorted_column(coords: &DMatrix<f64>, l: usize) -> Vec<f64> {
    let n = coords.nrows();
    let mut col = coords.as_slice()[l * n..(l + 1) * n].to_vec();
    col.sort_unstable_by(f64::total_cmp);
    col
}

/// Per-direction `W_p^p` from projected coordinates (column `ℓ` = direction `ℓ`).
pub(crate) fn per_projection_costs(cx: &DMatrix<f64>, cy: &DMatrix<f64>, p: f64) -> Vec<f64> {
    (0..cx.ncols())
        .into_par_iter()
        .map(|l| {
            let xs = sorted_column(cx, l);
            let ys = sorted_column(cy, l);
            wasserstein_1d_unchecked(&xs, &ys, p)
        })
        .collect()
}

/// Fixed-order mean, independent of how the terms were computed.
pub(crate) fn ordered_mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn sliced_report(
    estimator: Estimator,
    basis: &ProjectionBasis,
    p: f64,
    value: f64,
    resampled: usize,
    start: Instant,
) -> DiscrepancyReport {
    DiscrepancyReport {
        value,
        estimator,
        order_p: p,
        num_projections: Some(basis.len()),
        sampler: Some(basis.sampler()),
        seed: basis.rng_state(),
        resampled_directions: resampled,
        converged: None,
        wall_time_seconds: start.elapsed().as_secs_f64(),
    }
}

/// Per-direction `W_p^p(t^{A_ℓ}_# μ, t^{A_ℓ}_# ν)` for every direction of the basis.
pub fn spdsw_per_projection(
    mu: &EmpiricalSpdMeasure,
    nu: &EmpiricalSpdMeasure,
    basis: &ProjectionBasis,
    p: f64,
) -> Result<Vec<f64>> {
    check_order(p)?;
    check_dims(basis.dim(), mu.dim())?;
    check_dims(basis.dim(), nu.dim())?;
    let cx = mu.log_rows() * basis.vectorized();
    let cy = nu.log_rows() * basis.vectorized();
    Ok(per_projection_costs(&cx, &cy, p))
}

/// Monte Carlo SPDSW estimate `(1/L) Σ_ℓ W_p^p(t^{A_ℓ}_# μ, t^{A_ℓ}_# ν)`.
pub fn spdsw(
    mu: &EmpiricalSpdMeasure,
    nu: &EmpiricalSpdMeasure,
    basis: &ProjectionBasis,
    p: f64,
) -> Result<DiscrepancyReport> {
    let start = Instant::now();
    let costs = spdsw_per_projection(mu, nu, basis, p)?;
    Ok(sliced_report(Estimator::Spdsw, basis, p, ordered_mean(&costs), 0, start))
}

/// Sliced Wasserstein between measures on symmetric matrices, slicing with
/// `B ↦ Tr(Aᵀ B)`.
pub fn sym_sw(
    mu_log: &EmpiricalSymMeasure,
    nu_log: &EmpiricalSymMeasure,
    basis: &ProjectionBasis,
    p: f64,
) -> Result<DiscrepancyReport> {
    let start = Instant::now();
    check_order(p)?;
    check_dims(basis.dim(), mu_log.dim())?;
    check_dims(basis.dim(), nu_log.dim())?;
    let cx = mu_log.rows() * basis.vectorized();
    let cy = nu_log.rows() * basis.vectorized();
    let costs = per_projection_costs(&cx, &cy, p);
    Ok(sliced_report(Estimator::Spdsw, basis, p, ordered_mean(&costs), 0, start))
}

/// Euclidean sliced Wasserstein on log-mapped measures, with directions on the
/// sphere of isometrically vectorized symmetric matrices.
pub fn log_sw(
    mu: &EmpiricalSpdMeasure,
    nu: &EmpiricalSpdMeasure,
    sphere_basis: &ProjectionBasis,
    p: f64,
) -> Result<DiscrepancyReport> {
    let start = Instant::now();
    let costs = spdsw_per_projection(mu, nu, sphere_basis, p)?;
    Ok(sliced_report(Estimator::Logsw, sphere_basis, p, ordered_mean(&costs), 0, start))
}

/// Basis for [`log_sw`]: `count` directions uniform on the vectorized sphere.
pub fn log_sw_basis(rng: RngState, d: usize, count: usize) -> Result<ProjectionBasis> {
    build_projection_basis(rng, d, count, SamplerKind::VectorizedSphere)
}

/// Stream tag for redrawing degenerate horospherical directions.
const RESAMPLE_STREAM: u64 = 0x5245_5341_4d50_4c45;
const MAX_RESAMPLES: u64 = 64;

fn busemann_frames(basis: &ProjectionBasis) -> Result<(Vec<BusemannFrame>, usize)> {
    let factors = basis.factors().ok_or(Error::BasisKind)?;
    let mut resampled = 0;
    let mut frames = Vec::with_capacity(factors.len());
    for (l, f) in factors.iter().enumerate() {
        match BusemannFrame::from_factors(f) {
            Ok(frame) => frames.push(frame),
            Err(Error::DegenerateDirection(gap)) => {
                let rng = basis.rng_state().ok_or(Error::DegenerateDirection(gap))?;
                let stream = rng.child(RESAMPLE_STREAM).child(l as u64);
                let mut found = None;
                for attempt in 0..MAX_RESAMPLES {
                    let (_, fresh) = sample_direction(stream.child(attempt), basis.dim(), SamplerKind::EigUniform)?;
                    if let Ok(frame) = BusemannFrame::from_factors(&fresh.expect("eig factors")) {
                        found = Some(frame);
                        break;
                    }
                }
                frames.push(found.ok_or(Error::DegenerateDirection(gap))?);
                resampled += 1;
            }
            Err(e) => return Err(e),
        }
    }
    Ok((frames, resampled))
}

fn busemann_coords(frames: &[BusemannFrame], points: &[SpdMatrix]) -> Result<DMatrix<f64>> {
    let n = points.len();
    let cols: Vec<Vec<f64>> = frames
        .par_iter()
        .map(|frame| {
            points
                .iter()
                .map(|x| frame.coordinate(x.as_matrix()))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    let mut out = DMatrix::zeros(n, frames.len());
    for (l, col) in cols.iter().enumerate() {
        out.column_mut(l).copy_from_slice(col);
    }
    Ok(out)
}

/// Horospherical SPDSW: slicing with affine-invariant Busemann coordinates.
/// Needs a basis that carries eigen factors (eig-uniform or built from factors).
pub fn hspdsw(
    mu: &EmpiricalSpdMeasure,
    nu: &EmpiricalSpdMeasure,
    basis: &ProjectionBasis,
    p: f64,
) -> Result<DiscrepancyReport> {
    let start = Instant::now();
    check_order(p)?;
    check_dims(basis.dim(), mu.dim())?;
    check_dims(basis.dim(), nu.dim())?;
    let (frames, resampled) = busemann_frames(basis)?;
    let cx = busemann_coords(&frames, mu.points())?;
    let cy = busemann_coords(&frames, nu.points())?;
    let costs = per_projection_costs(&cx, &cy, p);
    Ok(sliced_report(Estimator::Hspdsw, basis, p, ordered_mean(&costs), resampled, start))
}

/// One row of a Monte Carlo error table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McErrorRow {
    pub num_projections: usize,
    pub mean_abs_error: f64,
    /// Standard error of the mean over repetitions.
    pub std_error: f64,
}

/// Options of [`mc_error_estimate`].
#[derive(Debug, Clone)]
pub struct McErrorConfig {
    pub l_values: Vec<usize>,
    pub l_star: usize,
    pub repetitions: usize,
    pub sampler: SamplerKind,
}

/// Mean absolute deviation of the `L`-direction estimate from a reference
/// estimate with `l_star` directions, over independent repetitions.
///
/// Repetition `r` draws its directions from `rng.child(r + 1)` and evaluates
/// every `L` on prefixes of one basis; the reference uses `rng.child(0)`. An
/// `L` equal to `l_star` is the reference itself and has zero error.
pub fn mc_error_estimate(
    mu: &EmpiricalSpdMeasure,
    nu: &EmpiricalSpdMeasure,
    p: f64,
    config: &McErrorConfig,
    rng: RngState,
) -> Result<Vec<McErrorRow>> {
    if config.repetitions == 0 || config.l_values.is_empty() {
        return Err(Error::InvalidParameter("need at least one repetition and one L".into()));
    }
    if let Some(&bad) = config.l_values.iter().find(|&&l| l == 0 || l > config.l_star) {
        return Err(Error::InvalidParameter(format!(
            "L = {bad} must lie in [1, L* = {}]",
            config.l_star
        )));
    }
    let reference_basis = build_projection_basis(rng.child(0), mu.dim(), config.l_star, config.sampler)?;
    let reference = ordered_mean(&spdsw_per_projection(mu, nu, &reference_basis, p)?);
    drop(reference_basis);

    let l_max = config
        .l_values
        .iter()
        .copied()
        .filter(|&l| l < config.l_star)
        .max()
        .unwrap_or(0);
    let mut errors = vec![vec![0.0; config.repetitions]; config.l_values.len()];
    if l_max > 0 {
        for r in 0..config.repetitions {
            let basis = build_projection_basis(rng.child(r as u64 + 1), mu.dim(), l_max, config.sampler)?;
            let costs = spdsw_per_projection(mu, nu, &basis, p)?;
            for (k, &l) in config.l_values.iter().enumerate() {
                if l < config.l_star {
                    errors[k][r] = (ordered_mean(&costs[..l]) - reference).abs();
                }
            }
        }
    }
    Ok(config
        .l_values
        .iter()
        .zip(&errors)
        .map(|(&l, errs)| {
            let mean = ordered_mean(errs);
            let var = if errs.len() > 1 {
                errs.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (errs.len() - 1) as f64
            } else {
                0.0
            };
            McErrorRow {
                num_projections: l,
                mean_abs_error: mean,
                std_error: (var / errs.len() as f64).sqrt(),
            }
        })
        .collect())
}
