//! Distribution alignment of SPD datasets: gradient descent on a transport
//! discrepancy, either over the source particles (in log coordinates) or over
//! a chain of congruence transforms `C ↦ WᵀCW`, followed by a log-linear
//! classifier trained on the source and evaluated on the target.

use std::time::Instant;

use nalgebra::{Cholesky, DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{
    exp_frechet_derivative, log_frechet_with, sym_exp, symmetrize, unvectorize, vectorize_into, vectorized_len,
    SpdMatrix, SymMatrix,
};
use crate::ot::{exact_wasserstein_capped, le_cost_from_rows, sinkhorn, SinkhornConfig, EXACT_SIZE_CAP};
use crate::sampling::{build_projection_basis, ProjectionBasis, RngState, SamplerKind};
use crate::sliced::{for_each_quantile_cell, EmpiricalSpdMeasure};

/// Discrepancy minimized during adaptation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Spdsw,
    Logsw,
    LewExact,
    LeSinkhorn,
}

impl LossKind {
    pub fn is_sliced(&self) -> bool {
        matches!(self, LossKind::Spdsw | LossKind::Logsw)
    }
}

/// What gradient descent moves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdaptationMode {
    Particles,
    Transform,
}

/// SPD points with integer class labels in `[0, K)`.
#[derive(Debug, Clone)]
pub struct LabeledSpdDataset {
    measure: EmpiricalSpdMeasure,
    labels: Vec<usize>,
}

impl LabeledSpdDataset {
    pub fn new(measure: EmpiricalSpdMeasure, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != measure.len() {
            return Err(Error::SizeMismatch(labels.len(), measure.len()));
        }
        Ok(Self { measure, labels })
    }

    pub fn measure(&self) -> &EmpiricalSpdMeasure {
        &self.measure
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.labels.iter().max().map_or(0, |m| m + 1)
    }

    pub fn into_parts(self) -> (EmpiricalSpdMeasure, Vec<usize>) {
        (self.measure, self.labels)
    }
}

/// One congruence step, stored in unconstrained coordinates.
#[derive(Debug, Clone, PartialEq)]
pub enum TransformStep {
    /// `W = exp(S)` with `S` symmetric.
    Translation(SymMatrix),
    /// `R = exp(Ω)` with `Ω` skew-symmetric.
    Rotation(DMatrix<f64>),
}

impl TransformStep {
    pub fn translation_identity(d: usize) -> Self {
        TransformStep::Translation(SymMatrix::zeros(d))
    }

    pub fn rotation_identity(d: usize) -> Self {
        TransformStep::Rotation(DMatrix::zeros(d, d))
    }

    pub fn translation_from(w: &SpdMatrix) -> Self {
        TransformStep::Translation(w.log().clone())
    }

    pub fn rotation_from_skew(omega: DMatrix<f64>) -> Result<Self> {
        if !omega.is_square() {
            return Err(Error::NotSquare {
                rows: omega.nrows(),
                cols: omega.ncols(),
            });
        }
        if (&omega + omega.transpose()).amax() > 1e-12 * omega.amax().max(1.0) {
            return Err(Error::InvalidParameter("rotation generator must be skew-symmetric".into()));
        }
        Ok(TransformStep::Rotation(skew(&omega)))
    }

    fn dim(&self) -> usize {
        match self {
            TransformStep::Translation(s) => s.dim(),
            TransformStep::Rotation(o) => o.nrows(),
        }
    }

    /// `W` or `R`.
    pub fn matrix(&self) -> Result<DMatrix<f64>> {
        match self {
            TransformStep::Translation(s) => Ok(sym_exp(s)?.as_matrix().clone()),
            TransformStep::Rotation(o) => Ok(o.clone().exp()),
        }
    }

    fn stepped(&self, grad: &DMatrix<f64>, lr: f64) -> TransformStep {
        match self {
            TransformStep::Translation(s) => {
                TransformStep::Translation(SymMatrix::from_symmetric_unchecked(symmetrize(s.as_matrix() - grad * lr)))
            }
            TransformStep::Rotation(o) => TransformStep::Rotation(skew(&(o - grad * lr))),
        }
    }
}

fn skew(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m - m.transpose()) * 0.5
}

/// Ordered congruence steps; step `k` maps `C ↦ M_kᵀ C M_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformChain {
    dim: usize,
    steps: Vec<TransformStep>,
}

impl TransformChain {
    pub fn new(dim: usize, steps: Vec<TransformStep>) -> Result<Self> {
        for s in &steps {
            if s.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: s.dim(),
                });
            }
        }
        Ok(Self { dim, steps })
    }

    /// One rotation followed by one translation, both at the identity.
    pub fn identity(dim: usize) -> Self {
        Self {
            dim,
            steps: vec![TransformStep::rotation_identity(dim), TransformStep::translation_identity(dim)],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn steps(&self) -> &[TransformStep] {
        &self.steps
    }

    pub fn matrices(&self) -> Result<Vec<DMatrix<f64>>> {
        self.steps.iter().map(TransformStep::matrix).collect()
    }

    pub fn apply(&self, c: &SpdMatrix) -> Result<SpdMatrix> {
        let mut m = c.as_matrix().clone();
        for w in self.matrices()? {
            m = w.transpose() * m * &w;
        }
        SpdMatrix::new(m)
    }

    pub fn apply_measure(&self, mu: &EmpiricalSpdMeasure) -> Result<EmpiricalSpdMeasure> {
        let mats = self.matrices()?;
        let pts = mu
            .points()
            .par_iter()
            .map(|c| {
                let mut m = c.as_matrix().clone();
                for w in &mats {
                    m = w.transpose() * m * w;
                }
                SpdMatrix::new(m)
            })
            .collect::<Result<Vec<_>>>()?;
        EmpiricalSpdMeasure::new(pts)
    }

    /// Gradient step on every parameter.
    pub fn stepped(&self, grads: &[DMatrix<f64>], lr: f64) -> Result<TransformChain> {
        if grads.len() != self.steps.len() {
            return Err(Error::SizeMismatch(grads.len(), self.steps.len()));
        }
        Ok(Self {
            dim: self.dim,
            steps: self.steps.iter().zip(grads).map(|(s, g)| s.stepped(g, lr)).collect(),
        })
    }
}

/// Everything a log-space loss needs besides the moving points.
#[derive(Debug, Clone)]
pub struct LossSettings {
    pub kind: LossKind,
    pub order_p: f64,
    pub sinkhorn: SinkhornConfig,
    pub exact_size_cap: usize,
}

impl LossSettings {
    pub fn new(kind: LossKind) -> Self {
        Self {
            kind,
            order_p: 2.0,
            sinkhorn: SinkhornConfig {
                epsilon: 10.0,
                ..SinkhornConfig::default()
            },
            exact_size_cap: EXACT_SIZE_CAP,
        }
    }
}

/// Loss against a fixed target in vectorized log coordinates. Sliced losses
/// keep the target's projected, sorted coordinates.
struct LogSpaceObjective<'a> {
    settings: &'a LossSettings,
    basis: Option<&'a ProjectionBasis>,
    target_rows: &'a DMatrix<f64>,
    target_sorted: Option<Vec<Vec<f64>>>,
}

impl<'a> LogSpaceObjective<'a> {
    fn new(settings: &'a LossSettings, basis: Option<&'a ProjectionBasis>, target: &'a EmpiricalSpdMeasure) -> Result<Self> {
        if !(settings.order_p >= 1.0) {
            return Err(Error::InvalidParameter(format!("order p must be >= 1, got {}", settings.order_p)));
        }
        let target_rows = target.log_rows();
        let target_sorted = if settings.kind.is_sliced() {
            let basis = basis.ok_or_else(|| Error::InvalidParameter("sliced losses need a projection basis".into()))?;
            if basis.dim() != target.dim() {
                return Err(Error::DimensionMismatch {
                    expected: basis.dim(),
                    got: target.dim(),
                });
            }
            let coords = target_rows * basis.vectorized();
            let m = coords.nrows();
            Some(
                (0..basis.len())
                    .map(|l| {
                        let mut col = coords.as_slice()[l * m..(l + 1) * m].to_vec();
                        col.sort_unstable_by(f64::total_cmp);
                        col
                    })
                    .collect(),
            )
        } else {
            None
        };
        Ok(Self {
            settings,
            basis,
            target_rows,
            target_sorted,
        })
    }

    fn evaluate(&self, rows: &DMatrix<f64>) -> Result<(f64, DMatrix<f64>)> {
        if rows.ncols() != self.target_rows.ncols() {
            return Err(Error::DimensionMismatch {
                expected: self.target_rows.ncols(),
                got: rows.ncols(),
            });
        }
        match (self.basis, &self.target_sorted) {
            (Some(basis), Some(sorted)) => Ok(self.sliced(rows, basis, sorted)),
            _ => self.transport(rows),
        }
    }

    fn sliced(&self, rows: &DMatrix<f64>, basis: &ProjectionBasis, sorted: &[Vec<f64>]) -> (f64, DMatrix<f64>) {
        let p = self.settings.order_p;
        let n = rows.nrows();
        let l_count = basis.len();
        let coords = rows * basis.vectorized();
        let per_column: Vec<(f64, Vec<f64>)> = (0..l_count)
            .into_par_iter()
            .map(|l| {
                let x = &coords.as_slice()[l * n..(l + 1) * n];
                let y = &sorted[l];
                let mut order: Vec<usize> = (0..n).collect();
                order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
                let mut g = vec![0.0; n];
                let mut loss = 0.0;
                for_each_quantile_cell(n, y.len(), |r, j, w| {
                    let src = order[r];
                    let diff = x[src] - y[j];
                    if p == 2.0 {
                        loss += w * diff * diff;
                        g[src] += 2.0 * w * diff;
                    } else {
                        let a = diff.abs();
                        loss += w * a.powf(p);
                        g[src] += w * p * a.powf(p - 1.0) * diff.signum();
                    }
                });
                (loss, g)
            })
            .collect();
        let inv_l = 1.0 / l_count as f64;
        let mut loss = 0.0;
        let mut gx = DMatrix::zeros(n, l_count);
        for (l, (v, g)) in per_column.iter().enumerate() {
            loss += v;
            for (dst, src) in gx.column_mut(l).iter_mut().zip(g) {
                *dst = src * inv_l;
            }
        }
        (loss * inv_l, gx * basis.vectorized().transpose())
    }

    fn transport(&self, rows: &DMatrix<f64>) -> Result<(f64, DMatrix<f64>)> {
        let p = self.settings.order_p;
        let cost = le_cost_from_rows(rows, self.target_rows, p)?;
        let plan = match self.settings.kind {
            LossKind::LewExact => exact_wasserstein_capped(&cost, self.settings.exact_size_cap)?,
            _ => {
                let out = sinkhorn(&cost, &self.settings.sinkhorn)?;
                if !out.converged {
                    return Err(Error::NotConverged {
                        iterations: out.iterations,
                        violation: out.violation,
                    });
                }
                out.plan
            }
        };
        let gamma = &plan.plan;
        let t = self.target_rows;
        let grad = if p == 2.0 {
            let mass = DVector::from_iterator(rows.nrows(), gamma.row_iter().map(|r| r.sum()));
            let mut own = rows.clone();
            for (i, mut row) in own.row_iter_mut().enumerate() {
                row *= 2.0 * mass[i];
            }
            own - (gamma * t) * 2.0
        } else {
            let mut g = DMatrix::zeros(rows.nrows(), rows.ncols());
            for i in 0..rows.nrows() {
                for j in 0..t.nrows() {
                    let w = gamma[(i, j)];
                    if w == 0.0 {
                        continue;
                    }
                    let diff = rows.row(i) - t.row(j);
                    let norm = diff.norm();
                    if norm > 0.0 {
                        let mut gi = g.row_mut(i);
                        gi += diff * (w * p * norm.powf(p - 2.0));
                    }
                }
            }
            g
        };
        Ok((plan.cost, grad))
    }
}

fn rows_of(points: &[SymMatrix]) -> DMatrix<f64> {
    let d = points.first().map_or(0, SymMatrix::dim);
    let big_d = vectorized_len(d);
    let mut rows = DMatrix::zeros(points.len(), big_d);
    let mut buf = vec![0.0; big_d];
    for (i, s) in points.iter().enumerate() {
        vectorize_into(s.as_matrix(), &mut buf);
        rows.row_mut(i).copy_from_slice(&buf);
    }
    rows
}

fn sym_rows_to_matrices(dim: usize, grad: &DMatrix<f64>) -> Vec<SymMatrix> {
    let mut buf = vec![0.0; grad.ncols()];
    grad.row_iter()
        .map(|r| {
            buf.iter_mut().zip(r.iter()).for_each(|(b, v)| *b = *v);
            SymMatrix::from_symmetric_unchecked(unvectorize(dim, &buf))
        })
        .collect()
}

/// SymSW₂-type loss of the source particles `S_i` (log matrices) against
/// `log_# target`, with its gradient with respect to every `S_i`.
pub fn loss_and_gradient_particles(
    source_logs: &[SymMatrix],
    target: &EmpiricalSpdMeasure,
    basis: &ProjectionBasis,
    p: f64,
) -> Result<(f64, Vec<SymMatrix>)> {
    let kind = if basis.sampler() == SamplerKind::VectorizedSphere {
        LossKind::Logsw
    } else {
        LossKind::Spdsw
    };
    let settings = LossSettings {
        order_p: p,
        ..LossSettings::new(kind)
    };
    particle_loss(source_logs, target, Some(basis), &settings)
}

/// Particle loss and gradient for any [`LossKind`]; `basis` is required for
/// the sliced kinds only.
pub fn particle_loss(
    source_logs: &[SymMatrix],
    target: &EmpiricalSpdMeasure,
    basis: Option<&ProjectionBasis>,
    settings: &LossSettings,
) -> Result<(f64, Vec<SymMatrix>)> {
    if source_logs.is_empty() {
        return Err(Error::EmptyMeasure);
    }
    if let Some(s) = source_logs.iter().find(|s| s.dim() != target.dim()) {
        return Err(Error::DimensionMismatch {
            expected: target.dim(),
            got: s.dim(),
        });
    }
    let objective = LogSpaceObjective::new(settings, basis, target)?;
    let (loss, grad) = objective.evaluate(&rows_of(source_logs))?;
    Ok((loss, sym_rows_to_matrices(target.dim(), &grad)))
}

/// Forward pass of the chain keeping every intermediate matrix.
struct ChainTape {
    mats: Vec<DMatrix<f64>>,
    /// `stages[i][k]` is point `i` before step `k`; the last entry is the output.
    stages: Vec<Vec<DMatrix<f64>>>,
    outputs: Vec<SpdMatrix>,
}

fn chain_forward(chain: &TransformChain, source: &EmpiricalSpdMeasure) -> Result<ChainTape> {
    let mats = chain.matrices()?;
    let results: Vec<(Vec<DMatrix<f64>>, SpdMatrix)> = source
        .points()
        .par_iter()
        .map(|c| {
            let mut stage = Vec::with_capacity(mats.len() + 1);
            let mut m = c.as_matrix().clone();
            for w in &mats {
                stage.push(m.clone());
                m = symmetrize(w.transpose() * &m * w);
            }
            let out = SpdMatrix::new(m.clone())?;
            stage.push(out.as_matrix().clone());
            Ok((stage, out))
        })
        .collect::<Result<_>>()?;
    let (stages, outputs) = results.into_iter().unzip();
    Ok(ChainTape { mats, stages, outputs })
}

fn rotation_gradient(omega: &DMatrix<f64>, grad_r: &DMatrix<f64>) -> DMatrix<f64> {
    // Dexp_{Ωᵀ}[G] is the top-right block of exp([[Ωᵀ, G], [0, Ωᵀ]]).
    let d = omega.nrows();
    let mut block = DMatrix::zeros(2 * d, 2 * d);
    let ot = omega.transpose();
    block.view_mut((0, 0), (d, d)).copy_from(&ot);
    block.view_mut((d, d), (d, d)).copy_from(&ot);
    block.view_mut((0, d), (d, d)).copy_from(grad_r);
    let e = block.exp();
    skew(&e.view((0, d), (d, d)).into_owned())
}

/// Loss of the transformed source against the target and the Euclidean
/// gradients of the unconstrained chain parameters (symmetric for
/// translations, skew-symmetric for rotations), in step order.
pub fn loss_and_gradient_transform(
    chain: &TransformChain,
    source: &EmpiricalSpdMeasure,
    target: &EmpiricalSpdMeasure,
    basis: Option<&ProjectionBasis>,
    settings: &LossSettings,
) -> Result<(f64, Vec<DMatrix<f64>>)> {
    let objective = LogSpaceObjective::new(settings, basis, target)?;
    transform_objective(chain, source, &objective)
}

fn transform_objective(
    chain: &TransformChain,
    source: &EmpiricalSpdMeasure,
    objective: &LogSpaceObjective<'_>,
) -> Result<(f64, Vec<DMatrix<f64>>)> {
    if chain.dim() != source.dim() {
        return Err(Error::DimensionMismatch {
            expected: chain.dim(),
            got: source.dim(),
        });
    }
    let tape = chain_forward(chain, source)?;
    let moved = EmpiricalSpdMeasure::new(tape.outputs.clone())?;
    let (loss, grad_rows) = objective.evaluate(moved.log_rows())?;
    let d = chain.dim();
    let grad_logs = sym_rows_to_matrices(d, &grad_rows);
    let k = tape.mats.len();

    let per_point: Vec<Vec<DMatrix<f64>>> = (0..tape.outputs.len())
        .into_par_iter()
        .map(|i| {
            let eig = tape.outputs[i].eigen();
            let mut h = log_frechet_with(&eig, grad_logs[i].as_matrix());
            let mut grads = vec![DMatrix::zeros(d, d); k];
            for step in (0..k).rev() {
                let w = &tape.mats[step];
                let c = &tape.stages[i][step];
                grads[step] = (c * w * &h) * 2.0;
                h = w * h * w.transpose();
            }
            grads
        })
        .collect();
    let mut mat_grads = vec![DMatrix::zeros(d, d); k];
    for g in &per_point {
        for (acc, gi) in mat_grads.iter_mut().zip(g) {
            *acc += gi;
        }
    }
    let param_grads = chain
        .steps()
        .iter()
        .zip(&mat_grads)
        .map(|(step, g)| match step {
            TransformStep::Translation(s) => {
                let h = SymMatrix::from_symmetric_unchecked(symmetrize(g.clone()));
                Ok(exp_frechet_derivative(s, &h)?.into_matrix())
            }
            TransformStep::Rotation(o) => Ok(rotation_gradient(o, g)),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((loss, param_grads))
}

/// Options of [`run_adaptation`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptationConfig {
    pub mode: AdaptationMode,
    pub loss_kind: LossKind,
    pub num_projections: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub order_p: f64,
    /// Direction law for `spdsw`; `logsw` always uses the vectorized sphere.
    pub sampler: SamplerKind,
    pub sinkhorn_epsilon: f64,
    pub sinkhorn_max_iter: usize,
    pub sinkhorn_threshold: f64,
    pub exact_size_cap: usize,
    /// Halve the learning rate whenever a step would increase the loss.
    pub safeguard: bool,
    pub max_halvings: usize,
}

/// Fixed learning rate used when none is given.
pub fn default_learning_rate(mode: AdaptationMode, loss: LossKind) -> f64 {
    match (mode, loss.is_sliced()) {
        (AdaptationMode::Particles, true) => 1000.0,
        (AdaptationMode::Particles, false) => 10.0,
        (AdaptationMode::Transform, true) => 1.0,
        (AdaptationMode::Transform, false) => 0.1,
    }
}

impl AdaptationConfig {
    pub fn new(mode: AdaptationMode, loss_kind: LossKind) -> Self {
        Self {
            mode,
            loss_kind,
            num_projections: 500,
            epochs: 500,
            learning_rate: default_learning_rate(mode, loss_kind),
            seed: 0,
            order_p: 2.0,
            sampler: SamplerKind::EigUniform,
            sinkhorn_epsilon: 10.0,
            sinkhorn_max_iter: 100_000,
            sinkhorn_threshold: 1e-10,
            exact_size_cap: EXACT_SIZE_CAP,
            safeguard: true,
            max_halvings: 20,
        }
    }

    fn loss_settings(&self) -> LossSettings {
        LossSettings {
            kind: self.loss_kind,
            order_p: self.order_p,
            sinkhorn: SinkhornConfig {
                epsilon: self.sinkhorn_epsilon,
                max_iter: self.sinkhorn_max_iter,
                threshold: self.sinkhorn_threshold,
                ..SinkhornConfig::default()
            },
            exact_size_cap: self.exact_size_cap,
        }
    }

    fn basis(&self, dim: usize) -> Result<Option<ProjectionBasis>> {
        let sampler = match self.loss_kind {
            LossKind::Spdsw => self.sampler,
            LossKind::Logsw => SamplerKind::VectorizedSphere,
            _ => return Ok(None),
        };
        build_projection_basis(RngState::new(self.seed), dim, self.num_projections, sampler).map(Some)
    }
}

/// Outcome of [`run_adaptation`].
#[derive(Debug, Clone)]
pub struct AdaptationTrace {
    /// Loss before the first epoch followed by the loss after each epoch.
    pub losses: Vec<f64>,
    pub epochs_run: usize,
    pub final_learning_rate: f64,
    pub halvings: usize,
    /// True when no step size in the safeguard budget decreased the loss.
    pub stalled: bool,
    pub adapted: LabeledSpdDataset,
    pub chain: Option<TransformChain>,
    pub wall_time_seconds: f64,
    pub config: AdaptationConfig,
}

impl AdaptationTrace {
    pub fn initial_loss(&self) -> f64 {
        self.losses[0]
    }

    pub fn final_loss(&self) -> f64 {
        *self.losses.last().expect("trace holds the initial loss")
    }
}

/// Parameters being optimized.
trait DescentState: Sized {
    fn step(&self, grad: &Self::Grad, lr: f64) -> Result<Self>;
    type Grad;
}

struct Particles(DMatrix<f64>);

impl DescentState for Particles {
    type Grad = DMatrix<f64>;
    fn step(&self, grad: &DMatrix<f64>, lr: f64) -> Result<Self> {
        Ok(Particles(&self.0 - grad * lr))
    }
}

impl DescentState for TransformChain {
    type Grad = Vec<DMatrix<f64>>;
    fn step(&self, grad: &Vec<DMatrix<f64>>, lr: f64) -> Result<Self> {
        self.stepped(grad, lr)
    }
}

struct DescentOutcome<S> {
    state: S,
    losses: Vec<f64>,
    lr: f64,
    halvings: usize,
    stalled: bool,
}

fn recoverable(e: &Error) -> bool {
    matches!(
        e,
        Error::Overflow(_) | Error::NotPositiveDefinite { .. } | Error::NonFinite | Error::NotConverged { .. }
    )
}

fn descend<S: DescentState>(
    init: S,
    config: &AdaptationConfig,
    mut eval: impl FnMut(&S) -> Result<(f64, S::Grad)>,
) -> Result<DescentOutcome<S>> {
    let (mut loss, mut grad) = eval(&init)?;
    let mut state = init;
    let mut losses = vec![loss];
    let mut lr = config.learning_rate;
    let mut halvings = 0;
    let mut stalled = false;
    for epoch in 0..config.epochs {
        let mut accepted = None;
        let mut budget = config.max_halvings;
        loop {
            let attempt = state.step(&grad, lr).and_then(|cand| eval(&cand).map(|r| (cand, r)));
            match attempt {
                Ok((cand, (l, g))) if !config.safeguard || l <= loss => {
                    accepted = Some((cand, l, g));
                    break;
                }
                Err(e) if !(config.safeguard && recoverable(&e)) => return Err(e),
                _ if budget == 0 => break,
                _ => {
                    lr *= 0.5;
                    halvings += 1;
                    budget -= 1;
                }
            }
        }
        match accepted {
            Some((cand, l, g)) => {
                state = cand;
                loss = l;
                grad = g;
                losses.push(loss);
            }
            None => {
                log::info!("descent stalled at epoch {epoch} with learning rate {lr:e}");
                stalled = true;
                break;
            }
        }
    }
    Ok(DescentOutcome {
        state,
        losses,
        lr,
        halvings,
        stalled,
    })
}

/// Gradient descent aligning `source` onto `target`. Projections are drawn
/// once from `config.seed`. Labels, point count and dimension are preserved.
pub fn run_adaptation(
    source: &LabeledSpdDataset,
    target: &EmpiricalSpdMeasure,
    config: &AdaptationConfig,
) -> Result<AdaptationTrace> {
    let start = Instant::now();
    let d = source.measure().dim();
    if target.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: target.dim(),
        });
    }
    if !(config.learning_rate > 0.0) {
        return Err(Error::InvalidParameter("learning rate must be positive".into()));
    }
    let settings = config.loss_settings();
    let basis = config.basis(d)?;
    let objective = LogSpaceObjective::new(&settings, basis.as_ref(), target)?;

    let (adapted, chain, losses, lr, halvings, stalled) = match config.mode {
        AdaptationMode::Particles => {
            let init = Particles(source.measure().log_rows().clone());
            let out = descend(init, config, |s| objective.evaluate(&s.0))?;
            let measure = if out.losses.len() == 1 {
                source.measure().clone()
            } else {
                let points = sym_rows_to_matrices(d, &out.state.0)
                    .par_iter()
                    .map(sym_exp)
                    .collect::<Result<Vec<_>>>()?;
                EmpiricalSpdMeasure::new(points)?
            };
            (measure, None, out.losses, out.lr, out.halvings, out.stalled)
        }
        AdaptationMode::Transform => {
            let init = TransformChain::identity(d);
            let out = descend(init, config, |c| transform_objective(c, source.measure(), &objective))?;
            let measure = out.state.apply_measure(source.measure())?;
            (measure, Some(out.state), out.losses, out.lr, out.halvings, out.stalled)
        }
    };
    Ok(AdaptationTrace {
        epochs_run: losses.len() - 1,
        losses,
        final_learning_rate: lr,
        halvings,
        stalled,
        adapted: LabeledSpdDataset::new(adapted, source.labels().to_vec())?,
        chain,
        wall_time_seconds: start.elapsed().as_secs_f64(),
        config: config.clone(),
    })
}

/// Multinomial logistic regression on standardized `vect(log X)` features.
#[derive(Debug, Clone, PartialEq)]
pub struct LogLinearClassifier {
    num_classes: usize,
    dim: usize,
    kept: Vec<usize>,
    mean: Vec<f64>,
    scale: Vec<f64>,
    /// `K × (q+1)`, last column is the intercept.
    weights: DMatrix<f64>,
    pub l2_penalty: f64,
    pub iterations: usize,
    pub gradient_norm: f64,
}

/// Gradient-norm target of the Newton solver.
pub const CLASSIFIER_TOLERANCE: f64 = 1e-6;

fn softmax_in_place(z: &mut [f64]) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
    max + sum.ln()
}

impl LogLinearClassifier {
    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn design(&self, rows: &DMatrix<f64>) -> DMatrix<f64> {
        let q = self.kept.len();
        DMatrix::from_fn(rows.nrows(), q + 1, |i, a| {
            if a == q {
                1.0
            } else {
                let c = self.kept[a];
                (rows[(i, c)] - self.mean[a]) / self.scale[a]
            }
        })
    }

    /// Class probabilities, one row per point.
    pub fn predict_proba(&self, mu: &EmpiricalSpdMeasure) -> Result<Vec<Vec<f64>>> {
        if mu.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: mu.dim(),
            });
        }
        let x = self.design(mu.log_rows());
        let z = &x * self.weights.transpose();
        Ok(z
            .row_iter()
            .map(|r| {
                let mut v: Vec<f64> = r.iter().copied().collect();
                softmax_in_place(&mut v);
                v
            })
            .collect())
    }

    pub fn predict(&self, mu: &EmpiricalSpdMeasure) -> Result<Vec<usize>> {
        Ok(self
            .predict_proba(mu)?
            .iter()
            .map(|p| {
                p.iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (k, &v)| if v > best.1 { (k, v) } else { best })
                    .0
            })
            .collect())
    }
}

/// Fits the classifier by Newton's method with backtracking, L2-penalizing
/// all parameters (intercepts included, which keeps the fit equivariant under
/// relabeling). Constant feature columns are dropped with a warning.
pub fn train_log_linear_classifier(train: &LabeledSpdDataset, l2_penalty: f64) -> Result<LogLinearClassifier> {
    if !(l2_penalty > 0.0) {
        return Err(Error::InvalidParameter(format!("l2 penalty must be positive, got {l2_penalty}")));
    }
    let k = train.num_classes();
    if k < 2 {
        return Err(Error::InvalidData("classifier needs at least two classes".into()));
    }
    let mut counts = vec![0usize; k];
    for &y in train.labels() {
        counts[y] += 1;
    }
    if let Some(empty) = counts.iter().position(|&c| c == 0) {
        return Err(Error::InvalidData(format!("class {empty} has no samples")));
    }
    let rows = train.measure().log_rows();
    let n = rows.nrows();
    let mut kept = Vec::new();
    let mut mean = Vec::new();
    let mut scale = Vec::new();
    for c in 0..rows.ncols() {
        let col = rows.column(c);
        let mu = col.mean();
        let var = col.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n as f64;
        let sd = var.sqrt();
        if sd <= 1e-12 * mu.abs().max(1.0) {
            log::warn!("dropping constant feature column {c}");
            continue;
        }
        kept.push(c);
        mean.push(mu);
        scale.push(sd);
    }
    if kept.is_empty() {
        return Err(Error::SingularFeatures);
    }
    let mut clf = LogLinearClassifier {
        num_classes: k,
        dim: train.measure().dim(),
        kept,
        mean,
        scale,
        weights: DMatrix::zeros(k, 0),
        l2_penalty,
        iterations: 0,
        gradient_norm: f64::INFINITY,
    };
    let x = clf.design(rows);
    let q = x.ncols();
    let labels = train.labels();
    let inv_n = 1.0 / n as f64;

    let objective = |theta: &DMatrix<f64>| -> f64 {
        let z = &x * theta.transpose();
        let mut total = 0.0;
        for (i, r) in z.row_iter().enumerate() {
            let mut v: Vec<f64> = r.iter().copied().collect();
            let lse = softmax_in_place(&mut v);
            total += lse - r[labels[i]];
        }
        total * inv_n + 0.5 * l2_penalty * theta.norm_squared()
    };

    let mut theta = DMatrix::zeros(k, q);
    let mut value = objective(&theta);
    let dimension = k * q;
    for iter in 0..200 {
        let z = &x * theta.transpose();
        let mut grad = DVector::zeros(dimension);
        let mut hess = DMatrix::zeros(dimension, dimension);
        for i in 0..n {
            let mut pr: Vec<f64> = z.row(i).iter().copied().collect();
            softmax_in_place(&mut pr);
            let xi = x.row(i);
            let outer = xi.transpose() * xi;
            for a in 0..k {
                let resid = pr[a] - f64::from(u8::from(labels[i] == a));
                for c in 0..q {
                    grad[a * q + c] += resid * xi[c] * inv_n;
                }
                for b in 0..k {
                    let w = (if a == b { pr[a] } else { 0.0 } - pr[a] * pr[b]) * inv_n;
                    if w == 0.0 {
                        continue;
                    }
                    let mut block = hess.view_mut((a * q, b * q), (q, q));
                    block += &outer * w;
                }
            }
        }
        for a in 0..k {
            for c in 0..q {
                grad[a * q + c] += l2_penalty * theta[(a, c)];
            }
        }
        for j in 0..dimension {
            hess[(j, j)] += l2_penalty;
        }
        clf.gradient_norm = grad.norm();
        clf.iterations = iter;
        if clf.gradient_norm <= CLASSIFIER_TOLERANCE {
            break;
        }
        let step = Cholesky::new(hess).ok_or(Error::SingularFeatures)?.solve(&grad);
        let step = DMatrix::from_fn(k, q, |a, c| step[a * q + c]);
        let slope = grad.dot(&DVector::from_iterator(dimension, (0..dimension).map(|j| step[(j / q, j % q)])));
        let mut t = 1.0;
        let mut next = &theta - &step * t;
        let mut next_value = objective(&next);
        let mut tries = 0;
        while next_value > value - 1e-4 * t * slope && tries < 50 {
            t *= 0.5;
            next = &theta - &step * t;
            next_value = objective(&next);
            tries += 1;
        }
        if next_value > value {
            break;
        }
        theta = next;
        value = next_value;
    }
    clf.weights = theta;
    Ok(clf)
}

/// Fraction of target points whose predicted class matches the label.
pub fn evaluate_transfer(clf: &LogLinearClassifier, target: &LabeledSpdDataset) -> Result<f64> {
    let predicted = clf.predict(target.measure())?;
    let hits = predicted.iter().zip(target.labels()).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / predicted.len() as f64)
}
