//! Seeded generation of slicing directions and synthetic SPD data.
//!
//! Every sampler is a pure function of an [`RngState`]. Projection bases give
//! each direction its own child stream, so a basis is the same whether it is
//! generated sequentially or in parallel.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{unvectorize, vectorize_into, vectorized_len, SpdMatrix, SymMatrix};

/// Seed plus stream identifier of a ChaCha20 generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    pub stream_id: u64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RngState {
    pub fn new(seed: u64) -> Self {
        Self { seed, stream_id: 0 }
    }

    pub fn with_stream(seed: u64, stream_id: u64) -> Self {
        Self { seed, stream_id }
    }

    /// Fresh generator positioned at the start of this stream.
    pub fn rng(&self) -> ChaCha20Rng {
        let mut rng = ChaCha20Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_id);
        rng
    }

    /// Derived state for sub-task `index`; distinct indices give distinct streams.
    pub fn child(&self, index: u64) -> RngState {
        RngState {
            seed: self.seed,
            stream_id: splitmix64(self.stream_id ^ splitmix64(index.wrapping_add(1))),
        }
    }
}

fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

fn gaussian_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> DMatrix<f64> {
    // Row-major fill order, fixed by the determinism contract.
    let mut m = DMatrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            m[(i, j)] = standard_normal(rng);
        }
    }
    m
}

/// Uniform draw on the unit sphere `S^{d-1}` (normalized Gaussian).
pub fn sample_sphere<R: Rng + ?Sized>(rng: &mut R, d: usize) -> Result<DVector<f64>> {
    if d == 0 {
        return Err(Error::InvalidParameter("dimension must be positive".into()));
    }
    loop {
        let v = DVector::from_fn(d, |_, _| standard_normal(rng));
        let norm = v.norm();
        if norm > 0.0 {
            return Ok(v / norm);
        }
    }
}

/// Haar-distributed orthogonal matrix: QR of a Gaussian matrix with the
/// column signs fixed so that `diag(R) > 0`.
pub fn sample_haar_orthogonal<R: Rng + ?Sized>(rng: &mut R, d: usize) -> Result<DMatrix<f64>> {
    if d == 0 {
        return Err(Error::InvalidParameter("dimension must be positive".into()));
    }
    let z = gaussian_matrix(rng, d, d);
    let qr = z.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..d {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    Ok(q)
}

/// Eigen factors `(P, θ)` of a direction `A = P diag(θ) Pᵀ`.
#[derive(Debug, Clone)]
pub struct DirectionFactors {
    pub eigenvectors: DMatrix<f64>,
    pub eigenvalues: DVector<f64>,
}

impl DirectionFactors {
    fn assemble(&self) -> DMatrix<f64> {
        let mut ps = self.eigenvectors.clone();
        for (j, mut col) in ps.column_iter_mut().enumerate() {
            col *= self.eigenvalues[j];
        }
        ps * self.eigenvectors.transpose()
    }
}

fn lambda_s_factors<R: Rng + ?Sized>(rng: &mut R, d: usize) -> Result<(SymMatrix, DirectionFactors)> {
    let theta = sample_sphere(rng, d)?;
    let p = sample_haar_orthogonal(rng, d)?;
    let mut factors = DirectionFactors {
        eigenvectors: p,
        eigenvalues: theta,
    };
    let a = SymMatrix::new(factors.assemble())?;
    let norm = a.frobenius_norm();
    factors.eigenvalues /= norm;
    Ok((a.scaled(1.0 / norm), factors))
}

/// `A = P diag(θ) Pᵀ` with `P` Haar-orthogonal and `θ` uniform on the sphere.
pub fn sample_lambda_s<R: Rng + ?Sized>(rng: &mut R, d: usize) -> Result<SymMatrix> {
    Ok(lambda_s_factors(rng, d)?.0)
}

/// `(Z + Zᵀ) / ‖Z + Zᵀ‖_F` with Gaussian `Z`; `O(d²)` and factorization free.
pub fn sample_fast_symmetric<R: Rng + ?Sized>(rng: &mut R, d: usize) -> Result<SymMatrix> {
    if d == 0 {
        return Err(Error::InvalidParameter("dimension must be positive".into()));
    }
    loop {
        let z = gaussian_matrix(rng, d, d);
        let s = &z + z.transpose();
        let norm = s.norm();
        if norm > 0.0 {
            return SymMatrix::new(s / norm);
        }
    }
}

/// Uniform draw on the unit sphere of isometrically vectorized symmetric
/// matrices, mapped back to matrix form.
pub fn sample_vectorized_sphere<R: Rng + ?Sized>(rng: &mut R, d: usize) -> Result<SymMatrix> {
    let v = sample_sphere(rng, vectorized_len(d))?;
    Ok(SymMatrix::from_symmetric_unchecked(unvectorize(d, v.as_slice())))
}

/// Wishart draw normalized by the degrees of freedom:
/// `(1/dof) Σ_k z_k z_kᵀ`, `z_k ~ N(0, scale)`.
pub fn sample_wishart<R: Rng + ?Sized>(
    rng: &mut R,
    d: usize,
    dof: usize,
    scale: &SpdMatrix,
) -> Result<SpdMatrix> {
    if d == 0 || scale.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: scale.dim(),
        });
    }
    if dof < d {
        return Err(Error::InvalidParameter(format!(
            "degrees of freedom {dof} must be at least the dimension {d}"
        )));
    }
    let chol = scale
        .as_matrix()
        .clone()
        .cholesky()
        .ok_or(Error::NotPositiveDefinite {
            min_eig: 0.0,
            tolerance: 0.0,
        })?
        .l();
    for _ in 0..2 {
        let g = gaussian_matrix(rng, d, dof);
        let z = &chol * g;
        let w = (&z * z.transpose()) / dof as f64;
        match SpdMatrix::new(w) {
            Ok(m) => return Ok(m),
            Err(Error::NotPositiveDefinite { .. }) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(Error::DegenerateSample)
}

/// `count` i.i.d. Wishart draws, one child stream per draw.
pub fn sample_wishart_set(
    rng: RngState,
    d: usize,
    dof: usize,
    scale: &SpdMatrix,
    count: usize,
) -> Result<Vec<SpdMatrix>> {
    (0..count)
        .into_par_iter()
        .map(|i| sample_wishart(&mut rng.child(i as u64).rng(), d, dof, scale))
        .collect()
}

/// Law of the slicing directions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    /// `P diag(θ) Pᵀ` with Haar `P` and uniform `θ`.
    EigUniform,
    /// Normalized `Z + Zᵀ`.
    FastSymmetric,
    /// Uniform on the sphere of isometrically vectorized symmetric matrices.
    VectorizedSphere,
    /// Directions supplied by the caller.
    Custom,
}

impl SamplerKind {
    pub fn name(&self) -> &'static str {
        match self {
            SamplerKind::EigUniform => "eig_uniform",
            SamplerKind::FastSymmetric => "fast_symmetric",
            SamplerKind::VectorizedSphere => "vectorized_sphere",
            SamplerKind::Custom => "custom",
        }
    }
}

/// Ordered set of unit-Frobenius-norm symmetric slicing directions.
#[derive(Debug, Clone)]
pub struct ProjectionBasis {
    dim: usize,
    directions: Vec<SymMatrix>,
    factors: Option<Vec<DirectionFactors>>,
    /// Column `ℓ` is the isometric vectorization of direction `ℓ`.
    vectorized: DMatrix<f64>,
    sampler: SamplerKind,
    rng: Option<RngState>,
    fingerprint: u64,
}

const UNIT_NORM_TOLERANCE: f64 = 1e-10;

impl ProjectionBasis {
    fn assemble(
        dim: usize,
        directions: Vec<SymMatrix>,
        factors: Option<Vec<DirectionFactors>>,
        sampler: SamplerKind,
        rng: Option<RngState>,
    ) -> Self {
        let big_d = vectorized_len(dim);
        let mut vectorized = DMatrix::zeros(big_d, directions.len());
        let mut buf = vec![0.0; big_d];
        let mut fingerprint: u64 = 0xcbf2_9ce4_8422_2325;
        for (l, a) in directions.iter().enumerate() {
            vectorize_into(a.as_matrix(), &mut buf);
            vectorized.column_mut(l).copy_from_slice(&buf);
            for v in &buf {
                fingerprint = (fingerprint ^ v.to_bits()).wrapping_mul(0x0100_0000_01b3);
            }
        }
        fingerprint ^= dim as u64;
        Self {
            dim,
            directions,
            factors,
            vectorized,
            sampler,
            rng,
            fingerprint,
        }
    }

    /// Basis from caller-supplied directions, each checked for unit norm.
    pub fn from_directions(dim: usize, directions: Vec<SymMatrix>) -> Result<Self> {
        if directions.is_empty() {
            return Err(Error::InvalidParameter("basis needs at least one direction".into()));
        }
        for a in &directions {
            check_direction(dim, a)?;
        }
        Ok(Self::assemble(dim, directions, None, SamplerKind::Custom, None))
    }

    /// Basis from eigen factors `(P, θ)`; keeps the factors for horospherical slicing.
    pub fn from_factors(dim: usize, factors: Vec<(DMatrix<f64>, DVector<f64>)>) -> Result<Self> {
        if factors.is_empty() {
            return Err(Error::InvalidParameter("basis needs at least one direction".into()));
        }
        let mut directions = Vec::with_capacity(factors.len());
        let mut kept = Vec::with_capacity(factors.len());
        for (p, theta) in factors {
            let f = DirectionFactors {
                eigenvectors: p,
                eigenvalues: theta,
            };
            let a = SymMatrix::new(f.assemble())?;
            check_direction(dim, &a)?;
            directions.push(a);
            kept.push(f);
        }
        Ok(Self::assemble(dim, directions, Some(kept), SamplerKind::Custom, None))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.directions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.directions.is_empty()
    }

    pub fn directions(&self) -> &[SymMatrix] {
        &self.directions
    }

    pub fn factors(&self) -> Option<&[DirectionFactors]> {
        self.factors.as_deref()
    }

    pub fn sampler(&self) -> SamplerKind {
        self.sampler
    }

    pub fn rng_state(&self) -> Option<RngState> {
        self.rng
    }

    /// Content hash used to detect features built on different bases.
    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    pub(crate) fn vectorized(&self) -> &DMatrix<f64> {
        &self.vectorized
    }
}

fn check_direction(dim: usize, a: &SymMatrix) -> Result<()> {
    if a.dim() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: a.dim(),
        });
    }
    let norm = a.frobenius_norm();
    if (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
        return Err(Error::NotUnitNorm(norm));
    }
    Ok(())
}

/// Draws a single direction of the given kind from its own stream.
pub fn sample_direction(
    rng: RngState,
    d: usize,
    kind: SamplerKind,
) -> Result<(SymMatrix, Option<DirectionFactors>)> {
    let mut r = rng.rng();
    match kind {
        SamplerKind::EigUniform => {
            let (a, f) = lambda_s_factors(&mut r, d)?;
            Ok((a, Some(f)))
        }
        SamplerKind::FastSymmetric => Ok((sample_fast_symmetric(&mut r, d)?, None)),
        SamplerKind::VectorizedSphere => Ok((sample_vectorized_sphere(&mut r, d)?, None)),
        SamplerKind::Custom => Err(Error::InvalidParameter(
            "custom bases are built from explicit directions".into(),
        )),
    }
}

/// `count` directions, direction `ℓ` drawn from `rng.child(ℓ)`.
pub fn build_projection_basis(
    rng: RngState,
    d: usize,
    count: usize,
    kind: SamplerKind,
) -> Result<ProjectionBasis> {
    if count == 0 {
        return Err(Error::InvalidParameter("number of projections must be positive".into()));
    }
    if d == 0 {
        return Err(Error::InvalidParameter("dimension must be positive".into()));
    }
    let drawn: Vec<(SymMatrix, Option<DirectionFactors>)> = (0..count)
        .into_par_iter()
        .map(|l| sample_direction(rng.child(l as u64), d, kind))
        .collect::<Result<_>>()?;
    let mut directions = Vec::with_capacity(count);
    let mut factors = Vec::with_capacity(count);
    for (a, f) in drawn {
        directions.push(a);
        if let Some(f) = f {
            factors.push(f);
        }
    }
    let factors = (kind == SamplerKind::EigUniform).then_some(factors);
    Ok(ProjectionBasis::assemble(d, directions, factors, kind, Some(rng)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sphere_in_one_dimension_is_a_sign() {
        let mut rng = RngState::new(1).rng();
        for _ in 0..20 {
            let v = sample_sphere(&mut rng, 1).unwrap();
            assert_eq!(v[0].abs(), 1.0);
        }
    }

    #[test]
    fn sphere_samples_have_unit_norm() {
        let mut rng = RngState::new(2).rng();
        for _ in 0..200 {
            let v = sample_sphere(&mut rng, 7).unwrap();
            assert!((v.norm() - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn haar_is_orthogonal() {
        let mut rng = RngState::new(3).rng();
        for d in 1..8 {
            let p = sample_haar_orthogonal(&mut rng, d).unwrap();
            assert!((p.transpose() * &p - DMatrix::identity(d, d)).norm() < 1e-10);
            assert!((p.determinant().abs() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn lambda_s_eigenvalues_match_theta() {
        let mut rng = RngState::new(4).rng();
        for _ in 0..50 {
            let (a, f) = lambda_s_factors(&mut rng, 4).unwrap();
            assert!((a.frobenius_norm() - 1.0).abs() < 1e-12);
            let mut theta: Vec<f64> = f.eigenvalues.iter().copied().collect();
            theta.sort_by(f64::total_cmp);
            let eig = crate::linalg::sym_eigen(a.as_matrix());
            for (x, y) in eig.eigenvalues.iter().zip(&theta) {
                assert!((x - y).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn fast_symmetric_is_unit_and_symmetric() {
        let mut rng = RngState::new(5).rng();
        for _ in 0..100 {
            let a = sample_fast_symmetric(&mut rng, 5).unwrap();
            assert!((a.frobenius_norm() - 1.0).abs() < 1e-12);
            assert_eq!(a.as_matrix(), &a.as_matrix().transpose());
        }
    }

    #[test]
    fn wishart_edge_cases() {
        let mut rng = RngState::new(6).rng();
        let w = sample_wishart(&mut rng, 1, 1, &SpdMatrix::identity(1)).unwrap();
        assert!(w.as_matrix()[(0, 0)] > 0.0);
        assert!(matches!(
            sample_wishart(&mut rng, 3, 2, &SpdMatrix::identity(3)),
            Err(Error::InvalidParameter(_))
        ));
    }

    #[test]
    fn basis_is_deterministic_and_unit() {
        let a = build_projection_basis(RngState::new(9), 4, 30, SamplerKind::EigUniform).unwrap();
        let b = build_projection_basis(RngState::new(9), 4, 30, SamplerKind::EigUniform).unwrap();
        assert_eq!(a.fingerprint(), b.fingerprint());
        for (x, y) in a.directions().iter().zip(b.directions()) {
            assert_eq!(x, y);
            assert!((x.frobenius_norm() - 1.0).abs() < 1e-12);
        }
        let c = build_projection_basis(RngState::new(10), 4, 30, SamplerKind::EigUniform).unwrap();
        assert_ne!(a.fingerprint(), c.fingerprint());
        assert!(a.factors().is_some());
        let f = build_projection_basis(RngState::new(9), 4, 3, SamplerKind::FastSymmetric).unwrap();
        assert!(f.factors().is_none());
    }

    #[test]
    fn custom_basis_rejects_non_unit() {
        let a = SymMatrix::from_diagonal(&[1.0, 1.0]).unwrap();
        assert!(matches!(
            ProjectionBasis::from_directions(2, vec![a]),
            Err(Error::NotUnitNorm(_))
        ));
    }
}
