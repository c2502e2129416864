//! Symmetric and SPD matrix primitives.
//!
//! Every matrix function here (log, exp, their Fréchet derivatives, the
//! affine-invariant distance) goes through one kernel: the symmetric
//! eigendecomposition. Inputs are symmetrized on construction, so covariance
//! estimates with round-off asymmetry are accepted as-is.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative positive-definiteness threshold: the smallest eigenvalue must
/// exceed this multiple of the largest eigenvalue magnitude.
pub const PD_TOLERANCE: f64 = 1e-12;

/// Largest eigenvalue accepted by [`sym_exp`].
pub const EXP_CAP: f64 = 699.0;

/// Relative eigenvalue gap below which divided differences switch to the
/// derivative limit.
const DIVIDED_DIFFERENCE_GAP: f64 = 1e-10;

/// A real symmetric matrix, e.g. a tangent vector at the identity or `log M`.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix(DMatrix<f64>);

impl SymMatrix {
    /// Wraps `m` after symmetrizing it as `(m + mᵀ) / 2`.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::NotSquare {
                rows: m.nrows(),
                cols: m.ncols(),
            });
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Self(symmetrize(m)))
    }

    pub fn from_row_major(dim: usize, entries: &[f64]) -> Result<Self> {
        if entries.len() != dim * dim {
            return Err(Error::DimensionMismatch {
                expected: dim * dim,
                got: entries.len(),
            });
        }
        Self::new(DMatrix::from_row_slice(dim, dim, entries))
    }

    pub fn from_diagonal(diag: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(DMatrix::zeros(dim, dim))
    }

    /// Wraps a matrix the caller guarantees to be exactly symmetric and finite.
    pub(crate) fn from_symmetric_unchecked(m: DMatrix<f64>) -> Self {
        debug_assert!(m.is_square());
        Self(m)
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.0.norm()
    }

    /// Frobenius inner product `Tr(Aᵀ B)`.
    pub fn inner(&self, other: &SymMatrix) -> f64 {
        self.0.dot(&other.0)
    }

    pub fn scaled(&self, factor: f64) -> SymMatrix {
        Self(&self.0 * factor)
    }

    pub fn add(&self, other: &SymMatrix) -> SymMatrix {
        Self(&self.0 + &other.0)
    }

    pub fn sub(&self, other: &SymMatrix) -> SymMatrix {
        Self(&self.0 - &other.0)
    }

    /// Isometric vectorization: the upper triangle in row-major order with
    /// off-diagonal entries scaled by `√2`, so that `vec(A)·vec(B) = ⟨A, B⟩_F`.
    pub fn vectorize(&self) -> Vec<f64> {
        let mut out = vec![0.0; vectorized_len(self.dim())];
        vectorize_into(&self.0, &mut out);
        out
    }

    /// Inverse of [`SymMatrix::vectorize`].
    pub fn from_vectorized(dim: usize, v: &[f64]) -> Result<Self> {
        if v.len() != vectorized_len(dim) {
            return Err(Error::DimensionMismatch {
                expected: vectorized_len(dim),
                got: v.len(),
            });
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Self(unvectorize(dim, v)))
    }
}

/// Number of free entries of a `dim × dim` symmetric matrix.
pub fn vectorized_len(dim: usize) -> usize {
    dim * (dim + 1) / 2
}

pub(crate) fn vectorize_into(m: &DMatrix<f64>, out: &mut [f64]) {
    let d = m.nrows();
    let mut k = 0;
    for i in 0..d {
        out[k] = m[(i, i)];
        k += 1;
        for j in (i + 1)..d {
            out[k] = std::f64::consts::SQRT_2 * m[(i, j)];
            k += 1;
        }
    }
}

pub(crate) fn unvectorize(dim: usize, v: &[f64]) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(dim, dim);
    let mut k = 0;
    for i in 0..dim {
        m[(i, i)] = v[k];
        k += 1;
        for j in (i + 1)..dim {
            let x = v[k] / std::f64::consts::SQRT_2;
            m[(i, j)] = x;
            m[(j, i)] = x;
            k += 1;
        }
    }
    m
}

/// Returns `(m + mᵀ) / 2` with bitwise-equal mirrored entries.
pub(crate) fn symmetrize(mut m: DMatrix<f64>) -> DMatrix<f64> {
    let d = m.nrows();
    for i in 0..d {
        for j in (i + 1)..d {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    m
}

/// Eigendecomposition of a symmetric matrix, eigenvalues ascending.
#[derive(Debug, Clone)]
pub struct EigenPair {
    pub eigenvalues: DVector<f64>,
    /// Orthonormal eigenvectors stored as columns, in eigenvalue order.
    pub eigenvectors: DMatrix<f64>,
}

impl EigenPair {
    /// Rebuilds `Q diag(f(λ)) Qᵀ`.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let scaled = self.eigenvalues.map(f);
        self.reconstruct_with(&scaled)
    }

    pub(crate) fn reconstruct_with(&self, values: &DVector<f64>) -> DMatrix<f64> {
        let mut qs = self.eigenvectors.clone();
        for (j, mut col) in qs.column_iter_mut().enumerate() {
            col *= values[j];
        }
        symmetrize(qs * self.eigenvectors.transpose())
    }
}

/// Symmetric eigendecomposition with ascending eigenvalues.
pub fn sym_eigen(m: &DMatrix<f64>) -> EigenPair {
    let eig = SymmetricEigen::new(m.clone());
    let d = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let eigenvalues = DVector::from_iterator(d, order.iter().map(|&k| eig.eigenvalues[k]));
    let mut eigenvectors = DMatrix::zeros(d, d);
    for (dst, &src) in order.iter().enumerate() {
        eigenvectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    EigenPair {
        eigenvalues,
        eigenvectors,
    }
}

fn check_positive(eigenvalues: &DVector<f64>) -> Result<()> {
    let max_abs = eigenvalues.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
    let tolerance = PD_TOLERANCE * max_abs;
    let min_eig = eigenvalues.min();
    if !(min_eig > tolerance) {
        return Err(Error::NotPositiveDefinite { min_eig, tolerance });
    }
    Ok(())
}

/// A symmetric positive definite matrix together with its logarithm.
///
/// The logarithm is filled once when the matrix is validated (the
/// eigendecomposition is already at hand then) and never changes afterwards,
/// so slicing code can read it `L` times at the cost of an inner product.
#[derive(Debug, Clone, PartialEq)]
pub struct SpdMatrix {
    entries: DMatrix<f64>,
    log: SymMatrix,
}

impl SpdMatrix {
    /// Symmetrizes `m` and checks positive definiteness.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        let sym = SymMatrix::new(m)?;
        let eig = sym_eigen(sym.as_matrix());
        check_positive(&eig.eigenvalues)?;
        let log = SymMatrix::from_symmetric_unchecked(eig.map(f64::ln));
        Ok(Self {
            entries: sym.into_matrix(),
            log,
        })
    }

    pub fn from_row_major(dim: usize, entries: &[f64]) -> Result<Self> {
        if entries.len() != dim * dim {
            return Err(Error::DimensionMismatch {
                expected: dim * dim,
                got: entries.len(),
            });
        }
        Self::new(DMatrix::from_row_slice(dim, dim, entries))
    }

    pub fn from_diagonal(diag: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            entries: DMatrix::identity(dim, dim),
            log: SymMatrix::zeros(dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.entries
    }

    /// Cached `log M`.
    pub fn log(&self) -> &SymMatrix {
        &self.log
    }

    pub fn eigen(&self) -> EigenPair {
        sym_eigen(&self.entries)
    }

    /// Row-major copy of the entries.
    pub fn to_row_major(&self) -> Vec<f64> {
        let d = self.dim();
        let mut out = Vec::with_capacity(d * d);
        for i in 0..d {
            for j in 0..d {
                out.push(self.entries[(i, j)]);
            }
        }
        out
    }

    /// Congruence `gᵀ M g`.
    pub fn congruence(&self, g: &DMatrix<f64>) -> Result<SpdMatrix> {
        if g.nrows() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: g.nrows(),
            });
        }
        SpdMatrix::new(g.transpose() * &self.entries * g)
    }
}

/// Matrix logarithm `Q diag(log λ) Qᵀ`.
pub fn sym_log(m: &SpdMatrix) -> SymMatrix {
    m.log().clone()
}

/// Matrix exponential `Q diag(exp λ) Qᵀ`; the result caches `s` as its log.
pub fn sym_exp(s: &SymMatrix) -> Result<SpdMatrix> {
    let eig = sym_eigen(s.as_matrix());
    let max = eig.eigenvalues.max();
    if max > EXP_CAP {
        return Err(Error::Overflow(max));
    }
    Ok(SpdMatrix {
        entries: eig.map(f64::exp),
        log: s.clone(),
    })
}

fn check_same_dim(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::DimensionMismatch {
            expected: a,
            got: b,
        });
    }
    Ok(())
}

/// Log-Euclidean distance `‖log X − log Y‖_F`.
pub fn dist_log_euclidean(x: &SpdMatrix, y: &SpdMatrix) -> Result<f64> {
    check_same_dim(x.dim(), y.dim())?;
    Ok((x.log().as_matrix() - y.log().as_matrix()).norm())
}

/// `X^{-1/2}`, reusable across many affine-invariant distances from `X`.
pub fn inv_sqrt(x: &SpdMatrix) -> DMatrix<f64> {
    x.eigen().map(|v| 1.0 / v.sqrt())
}

/// Affine-invariant distance computed as `‖log(X^{-1/2} Y X^{-1/2})‖_F`.
pub fn dist_affine_invariant(x: &SpdMatrix, y: &SpdMatrix) -> Result<f64> {
    check_same_dim(x.dim(), y.dim())?;
    dist_affine_invariant_from(&inv_sqrt(x), y)
}

pub(crate) fn dist_affine_invariant_from(x_inv_sqrt: &DMatrix<f64>, y: &SpdMatrix) -> Result<f64> {
    let z = symmetrize(x_inv_sqrt * y.as_matrix() * x_inv_sqrt);
    let eig = sym_eigen(&z);
    check_positive(&eig.eigenvalues)?;
    Ok(eig.eigenvalues.iter().map(|v| v.ln().powi(2)).sum::<f64>().sqrt())
}

/// First divided differences of `ln` on the spectrum.
fn log_divided_differences(values: &DVector<f64>) -> DMatrix<f64> {
    let d = values.len();
    DMatrix::from_fn(d, d, |i, j| {
        let (a, b) = (values[i], values[j]);
        if i == j || (a - b).abs() < DIVIDED_DIFFERENCE_GAP * a.abs().max(b.abs()) {
            1.0 / a.max(b)
        } else {
            // ln(a/b) through ln_1p keeps precision for close eigenvalues.
            ((a - b) / b).ln_1p() / (a - b)
        }
    })
}

fn exp_divided_differences(values: &DVector<f64>) -> DMatrix<f64> {
    let d = values.len();
    DMatrix::from_fn(d, d, |i, j| {
        let (a, b) = (values[i], values[j]);
        if i == j || (a - b).abs() < DIVIDED_DIFFERENCE_GAP * a.abs().max(b.abs()).max(1.0) {
            a.max(b).exp()
        } else {
            b.exp() * (a - b).exp_m1() / (a - b)
        }
    })
}

/// Daleckii–Krein: `Q (G ∘ (Qᵀ H Q)) Qᵀ`.
pub(crate) fn apply_divided_differences(
    eig: &EigenPair,
    divided: &DMatrix<f64>,
    h: &DMatrix<f64>,
) -> DMatrix<f64> {
    let q = &eig.eigenvectors;
    let rotated = q.transpose() * h * q;
    let weighted = rotated.component_mul(divided);
    symmetrize(q * weighted * q.transpose())
}

/// Fréchet derivative of the matrix logarithm at `m` in direction `h`.
pub fn log_frechet_derivative(m: &SpdMatrix, h: &SymMatrix) -> Result<SymMatrix> {
    check_same_dim(m.dim(), h.dim())?;
    let eig = m.eigen();
    check_positive(&eig.eigenvalues)?;
    Ok(SymMatrix(log_frechet_with(&eig, h.as_matrix())))
}

pub(crate) fn log_frechet_with(eig: &EigenPair, h: &DMatrix<f64>) -> DMatrix<f64> {
    apply_divided_differences(eig, &log_divided_differences(&eig.eigenvalues), h)
}

/// Fréchet derivative of the symmetric matrix exponential at `s` in direction `h`.
///
/// The map is self-adjoint for the Frobenius inner product, so it also
/// pulls gradients back through `S ↦ exp(S)`.
pub fn exp_frechet_derivative(s: &SymMatrix, h: &SymMatrix) -> Result<SymMatrix> {
    check_same_dim(s.dim(), h.dim())?;
    let eig = sym_eigen(s.as_matrix());
    Ok(SymMatrix(apply_divided_differences(
        &eig,
        &exp_divided_differences(&eig.eigenvalues),
        h.as_matrix(),
    )))
}

/// Factorization `M = U D Uᵀ` with `U` unit upper triangular and `D` positive
/// diagonal (returned as a vector).
pub fn udu_decompose(m: &SpdMatrix) -> Result<(DMatrix<f64>, DVector<f64>)> {
    udu_decompose_matrix(m.as_matrix())
}

/// [`udu_decompose`] on a raw symmetric matrix; fails on a non-positive pivot.
pub fn udu_decompose_matrix(m: &DMatrix<f64>) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let d = m.nrows();
    let mut u = DMatrix::<f64>::identity(d, d);
    let mut diag = DVector::<f64>::zeros(d);
    for j in (0..d).rev() {
        let mut pivot = m[(j, j)];
        for k in (j + 1)..d {
            pivot -= u[(j, k)] * u[(j, k)] * diag[k];
        }
        if !(pivot > 0.0) {
            return Err(Error::NotPositiveDefinite {
                min_eig: pivot,
                tolerance: 0.0,
            });
        }
        diag[j] = pivot;
        for i in 0..j {
            let mut v = m[(i, j)];
            for k in (j + 1)..d {
                v -= u[(i, k)] * u[(j, k)] * diag[k];
            }
            u[(i, j)] = v / pivot;
        }
    }
    Ok((u, diag))
}
