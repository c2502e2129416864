//! Quantile feature map of sliced measures, Gaussian kernels on it and kernel
//! ridge regression over distributions.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::sym_eigen;
use crate::sampling::{ProjectionBasis, RngState};
use crate::sliced::EmpiricalSpdMeasure;

/// Largest accepted condition estimate of `K + αI`.
pub const MAX_CONDITION: f64 = 1e14;

/// Midpoint grid `q_j = (j - 1/2) / M`, `j = 1..M`.
pub fn midpoint_levels(m: usize) -> Vec<f64> {
    (1..=m).map(|j| (j as f64 - 0.5) / m as f64).collect()
}

/// Empirical quantile functions of the projected measure, one column per
/// direction, scaled by `1/√(ML)` so that squared Euclidean distances between
/// features approximate SPDSW₂².
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileFeature {
    levels: Vec<f64>,
    basis_fingerprint: u64,
    /// `M×L`, entry `(j, ℓ)` is the `q_j`-quantile along direction `ℓ`.
    values: DMatrix<f64>,
}

impl QuantileFeature {
    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn basis_fingerprint(&self) -> u64 {
        self.basis_fingerprint
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    fn compatible(&self, other: &QuantileFeature) -> bool {
        self.basis_fingerprint == other.basis_fingerprint && self.levels == other.levels
    }

    /// Squared Euclidean distance between two features.
    pub fn sq_distance(&self, other: &QuantileFeature) -> Result<f64> {
        if !self.compatible(other) {
            return Err(Error::BasisMismatch);
        }
        Ok(self
            .values
            .as_slice()
            .iter()
            .zip(other.values.as_slice())
            .map(|(a, b)| (a - b) * (a - b))
            .sum())
    }
}

fn check_levels(levels: &[f64]) -> Result<()> {
    if levels.is_empty() {
        return Err(Error::InvalidParameter("need at least one quantile level".into()));
    }
    let in_range = levels.iter().all(|&q| q > 0.0 && q < 1.0);
    let increasing = levels.windows(2).all(|w| w[0] < w[1]);
    if !in_range || !increasing {
        return Err(Error::InvalidParameter(
            "quantile levels must be strictly increasing in (0, 1)".into(),
        ));
    }
    Ok(())
}

/// Feature `Φ̂(μ)` using the lower order statistic at index `⌈qn⌉`.
pub fn quantile_feature(
    mu: &EmpiricalSpdMeasure,
    basis: &ProjectionBasis,
    levels: &[f64],
) -> Result<QuantileFeature> {
    check_levels(levels)?;
    if basis.dim() != mu.dim() {
        return Err(Error::DimensionMismatch {
            expected: basis.dim(),
            got: mu.dim(),
        });
    }
    let n = mu.len();
    let (m, l) = (levels.len(), basis.len());
    let coords = mu.log_rows() * basis.vectorized();
    let scale = 1.0 / ((m * l) as f64).sqrt();
    let idx: Vec<usize> = levels
        .iter()
        .map(|q| ((q * n as f64).ceil() as usize).clamp(1, n) - 1)
        .collect();
    let mut values = DMatrix::zeros(m, l);
    let mut col = vec![0.0; n];
    for k in 0..l {
        col.copy_from_slice(&coords.as_slice()[k * n..(k + 1) * n]);
        col.sort_unstable_by(f64::total_cmp);
        for (j, &i) in idx.iter().enumerate() {
            values[(j, k)] = col[i] * scale;
        }
    }
    Ok(QuantileFeature {
        levels: levels.to_vec(),
        basis_fingerprint: basis.fingerprint(),
        values,
    })
}

/// Features of many measures, in parallel.
pub fn quantile_features(
    measures: &[EmpiricalSpdMeasure],
    basis: &ProjectionBasis,
    levels: &[f64],
) -> Result<Vec<QuantileFeature>> {
    measures.par_iter().map(|mu| quantile_feature(mu, basis, levels)).collect()
}

/// Kernel matrix between measures.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    pub matrix: DMatrix<f64>,
    /// One bandwidth per summed band.
    pub bandwidths: Vec<f64>,
}

impl GramMatrix {
    pub fn size(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        sym_eigen(&self.matrix).eigenvalues[0]
    }
}

/// Symmetric matrix of squared feature distances, zero diagonal.
pub fn sq_distance_matrix(features: &[QuantileFeature]) -> Result<DMatrix<f64>> {
    let n = features.len();
    if let Some(first) = features.first() {
        if features.iter().any(|f| !f.compatible(first)) {
            return Err(Error::BasisMismatch);
        }
    }
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    let values: Vec<f64> = pairs
        .par_iter()
        .map(|&(i, j)| features[i].sq_distance(&features[j]))
        .collect::<Result<_>>()?;
    let mut out = DMatrix::zeros(n, n);
    for (&(i, j), &v) in pairs.iter().zip(&values) {
        out[(i, j)] = v;
        out[(j, i)] = v;
    }
    Ok(out)
}

/// Squared distances between every `a` (rows) and every `b` (columns).
pub fn cross_sq_distances(a: &[QuantileFeature], b: &[QuantileFeature]) -> Result<DMatrix<f64>> {
    let rows: Vec<Vec<f64>> = a
        .par_iter()
        .map(|fa| b.iter().map(|fb| fa.sq_distance(fb)).collect::<Result<Vec<f64>>>())
        .collect::<Result<_>>()?;
    Ok(DMatrix::from_fn(a.len(), b.len(), |i, j| rows[i][j]))
}

/// Median heuristic: `σ² = median` of the off-diagonal squared distances.
/// Falls back to `σ = 1` when all measures coincide.
pub fn median_bandwidth(sq_distances: &DMatrix<f64>) -> f64 {
    let n = sq_distances.nrows();
    let mut v: Vec<f64> = (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .map(|(i, j)| sq_distances[(i, j)])
        .collect();
    if v.is_empty() {
        return 1.0;
    }
    v.sort_unstable_by(f64::total_cmp);
    let k = v.len();
    let median = if k % 2 == 1 { v[k / 2] } else { 0.5 * (v[k / 2 - 1] + v[k / 2]) };
    if median > 0.0 {
        median.sqrt()
    } else {
        log::warn!("all feature distances vanish, using bandwidth 1");
        1.0
    }
}

fn check_sigma(sigma: f64) -> Result<()> {
    if !(sigma > 0.0) {
        return Err(Error::InvalidParameter(format!("bandwidth must be positive, got {sigma}")));
    }
    Ok(())
}

/// Gaussian kernel `exp(-d²/(2σ²))` applied entrywise to squared distances.
pub fn gaussian_from_sq_distances(sq: &DMatrix<f64>, sigma: f64) -> Result<DMatrix<f64>> {
    check_sigma(sigma)?;
    let gamma = 1.0 / (2.0 * sigma * sigma);
    Ok(sq.map(|d| (-d * gamma).exp()))
}

/// Gram matrix `K_ij = exp(-‖Φ̂(μ_i) - Φ̂(μ_j)‖²/(2σ²))`.
pub fn gaussian_kernel(features: &[QuantileFeature], sigma: f64) -> Result<GramMatrix> {
    check_sigma(sigma)?;
    let sq = sq_distance_matrix(features)?;
    Ok(GramMatrix {
        matrix: gaussian_from_sq_distances(&sq, sigma)?,
        bandwidths: vec![sigma],
    })
}

/// Entrywise sum of per-band Gram matrices.
pub fn sum_kernels(grams: &[GramMatrix]) -> Result<GramMatrix> {
    let first = grams
        .first()
        .ok_or_else(|| Error::InvalidParameter("no kernels to sum".into()))?;
    let mut total = first.clone();
    for g in &grams[1..] {
        if g.size() != total.size() {
            return Err(Error::SizeMismatch(total.size(), g.size()));
        }
        total.matrix += &g.matrix;
        total.bandwidths.extend_from_slice(&g.bandwidths);
    }
    Ok(total)
}

/// Fitted dual coefficients of kernel ridge regression on centered targets.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelRidgeModel {
    pub coefficients: DVector<f64>,
    /// Mean of the training targets, re-added at prediction.
    pub intercept: f64,
    pub alpha: f64,
}

impl KernelRidgeModel {
    /// Predictions from a test-by-train kernel block.
    pub fn predict_from_gram(&self, cross: &DMatrix<f64>) -> Result<Vec<f64>> {
        if cross.ncols() != self.coefficients.len() {
            return Err(Error::SizeMismatch(cross.ncols(), self.coefficients.len()));
        }
        Ok((cross * &self.coefficients).iter().map(|v| v + self.intercept).collect())
    }
}

/// Solves `(K + αI) c = y - ȳ`.
pub fn kernel_ridge_fit(gram: &GramMatrix, targets: &[f64], alpha: f64) -> Result<KernelRidgeModel> {
    let n = gram.size();
    if targets.len() != n {
        return Err(Error::SizeMismatch(targets.len(), n));
    }
    if !(alpha > 0.0) {
        return Err(Error::InvalidParameter(format!("alpha must be positive, got {alpha}")));
    }
    if n == 0 {
        return Err(Error::EmptyMeasure);
    }
    let mean = targets.iter().sum::<f64>() / n as f64;
    let y = DVector::from_iterator(n, targets.iter().map(|t| t - mean));
    let mut a = gram.matrix.clone();
    for i in 0..n {
        a[(i, i)] += alpha;
    }
    let eig = sym_eigen(&a).eigenvalues;
    let (lo, hi) = (eig[0], eig[n - 1]);
    let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if condition > MAX_CONDITION {
        return Err(Error::IllConditioned(condition));
    }
    let chol = Cholesky::new(a.clone()).ok_or(Error::IllConditioned(condition))?;
    let mut c = chol.solve(&y);
    // one step of iterative refinement
    let r = &y - &a * &c;
    c += chol.solve(&r);
    Ok(KernelRidgeModel {
        coefficients: c,
        intercept: mean,
        alpha,
    })
}

/// `ŷ_t = Σ_i c_i K(μ_t, μ_i) + ȳ` for a single band.
pub fn kernel_ridge_predict(
    train_features: &[QuantileFeature],
    model: &KernelRidgeModel,
    test_features: &[QuantileFeature],
    sigma: f64,
) -> Result<Vec<f64>> {
    let sq = cross_sq_distances(test_features, train_features)?;
    model.predict_from_gram(&gaussian_from_sq_distances(&sq, sigma)?)
}

/// Index split of one fold.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fold {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// K-fold partition of `0..n`; shuffled with `rng` when given. Fold sizes
/// differ by at most one.
pub fn k_fold(n: usize, k: usize, rng: Option<RngState>) -> Result<Vec<Fold>> {
    if k < 2 || k > n {
        return Err(Error::InvalidParameter(format!("need 2 <= folds <= {n}, got {k}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    if let Some(state) = rng {
        order.shuffle(&mut state.rng());
    }
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let size = n / k + usize::from(f < n % k);
        let mut test: Vec<usize> = order[start..start + size].to_vec();
        test.sort_unstable();
        let mut train: Vec<usize> = order[..start].iter().chain(&order[start + size..]).copied().collect();
        train.sort_unstable();
        folds.push(Fold { train, test });
        start += size;
    }
    Ok(folds)
}

/// Coefficient of determination `1 - SS_res / SS_tot`.
pub fn r2_score(truth: &[f64], predicted: &[f64]) -> f64 {
    let mean = truth.iter().sum::<f64>() / truth.len() as f64;
    let ss_tot: f64 = truth.iter().map(|t| (t - mean).powi(2)).sum();
    let ss_res: f64 = truth.iter().zip(predicted).map(|(t, p)| (t - p).powi(2)).sum();
    if ss_tot == 0.0 {
        return if ss_res == 0.0 { 1.0 } else { f64::NEG_INFINITY };
    }
    1.0 - ss_res / ss_tot
}

pub fn mean_absolute_error(truth: &[f64], predicted: &[f64]) -> f64 {
    truth.iter().zip(predicted).map(|(t, p)| (t - p).abs()).sum::<f64>() / truth.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::SpdMatrix;
    use crate::sampling::{build_projection_basis, sample_wishart_set, SamplerKind};
    use crate::sliced::spdsw;

    fn measure(seed: u64, n: usize) -> EmpiricalSpdMeasure {
        EmpiricalSpdMeasure::new(sample_wishart_set(RngState::new(seed), 3, 6, &SpdMatrix::identity(3), n).unwrap()).unwrap()
    }

    #[test]
    fn midpoint_grid() {
        assert_eq!(midpoint_levels(4), vec![0.125, 0.375, 0.625, 0.875]);
    }

    #[test]
    fn single_atom_feature_is_constant() {
        let x = SpdMatrix::from_row_major(2, &[2.0, 0.3, 0.3, 1.0]).unwrap();
        let mu = EmpiricalSpdMeasure::new(vec![x.clone()]).unwrap();
        let basis = build_projection_basis(RngState::new(1), 2, 3, SamplerKind::EigUniform).unwrap();
        let f = quantile_feature(&mu, &basis, &midpoint_levels(5)).unwrap();
        let scale = 1.0 / 15f64.sqrt();
        for (k, a) in basis.directions().iter().enumerate() {
            let t = a.inner(x.log()) * scale;
            for j in 0..5 {
                assert!((f.values()[(j, k)] - t).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn exact_isometry_on_a_commensurate_grid() {
        // 10 levels per order statistic: the feature distance equals SPDSW₂² up to rounding
        let (mu, nu) = (measure(1, 20), measure(2, 20));
        let basis = build_projection_basis(RngState::new(3), 3, 40, SamplerKind::EigUniform).unwrap();
        let levels = midpoint_levels(200);
        let fa = quantile_feature(&mu, &basis, &levels).unwrap();
        let fb = quantile_feature(&nu, &basis, &levels).unwrap();
        let sw = spdsw(&mu, &nu, &basis, 2.0).unwrap().value;
        assert!((fa.sq_distance(&fb).unwrap() - sw).abs() < 1e-12 * sw);
    }

    #[test]
    fn mismatched_bases_are_rejected() {
        let mu = measure(1, 5);
        let b1 = build_projection_basis(RngState::new(3), 3, 4, SamplerKind::EigUniform).unwrap();
        let b2 = build_projection_basis(RngState::new(4), 3, 4, SamplerKind::EigUniform).unwrap();
        let levels = midpoint_levels(10);
        let f1 = quantile_feature(&mu, &b1, &levels).unwrap();
        let f2 = quantile_feature(&mu, &b2, &levels).unwrap();
        assert!(matches!(gaussian_kernel(&[f1, f2], 1.0), Err(Error::BasisMismatch)));
    }

    #[test]
    fn gram_has_unit_diagonal() {
        let basis = build_projection_basis(RngState::new(3), 3, 10, SamplerKind::EigUniform).unwrap();
        let feats: Vec<_> = (0..6)
            .map(|s| quantile_feature(&measure(s, 10), &basis, &midpoint_levels(20)).unwrap())
            .collect();
        let g = gaussian_kernel(&feats, 0.7).unwrap();
        for i in 0..6 {
            assert_eq!(g.matrix[(i, i)], 1.0);
            for j in 0..6 {
                assert_eq!(g.matrix[(i, j)], g.matrix[(j, i)]);
            }
        }
        let summed = sum_kernels(&[g.clone(), g.clone()]).unwrap();
        assert_eq!(summed.matrix[(2, 2)], 2.0);
        assert_eq!(sum_kernels(std::slice::from_ref(&g)).unwrap(), g);
    }

    #[test]
    fn ridge_on_identity_halves_centered_targets() {
        let gram = GramMatrix {
            matrix: DMatrix::identity(3, 3),
            bandwidths: vec![1.0],
        };
        let model = kernel_ridge_fit(&gram, &[1.0, -2.0, 1.0], 1.0).unwrap();
        assert_eq!(model.intercept, 0.0);
        assert!((model.coefficients - DVector::from_vec(vec![0.5, -1.0, 0.5])).norm() < 1e-15);
    }

    #[test]
    fn ridge_reports_ill_conditioning() {
        let gram = GramMatrix {
            matrix: DMatrix::from_element(3, 3, 1.0),
            bandwidths: vec![1.0],
        };
        assert!(matches!(kernel_ridge_fit(&gram, &[1.0, 2.0, 3.0], 1e-16), Err(Error::IllConditioned(_))));
    }

    #[test]
    fn folds_partition_indices() {
        let folds = k_fold(11, 3, Some(RngState::new(9))).unwrap();
        let mut all: Vec<usize> = folds.iter().flat_map(|f| f.test.clone()).collect();
        all.sort_unstable();
        assert_eq!(all, (0..11).collect::<Vec<_>>());
        for f in &folds {
            assert_eq!(f.train.len() + f.test.len(), 11);
            assert!(f.test.iter().all(|t| !f.train.contains(t)));
        }
        assert!(k_fold(3, 5, None).is_err());
    }

    #[test]
    fn r2_basics() {
        assert_eq!(r2_score(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]), 1.0);
        assert_eq!(r2_score(&[1.0, 2.0, 3.0], &[2.0, 2.0, 2.0]), 0.0);
    }
}
